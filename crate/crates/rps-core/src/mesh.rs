//! Simplicial meshes of the unit domain (0,1)^d for d = 1, 2.
//!
//! A coarse structured mesh carries the interpolation nodes x_i (all interior
//! vertices); uniform refinement produces the fine mesh the coefficient field
//! and basis vectors live on. The median dual mesh supplies the control
//! volumes of the finite-volume divergence operator, and layer regions around
//! a coarse node define the subdomains localized basis functions are solved
//! on.
//!
//! Meshes are immutable after construction; refinement links child to parent
//! so vertex indices of the parent are a prefix of the child's and cell t of
//! the parent owns the contiguous child-cell block [t*r, (t+1)*r).

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use crate::error::{Result, RpsError};

pub type Point = [f64; 2];

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Rotates a direction vector so that, along a counterclockwise traversal
/// (interior on the left), the result is the outward normal scaled by the
/// segment length.
fn outward_normal_weight(from: Point, to: Point) -> Point {
    [to[1] - from[1], -(to[0] - from[0])]
}

/// Simplicial mesh of (0,1)^d: intervals for d = 1, triangles for d = 2.
#[derive(Debug)]
pub struct TriMesh {
    dim: usize,
    verts_per_cell: usize,
    vertices: Vec<Point>,
    cell_verts: Vec<usize>,
    is_boundary: Vec<bool>,
    coarse_nodes: Vec<usize>,
    parent: Option<Arc<TriMesh>>,
    incidence: OnceLock<Vec<Vec<usize>>>,
}

impl TriMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_verts.len() / self.verts_per_cell
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Vertex indices of one cell (2 entries in 1D, 3 in 2D, counterclockwise).
    pub fn cell(&self, t: usize) -> &[usize] {
        let k = self.verts_per_cell;
        &self.cell_verts[t * k..(t + 1) * k]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.is_boundary[v]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| self.is_boundary[v])
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| !self.is_boundary[v])
    }

    /// Fine-vertex indices of the interpolation nodes x_i, in order.
    pub fn coarse_nodes(&self) -> &[usize] {
        &self.coarse_nodes
    }

    pub fn coarse_node_positions(&self) -> Vec<Point> {
        self.coarse_nodes.iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn parent(&self) -> Option<&Arc<TriMesh>> {
        self.parent.as_ref()
    }

    /// Length (1D) or area (2D); positive by construction.
    pub fn measure(&self, t: usize) -> f64 {
        let c = self.cell(t);
        match self.dim {
            1 => self.vertices[c[1]][0] - self.vertices[c[0]][0],
            _ => {
                let [a, b, p] = [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]];
                0.5 * ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]))
            }
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_cells()).map(|t| self.measure(t)).sum()
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let c = self.cell(t);
        let mut p = [0.0, 0.0];
        for &v in c {
            p[0] += self.vertices[v][0];
            p[1] += self.vertices[v][1];
        }
        let k = c.len() as f64;
        [p[0] / k, p[1] / k]
    }

    /// Cells incident to each vertex; built once, shared by readers.
    pub fn vertex_cells(&self) -> &[Vec<usize>] {
        self.incidence.get_or_init(|| {
            let mut inc = vec![Vec::new(); self.n_vertices()];
            for t in 0..self.n_cells() {
                for &v in self.cell(t) {
                    inc[v].push(t);
                }
            }
            inc
        })
    }

    /// True when `self` was produced by refining `coarse` (possibly zero
    /// times): the coarse vertices are a bitwise-identical prefix and the
    /// cell count matches a whole number of uniform refinements.
    pub fn refines(&self, coarse: &TriMesh) -> bool {
        if self.dim != coarse.dim || self.n_vertices() < coarse.n_vertices() {
            return false;
        }
        if self.n_cells() % coarse.n_cells() != 0 {
            return false;
        }
        let ratio = self.n_cells() / coarse.n_cells();
        let per = 1usize << self.dim; // children per cell and refinement
        let mut r = ratio;
        while r > 1 {
            if r % per != 0 {
                return false;
            }
            r /= per;
        }
        self.vertices[..coarse.n_vertices()] == coarse.vertices[..]
    }

    /// Number of uniform refinements separating `self` from `coarse`.
    pub fn refinement_levels(&self, coarse: &TriMesh) -> Result<u32> {
        if !self.refines(coarse) {
            return Err(RpsError::Structure(
                "fine mesh is not a refinement of the given coarse mesh".into(),
            ));
        }
        let per = 1usize << self.dim;
        let mut ratio = self.n_cells() / coarse.n_cells();
        let mut k = 0;
        while ratio > 1 {
            ratio /= per;
            k += 1;
        }
        Ok(k)
    }

    fn finish(
        dim: usize,
        vertices: Vec<Point>,
        cell_verts: Vec<usize>,
        coarse_nodes: Vec<usize>,
        parent: Option<Arc<TriMesh>>,
    ) -> TriMesh {
        let verts_per_cell = dim + 1;
        let mut mesh = TriMesh {
            dim,
            verts_per_cell,
            vertices,
            cell_verts,
            is_boundary: Vec::new(),
            coarse_nodes,
            parent,
            incidence: OnceLock::new(),
        };
        mesh.is_boundary = mesh.compute_boundary();
        debug_assert!((0..mesh.n_cells()).all(|t| mesh.measure(t) > 0.0));
        mesh
    }

    /// Boundary vertices found topologically: endpoints of facets with a
    /// single incident cell.
    fn compute_boundary(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_vertices()];
        match self.dim {
            1 => {
                let mut count = vec![0usize; self.n_vertices()];
                for t in 0..self.n_cells() {
                    for &v in self.cell(t) {
                        count[v] += 1;
                    }
                }
                for (v, &c) in count.iter().enumerate() {
                    flags[v] = c == 1;
                }
            }
            _ => {
                let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
                for t in 0..self.n_cells() {
                    let c = self.cell(t);
                    for k in 0..3 {
                        let (a, b) = (c[k], c[(k + 1) % 3]);
                        let key = (a.min(b), a.max(b));
                        *edges.entry(key).or_insert(0) += 1;
                    }
                }
                for (&(a, b), &n) in &edges {
                    if n == 1 {
                        flags[a] = true;
                        flags[b] = true;
                    }
                }
            }
        }
        flags
    }

    /// Edges lying on the domain boundary, keyed by sorted vertex pair.
    fn boundary_edges(&self) -> HashMap<(usize, usize), ()> {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        if self.dim == 2 {
            for t in 0..self.n_cells() {
                let c = self.cell(t);
                for k in 0..3 {
                    let (a, b) = (c[k], c[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    *edges.entry(key).or_insert(0) += 1;
                }
            }
        }
        edges
            .into_iter()
            .filter(|&(_, n)| n == 1)
            .map(|(e, _)| (e, ()))
            .collect()
    }
}

/// Builds the structured coarse triangulation of (0,1)^d with the given
/// number of subdivisions per direction. In 2D every grid square is split
/// into two triangles along the (1,1) direction. All interior grid vertices
/// are marked as coarse interpolation nodes.
pub fn build_structured(dim: usize, divisions: usize) -> Result<TriMesh> {
    if !(dim == 1 || dim == 2) {
        return Err(RpsError::Config(format!("dimension must be 1 or 2, got {dim}")));
    }
    if divisions < 2 {
        return Err(RpsError::Config(format!(
            "coarse_divisions must be at least 2, got {divisions}"
        )));
    }
    let n = divisions;
    let step = 1.0 / n as f64;
    match dim {
        1 => {
            let vertices: Vec<Point> = (0..=n).map(|i| [i as f64 * step, 0.0]).collect();
            let mut cells = Vec::with_capacity(2 * n);
            for i in 0..n {
                cells.extend_from_slice(&[i, i + 1]);
            }
            let coarse = (1..n).collect();
            Ok(TriMesh::finish(1, vertices, cells, coarse, None))
        }
        _ => {
            let idx = |ix: usize, iy: usize| iy * (n + 1) + ix;
            let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
            for iy in 0..=n {
                for ix in 0..=n {
                    vertices.push([ix as f64 * step, iy as f64 * step]);
                }
            }
            // Two triangles per square, both counterclockwise, diagonal (1,1).
            let mut cells = Vec::with_capacity(6 * n * n);
            for iy in 0..n {
                for ix in 0..n {
                    let (v00, v10, v11, v01) =
                        (idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1));
                    cells.extend_from_slice(&[v00, v10, v11]);
                    cells.extend_from_slice(&[v00, v11, v01]);
                }
            }
            let mut coarse = Vec::with_capacity((n - 1) * (n - 1));
            for iy in 1..n {
                for ix in 1..n {
                    coarse.push(idx(ix, iy));
                }
            }
            Ok(TriMesh::finish(2, vertices, cells, coarse, None))
        }
    }
}

/// Refines `times` times: intervals are bisected, triangles split into four
/// congruent children through edge midpoints. Parent vertices keep their
/// indices and coordinates bitwise, so coarse-node indices stay valid on the
/// fine mesh.
pub fn refine(mesh: &Arc<TriMesh>, times: usize) -> Arc<TriMesh> {
    let mut current = Arc::clone(mesh);
    for _ in 0..times {
        current = Arc::new(refine_once(&current));
    }
    current
}

fn refine_once(mesh: &Arc<TriMesh>) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let p = midpoint(vertices[a], vertices[b]);
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(mesh.cell_verts.len() * (1 << mesh.dim));
    for t in 0..mesh.n_cells() {
        let c = mesh.cell(t).to_vec();
        match mesh.dim {
            1 => {
                let m = mid(c[0], c[1], &mut vertices);
                cells.extend_from_slice(&[c[0], m]);
                cells.extend_from_slice(&[m, c[1]]);
            }
            _ => {
                let m01 = mid(c[0], c[1], &mut vertices);
                let m12 = mid(c[1], c[2], &mut vertices);
                let m20 = mid(c[2], c[0], &mut vertices);
                cells.extend_from_slice(&[c[0], m01, m20]);
                cells.extend_from_slice(&[m01, c[1], m12]);
                cells.extend_from_slice(&[m20, m12, c[2]]);
                cells.extend_from_slice(&[m01, m12, m20]);
            }
        }
    }
    TriMesh::finish(
        mesh.dim,
        vertices,
        cells,
        mesh.coarse_nodes.clone(),
        Some(Arc::clone(mesh)),
    )
}

/// One oriented piece of a dual-cell boundary, tagged with the fine cell it
/// lies in. `normal_weight` is the outward unit normal scaled by the segment
/// length (in 1D a signed unit in the x component), so the flux of a field F
/// constant on the tagged cell is `F . normal_weight`.
#[derive(Debug, Clone)]
pub struct DualSegment {
    pub cell: usize,
    pub from: Point,
    pub to: Point,
    pub normal_weight: Point,
}

/// Median (barycentric) dual of a fine mesh: one polygonal control volume per
/// fine vertex, bounded by segments joining edge midpoints and cell
/// barycenters. On the structured grid the volumes coincide with the axis
/// aligned squares of the paper's figure.
#[derive(Debug)]
pub struct DualMesh {
    volumes: Vec<f64>,
    segments: Vec<Vec<DualSegment>>,
    fine_cells: usize,
    fine_vertices: usize,
}

impl DualMesh {
    pub fn n_cells(&self) -> usize {
        self.volumes.len()
    }

    pub fn volume(&self, v: usize) -> f64 {
        self.volumes[v]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn segments(&self, v: usize) -> &[DualSegment] {
        &self.segments[v]
    }

    pub fn matches(&self, fine: &TriMesh) -> bool {
        self.fine_cells == fine.n_cells() && self.fine_vertices == fine.n_vertices()
    }
}

/// Builds the median dual mesh. Dual-cell boundaries that fall on the domain
/// boundary are kept as explicit segments so the flux formula can be applied
/// verbatim for boundary vertices.
pub fn dual_cells(mesh: &TriMesh) -> DualMesh {
    let nv = mesh.n_vertices();
    let mut volumes = vec![0.0; nv];
    let mut segments: Vec<Vec<DualSegment>> = vec![Vec::new(); nv];
    match mesh.dim {
        1 => {
            for t in 0..mesh.n_cells() {
                let c = mesh.cell(t);
                let (a, b) = (c[0], c[1]);
                let half = 0.5 * mesh.measure(t);
                volumes[a] += half;
                volumes[b] += half;
                let m = midpoint(mesh.vertex(a), mesh.vertex(b));
                // Right end of a's volume, left end of b's.
                segments[a].push(DualSegment { cell: t, from: m, to: m, normal_weight: [1.0, 0.0] });
                segments[b].push(DualSegment { cell: t, from: m, to: m, normal_weight: [-1.0, 0.0] });
                if mesh.is_boundary(a) {
                    let p = mesh.vertex(a);
                    segments[a].push(DualSegment { cell: t, from: p, to: p, normal_weight: [-1.0, 0.0] });
                }
                if mesh.is_boundary(b) {
                    let p = mesh.vertex(b);
                    segments[b].push(DualSegment { cell: t, from: p, to: p, normal_weight: [1.0, 0.0] });
                }
            }
        }
        _ => {
            let boundary_edges = mesh.boundary_edges();
            for t in 0..mesh.n_cells() {
                let c = mesh.cell(t);
                let bc = mesh.barycenter(t);
                let third = mesh.measure(t) / 3.0;
                for k in 0..3 {
                    // Rotate so the current vertex comes first; (v, a, b) stays CCW.
                    let (v, a, b) = (c[k], c[(k + 1) % 3], c[(k + 2) % 3]);
                    volumes[v] += third;
                    let mva = midpoint(mesh.vertex(v), mesh.vertex(a));
                    let mvb = midpoint(mesh.vertex(v), mesh.vertex(b));
                    // CCW boundary of the v-quadrant inside t: v -> mva -> bc -> mvb -> v.
                    segments[v].push(DualSegment {
                        cell: t,
                        from: mva,
                        to: bc,
                        normal_weight: outward_normal_weight(mva, bc),
                    });
                    segments[v].push(DualSegment {
                        cell: t,
                        from: bc,
                        to: mvb,
                        normal_weight: outward_normal_weight(bc, mvb),
                    });
                    let pv = mesh.vertex(v);
                    if boundary_edges.contains_key(&(v.min(a), v.max(a))) {
                        segments[v].push(DualSegment {
                            cell: t,
                            from: pv,
                            to: mva,
                            normal_weight: outward_normal_weight(pv, mva),
                        });
                    }
                    if boundary_edges.contains_key(&(v.min(b), v.max(b))) {
                        segments[v].push(DualSegment {
                            cell: t,
                            from: mvb,
                            to: pv,
                            normal_weight: outward_normal_weight(mvb, pv),
                        });
                    }
                }
            }
        }
    }
    DualMesh {
        volumes,
        segments,
        fine_cells: mesh.n_cells(),
        fine_vertices: mesh.n_vertices(),
    }
}

/// Subdomain Omega_i^l around one coarse node, as index sets on the fine mesh.
#[derive(Debug, Clone)]
pub struct SubdomainMask {
    pub center: usize,
    pub layers: u32,
    /// Fine vertices strictly interior to the subdomain (zero-trace nodes on
    /// its boundary are excluded), sorted.
    pub fine_nodes: Vec<usize>,
    /// Fine cells covered by the subdomain, sorted.
    pub fine_cells: Vec<usize>,
    /// Coarse-node indices whose node lies strictly inside the subdomain.
    pub local_coarse_nodes: Vec<usize>,
    /// True when the subdomain has grown to cover the whole domain.
    pub saturated: bool,
}

impl SubdomainMask {
    pub fn contains_fine_node(&self, v: usize) -> bool {
        self.fine_nodes.binary_search(&v).is_ok()
    }
}

/// Grows `l` layers of coarse cells around coarse node `i`: the first layer
/// is the set of coarse cells sharing x_i as a vertex, and each further layer
/// adds every coarse cell sharing a vertex with the region. The result is
/// expressed on the fine mesh.
pub fn layer_region(
    coarse: &TriMesh,
    fine: &TriMesh,
    i: usize,
    l: u32,
) -> Result<SubdomainMask> {
    if i >= coarse.coarse_nodes().len() {
        return Err(RpsError::Index {
            what: "coarse node",
            index: i,
            len: coarse.coarse_nodes().len(),
        });
    }
    if l < 1 {
        return Err(RpsError::Config("layer count must be at least 1".into()));
    }
    let levels = fine.refinement_levels(coarse)?;
    let per = (1usize << coarse.dim()).pow(levels);

    let center_vertex = coarse.coarse_nodes()[i];
    let incidence = coarse.vertex_cells();
    let mut in_region = vec![false; coarse.n_cells()];
    let mut frontier: Vec<usize> = incidence[center_vertex].clone();
    for &t in &frontier {
        in_region[t] = true;
    }
    for _ in 1..l {
        let mut next = Vec::new();
        for &t in &frontier {
            for &v in coarse.cell(t) {
                for &s in &incidence[v] {
                    if !in_region[s] {
                        in_region[s] = true;
                        next.push(s);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    let mut fine_cells = Vec::new();
    let mut cell_in = vec![false; fine.n_cells()];
    for (t, &inside) in in_region.iter().enumerate() {
        if inside {
            for f in t * per..(t + 1) * per {
                fine_cells.push(f);
                cell_in[f] = true;
            }
        }
    }
    let saturated = fine_cells.len() == fine.n_cells();

    // A fine vertex is strictly interior when every incident fine cell lies
    // inside the region and the vertex is not on the domain boundary.
    let fine_incidence = fine.vertex_cells();
    let mut fine_nodes = Vec::new();
    for v in 0..fine.n_vertices() {
        if fine.is_boundary(v) {
            continue;
        }
        let cells = &fine_incidence[v];
        if !cells.is_empty() && cells.iter().all(|&f| cell_in[f]) {
            fine_nodes.push(v);
        }
    }

    let local_coarse_nodes: Vec<usize> = coarse
        .coarse_nodes()
        .iter()
        .enumerate()
        .filter(|&(_, &cv)| fine_nodes.binary_search(&cv).is_ok())
        .map(|(j, _)| j)
        .collect();

    if !fine_nodes.binary_search(&center_vertex).is_ok() {
        return Err(RpsError::Structure(format!(
            "center coarse node {i} is not interior to its own layer region"
        )));
    }

    Ok(SubdomainMask {
        center: i,
        layers: l,
        fine_nodes,
        fine_cells,
        local_coarse_nodes,
        saturated,
    })
}

/// Mesh norm H: the largest distance from a point of the domain to its
/// nearest interpolation node, with the supremum sampled over the fine-mesh
/// vertices.
pub fn mesh_norm(nodes: &[Point], fine: &TriMesh) -> Result<f64> {
    if nodes.is_empty() {
        return Err(RpsError::Config("mesh norm of an empty node set".into()));
    }
    let mut h: f64 = 0.0;
    for v in 0..fine.n_vertices() {
        let p = fine.vertex(v);
        let mut nearest = f64::INFINITY;
        for &q in nodes {
            nearest = nearest.min(dist(p, q));
        }
        h = h.max(nearest);
    }
    Ok(h)
}

/// Plain-text mesh export: one vertex per line, one cell per line, then the
/// coarse-node index list.
pub fn write_mesh_text<W: Write>(mesh: &TriMesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# dim {}", mesh.dim())?;
    writeln!(w, "# vertices {}", mesh.n_vertices())?;
    for v in 0..mesh.n_vertices() {
        let p = mesh.vertex(v);
        if mesh.dim() == 1 {
            writeln!(w, "vertex {} {}", v, p[0])?;
        } else {
            writeln!(w, "vertex {} {} {}", v, p[0], p[1])?;
        }
    }
    writeln!(w, "# cells {}", mesh.n_cells())?;
    for t in 0..mesh.n_cells() {
        let c = mesh.cell(t);
        let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(w, "cell {} {}", t, ids.join(" "))?;
    }
    let ids: Vec<String> = mesh.coarse_nodes().iter().map(|v| v.to_string()).collect();
    writeln!(w, "coarse {}", ids.join(" "))?;
    Ok(())
}
