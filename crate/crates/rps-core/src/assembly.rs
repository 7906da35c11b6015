//! Fine-scale P1 assembly (stiffness, mass, loads) and the dual-cell
//! finite-volume divergence operator.
//!
//! The flux operator maps a fine nodal vector u to the per-dual-cell values
//! g_u(y_i) = (1/|V_i|) int grad(1_{V_i}) . a grad(u), assembled as the
//! negative boundary-flux sum over each dual-cell boundary. With P1 gradients
//! and cellwise-constant coefficients the segment fluxes are exact; g_u
//! approximates -div(a grad u).

use crate::coeff::CellCoeffs;
use crate::error::{Result, RpsError};
use crate::mesh::{dual_cells, DualMesh, Point, TriMesh};
use crate::sparse::CsrMatrix;

/// Constant gradient of the hat function of local vertex `k` on cell `t`.
/// In 1D the y component is zero.
fn hat_gradients(mesh: &TriMesh, t: usize) -> Vec<Point> {
    let c = mesh.cell(t);
    match mesh.dim() {
        1 => {
            let h = mesh.measure(t);
            vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]]
        }
        _ => {
            let area2 = 2.0 * mesh.measure(t);
            (0..3)
                .map(|k| {
                    let p1 = mesh.vertex(c[(k + 1) % 3]);
                    let p2 = mesh.vertex(c[(k + 2) % 3]);
                    // 90-degree rotation of the opposite edge.
                    [-(p2[1] - p1[1]) / area2, (p2[0] - p1[0]) / area2]
                })
                .collect()
        }
    }
}

/// P1 stiffness matrix int grad(u) . a grad(v), full (no boundary
/// elimination); symmetric by construction.
pub fn stiffness(mesh: &TriMesh, a: &CellCoeffs) -> CsrMatrix {
    assert_eq!(a.n_cells(), mesh.n_cells(), "coefficients sampled on a different mesh");
    let n = mesh.n_vertices();
    let k = mesh.dim() + 1;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * k * k);
    for t in 0..mesh.n_cells() {
        let c = mesh.cell(t);
        let grads = hat_gradients(mesh, t);
        let scale = a.value(t) * mesh.measure(t);
        for i in 0..k {
            for j in 0..k {
                let g = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                triplets.push((c[i], c[j], scale * g));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Consistent P1 mass matrix, full.
pub fn mass(mesh: &TriMesh) -> CsrMatrix {
    let n = mesh.n_vertices();
    let k = mesh.dim() + 1;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * k * k);
    for t in 0..mesh.n_cells() {
        let c = mesh.cell(t);
        let m = mesh.measure(t);
        let (diag, off) = match mesh.dim() {
            1 => (m / 3.0, m / 6.0),
            _ => (m / 6.0, m / 12.0),
        };
        for i in 0..k {
            for j in 0..k {
                triplets.push((c[i], c[j], if i == j { diag } else { off }));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Row sums of the consistent mass matrix.
pub fn lumped_mass(mesh: &TriMesh) -> Vec<f64> {
    let m = mass(mesh);
    (0..m.nrows()).map(|r| m.row(r).1.iter().sum()).collect()
}

/// The dual-cell finite-volume divergence operator.
#[derive(Debug)]
pub struct FvOperator {
    /// Maps fine nodal vectors to g_u per dual cell (one row per fine
    /// vertex; boundary-vertex rows include their domain-boundary segments).
    b: CsrMatrix,
    /// Dual volumes |V_i|.
    volumes: Vec<f64>,
    /// Rows entering the discrete V-norm: interior fine vertices. Boundary
    /// rows are excluded because those degrees of freedom are eliminated.
    interior_rows: Vec<usize>,
}

impl FvOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn interior_rows(&self) -> &[usize] {
        &self.interior_rows
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.b.matvec(u)
    }

    /// Discrete V-product sum_i |V_i| g_u(y_i) g_v(y_i) over interior rows.
    pub fn vproduct(&self, u: &[f64], v: &[f64]) -> f64 {
        let gu = self.b.matvec(u);
        let gv = self.b.matvec(v);
        self.interior_rows
            .iter()
            .map(|&r| self.volumes[r] * gu[r] * gv[r])
            .sum()
    }

    pub fn vnorm_sq(&self, u: &[f64]) -> f64 {
        let gu = self.b.matvec(u);
        self.vnorm_sq_of_g(&gu)
    }

    pub fn vnorm_sq_of_g(&self, gu: &[f64]) -> f64 {
        self.interior_rows
            .iter()
            .map(|&r| self.volumes[r] * gu[r] * gu[r])
            .sum()
    }
}

/// Assembles g_u per dual cell as the negative flux sum over the stored
/// boundary segments.
pub fn fv_divergence(mesh: &TriMesh, a: &CellCoeffs, dual: &DualMesh) -> Result<FvOperator> {
    if !dual.matches(mesh) {
        return Err(RpsError::Structure(
            "dual mesh was built from a different fine mesh".into(),
        ));
    }
    if a.n_cells() != mesh.n_cells() {
        return Err(RpsError::Structure(
            "coefficients sampled on a different mesh".into(),
        ));
    }
    let n = mesh.n_vertices();
    let k = mesh.dim() + 1;
    let mut triplets = Vec::new();
    for v in 0..n {
        let inv_vol = 1.0 / dual.volume(v);
        for seg in dual.segments(v) {
            let t = seg.cell;
            let c = mesh.cell(t);
            let grads = hat_gradients(mesh, t);
            let at = a.value(t);
            for j in 0..k {
                let flux = at * (grads[j][0] * seg.normal_weight[0] + grads[j][1] * seg.normal_weight[1]);
                if flux != 0.0 {
                    triplets.push((v, c[j], -inv_vol * flux));
                }
            }
        }
    }
    let b = CsrMatrix::from_triplets(n, n, triplets);
    let interior_rows = mesh.interior_nodes().collect();
    Ok(FvOperator { b, volumes: dual.volumes().to_vec(), interior_rows })
}

/// Outward flux of a grad(u) through the domain boundary (used to check
/// global flux balance).
pub fn boundary_flux(mesh: &TriMesh, a: &CellCoeffs, u: &[f64]) -> f64 {
    let mut total = 0.0;
    match mesh.dim() {
        1 => {
            // Outward flux at x = 0 and x = 1.
            let first = 0;
            let last = mesh.n_cells() - 1;
            let grads = |t: usize| hat_gradients(mesh, t);
            let du = |t: usize| {
                let c = mesh.cell(t);
                let g = grads(t);
                u[c[0]] * g[0][0] + u[c[1]] * g[1][0]
            };
            total -= a.value(first) * du(first);
            total += a.value(last) * du(last);
        }
        _ => {
            use std::collections::HashMap;
            let mut edge_count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
            for t in 0..mesh.n_cells() {
                let c = mesh.cell(t);
                for k in 0..3 {
                    let (p, q) = (c[k], c[(k + 1) % 3]);
                    let key = (p.min(q), p.max(q));
                    let e = edge_count.entry(key).or_insert((0, t));
                    e.0 += 1;
                    e.1 = t;
                }
            }
            for t in 0..mesh.n_cells() {
                let c = mesh.cell(t);
                let grads = hat_gradients(mesh, t);
                let gu = {
                    let mut g = [0.0, 0.0];
                    for j in 0..3 {
                        g[0] += u[c[j]] * grads[j][0];
                        g[1] += u[c[j]] * grads[j][1];
                    }
                    g
                };
                for k in 0..3 {
                    let (p, q) = (c[k], c[(k + 1) % 3]);
                    let key = (p.min(q), p.max(q));
                    if edge_count[&key].0 == 1 {
                        // CCW cell: outward normal weight of edge p -> q.
                        let (pp, pq) = (mesh.vertex(p), mesh.vertex(q));
                        let nw = [pq[1] - pp[1], -(pq[0] - pp[0])];
                        total += a.value(t) * (gu[0] * nw[0] + gu[1] * nw[1]);
                    }
                }
            }
        }
    }
    total
}

/// Vertex samples of a scalar function.
pub fn nodal_samples(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    (0..mesh.n_vertices()).map(|v| f(mesh.vertex(v))).collect()
}

/// Consistent P1 load vector b = M g_nodal for vertex-sampled g.
pub fn load_vector(mass: &CsrMatrix, g_nodal: &[f64]) -> Vec<f64> {
    mass.matvec(g_nodal)
}

/// Interior degree-of-freedom numbering for Dirichlet elimination.
#[derive(Debug, Clone)]
pub struct DofMap {
    interior: Vec<usize>,
    full_to_reduced: Vec<Option<usize>>,
}

impl DofMap {
    pub fn interior(mesh: &TriMesh) -> DofMap {
        let interior: Vec<usize> = mesh.interior_nodes().collect();
        let mut full_to_reduced = vec![None; mesh.n_vertices()];
        for (r, &v) in interior.iter().enumerate() {
            full_to_reduced[v] = Some(r);
        }
        DofMap { interior, full_to_reduced }
    }

    pub fn n_reduced(&self) -> usize {
        self.interior.len()
    }

    pub fn reduced_of(&self, full: usize) -> Option<usize> {
        self.full_to_reduced[full]
    }

    pub fn indices(&self) -> &[usize] {
        &self.interior
    }

    /// Deletes boundary rows and columns; the result is SPD for elliptic
    /// bilinear forms.
    pub fn restrict_matrix(&self, m: &CsrMatrix) -> CsrMatrix {
        m.restrict(&self.interior)
    }

    pub fn restrict_vec(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&v| full[v]).collect()
    }

    /// Scatters a reduced vector into a full nodal vector (zero on the
    /// boundary).
    pub fn extend_vec(&self, reduced: &[f64], n_full: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_full];
        for (r, &v) in self.interior.iter().enumerate() {
            full[v] = reduced[r];
        }
        full
    }
}

/// Convenience bundle of everything assembled on one fine mesh.
#[derive(Debug)]
pub struct Discretization {
    pub fine: std::sync::Arc<TriMesh>,
    pub coarse: std::sync::Arc<TriMesh>,
    pub coeffs: CellCoeffs,
    pub dual: DualMesh,
    pub fv: FvOperator,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub dofs: DofMap,
}

impl Discretization {
    pub fn build(
        coarse: std::sync::Arc<TriMesh>,
        fine: std::sync::Arc<TriMesh>,
        coeffs: CellCoeffs,
    ) -> Result<Discretization> {
        if !fine.refines(&coarse) {
            return Err(RpsError::Structure(
                "fine mesh does not refine the coarse mesh".into(),
            ));
        }
        let dual = dual_cells(&fine);
        let fv = fv_divergence(&fine, &coeffs, &dual)?;
        let stiffness = stiffness(&fine, &coeffs);
        let mass = mass(&fine);
        let dofs = DofMap::interior(&fine);
        Ok(Discretization { fine, coarse, coeffs, dual, fv, stiffness, mass, dofs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{sample, CoeffSpec};
    use crate::mesh::build_structured;
    use crate::mesh::refine;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn unit_line(n: usize) -> Arc<TriMesh> {
        Arc::new(build_structured(1, n).unwrap())
    }

    fn unit_square(n: usize) -> Arc<TriMesh> {
        Arc::new(build_structured(2, n).unwrap())
    }

    #[test]
    fn stiffness_1d_tridiagonal() {
        let mesh = unit_line(8);
        let a = CellCoeffs::constant(&mesh, 1.0);
        let k = stiffness(&mesh, &a);
        let h = 1.0 / 8.0;
        for v in mesh.interior_nodes() {
            assert!((k.get(v, v) - 2.0 / h).abs() < 1e-12);
            assert!((k.get(v, v - 1) + 1.0 / h).abs() < 1e-12);
            assert!((k.get(v, v + 1) + 1.0 / h).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_linear_in_coefficient() {
        let mesh = unit_square(4);
        let a1 = CellCoeffs::constant(&mesh, 1.0);
        let a2 = CellCoeffs::constant(&mesh, 2.0);
        let k1 = stiffness(&mesh, &a1);
        let k2 = stiffness(&mesh, &a2);
        for r in 0..k1.nrows() {
            let (c1, v1) = k1.row(r);
            let (c2, v2) = k2.row(r);
            assert_eq!(c1, c2);
            for (a, b) in v1.iter().zip(v2) {
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stiffness_spd_after_elimination() {
        let mesh = refine(&unit_square(4), 1);
        let a = sample(&CoeffSpec::TrigMultiscale2d, &mesh).unwrap();
        let k = stiffness(&mesh, &a);
        k.check_symmetric(1e-12, "stiffness").unwrap();
        let dofs = DofMap::interior(&mesh);
        let kd = dofs.restrict_matrix(&k);
        // Cholesky succeeds exactly when the reduced matrix is SPD.
        crate::solver::BandMatrix::from_csr_lower(&kd)
            .cholesky("stiffness")
            .unwrap();
    }

    #[test]
    fn mass_rows_and_total() {
        let mesh = unit_line(10);
        let m = mass(&mesh);
        let h = 0.1;
        for v in mesh.interior_nodes() {
            assert!((m.get(v, v) - 2.0 * h / 3.0).abs() < 1e-12);
            assert!((m.get(v, v - 1) - h / 6.0).abs() < 1e-12);
        }
        let lumped = lumped_mass(&mesh);
        for r in 0..m.nrows() {
            let sum: f64 = m.row(r).1.iter().sum();
            assert!((sum - lumped[r]).abs() < 1e-14);
        }
        let ones = vec![1.0; m.nrows()];
        let total: f64 = m.matvec(&ones).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let mesh2 = unit_square(5);
        let m2 = mass(&mesh2);
        let ones2 = vec![1.0; m2.nrows()];
        let total2: f64 = m2.matvec(&ones2).iter().sum();
        assert!((total2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fv_zero_for_linear_fields() {
        let mesh = refine(&unit_square(4), 1);
        let a = CellCoeffs::constant(&mesh, 3.0);
        let dual = dual_cells(&mesh);
        let fv = fv_divergence(&mesh, &a, &dual).unwrap();
        let u = nodal_samples(&mesh, |p| 2.0 * p[0] - 0.5 * p[1] + 1.0);
        let g = fv.apply(&u);
        for v in mesh.interior_nodes() {
            assert!(g[v].abs() < 1e-10, "g[{v}] = {}", g[v]);
        }
    }

    #[test]
    fn fv_second_difference_1d() {
        let mesh = unit_line(10);
        let a = CellCoeffs::constant(&mesh, 1.0);
        let dual = dual_cells(&mesh);
        let fv = fv_divergence(&mesh, &a, &dual).unwrap();
        let h = 0.1;
        let mut rng = StdRng::seed_from_u64(11);
        let u: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = fv.apply(&u);
        for v in mesh.interior_nodes() {
            let expect = -(u[v + 1] - 2.0 * u[v] + u[v - 1]) / (h * h);
            assert!((g[v] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
        // Quadratic x(1-x): the second difference is exact, g = +2.
        let q = nodal_samples(&mesh, |p| p[0] * (1.0 - p[0]));
        let gq = fv.apply(&q);
        for v in mesh.interior_nodes() {
            assert!((gq[v] - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn fv_matches_scaled_stiffness_rows() {
        // For P1 elements, cellwise-constant a and the median dual, the flux
        // row of an interior vertex equals the stiffness row divided by the
        // dual volume. The two assemblies are independent code paths.
        let mesh = refine(&unit_square(3), 2);
        let a = sample(&CoeffSpec::TrigMultiscale2d, &mesh).unwrap();
        let dual = dual_cells(&mesh);
        let fv = fv_divergence(&mesh, &a, &dual).unwrap();
        let k = stiffness(&mesh, &a);
        for v in mesh.interior_nodes() {
            let (cols, vals) = k.row(v);
            for (c, kv) in cols.iter().zip(vals) {
                let bv = fv.matrix().get(v, *c);
                let expect = kv / dual.volume(v);
                assert!(
                    (bv - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                    "row {v} col {c}: fv {bv} vs scaled stiffness {expect}"
                );
            }
        }
    }

    #[test]
    fn fv_flux_balance() {
        let mesh = refine(&unit_square(4), 1);
        let a = sample(&CoeffSpec::TrigMultiscale2d, &mesh).unwrap();
        let dual = dual_cells(&mesh);
        let fv = fv_divergence(&mesh, &a, &dual).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let mut u = vec![0.0; mesh.n_vertices()];
        for v in mesh.interior_nodes() {
            u[v] = rng.gen_range(-1.0..1.0);
        }
        let g = fv.apply(&u);
        let weighted: f64 = (0..mesh.n_vertices()).map(|v| dual.volume(v) * g[v]).sum();
        let outflow = boundary_flux(&mesh, &a, &u);
        let scale: f64 = (0..mesh.n_vertices()).map(|v| (dual.volume(v) * g[v]).abs()).sum();
        assert!(
            (weighted + outflow).abs() <= 1e-10 * scale.max(1.0),
            "imbalance {} vs scale {scale}",
            weighted + outflow
        );
    }

    #[test]
    fn fv_consistency_order() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let mesh = unit_square(n);
            let a = CellCoeffs::constant(&mesh, 1.0);
            let dual = dual_cells(&mesh);
            let fv = fv_divergence(&mesh, &a, &dual).unwrap();
            let u = nodal_samples(&mesh, |p| (pi * p[0]).sin() * (pi * p[1]).sin());
            let g = fv.apply(&u);
            let mut err: f64 = 0.0;
            for v in mesh.interior_nodes() {
                let p = mesh.vertex(v);
                let exact = 2.0 * pi * pi * (pi * p[0]).sin() * (pi * p[1]).sin();
                err = err.max((g[v] - exact).abs());
            }
            errs.push(err);
        }
        let rate1 = (errs[0] / errs[1]).log2();
        let rate2 = (errs[1] / errs[2]).log2();
        assert!(rate1 >= 1.0 && rate2 >= 1.0, "rates {rate1} {rate2}, errs {errs:?}");
    }

    #[test]
    fn fv_rejects_mismatched_dual() {
        let mesh = unit_square(4);
        let other = refine(&mesh, 1);
        let a = CellCoeffs::constant(&other, 1.0);
        let dual = dual_cells(&mesh);
        assert!(fv_divergence(&other, &a, &dual).is_err());
    }

    #[test]
    fn load_vector_basics() {
        let mesh = unit_square(8);
        let m = mass(&mesh);
        let zero = load_vector(&m, &vec![0.0; mesh.n_vertices()]);
        assert!(zero.iter().all(|&v| v == 0.0));
        let ones = load_vector(&m, &vec![1.0; mesh.n_vertices()]);
        let total: f64 = ones.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    /// Degree-5 Dunavant quadrature on a triangle.
    fn quad5(mesh: &TriMesh, t: usize, f: &dyn Fn(Point) -> f64, hat: usize) -> f64 {
        let c = mesh.cell(t);
        let p: Vec<Point> = c.iter().map(|&v| mesh.vertex(v)).collect();
        let groups: [(f64, f64, f64); 3] = [
            (0.225, 1.0 / 3.0, 1.0 / 3.0),
            (0.132394152788506, 0.059715871789770, 0.470142064105115),
            (0.125939180544827, 0.797426985353087, 0.101286507323456),
        ];
        let mut sum = 0.0;
        for (w, a, b) in groups {
            let perms: Vec<[f64; 3]> = if (a - b).abs() < 1e-15 {
                vec![[a, b, b]]
            } else {
                vec![[a, b, b], [b, a, b], [b, b, a]]
            };
            for lam in perms {
                let x = [
                    lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                    lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
                ];
                sum += w * f(x) * lam[hat];
            }
        }
        sum * mesh.measure(t)
    }

    #[test]
    fn load_vector_matches_quadrature_oracle() {
        let pi = std::f64::consts::PI;
        let g = |p: Point| (pi * p[0]).sin() * (pi * p[1]).sin();
        let mesh = unit_square(16);
        let m = mass(&mesh);
        let b = load_vector(&m, &nodal_samples(&mesh, g));
        let mut oracle = vec![0.0; mesh.n_vertices()];
        for t in 0..mesh.n_cells() {
            let c = mesh.cell(t);
            for k in 0..3 {
                oracle[c[k]] += quad5(&mesh, t, &g, k);
            }
        }
        let max_oracle = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_diff = b
            .iter()
            .zip(&oracle)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        // Vertex sampling is second-order accurate; at h = 1/16 the
        // observed relative deviation is about 8e-3.
        assert!(max_diff / max_oracle < 2e-2, "relative diff {}", max_diff / max_oracle);
    }
}
