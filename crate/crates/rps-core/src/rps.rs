//! Rough polyharmonic spline bases: minimizers of the discrete V-norm
//! (the dual-volume weighted l2 norm of the finite-volume divergence)
//! subject to Kronecker constraints at the coarse nodes, either over the
//! whole domain or over a layered subdomain with zero extension.
//!
//! Constrained degrees of freedom are eliminated, leaving a symmetric
//! positive definite reduced normal system B^T W B on the free fine nodes.
//! Nodes whose subdomains produce identical free sets share one
//! factorization (in particular every node of a global solve does).

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::Discretization;
use crate::error::{Result, RpsError};
use crate::mesh::{layer_region, SubdomainMask};
use crate::solver::{
    band_fits_memory, direct_with_refinement, pcg, BandMatrix, NormalOp, SolverMethod,
    SolverOpts, SolverReport,
};
use crate::sparse::CsrMatrix;

/// Requested support of a basis solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layers {
    Global,
    Local(u32),
}

impl std::fmt::Display for Layers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layers::Global => write!(f, "global"),
            Layers::Local(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum SupportTag {
    Global,
    Layers { l: u32, saturated: bool },
}

/// One basis function as a sparse fine nodal vector. Entries not listed are
/// exactly zero; the entry at the own coarse node is exactly one.
#[derive(Debug, Clone)]
pub struct BasisFunction {
    pub node: usize,
    /// Sorted fine-vertex indices carrying (possibly) nonzero values.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub support: SupportTag,
    /// Attained value of sum_i |V_i| g_phi(y_i)^2.
    pub objective: f64,
    pub report: SolverReport,
}

impl BasisFunction {
    pub fn value_at(&self, fine_vertex: usize) -> f64 {
        match self.indices.binary_search(&fine_vertex) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.scatter_scaled(1.0, &mut out);
        out
    }

    /// out += c * phi
    pub fn scatter_scaled(&self, c: f64, out: &mut [f64]) {
        for (idx, v) in self.indices.iter().zip(&self.values) {
            out[*idx] += c * v;
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(idx, v)| v * dense[*idx])
            .sum()
    }
}

/// The full interpolation basis: one function per coarse node, all built
/// against the same discretization.
#[derive(Debug)]
pub struct RpsBasis {
    pub functions: Vec<BasisFunction>,
    pub layers: Layers,
    pub n_fine: usize,
}

impl RpsBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Shared, factored reduced system for one family of identically-supported
/// subproblems.
struct ReducedSystem {
    /// Free fine vertices, sorted; the unknowns of the reduced problem.
    free: Vec<usize>,
    /// Flux matrix restricted to (relevant interior rows) x (free columns).
    bf: CsrMatrix,
    /// Original row ids of `bf` rows in the full flux matrix.
    rows: Vec<usize>,
    /// Dual volume per restricted row.
    wrows: Vec<f64>,
    factor: Option<crate::solver::BandCholesky>,
    diag: Vec<f64>,
}

impl ReducedSystem {
    fn build(disc: &Discretization, free: Vec<usize>, opts: &SolverOpts) -> Result<ReducedSystem> {
        let b = disc.fv.matrix();
        let n = disc.fine.n_vertices();
        let mut free_of = vec![usize::MAX; n];
        for (k, &v) in free.iter().enumerate() {
            free_of[v] = k;
        }

        // Interior rows touching at least one free column.
        let mut rows = Vec::new();
        let mut wrows = Vec::new();
        let mut triplets = Vec::new();
        for &r in disc.fv.interior_rows() {
            let (cols, vals) = b.row(r);
            if !cols.iter().any(|c| free_of[*c] != usize::MAX) {
                continue;
            }
            let rr = rows.len();
            for (c, v) in cols.iter().zip(vals) {
                if free_of[*c] != usize::MAX {
                    triplets.push((rr, free_of[*c], *v));
                }
            }
            rows.push(r);
            wrows.push(disc.fv.volumes()[r]);
        }
        let nf = free.len();
        let bf = CsrMatrix::from_triplets(rows.len(), nf, triplets);

        // Jacobi diagonal of the normal matrix.
        let mut diag = vec![0.0; nf];
        for rr in 0..bf.nrows() {
            let (cols, vals) = bf.row(rr);
            for (c, v) in cols.iter().zip(vals) {
                diag[*c] += wrows[rr] * v * v;
            }
        }

        // Bandwidth of the normal matrix under the natural free ordering.
        let mut bw = 0usize;
        for rr in 0..bf.nrows() {
            let (cols, _) = bf.row(rr);
            if let (Some(&lo), Some(&hi)) = (cols.first(), cols.last()) {
                bw = bw.max(hi - lo);
            }
        }

        let method = match opts.method {
            SolverMethod::Auto => {
                if band_fits_memory(nf, bw) {
                    SolverMethod::Direct
                } else {
                    SolverMethod::Pcg
                }
            }
            m => m,
        };

        let factor = if method == SolverMethod::Direct && nf > 0 {
            let mut band = BandMatrix::zeros(nf, bw);
            for rr in 0..bf.nrows() {
                let (cols, vals) = bf.row(rr);
                let w = wrows[rr];
                for (ia, &ca) in cols.iter().enumerate() {
                    for (ib, &cb) in cols.iter().enumerate() {
                        if cb <= ca {
                            band.add(ca, cb, w * vals[ia] * vals[ib]);
                        }
                    }
                }
            }
            Some(band.cholesky("basis reduced system")?)
        } else {
            None
        };

        Ok(ReducedSystem { free, bf, rows, wrows, factor, diag })
    }

    /// Right-hand side -B_f^T W b_c for the unit constraint at fine vertex
    /// `cv`.
    fn rhs_for(&self, full_b: &CsrMatrix, cv: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; self.free.len()];
        for (rr, &r) in self.rows.iter().enumerate() {
            let vc = full_b.get(r, cv);
            if vc == 0.0 {
                continue;
            }
            let scale = self.wrows[rr] * vc;
            let (cols, vals) = self.bf.row(rr);
            for (c, v) in cols.iter().zip(vals) {
                rhs[*c] -= scale * v;
            }
        }
        rhs
    }

    fn solve(&self, rhs: &[f64], opts: &SolverOpts) -> Result<(Vec<f64>, SolverReport)> {
        let op = NormalOp { b: &self.bf, w: &self.wrows };
        match &self.factor {
            Some(f) => direct_with_refinement(f, &op, rhs, opts.tol, "basis solve"),
            None => pcg(&op, rhs, &self.diag, opts, "basis solve"),
        }
    }
}

/// Solver for basis functions over one prepared discretization.
pub struct BasisSolver<'a> {
    disc: &'a Discretization,
    opts: SolverOpts,
}

impl<'a> BasisSolver<'a> {
    pub fn new(disc: &'a Discretization, opts: SolverOpts) -> BasisSolver<'a> {
        BasisSolver { disc, opts }
    }

    pub fn n_coarse(&self) -> usize {
        self.disc.coarse.coarse_nodes().len()
    }

    /// Free fine vertices and support tag of node `i`; `None` mask means
    /// global support.
    fn free_set(&self, i: usize, mask: Option<&SubdomainMask>) -> Result<(Vec<usize>, SupportTag)> {
        let coarse_ids = self.disc.coarse.coarse_nodes();
        if i >= coarse_ids.len() {
            return Err(RpsError::Index { what: "coarse node", index: i, len: coarse_ids.len() });
        }
        let mut constrained = vec![false; self.disc.fine.n_vertices()];
        match mask {
            None => {
                for &cv in coarse_ids {
                    constrained[cv] = true;
                }
                let free: Vec<usize> = self
                    .disc
                    .fine
                    .interior_nodes()
                    .filter(|&v| !constrained[v])
                    .collect();
                Ok((free, SupportTag::Global))
            }
            Some(m) => {
                for &j in &m.local_coarse_nodes {
                    constrained[coarse_ids[j]] = true;
                }
                let free: Vec<usize> = m
                    .fine_nodes
                    .iter()
                    .copied()
                    .filter(|&v| !constrained[v])
                    .collect();
                if free.is_empty() {
                    return Err(RpsError::DegenerateSupport { node: i });
                }
                Ok((free, SupportTag::Layers { l: m.layers, saturated: m.saturated }))
            }
        }
    }

    fn mask_for(&self, i: usize, layers: Layers) -> Result<Option<SubdomainMask>> {
        match layers {
            Layers::Global => Ok(None),
            Layers::Local(l) => Ok(Some(layer_region(&self.disc.coarse, &self.disc.fine, i, l)?)),
        }
    }

    fn assemble_function(
        &self,
        i: usize,
        system: &ReducedSystem,
        support: SupportTag,
    ) -> Result<BasisFunction> {
        let cv = self.disc.coarse.coarse_nodes()[i];
        let (reduced, report) = if system.free.is_empty() {
            (Vec::new(), SolverReport { method: "trivial", iterations: 0, residual: 0.0 })
        } else {
            let rhs = system.rhs_for(self.disc.fv.matrix(), cv);
            system.solve(&rhs, &self.opts)?
        };

        // Merge the unit constraint entry into the sorted free entries.
        let insert_at = system.free.partition_point(|&v| v < cv);
        let mut indices = Vec::with_capacity(system.free.len() + 1);
        let mut values = Vec::with_capacity(system.free.len() + 1);
        indices.extend_from_slice(&system.free[..insert_at]);
        values.extend_from_slice(&reduced[..insert_at]);
        indices.push(cv);
        values.push(1.0);
        indices.extend_from_slice(&system.free[insert_at..]);
        values.extend_from_slice(&reduced[insert_at..]);

        let mut dense = vec![0.0; self.disc.fine.n_vertices()];
        for (idx, v) in indices.iter().zip(&values) {
            dense[*idx] = *v;
        }
        let objective = self.disc.fv.vnorm_sq(&dense);

        Ok(BasisFunction { node: i, indices, values, support, objective, report })
    }

    /// Solves the basis problem for one coarse node.
    pub fn solve_node(&self, i: usize, layers: Layers) -> Result<BasisFunction> {
        let mask = self.mask_for(i, layers)?;
        let (free, support) = self.free_set(i, mask.as_ref())?;
        let system = ReducedSystem::build(self.disc, free, &self.opts)?;
        self.assemble_function(i, &system, support)
    }

    /// Solves the basis problem for a caller-supplied subdomain mask.
    pub fn solve_node_on_mask(&self, mask: &SubdomainMask) -> Result<BasisFunction> {
        let (free, support) = self.free_set(mask.center, Some(mask))?;
        let system = ReducedSystem::build(self.disc, free, &self.opts)?;
        self.assemble_function(mask.center, &system, support)
    }

    /// Solves every coarse node. Nodes whose subdomains yield the same free
    /// set share one factorization; results do not depend on the worker
    /// count.
    pub fn solve_all(&self, layers: Layers, workers: usize) -> Result<RpsBasis> {
        let n = self.n_coarse();

        let mut jobs: Vec<(Vec<usize>, SupportTag)> = Vec::with_capacity(n);
        for i in 0..n {
            let mask = self.mask_for(i, layers)?;
            jobs.push(self.free_set(i, mask.as_ref())?);
        }
        let mut groups: HashMap<&[usize], Vec<usize>> = HashMap::new();
        for (i, (free, _)) in jobs.iter().enumerate() {
            groups.entry(free.as_slice()).or_default().push(i);
        }
        let mut grouped: Vec<(Vec<usize>, Vec<usize>)> = groups
            .into_iter()
            .map(|(free, nodes)| (free.to_vec(), nodes))
            .collect();
        grouped.sort_by_key(|(_, nodes)| nodes[0]);

        let run = || -> Result<Vec<Vec<(usize, BasisFunction)>>> {
            grouped
                .par_iter()
                .map(|(free, nodes)| {
                    let system = ReducedSystem::build(self.disc, free.clone(), &self.opts)?;
                    nodes
                        .iter()
                        .map(|&i| {
                            let f = self.assemble_function(i, &system, jobs[i].1.clone())?;
                            Ok((i, f))
                        })
                        .collect()
                })
                .collect()
        };
        let solved: Vec<Vec<(usize, BasisFunction)>> = if workers == 0 {
            run()?
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| RpsError::Structure(format!("worker pool: {e}")))?;
            pool.install(run)?
        };

        let mut functions: Vec<Option<BasisFunction>> = (0..n).map(|_| None).collect();
        for group in solved {
            for (i, f) in group {
                functions[i] = Some(f);
            }
        }
        Ok(RpsBasis {
            functions: functions.into_iter().map(Option::unwrap).collect(),
            layers,
            n_fine: self.disc.fine.n_vertices(),
        })
    }
}

/// Gram matrix P of the basis in the discrete V-product,
/// P_ij = sum_r |V_r| g_{phi_i}(y_r) g_{phi_j}(y_r). Exact for the global
/// basis; for a localized basis it is the Gram of the localized functions,
/// an approximation of the global P.
pub fn gram(disc: &Discretization, basis: &RpsBasis) -> DMatrix<f64> {
    let n = basis.len();
    let rows = disc.fv.interior_rows();
    // Volume-weighted flux images of every basis function.
    let mut imgs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for f in &basis.functions {
        let dense = f.to_dense(basis.n_fine);
        let g = disc.fv.apply(&dense);
        imgs.push(rows.iter().map(|&r| disc.fv.volumes()[r].sqrt() * g[r]).collect());
    }
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = imgs[i].iter().zip(&imgs[j]).map(|(a, b)| a * b).sum();
            p[(i, j)] = dot;
            p[(j, i)] = dot;
        }
    }
    p
}

/// Inverse of the Gram matrix by dense symmetric factorization.
pub fn theta(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match p.clone().cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => {
            let eig = p.clone().symmetric_eigen();
            let max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            Err(RpsError::Conditioning {
                what: "gram matrix",
                cond: if min > 0.0 { max / min } else { f64::INFINITY },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Discretization;
    use crate::coeff::{sample, CellCoeffs, CoeffSpec};
    use crate::mesh::{build_structured, refine};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn disc_nd(
        dim: usize,
        divisions: usize,
        refinements: usize,
        spec: Option<&CoeffSpec>,
    ) -> Discretization {
        let coarse = Arc::new(build_structured(dim, divisions).unwrap());
        let fine = refine(&coarse, refinements);
        let coeffs = match spec {
            Some(s) => sample(s, &fine).unwrap(),
            None => CellCoeffs::constant(&fine, 1.0),
        };
        Discretization::build(coarse, fine, coeffs).unwrap()
    }

    #[test]
    fn one_node_closed_form() {
        // Single coarse node at 1/2, a = 1, h = 1/128. The continuum
        // minimizer of int (phi'')^2 with natural end conditions is
        // 3x - 4x^3 on [0, 1/2]; phi(1/4) = 0.6875 and the attained
        // objective is 48.
        let disc = disc_nd(1, 2, 6, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let phi = solver.solve_node(0, Layers::Global).unwrap();
        let quarter = (0..disc.fine.n_vertices())
            .find(|&v| disc.fine.vertex(v)[0] == 0.25)
            .unwrap();
        assert!((phi.value_at(quarter) - 0.6875).abs() <= 0.01);
        assert!((phi.objective - 48.0).abs() / 48.0 <= 0.02, "objective {}", phi.objective);
        let cv = disc.coarse.coarse_nodes()[0];
        assert_eq!(phi.value_at(cv), 1.0);
    }

    #[test]
    fn kronecker_exactness() {
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        for layers in [Layers::Global, Layers::Local(1), Layers::Local(2)] {
            let basis = solver.solve_all(layers, 0).unwrap();
            assert_eq!(basis.len(), 9);
            for (i, f) in basis.functions.iter().enumerate() {
                for (j, &cv) in disc.coarse.coarse_nodes().iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(f.value_at(cv), expect, "phi_{i}(x_{j})");
                }
                for v in disc.fine.boundary_nodes() {
                    assert_eq!(f.value_at(v), 0.0);
                }
            }
        }
    }

    #[test]
    fn localized_zero_outside_support() {
        let disc = disc_nd(2, 8, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let mask = layer_region(&disc.coarse, &disc.fine, 10, 2).unwrap();
        let phi = solver.solve_node_on_mask(&mask).unwrap();
        assert!(!mask.saturated);
        for (idx, v) in phi.indices.iter().zip(&phi.values) {
            if *v != 0.0 {
                assert!(mask.contains_fine_node(*idx), "nonzero value outside support");
            }
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let b1 = solver.solve_all(Layers::Local(2), 1).unwrap();
        let b4 = solver.solve_all(Layers::Local(2), 4).unwrap();
        for (f1, f4) in b1.functions.iter().zip(&b4.functions) {
            assert_eq!(f1.objective.to_bits(), f4.objective.to_bits());
            assert_eq!(f1.values, f4.values);
        }
    }

    #[test]
    fn localized_supports_stay_sparse() {
        let disc = disc_nd(2, 16, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(Layers::Local(3), 0).unwrap();
        let n = disc.fine.n_vertices();
        let total_nnz: usize = basis.functions.iter().map(|f| f.nnz()).sum();
        for f in &basis.functions {
            match f.support {
                SupportTag::Layers { saturated, .. } => assert!(!saturated),
                _ => panic!("expected layered support"),
            }
        }
        assert!(
            total_nnz * 4 < basis.len() * n,
            "nnz {} vs dense {}",
            total_nnz,
            basis.len() * n
        );
    }

    #[test]
    fn objectives_decrease_with_layers() {
        let disc = disc_nd(2, 8, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let i = disc.coarse.coarse_nodes().len() / 2;
        let global = solver.solve_node(i, Layers::Global).unwrap();
        let mut prev = f64::INFINITY;
        for l in 1..=4 {
            let loc = solver.solve_node(i, Layers::Local(l)).unwrap();
            assert!(loc.objective <= prev + 1e-10, "objective grew at l={l}");
            assert!(loc.objective >= global.objective - 1e-10);
            prev = loc.objective;
        }
    }

    #[test]
    fn stationarity_orthogonal_to_free_hats() {
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let phi = solver.solve_node(4, Layers::Global).unwrap();
        let n = disc.fine.n_vertices();
        let dense = phi.to_dense(n);
        let phi_norm = disc.fv.vnorm_sq(&dense).sqrt();
        let mut constrained = vec![false; n];
        for &cv in disc.coarse.coarse_nodes() {
            constrained[cv] = true;
        }
        let free: Vec<usize> = disc.fine.interior_nodes().filter(|&v| !constrained[v]).collect();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..25 {
            let k = free[rng.gen_range(0..free.len())];
            let mut hat = vec![0.0; n];
            hat[k] = 1.0;
            let hat_norm = disc.fv.vnorm_sq(&hat).sqrt();
            let inner = disc.fv.vproduct(&dense, &hat);
            assert!(
                inner.abs() <= 1e-8 * phi_norm * hat_norm,
                "stationarity violated: {inner}"
            );
        }
    }

    #[test]
    fn minimality_under_feasible_perturbations() {
        let disc = disc_nd(1, 8, 3, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let phi = solver.solve_node(3, Layers::Global).unwrap();
        let n = disc.fine.n_vertices();
        let dense = phi.to_dense(n);
        let base = disc.fv.vnorm_sq(&dense);
        let mut constrained = vec![false; n];
        for &cv in disc.coarse.coarse_nodes() {
            constrained[cv] = true;
        }
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let mut pert = dense.clone();
            for v in disc.fine.interior_nodes() {
                if !constrained[v] {
                    pert[v] += 0.1 * rng.gen_range(-1.0..1.0);
                }
            }
            assert!(disc.fv.vnorm_sq(&pert) >= base - 1e-10);
        }
    }

    #[test]
    fn gram_identities() {
        let spec = CoeffSpec::RandomFourier1d {
            alpha: 1.0,
            modes: 20,
            seed: 7,
            rng: crate::coeff::RNG_ALGORITHM.into(),
        };
        let disc = disc_nd(1, 9, 3, Some(&spec));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(Layers::Global, 0).unwrap();
        let p = gram(&disc, &basis);
        let n = basis.len();
        let max = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                assert!((p[(i, j)] - p[(j, i)]).abs() <= 1e-10 * max);
            }
        }
        let th = theta(&p).unwrap();
        let id = &p * &th;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - expect).abs() < 1e-8, "P Theta at ({i},{j})");
            }
        }
        // Interpolation-energy identity: |sum w_i phi_i|_V^2 = w^T P w.
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..20 {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut combo = vec![0.0; disc.fine.n_vertices()];
            for (f, &wi) in basis.functions.iter().zip(&w) {
                f.scatter_scaled(wi, &mut combo);
            }
            let lhs = disc.fv.vnorm_sq(&combo);
            let wv = nalgebra::DVector::from_vec(w);
            let rhs = (wv.transpose() * &p * &wv)[(0, 0)];
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-30), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn single_node_gram_closed_form() {
        let disc = disc_nd(1, 2, 7, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(Layers::Global, 0).unwrap();
        let p = gram(&disc, &basis);
        assert!((p[(0, 0)] - 48.0).abs() / 48.0 <= 0.02, "P11 = {}", p[(0, 0)]);
    }

    #[test]
    fn degenerate_support_is_reported() {
        // Unrefined mesh: a one-layer subdomain holds no free fine nodes.
        let disc = disc_nd(1, 8, 0, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        match solver.solve_node(3, Layers::Local(1)) {
            Err(RpsError::DegenerateSupport { node }) => assert_eq!(node, 3),
            other => panic!("expected degenerate support, got {other:?}"),
        }
    }

    #[test]
    fn global_with_no_free_nodes_gives_hats() {
        // H = h: every interior node is constrained, so each basis function
        // is exactly the fine hat at its node.
        let disc = disc_nd(1, 8, 0, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(Layers::Global, 0).unwrap();
        for (i, f) in basis.functions.iter().enumerate() {
            assert_eq!(f.nnz(), 1);
            assert_eq!(f.value_at(disc.coarse.coarse_nodes()[i]), 1.0);
        }
    }

    #[test]
    fn pcg_and_direct_agree() {
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let direct = BasisSolver::new(
            &disc,
            SolverOpts { method: SolverMethod::Direct, ..Default::default() },
        );
        let iterative = BasisSolver::new(
            &disc,
            SolverOpts { method: SolverMethod::Pcg, tol: 1e-12, max_iter: Some(200_000) },
        );
        let a = direct.solve_node(4, Layers::Global).unwrap();
        let b = iterative.solve_node(4, Layers::Global).unwrap();
        let n = disc.fine.n_vertices();
        let (da, db) = (a.to_dense(n), b.to_dense(n));
        let diff = da
            .iter()
            .zip(&db)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-6, "direct vs pcg max diff {diff}");
    }
}
