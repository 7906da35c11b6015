//! Galerkin solves: the fine P1 reference problem, the coarse problem on the
//! span of an RPS basis, nodal interpolation, and recovery of a solution
//! from point measurements at the coarse nodes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assembly::{load_vector, Discretization};
use crate::error::{Result, RpsError};
use crate::mesh::mesh_norm;
use crate::rps::{Layers, RpsBasis};
use crate::solver::{direct_with_refinement, BandMatrix, SolverOpts, SolverReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FineReference,
    CoarseGlobal,
    CoarseLocalized(u32),
    Interpolant,
    Recovery,
}

/// A fine nodal vector with zero trace on the boundary.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: Vec<f64>,
    pub provenance: Provenance,
    pub report: Option<SolverReport>,
}

/// Coarse Galerkin system on the basis span: S_ij = int grad(phi_i) a
/// grad(phi_j), assembled from the fine stiffness so the coarse problem is
/// exactly consistent with the fine discretization.
#[derive(Debug)]
pub struct CoarseSystem {
    pub s: DMatrix<f64>,
    pub b: DVector<f64>,
    pub coeffs: Vec<f64>,
}

/// Fine P1 Galerkin solve of -div(a grad u) = g with zero Dirichlet data.
pub fn solve_fine(disc: &Discretization, g_nodal: &[f64], opts: &SolverOpts) -> Result<Solution> {
    let b_full = load_vector(&disc.mass, g_nodal);
    let b_i = disc.dofs.restrict_vec(&b_full);
    let a_ii = disc.dofs.restrict_matrix(&disc.stiffness);
    let factor = BandMatrix::from_csr_lower(&a_ii).cholesky("fine stiffness")?;
    let (u_i, report) = direct_with_refinement(&factor, &a_ii, &b_i, opts.tol, "fine solve")?;
    Ok(Solution {
        values: disc.dofs.extend_vec(&u_i, disc.fine.n_vertices()),
        provenance: Provenance::FineReference,
        report: Some(report),
    })
}

/// Assembles and solves the coarse Galerkin problem over the basis span.
pub fn coarse_solve(
    disc: &Discretization,
    basis: &RpsBasis,
    g_nodal: &[f64],
) -> Result<(CoarseSystem, Solution)> {
    let s = coarse_stiffness(disc, basis);
    let b_full = load_vector(&disc.mass, g_nodal);
    let b = DVector::from_iterator(
        basis.len(),
        basis.functions.iter().map(|f| f.dot(&b_full)),
    );
    let chol = s.clone().cholesky().ok_or(RpsError::Conditioning {
        what: "coarse stiffness",
        cond: f64::INFINITY,
    })?;
    let c = chol.solve(&b);
    let mut values = vec![0.0; basis.n_fine];
    for (f, &ci) in basis.functions.iter().zip(c.iter()) {
        f.scatter_scaled(ci, &mut values);
    }
    let provenance = match basis.layers {
        Layers::Global => Provenance::CoarseGlobal,
        Layers::Local(l) => Provenance::CoarseLocalized(l),
    };
    Ok((
        CoarseSystem { s, b, coeffs: c.iter().copied().collect() },
        Solution { values, provenance, report: None },
    ))
}

/// S_ij = phi_i^T A phi_j over the fine mesh.
pub fn coarse_stiffness(disc: &Discretization, basis: &RpsBasis) -> DMatrix<f64> {
    let n = basis.len();
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        let phi_j = basis.functions[j].to_dense(basis.n_fine);
        let a_phi_j = disc.stiffness.matvec(&phi_j);
        for i in 0..=j {
            let v = basis.functions[i].dot(&a_phi_j);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Energy product int grad(u) a grad(v) of two fine nodal vectors.
pub fn energy_product(disc: &Discretization, u: &[f64], v: &[f64]) -> f64 {
    let av = disc.stiffness.matvec(v);
    u.iter().zip(&av).map(|(a, b)| a * b).sum()
}

/// Nodal interpolant sum_i w_i phi_i.
pub fn interpolate(basis: &RpsBasis, nodal_values: &[f64]) -> Result<Solution> {
    if nodal_values.len() != basis.len() {
        return Err(RpsError::Structure(format!(
            "expected {} nodal values, got {}",
            basis.len(),
            nodal_values.len()
        )));
    }
    let mut values = vec![0.0; basis.n_fine];
    for (f, &wi) in basis.functions.iter().zip(nodal_values) {
        f.scatter_scaled(wi, &mut values);
    }
    Ok(Solution { values, provenance: Provenance::Interpolant, report: None })
}

/// Accuracy statement attached to a recovery: the bound constant is not
/// computable, so it stays symbolic next to the measured mesh norm.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub mesh_norm: f64,
    pub source_bound: Option<f64>,
    pub statement: String,
}

/// Recovers a solution from its values at the coarse nodes. Every coarse
/// node needs a measurement; `source_bound` is the caller's bound M on the
/// L2 norm of the unknown source term.
pub fn recover(
    disc: &Discretization,
    basis: &RpsBasis,
    measurements: &[(usize, f64)],
    source_bound: Option<f64>,
) -> Result<(Solution, RecoveryReport)> {
    let n = basis.len();
    let mut nodal = vec![None; n];
    for &(i, v) in measurements {
        if i >= n {
            return Err(RpsError::Index { what: "measurement node", index: i, len: n });
        }
        nodal[i] = Some(v);
    }
    let missing = nodal.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(RpsError::MeasurementCoverage { missing });
    }
    let values: Vec<f64> = nodal.into_iter().map(Option::unwrap).collect();
    let mut sol = interpolate(basis, &values)?;
    sol.provenance = Provenance::Recovery;

    let h = mesh_norm(&disc.coarse.coarse_node_positions(), &disc.fine)?;
    let statement = match source_bound {
        Some(m) => format!(
            "H1 recovery error <= C * H * M with H = {h:.6e}, M = {m:.6e}; \
             C depends only on the coefficient bounds and the domain"
        ),
        None => format!(
            "H1 recovery error <= C * H * |g|_L2 with H = {h:.6e}; \
             C depends only on the coefficient bounds and the domain"
        ),
    };
    Ok((sol, RecoveryReport { mesh_norm: h, source_bound, statement }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::nodal_samples;
    use crate::coeff::{sample, CellCoeffs, CoeffSpec};
    use crate::mesh::{build_structured, refine};
    use crate::rps::BasisSolver;
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
    fn zero_source_zero_solution() {
        let disc = disc_nd(2, 4, 1, None);
        let u = solve_fine(&disc, &vec![0.0; disc.fine.n_vertices()], &SolverOpts::default())
            .unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_1d_quadratic_exact() {
        // -u'' = 2 with u(0) = u(1) = 0 has solution x(1-x); with the
        // consistent-mass load of the constant source the P1 nodal values
        // are exact up to solver tolerance.
        let disc = disc_nd(1, 4, 4, None);
        let g = vec![2.0; disc.fine.n_vertices()];
        let u = solve_fine(&disc, &g, &SolverOpts::default()).unwrap();
        for v in 0..disc.fine.n_vertices() {
            let x = disc.fine.vertex(v)[0];
            assert!((u.values[v] - x * (1.0 - x)).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_2d_manufactured_rate() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let disc = disc_nd(2, n, 0, None);
            let g = nodal_samples(&disc.fine, |p| {
                2.0 * pi * pi * (pi * p[0]).sin() * (pi * p[1]).sin()
            });
            let u = solve_fine(&disc, &g, &SolverOpts::default()).unwrap();
            let exact = nodal_samples(&disc.fine, |p| (pi * p[0]).sin() * (pi * p[1]).sin());
            // L2 error via the mass matrix.
            let diff: Vec<f64> = u.values.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let md = disc.mass.matvec(&diff);
            let l2 = diff.iter().zip(&md).map(|(a, b)| a * b).sum::<f64>().sqrt();
            errs.push(l2);
        }
        let r1 = (errs[0] / errs[1]).log2();
        let r2 = (errs[1] / errs[2]).log2();
        assert!(r1 > 1.7 && r2 > 1.7, "rates {r1} {r2} errs {errs:?}");
    }

    #[test]
    fn single_node_coarse_stiffness_closed_form() {
        // One coarse node at 1/2 with a = 1: S11 converges to
        // int_0^1 (phi')^2 = 4.8 of the cubic 3x - 4x^3.
        let disc = disc_nd(1, 2, 7, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let s = coarse_stiffness(&disc, &basis);
        assert!((s[(0, 0)] - 4.8).abs() / 4.8 <= 0.02, "S11 = {}", s[(0, 0)]);
    }

    #[test]
    fn galerkin_orthogonality_and_energy_optimality() {
        let pi = std::f64::consts::PI;
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let g = nodal_samples(&disc.fine, |p| (pi * p[0]).sin() * (pi * p[1]).sin());
        let u = solve_fine(&disc, &g, &SolverOpts::default()).unwrap();
        let (_, uh) = coarse_solve(&disc, &basis, &g).unwrap();

        let diff: Vec<f64> = u.values.iter().zip(&uh.values).map(|(a, b)| a - b).collect();
        let u_energy = energy_product(&disc, &u.values, &u.values).sqrt();
        for f in &basis.functions {
            let phi = f.to_dense(basis.n_fine);
            let inner = energy_product(&disc, &diff, &phi);
            let phi_energy = energy_product(&disc, &phi, &phi).sqrt();
            assert!(
                inner.abs() <= 1e-8 * u_energy * phi_energy,
                "orthogonality violated: {inner}"
            );
        }

        // Energy optimality against the nodal interpolant.
        let nodal: Vec<f64> = disc
            .coarse
            .coarse_nodes()
            .iter()
            .map(|&cv| u.values[cv])
            .collect();
        let uin = interpolate(&basis, &nodal).unwrap();
        let din: Vec<f64> = u.values.iter().zip(&uin.values).map(|(a, b)| a - b).collect();
        let e_h = energy_product(&disc, &diff, &diff);
        let e_in = energy_product(&disc, &din, &din);
        assert!(e_h <= e_in + 1e-10, "galerkin {e_h} vs interpolant {e_in}");
    }

    #[test]
    fn coarse_solve_is_linear_in_source() {
        let disc = disc_nd(1, 8, 3, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let n = disc.fine.n_vertices();
        let mut rng = StdRng::seed_from_u64(2);
        let g1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let (_, u1) = coarse_solve(&disc, &basis, &g1).unwrap();
        let (_, u2) = coarse_solve(&disc, &basis, &g2).unwrap();
        let (_, u12) = coarse_solve(&disc, &basis, &sum).unwrap();
        for k in 0..n {
            assert!((u1.values[k] + u2.values[k] - u12.values[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn localized_matches_global_at_saturation() {
        let disc = disc_nd(2, 4, 2, Some(&CoeffSpec::TrigMultiscale2d));
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let global = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let local = solver.solve_all(crate::rps::Layers::Local(8), 0).unwrap();
        let g = vec![1.0; disc.fine.n_vertices()];
        let (_, ug) = coarse_solve(&disc, &global, &g).unwrap();
        let (_, ul) = coarse_solve(&disc, &local, &g).unwrap();
        let diff = ug
            .values
            .iter()
            .zip(&ul.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-8, "saturated localized vs global: {diff}");
    }

    #[test]
    fn interpolate_basics() {
        let disc = disc_nd(1, 8, 2, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let n = basis.len();
        let mut e3 = vec![0.0; n];
        e3[3] = 1.0;
        let u = interpolate(&basis, &e3).unwrap();
        let phi3 = basis.functions[3].to_dense(basis.n_fine);
        assert_eq!(u.values, phi3);
        let zero = interpolate(&basis, &vec![0.0; n]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(interpolate(&basis, &vec![0.0; n + 1]).is_err());
    }

    #[test]
    fn recovery_equals_interpolant_and_is_linear_in_noise() {
        let disc = disc_nd(1, 8, 3, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let g = vec![1.0; disc.fine.n_vertices()];
        let u = solve_fine(&disc, &g, &SolverOpts::default()).unwrap();
        let nodal: Vec<f64> = disc
            .coarse
            .coarse_nodes()
            .iter()
            .map(|&cv| u.values[cv])
            .collect();
        let measurements: Vec<(usize, f64)> =
            nodal.iter().enumerate().map(|(i, &v)| (i, v)).collect();
        let (rec, report) = recover(&disc, &basis, &measurements, Some(1.0)).unwrap();
        let uin = interpolate(&basis, &nodal).unwrap();
        assert_eq!(rec.values, uin.values);
        assert!(report.statement.contains("H = "));

        // Additive noise shifts the recovery by exactly sum eta_i phi_i.
        let mut rng = StdRng::seed_from_u64(4);
        let eta: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let noisy: Vec<(usize, f64)> = nodal
            .iter()
            .enumerate()
            .map(|(i, &v)| (i, v + eta[i]))
            .collect();
        let (rec_noisy, _) = recover(&disc, &basis, &noisy, None).unwrap();
        let shift = interpolate(&basis, &eta).unwrap();
        for k in 0..basis.n_fine {
            let expect = rec.values[k] + shift.values[k];
            assert!((rec_noisy.values[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_requires_full_coverage() {
        let disc = disc_nd(1, 8, 2, None);
        let solver = BasisSolver::new(&disc, SolverOpts::default());
        let basis = solver.solve_all(crate::rps::Layers::Global, 0).unwrap();
        let partial: Vec<(usize, f64)> = (0..basis.len() - 2).map(|i| (i, 0.5)).collect();
        match recover(&disc, &basis, &partial, None) {
            Err(RpsError::MeasurementCoverage { missing }) => assert_eq!(missing, 2),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }
}
