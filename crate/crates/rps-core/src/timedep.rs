//! Time-dependent solvers on the fine mesh and on RPS coarse spaces: Newmark
//! average-acceleration stepping for the wave equation and implicit Euler for
//! the parabolic equation. Matrices are factored once per run and reused at
//! every step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::assembly::Discretization;
use crate::error::{Result, RpsError};
use crate::homog::coarse_stiffness;
use crate::mesh::Point;
use crate::rps::RpsBasis;
use crate::solver::{BandCholesky, BandMatrix};
use crate::sparse::CsrMatrix;

/// Newmark average-acceleration parameters.
const BETA: f64 = 0.25;
const GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<TimeGrid> {
        if !(final_time > 0.0) || steps < 1 {
            return Err(RpsError::Config(format!(
                "time grid needs positive final time and at least one step, got T={final_time}, steps={steps}"
            )));
        }
        Ok(TimeGrid { final_time, steps })
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }
}

/// Which space a trajectory was computed on.
pub enum Space<'a> {
    Fine,
    Coarse(&'a RpsBasis),
}

/// Initial data; the paper's experiments use the zero default.
#[derive(Debug, Clone, Default)]
pub struct InitialData {
    pub displacement: Option<Vec<f64>>,
    pub velocity: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Snapshot times; always ends at the final time.
    pub times: Vec<f64>,
    /// Fine nodal snapshots (coarse runs are expanded onto the fine mesh).
    pub snapshots: Vec<Vec<f64>>,
    /// Coarse coefficient snapshots when computed on a coarse space.
    pub coarse_coeffs: Option<Vec<Vec<f64>>>,
    pub density: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.snapshots.last().expect("trajectory has at least the terminal snapshot")
    }
}

fn snapshot_times(grid: &TimeGrid, every: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = if every == 0 {
        Vec::new()
    } else {
        (0..=grid.steps).step_by(every).collect()
    };
    if steps.last() != Some(&grid.steps) {
        steps.push(grid.steps);
    }
    steps
}

/// Discrete wave energy (1/2) rho v^T M v + (1/2) u^T K u; conserved exactly
/// by the average-acceleration scheme for vanishing sources.
pub fn wave_energy(disc: &Discretization, u: &[f64], v: &[f64], density: f64) -> f64 {
    let mv = disc.mass.matvec(v);
    let ku = disc.stiffness.matvec(u);
    0.5 * density * v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>()
        + 0.5 * u.iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>()
}

struct FineSystem {
    m: CsrMatrix,
    k: CsrMatrix,
    ni: usize,
}

impl FineSystem {
    fn build(disc: &Discretization) -> FineSystem {
        let m = disc.dofs.restrict_matrix(&disc.mass);
        let k = disc.dofs.restrict_matrix(&disc.stiffness);
        let ni = disc.dofs.n_reduced();
        FineSystem { m, k, ni }
    }

    fn combine(&self, cm: f64, ck: f64) -> BandMatrix {
        let mut triplets = Vec::new();
        for r in 0..self.ni {
            let (cols, vals) = self.m.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= r {
                    triplets.push((r, *c, cm * v));
                }
            }
            let (cols, vals) = self.k.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= r {
                    triplets.push((r, *c, ck * v));
                }
            }
        }
        let mut bw = 0;
        for &(r, c, _) in &triplets {
            bw = bw.max(r - c);
        }
        let mut band = BandMatrix::zeros(self.ni, bw);
        for (r, c, v) in triplets {
            band.add(r, c, v);
        }
        band
    }
}

struct CoarseSystem {
    m: DMatrix<f64>,
    k: DMatrix<f64>,
    n: usize,
}

fn coarse_matrices(disc: &Discretization, basis: &RpsBasis) -> CoarseSystem {
    let k = coarse_stiffness(disc, basis);
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let phi_j = basis.functions[j].to_dense(basis.n_fine);
        let m_phi_j = disc.mass.matvec(&phi_j);
        for i in 0..=j {
            let v = basis.functions[i].dot(&m_phi_j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CoarseSystem { m, k, n }
}

fn coarse_load(basis: &RpsBasis, load_full: &[f64]) -> DVector<f64> {
    DVector::from_iterator(basis.len(), basis.functions.iter().map(|f| f.dot(load_full)))
}

fn expand(basis: &RpsBasis, c: &DVector<f64>) -> Vec<f64> {
    let mut out = vec![0.0; basis.n_fine];
    for (f, ci) in basis.functions.iter().zip(c.iter()) {
        f.scatter_scaled(*ci, &mut out);
    }
    out
}

fn dense_cholesky(m: DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    m.cholesky().ok_or(RpsError::Conditioning { what, cond: f64::INFINITY })
}

/// Source term g(x, t) sampled at fine vertices; the mass matrix turns the
/// samples into a consistent load.
fn sample_load(disc: &Discretization, g: &dyn Fn(Point, f64) -> f64, t: f64) -> Vec<f64> {
    let nodal: Vec<f64> =
        (0..disc.fine.n_vertices()).map(|v| g(disc.fine.vertex(v), t)).collect();
    disc.mass.matvec(&nodal)
}

/// Newmark average-acceleration solve of rho u_tt - div(a grad u) = g with
/// zero Dirichlet data.
pub fn solve_wave(
    disc: &Discretization,
    space: Space<'_>,
    g: &dyn Fn(Point, f64) -> f64,
    grid: &TimeGrid,
    density: f64,
    initial: &InitialData,
    snapshot_every: usize,
) -> Result<Trajectory> {
    if !(density > 0.0) {
        return Err(RpsError::Config(format!("density must be positive, got {density}")));
    }
    let dt = grid.dt();
    let marks = snapshot_times(grid, snapshot_every);
    match space {
        Space::Fine => {
            let sys = FineSystem::build(disc);
            let m_factor = sys.combine(density, 0.0).cholesky("wave mass")?;
            let eff = sys.combine(density, BETA * dt * dt).cholesky("wave effective matrix")?;
            let n_full = disc.fine.n_vertices();
            let mut u = disc
                .dofs
                .restrict_vec(initial.displacement.as_deref().unwrap_or(&vec![0.0; n_full]));
            let mut v = disc
                .dofs
                .restrict_vec(initial.velocity.as_deref().unwrap_or(&vec![0.0; n_full]));
            let load0 = disc.dofs.restrict_vec(&sample_load(disc, g, 0.0));
            let ku = sys.k.matvec(&u);
            let r0: Vec<f64> = load0.iter().zip(&ku).map(|(b, k)| b - k).collect();
            let mut acc = m_factor.solve(&r0);

            let mut times = Vec::new();
            let mut snaps = Vec::new();
            let mut record = |step: usize, u: &[f64]| {
                if marks.contains(&step) {
                    times.push(step as f64 * dt);
                    snaps.push(disc.dofs.extend_vec(u, n_full));
                }
            };
            record(0, &u);
            for step in 1..=grid.steps {
                let t = step as f64 * dt;
                let load = disc.dofs.restrict_vec(&sample_load(disc, g, t));
                step_newmark(&sys.k, &eff, &load, dt, &mut u, &mut v, &mut acc);
                record(step, &u);
            }
            Ok(Trajectory { times, snapshots: snaps, coarse_coeffs: None, density })
        }
        Space::Coarse(basis) => {
            if initial.displacement.is_some() || initial.velocity.is_some() {
                return Err(RpsError::Config(
                    "coarse-space time stepping supports only zero initial data".into(),
                ));
            }
            let sys = coarse_matrices(disc, basis);
            let m_factor = dense_cholesky(&sys.m * density, "coarse wave mass")?;
            let eff = dense_cholesky(
                &sys.m * density + &sys.k * (BETA * dt * dt),
                "coarse wave effective matrix",
            )?;
            let mut u = DVector::zeros(sys.n);
            let mut v = DVector::zeros(sys.n);
            let mut acc = m_factor.solve(&coarse_load(basis, &sample_load(disc, g, 0.0)));

            let mut times = Vec::new();
            let mut snaps = Vec::new();
            let mut coeffs = Vec::new();
            let mut record = |step: usize, u: &DVector<f64>| {
                if marks.contains(&step) {
                    times.push(step as f64 * dt);
                    snaps.push(expand(basis, u));
                    coeffs.push(u.iter().copied().collect());
                }
            };
            record(0, &u);
            for step in 1..=grid.steps {
                let t = step as f64 * dt;
                let load = coarse_load(basis, &sample_load(disc, g, t));
                // Predictors, then the effective solve for the acceleration.
                let u_star = &u + &v * dt + &acc * (dt * dt * (0.5 - BETA));
                let v_star = &v + &acc * (dt * (1.0 - GAMMA));
                let rhs = &load - &sys.k * &u_star;
                acc = eff.solve(&rhs);
                u = u_star + &acc * (BETA * dt * dt);
                v = v_star + &acc * (GAMMA * dt);
                record(step, &u);
            }
            Ok(Trajectory { times, snapshots: snaps, coarse_coeffs: Some(coeffs), density })
        }
    }
}

/// One Newmark step on reduced fine vectors.
fn step_newmark(
    k: &CsrMatrix,
    eff: &BandCholesky,
    load: &[f64],
    dt: f64,
    u: &mut Vec<f64>,
    v: &mut Vec<f64>,
    acc: &mut Vec<f64>,
) {
    let n = u.len();
    let mut u_star = vec![0.0; n];
    let mut v_star = vec![0.0; n];
    for i in 0..n {
        u_star[i] = u[i] + dt * v[i] + dt * dt * (0.5 - BETA) * acc[i];
        v_star[i] = v[i] + dt * (1.0 - GAMMA) * acc[i];
    }
    let ku = k.matvec(&u_star);
    let rhs: Vec<f64> = load.iter().zip(&ku).map(|(b, k)| b - k).collect();
    *acc = eff.solve(&rhs);
    for i in 0..n {
        u[i] = u_star[i] + BETA * dt * dt * acc[i];
        v[i] = v_star[i] + GAMMA * dt * acc[i];
    }
}

/// Implicit Euler solve of u_t - div(a grad u) = g with zero Dirichlet data.
pub fn solve_parabolic(
    disc: &Discretization,
    space: Space<'_>,
    g: &dyn Fn(Point, f64) -> f64,
    grid: &TimeGrid,
    initial: &InitialData,
    snapshot_every: usize,
) -> Result<Trajectory> {
    let dt = grid.dt();
    let marks = snapshot_times(grid, snapshot_every);
    match space {
        Space::Fine => {
            let sys = FineSystem::build(disc);
            let eff = sys.combine(1.0, dt).cholesky("parabolic effective matrix")?;
            let n_full = disc.fine.n_vertices();
            let mut u = disc
                .dofs
                .restrict_vec(initial.displacement.as_deref().unwrap_or(&vec![0.0; n_full]));

            let mut times = Vec::new();
            let mut snaps = Vec::new();
            let mut record = |step: usize, u: &[f64]| {
                if marks.contains(&step) {
                    times.push(step as f64 * dt);
                    snaps.push(disc.dofs.extend_vec(u, n_full));
                }
            };
            record(0, &u);
            for step in 1..=grid.steps {
                let t = step as f64 * dt;
                let load = disc.dofs.restrict_vec(&sample_load(disc, g, t));
                let mu = sys.m.matvec(&u);
                let rhs: Vec<f64> = mu.iter().zip(&load).map(|(m, b)| m + dt * b).collect();
                u = eff.solve(&rhs);
                record(step, &u);
            }
            Ok(Trajectory { times, snapshots: snaps, coarse_coeffs: None, density: 1.0 })
        }
        Space::Coarse(basis) => {
            if initial.displacement.is_some() {
                return Err(RpsError::Config(
                    "coarse-space time stepping supports only zero initial data".into(),
                ));
            }
            let sys = coarse_matrices(disc, basis);
            let eff = dense_cholesky(&sys.m + &sys.k * dt, "coarse parabolic matrix")?;
            let mut u = DVector::zeros(sys.n);

            let mut times = Vec::new();
            let mut snaps = Vec::new();
            let mut coeffs = Vec::new();
            let mut record = |step: usize, u: &DVector<f64>| {
                if marks.contains(&step) {
                    times.push(step as f64 * dt);
                    snaps.push(expand(basis, u));
                    coeffs.push(u.iter().copied().collect());
                }
            };
            record(0, &u);
            for step in 1..=grid.steps {
                let t = step as f64 * dt;
                let load = coarse_load(basis, &sample_load(disc, g, t));
                let rhs = &sys.m * &u + &load * dt;
                u = eff.solve(&rhs);
                record(step, &u);
            }
            Ok(Trajectory { times, snapshots: snaps, coarse_coeffs: Some(coeffs), density: 1.0 })
        }
    }
}
