//! Linear solvers for the symmetric positive definite systems of the crate:
//! a banded Cholesky factorization (the workhorse; the reduced normal systems
//! and the fine Galerkin systems are banded under the natural vertex order)
//! and a Jacobi-preconditioned conjugate gradient alternative.

use serde::Serialize;

use crate::error::{Result, RpsError};
use crate::sparse::CsrMatrix;

/// How a linear solve went; attached to basis functions and solutions.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub method: &'static str,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Banded direct factorization when its storage stays reasonable,
    /// conjugate gradients otherwise.
    Auto,
    Direct,
    Pcg,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    pub method: SolverMethod,
    /// Relative residual target.
    pub tol: f64,
    /// Optional iteration cap override for CG; the default grows with the
    /// problem size as 50 sqrt(n) + 1000.
    pub max_iter: Option<usize>,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts { method: SolverMethod::Auto, tol: 1e-10, max_iter: None }
    }
}

impl SolverOpts {
    pub fn cg_iteration_cap(&self, unknowns: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| 50 * (unknowns as f64).sqrt().ceil() as usize + 1000)
    }
}

/// Band storage limit for the automatic method choice.
const AUTO_BAND_BYTES: usize = 512 << 20;

pub fn band_fits_memory(n: usize, bandwidth: usize) -> bool {
    n.saturating_mul(bandwidth + 1).saturating_mul(8) <= AUTO_BAND_BYTES
}

/// Symmetric matrix stored by its lower band: entry (i, j) with
/// i - bw <= j <= i lives at `data[i * (bw + 1) + (j + bw - i)]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> BandMatrix {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.data[i * (self.bw + 1) + (j + self.bw - i)] += v;
    }

    /// Lower triangle of a symmetric CSR matrix.
    pub fn from_csr_lower(m: &CsrMatrix) -> BandMatrix {
        let n = m.nrows();
        let mut bw = 0;
        for r in 0..n {
            let (cols, _) = m.row(r);
            if let Some(&c) = cols.first() {
                if c < r {
                    bw = bw.max(r - c);
                }
            }
        }
        let mut band = BandMatrix::zeros(n, bw);
        for r in 0..n {
            let (cols, vals) = m.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= r {
                    band.add(r, *c, *v);
                }
            }
        }
        band
    }

    /// In-place lower Cholesky factorization; fails on loss of positive
    /// definiteness.
    pub fn cholesky(mut self, what: &'static str) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let ld = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.data[i * ld + (j + bw - i)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= self.data[i * ld + (k + bw - i)] * self.data[j * ld + (k + bw - j)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(RpsError::Conditioning {
                            what,
                            cond: if sum == 0.0 { f64::INFINITY } else { 1.0 / sum.abs() },
                        });
                    }
                    self.data[i * ld + bw] = sum.sqrt();
                } else {
                    self.data[i * ld + (j + bw - i)] = sum / self.data[j * ld + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, data: self.data })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let (n, bw, ld) = (self.n, self.bw, self.bw + 1);
        let mut x = b.to_vec();
        // Forward: L y = b
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut sum = x[i];
            for k in lo..i {
                sum -= self.data[i * ld + (k + bw - i)] * x[k];
            }
            x[i] = sum / self.data[i * ld + bw];
        }
        // Backward: L^T x = y
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut sum = x[i];
            for k in (i + 1)..=hi {
                sum -= self.data[k * ld + (i + bw - k)] * x[k];
            }
            x[i] = sum / self.data[i * ld + bw];
        }
        x
    }
}

/// Abstract symmetric operator for the iterative path.
pub trait SymOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymOp for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

/// Normal operator x -> B^T diag(w) B x of a (restricted) flux matrix.
pub struct NormalOp<'a> {
    pub b: &'a CsrMatrix,
    pub w: &'a [f64],
}

impl SymOp for NormalOp<'_> {
    fn dim(&self) -> usize {
        self.b.ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = self.b.matvec(x);
        for (ti, wi) in t.iter_mut().zip(self.w) {
            *ti *= wi;
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        self.b.transpose_matvec_add(&t, y);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients to a relative residual.
pub fn pcg<O: SymOp>(
    op: &O,
    rhs: &[f64],
    diag: &[f64],
    opts: &SolverOpts,
    what: &'static str,
) -> Result<(Vec<f64>, SolverReport)> {
    let n = op.dim();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolverReport { method: "pcg", iterations: 0, residual: 0.0 },
        ));
    }
    let cap = opts.cg_iteration_cap(n);
    let inv_diag: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=cap {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(RpsError::Solver { what, residual: norm(&r) / bnorm, iterations: it });
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        let rel = norm(&r) / bnorm;
        if rel <= opts.tol {
            return Ok((x, SolverReport { method: "pcg", iterations: it, residual: rel }));
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(RpsError::Solver { what, residual: norm(&r) / bnorm, iterations: cap })
}

/// Direct banded solve with a couple of iterative-refinement sweeps; the
/// refinement keeps the relative residual at the requested tolerance even for
/// the stiffer reduced systems.
pub fn direct_with_refinement<O: SymOp>(
    factor: &BandCholesky,
    op: &O,
    rhs: &[f64],
    tol: f64,
    what: &'static str,
) -> Result<(Vec<f64>, SolverReport)> {
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; factor.n()],
            SolverReport { method: "direct", iterations: 0, residual: 0.0 },
        ));
    }
    let mut x = factor.solve(rhs);
    let mut rel = 0.0;
    for sweep in 0..=2 {
        let mut r = vec![0.0; x.len()];
        op.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok((x, SolverReport { method: "direct", iterations: sweep, residual: rel }));
        }
        let dx = factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    Err(RpsError::Solver { what, residual: rel, iterations: 3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tridiag(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn band_cholesky_solves_tridiagonal() {
        let n = 50;
        let a = tridiag(n);
        let factor = BandMatrix::from_csr_lower(&a).cholesky("test").unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.matvec(&xs);
        let x = factor.solve(&b);
        for (got, want) in x.iter().zip(&xs) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(BandMatrix::from_csr_lower(&a).cholesky("test").is_err());
    }

    #[test]
    fn pcg_matches_direct() {
        let n = 80;
        let a = tridiag(n);
        let mut rng = StdRng::seed_from_u64(9);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        let opts = SolverOpts::default();
        let (x_it, rep) = pcg(&a, &b, &diag, &opts, "test").unwrap();
        assert!(rep.residual <= 1e-10);
        let factor = BandMatrix::from_csr_lower(&a).cholesky("test").unwrap();
        let (x_d, _) = direct_with_refinement(&factor, &a, &b, 1e-10, "test").unwrap();
        for (a, b) in x_it.iter().zip(&x_d) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pcg_zero_rhs() {
        let a = tridiag(10);
        let diag = vec![2.0; 10];
        let (x, rep) = pcg(&a, &vec![0.0; 10], &diag, &SolverOpts::default(), "test").unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn pcg_cap_is_reported() {
        let a = tridiag(400);
        let diag: Vec<f64> = (0..400).map(|i| a.get(i, i)).collect();
        let opts = SolverOpts { max_iter: Some(3), ..Default::default() };
        let err = pcg(&a, &vec![1.0; 400], &diag, &opts, "test").unwrap_err();
        match err {
            RpsError::Solver { iterations, residual, .. } => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
