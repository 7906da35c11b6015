//! The measurement layer: norms of fine nodal vectors, localization decay
//! curves, convergence tables and log-log rate fits.

use serde::Serialize;

use crate::assembly::{mass, stiffness, Discretization};
use crate::coeff::CellCoeffs;
use crate::error::{Result, RpsError};
use crate::rps::BasisFunction;
use crate::sparse::CsrMatrix;

/// Norms of one fine nodal vector.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Norms {
    pub l2: f64,
    /// H1 seminorm (unit-coefficient stiffness).
    pub h1: f64,
    /// Energy seminorm weighted by the coefficient field.
    pub energy: f64,
    pub linf: f64,
}

/// Absolute and relative errors with the sweep metadata the tables carry.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub absolute: Norms,
    pub relative: Norms,
    pub meta: ErrorMeta,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ErrorMeta {
    pub coarse_h: Option<f64>,
    pub fine_h: Option<f64>,
    pub layers: Option<String>,
    pub field: Option<String>,
    pub seed: Option<u64>,
}

/// Matrices behind the norms, assembled once per fine mesh.
pub struct NormContext {
    mass: CsrMatrix,
    stiff_unit: CsrMatrix,
    stiff_a: CsrMatrix,
}

impl NormContext {
    pub fn new(disc: &Discretization) -> NormContext {
        let unit = CellCoeffs::constant(&disc.fine, 1.0);
        NormContext {
            mass: disc.mass.clone(),
            stiff_unit: stiffness(&disc.fine, &unit),
            stiff_a: disc.stiffness.clone(),
        }
    }

    /// Builds the context from a fine mesh and its sampled field without a
    /// full discretization.
    pub fn from_mesh(fine: &crate::mesh::TriMesh, a: &CellCoeffs) -> NormContext {
        let unit = CellCoeffs::constant(fine, 1.0);
        NormContext {
            mass: mass(fine),
            stiff_unit: stiffness(fine, &unit),
            stiff_a: stiffness(fine, a),
        }
    }

    fn quad(m: &CsrMatrix, u: &[f64]) -> f64 {
        let mu = m.matvec(u);
        u.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    }

    pub fn norms(&self, u: &[f64]) -> Norms {
        Norms {
            l2: Self::quad(&self.mass, u).sqrt(),
            h1: Self::quad(&self.stiff_unit, u).sqrt(),
            energy: Self::quad(&self.stiff_a, u).sqrt(),
            linf: u.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    pub fn error_report(&self, approx: &[f64], reference: &[f64], meta: ErrorMeta) -> ErrorReport {
        let diff: Vec<f64> = approx.iter().zip(reference).map(|(a, b)| a - b).collect();
        let absolute = self.norms(&diff);
        let scale = self.norms(reference);
        let rel = |a: f64, s: f64| if s > 0.0 { a / s } else { a };
        ErrorReport {
            absolute,
            relative: Norms {
                l2: rel(absolute.l2, scale.l2),
                h1: rel(absolute.h1, scale.h1),
                energy: rel(absolute.energy, scale.energy),
                linf: rel(absolute.linf, scale.linf),
            },
            meta,
        }
    }
}

/// One row of a localization decay table.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub l: u32,
    pub err_l2: f64,
    pub err_h1: f64,
    pub err_linf: f64,
}

/// Differences between the global basis function and its localized versions
/// for l in `l_range`; `solve` produces the localized function at a given
/// layer count.
pub fn decay_curve(
    ctx: &NormContext,
    n_fine: usize,
    global: &BasisFunction,
    l_range: impl IntoIterator<Item = u32>,
    mut solve: impl FnMut(u32) -> Result<BasisFunction>,
) -> Result<Vec<DecayRow>> {
    let reference = global.to_dense(n_fine);
    let mut rows = Vec::new();
    for l in l_range {
        let local = solve(l)?;
        let mut diff = reference.clone();
        local.scatter_scaled(-1.0, &mut diff);
        let norms = ctx.norms(&diff);
        rows.push(DecayRow { l, err_l2: norms.l2, err_h1: norms.h1, err_linf: norms.linf });
    }
    Ok(rows)
}

/// One row of a coarse-resolution convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub err_l2: f64,
    pub err_h1: f64,
    pub err_linf: f64,
}

/// Ordinary least squares fit of log(y) against log(x).
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(RpsError::Fit(format!(
            "need at least 2 points for a rate fit, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0) {
            return Err(RpsError::Fit(format!(
                "rate fit needs positive coordinates, got ({x}, {y})"
            )));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(RpsError::Fit("rate fit points share a single abscissa".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (logs
        .iter()
        .map(|&(x, y)| {
            let d = y - (slope * x + intercept);
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();
    if !slope.is_finite() {
        return Err(RpsError::Fit("non-finite slope".into()));
    }
    Ok(RateFit { slope, intercept, residual, points: points.to_vec() })
}

/// Least squares fit of log(y) against x itself (exponential decay curves).
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(RpsError::Fit(format!(
            "need at least 2 points for a fit, got {}",
            points.len()
        )));
    }
    for &(_, y) in points {
        if !(y > 0.0) {
            return Err(RpsError::Fit(format!("log-linear fit needs positive values, got {y}")));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x, y.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(RpsError::Fit("fit points share a single abscissa".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (logs
        .iter()
        .map(|&(x, y)| {
            let d = y - (slope * x + intercept);
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit { slope, intercept, residual, points: points.to_vec() })
}
