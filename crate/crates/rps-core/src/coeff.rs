//! Scalar coefficient fields a(x) and their piecewise-constant sampling on a
//! fine mesh (one value per cell, taken at the cell barycenter).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RpsError};
use crate::mesh::{Point, TriMesh};

/// Identifier of the pseudo-random generator behind `RandomFourier1d`.
/// Fixing the algorithm (and the draw order) in the config keeps sampled
/// fields reproducible across implementations.
pub const RNG_ALGORITHM: &str = "chacha20-v1";

const TWO_PI: f64 = std::f64::consts::TAU;

/// Symbolic coefficient specification.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffSpec {
    Constant { value: f64 },
    /// The two dimensional multiscale trigonometric field: a sum of five
    /// ratio terms with periods 1/5, 1/13, 1/17, 1/31, 1/65 plus a smooth
    /// sin(4 x^2 y^2) term, all divided by six.
    #[serde(rename = "trig_multiscale_2d")]
    TrigMultiscale2d,
    /// 1 + (1/2) sin(sum_k k^-alpha (zeta_1k sin(kx) + zeta_2k cos(kx)))
    /// with both zeta vectors drawn once from the seeded generator, entries
    /// uniform on [-1/2, 1/2].
    #[serde(rename = "random_fourier_1d")]
    RandomFourier1d {
        #[serde(default = "default_alpha")]
        alpha: f64,
        modes: usize,
        seed: u64,
        #[serde(default = "default_rng")]
        rng: String,
    },
    /// High-contrast stress field: `contrast` on even checker cells of the
    /// given period, 1 elsewhere.
    Checkerboard { contrast: f64, period: f64 },
}

fn default_alpha() -> f64 {
    1.0
}

fn default_rng() -> String {
    RNG_ALGORITHM.to_string()
}

/// A coefficient spec with its random draws resolved, ready for pointwise
/// evaluation.
#[derive(Debug, Clone)]
pub enum ResolvedCoeff {
    Constant(f64),
    TrigMultiscale2d,
    RandomFourier1d {
        alpha: f64,
        zeta1: Vec<f64>,
        zeta2: Vec<f64>,
    },
    Checkerboard { contrast: f64, period: f64 },
}

/// Uniform draw on [-1/2, 1/2] from the raw 64-bit stream: the top 53 bits
/// map to [0,1), then shift. Spelled out so the mapping is pinned by this
/// crate rather than by a rand release.
fn uniform_symmetric(rng: &mut ChaCha20Rng) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u - 0.5
}

impl CoeffSpec {
    pub fn resolve(&self) -> Result<ResolvedCoeff> {
        match self {
            CoeffSpec::Constant { value } => {
                if *value <= 0.0 {
                    return Err(RpsError::Coefficient(format!(
                        "constant coefficient must be positive, got {value}"
                    )));
                }
                Ok(ResolvedCoeff::Constant(*value))
            }
            CoeffSpec::TrigMultiscale2d => Ok(ResolvedCoeff::TrigMultiscale2d),
            CoeffSpec::RandomFourier1d { alpha, modes, seed, rng } => {
                if rng != RNG_ALGORITHM {
                    return Err(RpsError::Config(format!(
                        "unknown rng algorithm '{rng}' (this build provides '{RNG_ALGORITHM}')"
                    )));
                }
                if *modes == 0 {
                    return Err(RpsError::Config("random_fourier_1d needs modes >= 1".into()));
                }
                let mut gen = ChaCha20Rng::seed_from_u64(*seed);
                let zeta1: Vec<f64> = (0..*modes).map(|_| uniform_symmetric(&mut gen)).collect();
                let zeta2: Vec<f64> = (0..*modes).map(|_| uniform_symmetric(&mut gen)).collect();
                Ok(ResolvedCoeff::RandomFourier1d { alpha: *alpha, zeta1, zeta2 })
            }
            CoeffSpec::Checkerboard { contrast, period } => {
                if *contrast <= 0.0 || *period <= 0.0 {
                    return Err(RpsError::Coefficient(
                        "checkerboard contrast and period must be positive".into(),
                    ));
                }
                Ok(ResolvedCoeff::Checkerboard { contrast: *contrast, period: *period })
            }
        }
    }
}

impl ResolvedCoeff {
    pub fn evaluate(&self, p: Point) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self {
            ResolvedCoeff::Constant(c) => *c,
            ResolvedCoeff::TrigMultiscale2d => {
                let e = [1.0 / 5.0, 1.0 / 13.0, 1.0 / 17.0, 1.0 / 31.0, 1.0 / 65.0];
                let sum = (1.1 + (TWO_PI * x / e[0]).sin()) / (1.1 + (TWO_PI * y / e[0]).sin())
                    + (1.1 + (TWO_PI * y / e[1]).sin()) / (1.1 + (TWO_PI * x / e[1]).cos())
                    + (1.1 + (TWO_PI * x / e[2]).cos()) / (1.1 + (TWO_PI * y / e[2]).sin())
                    + (1.1 + (TWO_PI * y / e[3]).sin()) / (1.1 + (TWO_PI * x / e[3]).cos())
                    + (1.1 + (TWO_PI * x / e[4]).cos()) / (1.1 + (TWO_PI * y / e[4]).sin())
                    + (4.0 * x * x * y * y).sin()
                    + 1.0;
                sum / 6.0
            }
            ResolvedCoeff::RandomFourier1d { alpha, zeta1, zeta2 } => {
                let mut phase = 0.0;
                for (k, (z1, z2)) in zeta1.iter().zip(zeta2).enumerate() {
                    let kf = (k + 1) as f64;
                    let kx = kf * x;
                    phase += kf.powf(-alpha) * (z1 * kx.sin() + z2 * kx.cos());
                }
                1.0 + 0.5 * phase.sin()
            }
            ResolvedCoeff::Checkerboard { contrast, period } => {
                let ix = (x / period).floor() as i64;
                let iy = (y / period).floor() as i64;
                if (ix + iy) % 2 == 0 {
                    *contrast
                } else {
                    1.0
                }
            }
        }
    }
}

/// Per-fine-cell coefficient values with cached spectral bounds.
#[derive(Debug, Clone)]
pub struct CellCoeffs {
    values: Vec<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl CellCoeffs {
    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn constant(mesh: &TriMesh, value: f64) -> CellCoeffs {
        CellCoeffs {
            values: vec![value; mesh.n_cells()],
            lambda_min: value,
            lambda_max: value,
        }
    }
}

/// Samples a spec at every cell barycenter of the fine mesh.
pub fn sample(spec: &CoeffSpec, mesh: &TriMesh) -> Result<CellCoeffs> {
    let resolved = spec.resolve()?;
    let mut values = Vec::with_capacity(mesh.n_cells());
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for t in 0..mesh.n_cells() {
        let v = resolved.evaluate(mesh.barycenter(t));
        if !(v > 0.0) {
            return Err(RpsError::Coefficient(format!(
                "coefficient sample {v} at cell {t} is not strictly positive"
            )));
        }
        lambda_min = lambda_min.min(v);
        lambda_max = lambda_max.max(v);
        values.push(v);
    }
    Ok(CellCoeffs { values, lambda_min, lambda_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured, refine};
    use std::sync::Arc;

    #[test]
    fn trig_field_at_origin() {
        let a = CoeffSpec::TrigMultiscale2d.resolve().unwrap();
        // (1/6) * (1 + 2*(1.1/2.1) + 2*(2.1/1.1) + 0 + 1)
        let expected = (2.0 + 2.0 * (1.1 / 2.1) + 2.0 * (2.1 / 1.1)) / 6.0;
        assert!((a.evaluate([0.0, 0.0]) - expected).abs() < 1e-12);
        assert!((expected - 1.144303).abs() < 1e-5);
    }

    #[test]
    fn constant_everywhere() {
        let a = CoeffSpec::Constant { value: 1.0 }.resolve().unwrap();
        assert_eq!(a.evaluate([0.3, 0.9]), 1.0);
        assert!(CoeffSpec::Constant { value: -1.0 }.resolve().is_err());
    }

    #[test]
    fn random_fourier_bounded() {
        for seed in [0u64, 1, 7, 123456789] {
            let spec = CoeffSpec::RandomFourier1d {
                alpha: 1.0,
                modes: 20,
                seed,
                rng: RNG_ALGORITHM.into(),
            };
            let a = spec.resolve().unwrap();
            for i in 0..200 {
                let x = i as f64 / 199.0;
                let v = a.evaluate([x, 0.0]);
                assert!((0.5..=1.5).contains(&v), "value {v} out of range");
            }
        }
    }

    #[test]
    fn unknown_rng_rejected() {
        let spec = CoeffSpec::RandomFourier1d {
            alpha: 1.0,
            modes: 4,
            seed: 1,
            rng: "mt19937".into(),
        };
        assert!(matches!(spec.resolve(), Err(RpsError::Config(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let mesh = refine(&Arc::new(build_structured(1, 81).unwrap()), 3);
        let spec = |seed| CoeffSpec::RandomFourier1d {
            alpha: 1.0,
            modes: 20,
            seed,
            rng: RNG_ALGORITHM.into(),
        };
        let a = sample(&spec(7), &mesh).unwrap();
        let b = sample(&spec(7), &mesh).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample(&spec(8), &mesh).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sampled_bounds() {
        let mesh = refine(&Arc::new(build_structured(2, 16).unwrap()), 2);
        let a = sample(&CoeffSpec::TrigMultiscale2d, &mesh).unwrap();
        assert!(a.lambda_min() > 0.0);
        assert!(a.lambda_max() >= a.lambda_min());
        let c = sample(&CoeffSpec::Constant { value: 2.0 }, &mesh).unwrap();
        assert_eq!(c.lambda_min(), 2.0);
        assert_eq!(c.lambda_max(), 2.0);
        assert!(c.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn checkerboard_values() {
        let a = CoeffSpec::Checkerboard { contrast: 100.0, period: 0.25 }.resolve().unwrap();
        assert_eq!(a.evaluate([0.1, 0.1]), 100.0);
        assert_eq!(a.evaluate([0.3, 0.1]), 1.0);
    }

    #[test]
    fn spec_serde_roundtrip() {
        let spec = CoeffSpec::RandomFourier1d {
            alpha: 1.0,
            modes: 20,
            seed: 42,
            rng: RNG_ALGORITHM.into(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: CoeffSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
