//! Experiment configuration: a JSON file validated against the schema in
//! docs/config-schema.json, with dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rps_core::coeff::CoeffSpec;
use rps_core::mesh::Point;
use rps_core::rps::Layers;
use rps_core::solver::{SolverMethod, SolverOpts};
use rps_core::{Result, RpsError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub coarse_divisions: usize,
    pub refinements: usize,
    pub coeff: CoeffSpec,
    #[serde(default)]
    pub layers: LayersSpec,
    #[serde(default)]
    pub rhs: RhsSpec,
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Coarse node used by `decay`; defaults to the most central node.
    #[serde(default)]
    pub node: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayersSpec {
    Single(u32),
    List(Vec<u32>),
    /// "global" or a range such as "1..6".
    Text(String),
}

impl Default for LayersSpec {
    fn default() -> Self {
        LayersSpec::Text("global".into())
    }
}

impl LayersSpec {
    /// The layer settings a run sweeps over.
    pub fn resolve(&self) -> Result<Vec<Layers>> {
        let bad = |s: &str| {
            RpsError::Config(format!(
                "layers: expected a layer count, a list, \"global\" or \"a..b\", got \"{s}\""
            ))
        };
        match self {
            LayersSpec::Single(l) => {
                if *l == 0 {
                    return Err(RpsError::Config("layers: layer count must be >= 1".into()));
                }
                Ok(vec![Layers::Local(*l)])
            }
            LayersSpec::List(ls) => {
                if ls.is_empty() || ls.iter().any(|&l| l == 0) {
                    return Err(RpsError::Config(
                        "layers: list entries must be layer counts >= 1".into(),
                    ));
                }
                Ok(ls.iter().map(|&l| Layers::Local(l)).collect())
            }
            LayersSpec::Text(s) => {
                if s == "global" {
                    return Ok(vec![Layers::Global]);
                }
                let (lo, hi) = s.split_once("..").ok_or_else(|| bad(s))?;
                let lo: u32 = lo.trim().parse().map_err(|_| bad(s))?;
                let hi: u32 = hi.trim().parse().map_err(|_| bad(s))?;
                if lo == 0 || hi < lo {
                    return Err(bad(s));
                }
                Ok((lo..=hi).map(Layers::Local).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    Zero,
    Constant { value: f64 },
    /// Product of sin(pi x_k) over the space dimensions.
    SinPi,
    /// sin(pi x) product modulated by cos(omega t).
    SinPiCosT { omega: f64 },
}

impl Default for RhsSpec {
    fn default() -> Self {
        RhsSpec::SinPi
    }
}

impl RhsSpec {
    pub fn evaluate(&self, dim: usize, p: Point, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let space = |p: Point| {
            let mut v = (pi * p[0]).sin();
            if dim == 2 {
                v *= (pi * p[1]).sin();
            }
            v
        };
        match self {
            RhsSpec::Zero => 0.0,
            RhsSpec::Constant { value } => *value,
            RhsSpec::SinPi => space(p),
            RhsSpec::SinPiCosT { omega } => space(p) * (omega * t).cos(),
        }
    }

}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Elliptic,
    BasisOnly,
    Wave {
        final_time: f64,
        #[serde(default)]
        steps: Option<usize>,
    },
    Parabolic {
        final_time: f64,
        #[serde(default)]
        steps: Option<usize>,
    },
    Recover {
        measurements: PathBuf,
        #[serde(default)]
        source_bound: Option<f64>,
    },
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::Elliptic
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_method() -> String {
    "auto".into()
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: default_tol(), max_iter: None, method: default_method() }
    }
}

impl SolverConfig {
    pub fn opts(&self) -> Result<SolverOpts> {
        let method = match self.method.as_str() {
            "auto" => SolverMethod::Auto,
            "direct" => SolverMethod::Direct,
            "pcg" => SolverMethod::Pcg,
            other => {
                return Err(RpsError::Config(format!(
                    "solver.method: expected auto, direct or pcg, got \"{other}\""
                )))
            }
        };
        if !(self.tol > 0.0) {
            return Err(RpsError::Config(format!(
                "solver.tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(SolverOpts { method, tol: self.tol, max_iter: self.max_iter })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; when absent, RPS_OUTPUT_DIR (or ./rps-out) plus the
    /// config file stem.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Extra dumps: any of "basis", "gram", "solution", "field", "matrices",
    /// "trajectory", "mesh".
    #[serde(default)]
    pub dumps: Vec<String>,
    #[serde(default = "default_plots")]
    pub plots: bool,
}

fn default_plots() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 1 || self.dimension == 2) {
            return Err(RpsError::Config(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        if self.coarse_divisions < 2 {
            return Err(RpsError::Config(format!(
                "coarse_divisions must be at least 2, got {}",
                self.coarse_divisions
            )));
        }
        self.layers.resolve()?;
        self.solver.opts()?;
        if let ProblemSpec::Wave { final_time, .. } | ProblemSpec::Parabolic { final_time, .. } =
            &self.problem
        {
            if !(*final_time > 0.0) {
                return Err(RpsError::Config(format!(
                    "problem.final_time must be positive, got {final_time}"
                )));
            }
        }
        let known = ["basis", "gram", "solution", "field", "matrices", "trajectory", "mesh"];
        for d in &self.outputs.dumps {
            if !known.contains(&d.as_str()) {
                return Err(RpsError::Config(format!(
                    "outputs.dumps: unknown dump \"{d}\" (known: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Fine divisions per direction after refinement.
    pub fn fine_divisions(&self) -> usize {
        self.coarse_divisions << self.refinements
    }

    /// Default step count: dt = T / (4 * fine divisions).
    pub fn time_steps(&self, steps: Option<usize>) -> usize {
        steps.unwrap_or(4 * self.fine_divisions()).max(1)
    }
}

/// Loads a config, applies `key=value` overrides along dotted paths, then
/// validates. Values are parsed as JSON when possible and fall back to
/// strings, so `layers=1..6` and `solver.tol=1e-8` both work.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RpsError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| RpsError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| {
            RpsError::Config(format!("override \"{item}\" is not of the form key=value"))
        })?;
        let parsed: serde_json::Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(raw.to_string()),
        };
        set_path(&mut value, key, parsed)?;
    }
    let config: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| RpsError::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn set_path(root: &mut serde_json::Value, key: &str, val: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(RpsError::Config(format!("override key \"{key}\" has an empty segment")));
        }
        let map = cursor.as_object_mut().ok_or_else(|| {
            RpsError::Config(format!("override key \"{key}\": \"{part}\" is not an object"))
        })?;
        if k + 1 == parts.len() {
            map.insert(part.to_string(), val);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("override paths always terminate in the loop")
}
