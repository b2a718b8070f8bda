//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use electroinv::coefficients::{BundleSpec, LawSpec, SpatialPoly};
use electroinv::forward::PicardOptions;
use electroinv::inverse::{DiffusionFamily, FitOptions};
use electroinv::measure::{BoundaryProfile, ExperimentRequest, NoiseModel, RateOptions};
use electroinv::mesh::GridSpec;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub grid: GridSpec,
    pub model: BundleSpec,
    #[serde(default)]
    pub solver: PicardOptions,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub experiments: Vec<ExperimentRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearisation: Option<LinearisationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<BumpConfig>,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearisationConfig {
    pub mu: Vec<f64>,
    pub eta0: BoundaryProfile,
    pub f: Vec<BoundaryProfile>,
    #[serde(default)]
    pub rate: RateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Constant concentrations of the interior experiments.
    pub mu: Vec<f64>,
    /// Temperature levels tabulated at every boundary node for `p = mu`.
    pub t_grid: Vec<f64>,
    /// Reference state `(p, s)`; `phi_hat(z0, x0) = 0`.
    pub z0: Vec<f64>,
    /// Reference boundary node id (default: the first boundary node).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<usize>,
    /// Extra boundary states `(p, s)`.
    #[serde(default)]
    pub z_samples: Vec<Vec<f64>>,
    /// Every `x_stride`-th boundary node is used for `z_samples`.
    #[serde(default = "one")]
    pub x_stride: usize,
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default)]
    pub s_levels: Vec<f64>,
    #[serde(default = "default_offset_tol")]
    pub offset_tol: f64,
}

fn one() -> usize {
    1
}

fn default_offset_tol() -> f64 {
    5e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub family: DiffusionFamily,
    pub theta_init: Vec<f64>,
    pub theta_box: Vec<[f64; 2]>,
    /// Data are generated on a grid refined by this factor.
    #[serde(default = "two")]
    pub data_refinement: usize,
    #[serde(default)]
    pub options: FitOptions,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub centre: Vec<f64>,
    pub radius: f64,
    pub amp: f64,
    #[serde(default = "identity_law")]
    pub tilde: LawSpec,
}

fn identity_law() -> LawSpec {
    LawSpec::Affine { a: vec![], b: 1.0, c: SpatialPoly::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub sizes: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { sizes: vec![17, 33, 65] }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut ignored = vec![];
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| ignored.push(path.to_string()))
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = ignored.first() {
            let key = path.rsplit('.').next().unwrap_or(path);
            let line = text
                .lines()
                .position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')));
            let at = line.map_or(String::new(), |l| format!(" at line {}", l + 1));
            return Err(CliError::Config(format!("unknown field `{path}`{at}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        self.grid.build().map_err(|e| CliError::Config(format!("grid: {e}")))?;
        let m = self.model.q.len();
        self.model.build().map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.solver.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        for (k, e) in self.experiments.iter().enumerate() {
            if e.gamma.len() != m {
                return invalid(&format!("experiments[{k}].gamma"), format!("{} profiles for {m} species", e.gamma.len()));
            }
        }
        if let Some(l) = &self.linearisation {
            if l.mu.len() != m || l.f.len() != m {
                return invalid("linearisation", format!("mu and f need {m} entries"));
            }
        }
        if let Some(r) = &self.reconstruct {
            if r.mu.len() != m {
                return invalid("reconstruct.mu", format!("{} entries for {m} species", r.mu.len()));
            }
            if r.z0.len() != m + 1 || r.z_samples.iter().any(|z| z.len() != m + 1) {
                return invalid("reconstruct", format!("states need {} components (p1..pM, s)", m + 1));
            }
            if r.t_grid.len() < 2 {
                return invalid("reconstruct.t_grid", "two or more levels are needed".into());
            }
            if r.x_stride == 0 {
                return invalid("reconstruct.x_stride", "must be positive".into());
            }
        }
        if let Some(f) = &self.fit {
            let n = f.family.params(m);
            if f.theta_init.len() != n || f.theta_box.len() != n {
                return invalid("fit", format!("{:?} takes {n} parameters", f.family));
            }
            if f.data_refinement == 0 {
                return invalid("fit.data_refinement", "must be positive".into());
            }
        }
        if self.convergence.sizes.len() < 2 || self.convergence.sizes.iter().any(|&n| n < 3) {
            return invalid("convergence.sizes", "two or more sizes of at least 3 nodes are needed".into());
        }
        Ok(())
    }
}
