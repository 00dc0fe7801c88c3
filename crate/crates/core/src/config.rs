//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "schedule": {"kind": "linear", "beta_start": 1e-4, "beta_end": 0.02,
//!                "base_steps": 1000, "ddim_steps": 50},
//!   "model": {"kind": "symmetric_pair", "dim": 64, "offset": 0.5, "std": 1.0},
//!   "mechanism": {"mechanism": "ccs_full", "scale": 0.4, "n": 24},
//!   "controller": {"mse_target": 0.12, "tol": 0.01, "batch_size": 24, "max_iters": 12},
//!   "experiment": {"targets": 8}
//! }
//! ```
//!
//! Every section is optional.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::ccs::{ControllerConfig, Lab, Mechanism, PerturbationSpec};
use crate::error::{LabError, Result};
use crate::experiments::{CompareConfig, LinearityConfig};
use crate::schedule::{BetaSpec, NoiseSchedule};
use crate::scoremodel::{CfgSpec, Covariance, GaussianMixture, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Linear {
        beta_start: f64,
        beta_end: f64,
        base_steps: usize,
        ddim_steps: usize,
    },
    Explicit {
        alpha_bar: Vec<f64>,
    },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let b = BetaSpec::default();
        ScheduleConfig::Linear {
            beta_start: b.start,
            beta_end: b.end,
            base_steps: b.base_steps,
            ddim_steps: 50,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self {
            ScheduleConfig::Linear {
                beta_start,
                beta_end,
                base_steps,
                ddim_steps,
            } => NoiseSchedule::linear(
                BetaSpec {
                    start: *beta_start,
                    end: *beta_end,
                    base_steps: *base_steps,
                },
                *ddim_steps,
            ),
            ScheduleConfig::Explicit { alpha_bar } => NoiseSchedule::from_alpha_bar(alpha_bar.clone()),
        }
    }

    /// Like [`build`](Self::build) but accepts an explicit ladder that breaks
    /// the schedule invariants, so the verify suite can report them.
    pub fn build_unchecked(&self) -> Result<NoiseSchedule> {
        match self {
            ScheduleConfig::Explicit { alpha_bar } => NoiseSchedule::from_alpha_bar_unchecked(alpha_bar.clone()),
            _ => self.build(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeansConfig {
    Inline(Vec<Vec<f64>>),
    /// A headerless CSV with one mean per row.
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
    Isotropic(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mixture {
        weights: Vec<f64>,
        means: MeansConfig,
        covariances: Vec<CovarianceConfig>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    /// Components at `+offset` and `-offset` in every coordinate, labelled
    /// "A" and "B".
    SymmetricPair { dim: usize, offset: f64, std: f64 },
    StandardNormal { dim: usize },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::SymmetricPair {
            dim: 64,
            offset: 0.5,
            std: 1.0,
        }
    }
}

impl ModelConfig {
    /// Builds the mixture; CSV paths are resolved against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<GaussianMixture> {
        match self {
            ModelConfig::SymmetricPair { dim, offset, std } => {
                if *dim == 0 || !(*std > 0.0) {
                    return Err(LabError::Config("symmetric_pair needs dim > 0 and std > 0".into()));
                }
                GaussianMixture::symmetric_pair(*dim, *offset, *std)
            }
            ModelConfig::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(LabError::Config("standard_normal needs dim > 0".into()));
                }
                Ok(GaussianMixture::standard_normal(*dim))
            }
            ModelConfig::Mixture {
                weights,
                means,
                covariances,
                labels,
            } => {
                let rows = match means {
                    MeansConfig::Inline(rows) => rows.clone(),
                    MeansConfig::Csv { csv } => read_means_csv(&base_dir.join(csv))?,
                };
                let dim = rows.first().map(Vec::len).unwrap_or(0);
                let means = rows.into_iter().map(DVector::from_vec).collect();
                let covs = covariances
                    .iter()
                    .map(|c| match c {
                        CovarianceConfig::Diag(v) => Ok(Covariance::Diagonal(DVector::from_vec(v.clone()))),
                        CovarianceConfig::Isotropic(v) => Ok(Covariance::Diagonal(DVector::from_element(dim, *v))),
                        CovarianceConfig::Full(rows) => {
                            let n = rows.len();
                            if rows.iter().any(|r| r.len() != n) {
                                return Err(LabError::Config("full covariance must be square".into()));
                            }
                            Ok(Covariance::Full(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                GaussianMixture::new(weights.clone(), means, covs, labels.clone())
            }
        }
    }
}

fn read_means_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    reader
        .records()
        .map(|r| {
            r?.iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| LabError::Config(format!("{}: bad mean entry {v:?}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    pub mechanism: Mechanism,
    pub scale: f64,
    pub t0: Option<usize>,
    pub cfg_invert: CfgSpec,
    pub cfg_sample: CfgSpec,
    /// Draws per batch.
    pub n: usize,
    pub refine_iters: usize,
    /// Upper bracket for tuning `gp`; `0.5 sqrt(d)` when absent.
    pub gp_scale_max: Option<f64>,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            mechanism: Mechanism::CcsFull,
            scale: 0.4,
            t0: None,
            cfg_invert: CfgSpec::default(),
            cfg_sample: CfgSpec::default(),
            n: 24,
            refine_iters: 0,
            gp_scale_max: None,
        }
    }
}

impl MechanismConfig {
    pub fn spec(&self, seed: u64) -> PerturbationSpec {
        PerturbationSpec {
            mechanism: self.mechanism,
            scale: self.scale,
            t0: self.t0,
            cfg_invert: self.cfg_invert.clone(),
            cfg_sample: self.cfg_sample.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetsConfig {
    /// That many clean draws from the model.
    Count(usize),
    Inline(Vec<Vec<f64>>),
}

impl Default for TargetsConfig {
    fn default() -> Self {
        TargetsConfig::Count(8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub targets: TargetsConfig,
    pub linearity: LinearityConfig,
    pub compare: CompareConfig,
    /// Guidance used by the experiment protocols.
    pub cfg: CfgSpec,
    pub data_range: f64,
    pub concentration_dim: usize,
    pub concentration_delta: f64,
    pub concentration_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            targets: TargetsConfig::default(),
            linearity: LinearityConfig::default(),
            compare: CompareConfig::default(),
            cfg: CfgSpec::default(),
            data_range: crate::metrics::DEFAULT_DATA_RANGE,
            concentration_dim: 1000,
            concentration_delta: 0.1,
            concentration_draws: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: Option<u64>,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub mechanism: MechanismConfig,
    pub controller: ControllerConfig,
    pub experiment: ExperimentConfig,
    /// Directory relative CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl LabConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lab(&self) -> Result<Lab> {
        let schedule = self.schedule.build()?;
        let model = self.model.build(&self.base_dir)?;
        Ok(Lab::new(schedule, model).with_refinement(self.mechanism.refine_iters))
    }

    pub fn targets(&self, model: &GaussianMixture, seed: u64) -> Result<Vec<State>> {
        match &self.experiment.targets {
            TargetsConfig::Count(n) => Ok(crate::experiments::sample_targets(model, *n, seed)),
            TargetsConfig::Inline(rows) => rows
                .iter()
                .map(|r| {
                    if r.len() != model.dim() {
                        return Err(LabError::Config(format!(
                            "target has {} entries, model dimension is {}",
                            r.len(),
                            model.dim()
                        )));
                    }
                    Ok(DVector::from_vec(r.clone()))
                })
                .collect(),
        }
    }
}
