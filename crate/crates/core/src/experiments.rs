//! Experiment protocols: residual linearity in the perturbation scale and
//! a tuned comparison of mechanisms at matched diversity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccs::{controller_tune, default_gp_scale_max, BoundMechanism, ControllerConfig, DiversityMetric, Lab, Mechanism};
use crate::error::{LabError, Result};
use crate::metrics::{fit_line, identity_r2, LineFit, DEFAULT_DATA_RANGE};
use crate::rng::{derive_seed, rng_for};
use crate::scoremodel::{CfgSpec, GaussianMixture, State};

// Seed path prefixes keep the streams of different protocol stages apart.
const TARGET_STREAM: u64 = 1;
const SCALE_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;
const TUNE_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;

/// `n` clean draws from the model, used as target means.
pub fn sample_targets(model: &GaussianMixture, n: usize, seed: u64) -> Vec<State> {
    (0..n)
        .map(|i| model.sample(&mut rng_for(seed, &[TARGET_STREAM, i as u64])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleGrid {
    #[default]
    RandomUniform,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearityConfig {
    pub n_scales: usize,
    pub samples_per_scale: usize,
    pub scale_max: f64,
    #[serde(default)]
    pub grid: ScaleGrid,
}

impl Default for LinearityConfig {
    fn default() -> Self {
        LinearityConfig {
            n_scales: 8,
            samples_per_scale: 24,
            scale_max: 0.9,
            grid: ScaleGrid::RandomUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityPoint {
    pub c0: f64,
    pub sin_c0: f64,
    pub mean_residual_norm: f64,
    pub normalized_residual: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityTarget {
    pub target_id: String,
    pub points: Vec<LinearityPoint>,
    pub fit: LineFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub per_target: Vec<LinearityTarget>,
    pub pooled_r2: f64,
}

impl LinearityReport {
    /// Fits each target's residuals against `sin(c0)`, normalizes them by
    /// that fit and computes one pooled R^2.
    pub fn from_points(per_target: Vec<(String, Vec<LinearityPoint>)>) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut out = Vec::with_capacity(per_target.len());
        for (target_id, mut points) in per_target {
            let x: Vec<f64> = points.iter().map(|p| p.sin_c0).collect();
            let y: Vec<f64> = points.iter().map(|p| p.mean_residual_norm).collect();
            let fit = fit_line(&x, &y)?;
            if fit.slope == 0.0 {
                return Err(LabError::Protocol(format!("zero slope for target {target_id}")));
            }
            for p in &mut points {
                p.normalized_residual = fit.normalize(p.mean_residual_norm);
                xs.push(p.sin_c0);
                ys.push(p.normalized_residual);
            }
            out.push(LinearityTarget { target_id, points, fit });
        }
        Ok(LinearityReport {
            pooled_r2: identity_r2(&xs, &ys)?,
            per_target: out,
        })
    }
}

fn scales_for(config: &LinearityConfig, seed: u64, target: usize) -> Vec<f64> {
    match config.grid {
        ScaleGrid::Fixed => (0..config.n_scales)
            .map(|k| config.scale_max * k as f64 / (config.n_scales - 1) as f64)
            .collect(),
        ScaleGrid::RandomUniform => {
            use rand::Rng;
            let mut rng = rng_for(seed, &[SCALE_STREAM, target as u64]);
            (0..config.n_scales).map(|_| rng.gen_range(0.0..=config.scale_max)).collect()
        }
    }
}

/// Mean residual norm of `ccs_full` draws at several scales per target,
/// fitted against `sin(c0)`.
pub fn linearity_protocol(
    lab: &Lab,
    targets: &[State],
    config: &LinearityConfig,
    seed: u64,
    cfg: &CfgSpec,
) -> Result<LinearityReport> {
    if config.n_scales < 3 || config.samples_per_scale < 2 {
        return Err(LabError::Protocol("linearity needs n_scales >= 3 and samples_per_scale >= 2".into()));
    }
    if !(config.scale_max > 0.0 && config.scale_max <= std::f64::consts::FRAC_PI_2) {
        return Err(LabError::Protocol(format!("scale_max {} outside (0, pi/2]", config.scale_max)));
    }
    if targets.is_empty() {
        return Err(LabError::Protocol("no targets".into()));
    }
    let jobs: Vec<(usize, usize, f64)> = targets
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            scales_for(config, seed, i)
                .into_iter()
                .enumerate()
                .map(move |(j, c)| (i, j, c))
        })
        .collect();
    let points: Vec<(usize, LinearityPoint)> = jobs
        .into_par_iter()
        .map(|(i, j, c0)| {
            let s = derive_seed(seed, &[BATCH_STREAM, i as u64, j as u64]);
            let batch = lab.ccs_full_sample(&targets[i], c0, config.samples_per_scale, s, cfg)?;
            Ok((
                i,
                LinearityPoint {
                    c0,
                    sin_c0: c0.sin(),
                    mean_residual_norm: batch.mean_residual_norm(),
                    normalized_residual: f64::NAN,
                    n: config.samples_per_scale,
                    seed: s,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut grouped: Vec<(String, Vec<LinearityPoint>)> = (0..targets.len()).map(|i| (i.to_string(), Vec::new())).collect();
    for (i, p) in points {
        grouped[i].1.push(p);
    }
    LinearityReport::from_points(grouped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub mse_target: f64,
    pub tol: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Size of the batch drawn at the tuned scale for the reported metrics.
    pub eval_batch: usize,
    pub data_range: f64,
    pub mechanisms: Vec<Mechanism>,
    /// Intermediate level for `ccs_partial`; defaults to `T`.
    #[serde(default)]
    pub partial_t0: Option<usize>,
    #[serde(default)]
    pub gp_scale_max: Option<f64>,
    #[serde(default)]
    pub metric: DiversityMetric,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            mse_target: 0.12,
            tol: 0.01,
            batch_size: 24,
            max_iters: 12,
            eval_batch: 120,
            data_range: DEFAULT_DATA_RANGE,
            mechanisms: vec![Mechanism::CcsFull, Mechanism::Gp, Mechanism::Ccdf],
            partial_t0: None,
            gp_scale_max: None,
            metric: DiversityMetric::Rmse,
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub target_id: String,
    pub mechanism: Mechanism,
    pub final_scale: f64,
    /// Controller measurement at the final scale.
    pub achieved_rmse: f64,
    pub psnr_mean_db: f64,
    pub sample_sd: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Extra per-row measurements taken from the evaluation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDiagnostics {
    pub target_id: String,
    pub mechanism: Mechanism,
    pub eval_rmse: f64,
    /// Largest per-draw relative change of the starting-state norm.
    pub max_start_norm_drift: f64,
    /// `mean ||start||^2 / ||anchor||^2 - 1`.
    pub mean_start_norm_sq_drift: f64,
    pub norm_sq_drift_std_error: f64,
    /// What the norm-drift identity predicts for an additive isotropic
    /// perturbation at this scale; only set for `gp`.
    pub predicted_norm_sq_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareFailure {
    pub target_id: String,
    pub mechanism: Mechanism,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub diagnostics: Vec<CompareDiagnostics>,
    pub failures: Vec<CompareFailure>,
}

impl CompareReport {
    pub fn row(&self, target_id: &str, mechanism: Mechanism) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.target_id == target_id && r.mechanism == mechanism)
    }

    pub fn diagnostic(&self, target_id: &str, mechanism: Mechanism) -> Option<&CompareDiagnostics> {
        self.diagnostics
            .iter()
            .find(|r| r.target_id == target_id && r.mechanism == mechanism)
    }
}

type CompareJob = (usize, Mechanism, Result<(CompareRow, CompareDiagnostics)>);

/// Tunes each mechanism to `mse_target` on every target and evaluates a
/// fresh batch at the tuned scale. Failures are recorded and do not stop
/// the remaining rows.
pub fn compare_baselines(lab: &Lab, targets: &[State], config: &CompareConfig, seed: u64, cfg: &CfgSpec) -> Result<CompareReport> {
    if config.eval_batch == 0 {
        return Err(LabError::Config("eval_batch must be positive".into()));
    }
    let controller = |i: usize, m: usize| ControllerConfig {
        mse_target: config.mse_target,
        tol: config.tol,
        batch_size: config.batch_size,
        max_iters: config.max_iters,
        seed: derive_seed(seed, &[TUNE_STREAM, i as u64, m as u64]),
        metric: config.metric,
    };
    controller(0, 0).validate()?;
    let jobs: Vec<(usize, usize, Mechanism)> = (0..targets.len())
        .flat_map(|i| config.mechanisms.iter().enumerate().map(move |(m, mech)| (i, m, *mech)))
        .collect();
    let results: Vec<CompareJob> = jobs
        .into_par_iter()
        .map(|(i, m, mechanism)| {
            let run = || -> Result<(CompareRow, CompareDiagnostics)> {
                let mut bound = BoundMechanism::new(lab, &targets[i], mechanism);
                bound.cfg_invert = cfg.clone();
                bound.cfg_sample = cfg.clone();
                if let Some(t0) = config.partial_t0 {
                    bound.t0 = t0;
                }
                bound.gp_scale_max = config.gp_scale_max.unwrap_or_else(|| default_gp_scale_max(lab.dim()));
                let (scale, trace) = controller_tune(&bound, &controller(i, m))?;
                let eval_seed = derive_seed(seed, &[EVAL_STREAM, i as u64, m as u64]);
                use crate::ccs::TunableMechanism;
                let batch = bound.draw_batch(scale, config.eval_batch, eval_seed)?;
                let target_id = i.to_string();
                let predicted = (mechanism == Mechanism::Gp)
                    .then(|| scale * scale * lab.dim() as f64 / batch.anchor.norm_squared());
                Ok((
                    CompareRow {
                        target_id: target_id.clone(),
                        mechanism,
                        final_scale: scale,
                        achieved_rmse: trace.final_measured().unwrap_or(f64::NAN),
                        psnr_mean_db: batch.psnr_of_mean(config.data_range)?,
                        sample_sd: batch.sample_sd()?,
                        iterations: trace.iterations.len(),
                        converged: trace.converged,
                    },
                    CompareDiagnostics {
                        target_id,
                        mechanism,
                        eval_rmse: batch.mean_rmse(),
                        max_start_norm_drift: batch.max_start_norm_drift(),
                        mean_start_norm_sq_drift: batch.mean_start_norm_sq_drift(),
                        norm_sq_drift_std_error: batch.start_norm_sq_drift_std_error(),
                        predicted_norm_sq_drift: predicted,
                    },
                ))
            };
            (i, mechanism, run())
        })
        .collect();
    let mut report = CompareReport {
        rows: Vec::new(),
        diagnostics: Vec::new(),
        failures: Vec::new(),
    };
    for (i, mechanism, result) in results {
        match result {
            Ok((row, diag)) => {
                report.rows.push(row);
                report.diagnostics.push(diag);
            }
            Err(e) => report.failures.push(CompareFailure {
                target_id: i.to_string(),
                mechanism,
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}
