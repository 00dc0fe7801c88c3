//! Perturbation mechanisms around a target mean and the bisection
//! controller that tunes their scale to a requested diversity.
//!
//! Every mechanism maps a target mean to a batch of generated samples whose
//! spread grows with a scale parameter:
//!
//! * `ccs_full`: invert the target to pure noise, slerp toward fresh noise by
//!   an angle `c0`, regenerate.
//! * `ccs_partial`: invert only to `t0`, slerp the noise component there.
//! * `gp`: add `s * eps` to the inverted noise.
//! * `ccdf`: forward-noise the target to `t0` and regenerate from there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{LabError, Result};
use crate::geometry::{slerp, SlerpInputs};
use crate::metrics::{mean_state, psnr_of_mean, rmse, sample_sd};
use crate::rng::{derive_seed, rng_for, standard_normal};
use crate::sampler::{ddim_endpoint, ddim_invert};
use crate::schedule::NoiseSchedule;
use crate::scoremodel::{CfgSpec, GaussianMixture, State};

/// Attempts per draw before a degenerate slerp becomes an error.
pub const SLERP_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    CcsFull,
    CcsPartial,
    Gp,
    Ccdf,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::CcsFull, Mechanism::CcsPartial, Mechanism::Gp, Mechanism::Ccdf];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::CcsFull => "ccs_full",
            Mechanism::CcsPartial => "ccs_partial",
            Mechanism::Gp => "gp",
            Mechanism::Ccdf => "ccdf",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| LabError::input(format!("unknown mechanism {s:?}")))
    }
}

/// A mechanism together with its scale and everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mechanism: Mechanism,
    /// `c0` for the slerp mechanisms, `s` for `gp`, `t0` for `ccdf`.
    pub scale: f64,
    /// Intermediate level for `ccs_partial`.
    #[serde(default)]
    pub t0: Option<usize>,
    #[serde(default)]
    pub cfg_invert: CfgSpec,
    #[serde(default)]
    pub cfg_sample: CfgSpec,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self, steps: usize) -> Result<()> {
        match self.mechanism {
            Mechanism::CcsFull | Mechanism::CcsPartial => check_c0(self.scale)?,
            Mechanism::Gp => {
                if !(self.scale >= 0.0 && self.scale.is_finite()) {
                    return Err(LabError::Range(format!("gp scale {} must be >= 0", self.scale)));
                }
            }
            Mechanism::Ccdf => {
                as_step(self.scale, steps)?;
            }
        }
        if self.mechanism == Mechanism::CcsPartial {
            let t0 = self.t0.ok_or_else(|| LabError::input("ccs_partial needs t0"))?;
            check_t0(t0, steps)?;
        }
        Ok(())
    }
}

fn check_c0(c0: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2).contains(&c0) {
        return Err(LabError::Range(format!("c0 = {c0} outside [0, pi/2]")));
    }
    Ok(())
}

fn check_t0(t0: usize, steps: usize) -> Result<()> {
    if t0 < 1 || t0 > steps {
        return Err(LabError::Range(format!("t0 = {t0} outside 1..={steps}")));
    }
    Ok(())
}

fn as_step(scale: f64, steps: usize) -> Result<usize> {
    if scale.fract() != 0.0 || scale < 1.0 || scale > steps as f64 {
        return Err(LabError::Range(format!("t0 = {scale} must be an integer in 1..={steps}")));
    }
    Ok(scale as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub index: usize,
    pub seed: u64,
    /// The perturbed state generation started from.
    pub start: State,
    pub sample: State,
    pub residual_norm: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub target_id: String,
    pub mechanism: Mechanism,
    pub scale: f64,
    pub t0: Option<usize>,
    pub seed: u64,
    pub target: State,
    /// The unperturbed starting state (inverted noise, or the inverted
    /// state at `t0`).
    pub anchor: State,
    pub draws: Vec<Draw>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn samples(&self) -> Vec<State> {
        self.draws.iter().map(|d| d.sample.clone()).collect()
    }

    pub fn mean_residual_norm(&self) -> f64 {
        self.draws.iter().map(|d| d.residual_norm).sum::<f64>() / self.draws.len() as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.draws.iter().map(|d| d.rmse).sum::<f64>() / self.draws.len() as f64
    }

    pub fn sample_mean(&self) -> Result<State> {
        mean_state(&self.samples())
    }

    pub fn psnr_of_mean(&self, data_range: f64) -> Result<f64> {
        psnr_of_mean(&self.samples(), &self.target, data_range)
    }

    pub fn sample_sd(&self) -> Result<f64> {
        sample_sd(&self.samples())
    }

    /// Largest relative change `| ||start|| - ||anchor|| | / ||anchor||`.
    pub fn max_start_norm_drift(&self) -> f64 {
        let a = self.anchor.norm();
        self.draws
            .iter()
            .map(|d| (d.start.norm() - a).abs() / a)
            .fold(0.0, f64::max)
    }

    /// `mean ||start||^2 / ||anchor||^2 - 1`.
    pub fn mean_start_norm_sq_drift(&self) -> f64 {
        let a = self.anchor.norm_squared();
        self.draws.iter().map(|d| d.start.norm_squared()).sum::<f64>() / (self.draws.len() as f64 * a) - 1.0
    }

    /// Standard error of [`mean_start_norm_sq_drift`](Self::mean_start_norm_sq_drift);
    /// zero for fewer than two draws.
    pub fn start_norm_sq_drift_std_error(&self) -> f64 {
        let n = self.draws.len();
        if n < 2 {
            return 0.0;
        }
        let a = self.anchor.norm_squared();
        let r: Vec<f64> = self.draws.iter().map(|d| d.start.norm_squared() / a).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

/// Schedule, data model and inversion setting shared by every mechanism.
#[derive(Debug, Clone)]
pub struct Lab {
    pub schedule: NoiseSchedule,
    pub model: GaussianMixture,
    /// Fixed-point refinement sweeps per inversion step.
    pub refine_iters: usize,
}

impl Lab {
    pub fn new(schedule: NoiseSchedule, model: GaussianMixture) -> Self {
        Lab {
            schedule,
            model,
            refine_iters: 0,
        }
    }

    pub fn with_refinement(mut self, refine_iters: usize) -> Self {
        self.refine_iters = refine_iters;
        self
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn check_target(&self, target: &State) -> Result<()> {
        if target.len() != self.dim() {
            return Err(LabError::input(format!(
                "target has length {}, model dimension is {}",
                target.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_count(n: usize) -> Result<()> {
        if n == 0 {
            return Err(LabError::input("draw count must be positive"));
        }
        Ok(())
    }

    /// Inverts `target` to level `t_stop` under `cfg`.
    pub fn invert(&self, target: &State, t_stop: usize, cfg: &CfgSpec) -> Result<State> {
        let field = self.model.guided(cfg)?;
        ddim_invert(&self.schedule, &field, target, t_stop, self.refine_iters)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        mechanism: Mechanism,
        scale: f64,
        t0: Option<usize>,
        seed: u64,
        target: &State,
        anchor: State,
        draws: Vec<(State, State, u64)>,
    ) -> Result<SampleBatch> {
        let draws = draws
            .into_iter()
            .enumerate()
            .map(|(index, (start, sample, seed))| {
                let residual_norm = (&sample - target).norm();
                Ok(Draw {
                    index,
                    seed,
                    rmse: rmse(&sample, target)?,
                    residual_norm,
                    start,
                    sample,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleBatch {
            target_id: "target".into(),
            mechanism,
            scale,
            t0,
            seed,
            target: target.clone(),
            anchor,
            draws,
        })
    }

    /// Draws `n` slerp perturbations of `anchor` with fresh noise scaled by
    /// `noise_scale`, retrying degenerate draws.
    fn slerp_draws(&self, anchor: &State, c0: f64, noise_scale: f64, n: usize, seed: u64) -> Result<Vec<(State, u64)>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let draw_seed = derive_seed(seed, &[i as u64]);
                let mut last = LabError::Degenerate { sin_theta: 0.0 };
                for attempt in 0..SLERP_ATTEMPTS {
                    let eps = standard_normal(&mut rng_for(draw_seed, &[attempt as u64]), anchor.len()) * noise_scale;
                    match SlerpInputs::new(anchor.clone(), eps, c0).and_then(|s| slerp(&s)) {
                        Ok(x) => return Ok((x, draw_seed)),
                        Err(e @ LabError::Degenerate { .. }) => last = e,
                        Err(e) => return Err(e),
                    }
                }
                Err(last)
            })
            .collect()
    }

    fn generate(&self, starts: Vec<(State, u64)>, t_start: usize, cfg: &CfgSpec) -> Result<Vec<(State, State, u64)>> {
        let field = self.model.guided(cfg)?;
        starts
            .into_par_iter()
            .map(|(x, seed)| {
                let out = ddim_endpoint(&self.schedule, &field, &x, t_start)?;
                Ok((x, out, seed))
            })
            .collect()
    }

    pub fn ccs_full_sample(&self, target: &State, c0: f64, n: usize, seed: u64, cfg: &CfgSpec) -> Result<SampleBatch> {
        check_c0(c0)?;
        self.check_target(target)?;
        Self::check_count(n)?;
        let steps = self.schedule.steps();
        let anchor = self.invert(target, steps, cfg)?;
        let starts = self.slerp_draws(&anchor, c0, 1.0, n, seed)?;
        let draws = self.generate(starts, steps, cfg)?;
        self.finish(Mechanism::CcsFull, c0, None, seed, target, anchor, draws)
    }

    /// Partial inversion to `t0`. The noise component
    /// `z_t0 - sqrt(a_t0) z_0` is slerped toward fresh noise of variance
    /// `1 - a_t0` and recombined with the clean part before regenerating.
    #[allow(clippy::too_many_arguments)]
    pub fn ccs_partial_sample(
        &self,
        target: &State,
        c0: f64,
        t0: usize,
        n: usize,
        seed: u64,
        cfg_invert: &CfgSpec,
        cfg_sample: &CfgSpec,
    ) -> Result<SampleBatch> {
        check_c0(c0)?;
        check_t0(t0, self.schedule.steps())?;
        self.check_target(target)?;
        Self::check_count(n)?;
        let a = self.schedule.alpha_bar(t0);
        let z_t0 = self.invert(target, t0, cfg_invert)?;
        let clean = target * a.sqrt();
        let noise = &z_t0 - &clean;
        let starts = self
            .slerp_draws(&noise, c0, (1.0 - a).sqrt(), n, seed)?
            .into_iter()
            .map(|(e, s)| (&clean + e, s))
            .collect();
        let draws = self.generate(starts, t0, cfg_sample)?;
        self.finish(Mechanism::CcsPartial, c0, Some(t0), seed, target, z_t0, draws)
    }

    /// Partial inversion under the `source` label and regeneration under the
    /// `target_label`, both with guidance weight `gamma`.
    #[allow(clippy::too_many_arguments)]
    pub fn ccs_edit_sample(
        &self,
        target: &State,
        c0: f64,
        t0: usize,
        n: usize,
        seed: u64,
        source: &str,
        target_label: &str,
        gamma: f64,
    ) -> Result<SampleBatch> {
        let cfg_invert = CfgSpec::conditional(source, gamma);
        let cfg_sample = CfgSpec::conditional(target_label, gamma);
        self.model.guided(&cfg_invert)?;
        self.model.guided(&cfg_sample)?;
        self.ccs_partial_sample(target, c0, t0, n, seed, &cfg_invert, &cfg_sample)
    }

    pub fn gp_sample(&self, target: &State, s: f64, n: usize, seed: u64, cfg: &CfgSpec) -> Result<SampleBatch> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(LabError::Range(format!("gp scale {s} must be >= 0")));
        }
        self.check_target(target)?;
        Self::check_count(n)?;
        let steps = self.schedule.steps();
        let anchor = self.invert(target, steps, cfg)?;
        let starts = (0..n)
            .into_par_iter()
            .map(|i| {
                let draw_seed = derive_seed(seed, &[i as u64]);
                let eps = standard_normal(&mut rng_for(draw_seed, &[0]), anchor.len());
                (&anchor + eps * s, draw_seed)
            })
            .collect();
        let draws = self.generate(starts, steps, cfg)?;
        self.finish(Mechanism::Gp, s, None, seed, target, anchor, draws)
    }

    /// Forward noising `sqrt(a_t0) x_0 + sqrt(1 - a_t0) eps`, then
    /// regeneration from `t0`.
    pub fn ccdf_sample(&self, target: &State, t0: usize, n: usize, seed: u64, cfg: &CfgSpec) -> Result<SampleBatch> {
        check_t0(t0, self.schedule.steps())?;
        self.check_target(target)?;
        Self::check_count(n)?;
        let a = self.schedule.alpha_bar(t0);
        let clean = target * a.sqrt();
        let starts = (0..n)
            .into_par_iter()
            .map(|i| {
                let draw_seed = derive_seed(seed, &[i as u64]);
                let eps = standard_normal(&mut rng_for(draw_seed, &[0]), target.len());
                (&clean + eps * (1.0 - a).sqrt(), draw_seed)
            })
            .collect();
        let draws = self.generate(starts, t0, cfg)?;
        self.finish(Mechanism::Ccdf, t0 as f64, Some(t0), seed, target, clean, draws)
    }

    /// Runs `spec` against `target`.
    pub fn run(&self, spec: &PerturbationSpec, target: &State, n: usize) -> Result<SampleBatch> {
        spec.validate(self.schedule.steps())?;
        match spec.mechanism {
            Mechanism::CcsFull => self.ccs_full_sample(target, spec.scale, n, spec.seed, &spec.cfg_sample),
            Mechanism::CcsPartial => self.ccs_partial_sample(
                target,
                spec.scale,
                spec.t0.unwrap(),
                n,
                spec.seed,
                &spec.cfg_invert,
                &spec.cfg_sample,
            ),
            Mechanism::Gp => self.gp_sample(target, spec.scale, n, spec.seed, &spec.cfg_sample),
            Mechanism::Ccdf => self.ccdf_sample(target, spec.scale as usize, n, spec.seed, &spec.cfg_sample),
        }
    }
}

/// The scale range a mechanism is tuned over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleBracket {
    Continuous { lo: f64, hi: f64 },
    Discrete { lo: usize, hi: usize },
}

/// Anything whose diversity the controller can tune.
pub trait TunableMechanism: Sync {
    fn bracket(&self) -> ScaleBracket;
    fn draw_batch(&self, scale: f64, n: usize, seed: u64) -> Result<SampleBatch>;
}

/// Default upper bracket for the `gp` scale: `0.5 sqrt(d)`.
pub fn default_gp_scale_max(dim: usize) -> f64 {
    0.5 * (dim as f64).sqrt()
}

/// A [`Lab`] mechanism bound to one target.
#[derive(Debug, Clone)]
pub struct BoundMechanism<'a> {
    pub lab: &'a Lab,
    pub target: &'a State,
    pub mechanism: Mechanism,
    /// Intermediate level for `ccs_partial`.
    pub t0: usize,
    pub cfg_invert: CfgSpec,
    pub cfg_sample: CfgSpec,
    pub gp_scale_max: f64,
}

impl<'a> BoundMechanism<'a> {
    pub fn new(lab: &'a Lab, target: &'a State, mechanism: Mechanism) -> Self {
        BoundMechanism {
            lab,
            target,
            mechanism,
            t0: lab.schedule.steps(),
            cfg_invert: CfgSpec::default(),
            cfg_sample: CfgSpec::default(),
            gp_scale_max: default_gp_scale_max(lab.dim()),
        }
    }
}

impl TunableMechanism for BoundMechanism<'_> {
    fn bracket(&self) -> ScaleBracket {
        match self.mechanism {
            Mechanism::CcsFull | Mechanism::CcsPartial => ScaleBracket::Continuous { lo: 0.0, hi: FRAC_PI_2 },
            Mechanism::Gp => ScaleBracket::Continuous {
                lo: 0.0,
                hi: self.gp_scale_max,
            },
            Mechanism::Ccdf => ScaleBracket::Discrete {
                lo: 1,
                hi: self.lab.schedule.steps(),
            },
        }
    }

    fn draw_batch(&self, scale: f64, n: usize, seed: u64) -> Result<SampleBatch> {
        let spec = PerturbationSpec {
            mechanism: self.mechanism,
            scale,
            t0: Some(self.t0),
            cfg_invert: self.cfg_invert.clone(),
            cfg_sample: self.cfg_sample.clone(),
            seed,
        };
        self.lab.run(&spec, self.target, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMetric {
    /// Batch mean of per-coordinate rmse.
    #[default]
    Rmse,
    /// Batch mean of the raw residual norm.
    RawNorm,
}

impl DiversityMetric {
    pub fn measure(self, batch: &SampleBatch) -> f64 {
        match self {
            DiversityMetric::Rmse => batch.mean_rmse(),
            DiversityMetric::RawNorm => batch.mean_residual_norm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub mse_target: f64,
    pub tol: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub metric: DiversityMetric,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            mse_target: 0.12,
            tol: 0.01,
            batch_size: 24,
            max_iters: 12,
            seed: 0,
            metric: DiversityMetric::Rmse,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mse_target > 0.0) || !(self.tol > 0.0) || self.tol >= self.mse_target {
            return Err(LabError::Config(format!(
                "controller needs 0 < tol < mse_target, got tol {} and target {}",
                self.tol, self.mse_target
            )));
        }
        if self.batch_size < 2 {
            return Err(LabError::Config("controller batch_size must be at least 2".into()));
        }
        if self.max_iters == 0 {
            return Err(LabError::Config("controller max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerStep {
    pub c_low: f64,
    pub c_high: f64,
    pub c0: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerTrace {
    pub iterations: Vec<ControllerStep>,
    pub converged: bool,
    pub final_scale: f64,
    /// Measurement at the upper end of the bracket, attached when the loop
    /// did not converge.
    pub boundary: Option<(f64, f64)>,
}

impl ControllerTrace {
    pub fn final_measured(&self) -> Option<f64> {
        self.iterations.iter().rev().find(|s| s.c0 == self.final_scale).map(|s| s.measured)
    }
}

/// Bisection on the mechanism's scale until the measured diversity is within
/// `tol` of the target. Each iteration draws a fresh batch keyed by
/// `(seed, iteration)`.
pub fn controller_tune(mechanism: &impl TunableMechanism, config: &ControllerConfig) -> Result<(f64, ControllerTrace)> {
    config.validate()?;
    let measure = |scale: f64, k: usize| -> Result<f64> {
        let batch = mechanism.draw_batch(scale, config.batch_size, derive_seed(config.seed, &[k as u64]))?;
        Ok(config.metric.measure(&batch))
    };
    let mut iterations = Vec::new();
    let mut converged = false;
    let final_scale;
    match mechanism.bracket() {
        ScaleBracket::Continuous { lo, hi } => {
            let (mut lo, mut hi) = (lo, hi);
            let mut c = 0.5 * (lo + hi);
            let mut last = c;
            for k in 0..config.max_iters {
                let m = measure(c, k)?;
                iterations.push(ControllerStep {
                    c_low: lo,
                    c_high: hi,
                    c0: c,
                    measured: m,
                });
                last = c;
                if (m - config.mse_target).abs() < config.tol {
                    converged = true;
                    break;
                }
                if m > config.mse_target {
                    hi = c;
                    c = 0.5 * (c + lo);
                } else {
                    lo = c;
                    c = 0.5 * (c + hi);
                }
            }
            final_scale = last;
        }
        ScaleBracket::Discrete { lo, hi } => {
            let (mut lo, mut hi) = (lo, hi);
            let mut seen: Vec<(usize, f64)> = Vec::new();
            for k in 0..config.max_iters {
                let mut c = (lo + hi) / 2;
                if seen.iter().any(|(s, _)| *s == c) {
                    match [lo, hi].into_iter().find(|s| !seen.iter().any(|(t, _)| t == s)) {
                        Some(s) => c = s,
                        None => break,
                    }
                }
                let m = measure(c as f64, k)?;
                seen.push((c, m));
                iterations.push(ControllerStep {
                    c_low: lo as f64,
                    c_high: hi as f64,
                    c0: c as f64,
                    measured: m,
                });
                if (m - config.mse_target).abs() < config.tol {
                    converged = true;
                    break;
                }
                if m > config.mse_target {
                    hi = c;
                } else {
                    lo = c;
                }
            }
            // Closest achievable level; ties favour the smaller t0.
            let best = seen
                .iter()
                .min_by(|a, b| {
                    let da = (a.1 - config.mse_target).abs();
                    let db = (b.1 - config.mse_target).abs();
                    da.total_cmp(&db).then(a.0.cmp(&b.0))
                })
                .map(|(s, _)| *s)
                .unwrap_or(lo);
            final_scale = if converged {
                iterations.last().unwrap().c0
            } else {
                best as f64
            };
        }
    }
    let boundary = if converged {
        None
    } else {
        let top = match mechanism.bracket() {
            ScaleBracket::Continuous { hi, .. } => hi,
            ScaleBracket::Discrete { hi, .. } => hi as f64,
        };
        Some((top, measure(top, config.max_iters)?))
    };
    Ok((
        final_scale,
        ControllerTrace {
            iterations,
            converged,
            final_scale,
            boundary,
        },
    ))
}
