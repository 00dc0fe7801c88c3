//! Discrete and continuous variance-preserving noise schedules.
//!
//! A schedule is a strictly decreasing ladder of cumulative signal levels
//! `alpha_bar[0..=T]`. Integer indices are DDIM steps; the continuous
//! interpolant is a monotone piecewise cubic on `ln(alpha_bar)`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Lower bound on the signal level at the clean end of the ladder.
pub const MIN_CLEAN_ALPHA_BAR: f64 = 0.999;
/// Upper bound on the signal level at the noisy end of the ladder.
pub const MAX_NOISY_ALPHA_BAR: f64 = 0.01;

/// The generating variance ladder: `base_steps` betas spaced linearly
/// between `start` and `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSpec {
    pub start: f64,
    pub end: f64,
    pub base_steps: usize,
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec {
            start: 1e-4,
            end: 2e-2,
            base_steps: 1000,
        }
    }
}

impl BetaSpec {
    /// Cumulative products `prod_{j<=i} (1 - beta_j)` for every base step.
    pub fn base_ladder(&self) -> Result<Vec<f64>> {
        if self.base_steps < 2 {
            return Err(LabError::Config("base_steps must be at least 2".into()));
        }
        if !(self.start > 0.0 && self.end < 1.0 && self.start < self.end) {
            return Err(LabError::Config(format!(
                "beta ladder needs 0 < start < end < 1, got ({}, {})",
                self.start, self.end
            )));
        }
        let n = self.base_steps;
        let step = (self.end - self.start) / (n - 1) as f64;
        let mut prod = 1.0;
        Ok((0..n)
            .map(|i| {
                prod *= 1.0 - (self.start + step * i as f64);
                prod
            })
            .collect())
    }
}

/// Per-step coefficients of the idealized deterministic DDIM update
/// `x_{t-1} = eta * x_t + lambda * score(x_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimCoeffs {
    pub eta: f64,
    pub lambda: f64,
}

impl DdimCoeffs {
    /// Contraction of a single step when the score is `-x`.
    pub fn standard_normal_gain(&self) -> f64 {
        self.eta - self.lambda
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    beta_spec: Option<BetaSpec>,
    // Hermite slopes of ln(alpha_bar) at each integer knot.
    log_slopes: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ladder subsampled uniformly to `ddim_steps` steps. Both
    /// endpoints of the base ladder are kept.
    pub fn linear(spec: BetaSpec, ddim_steps: usize) -> Result<Self> {
        let base = spec.base_ladder()?;
        let n = base.len();
        if ddim_steps == 0 || ddim_steps > n - 1 {
            return Err(LabError::Config(format!(
                "ddim_steps must lie in 1..={}, got {ddim_steps}",
                n - 1
            )));
        }
        let alpha_bar: Vec<f64> = (0..=ddim_steps)
            .map(|k| {
                let idx = (k as f64 * (n - 1) as f64 / ddim_steps as f64).round() as usize;
                base[idx]
            })
            .collect();
        let mut schedule = Self::from_alpha_bar(alpha_bar)?;
        schedule.beta_spec = Some(spec);
        Ok(schedule)
    }

    /// The default ladder: betas 1e-4..2e-2 over 1000 base steps, 50 DDIM steps.
    pub fn default_linear() -> Self {
        Self::linear(BetaSpec::default(), 50).expect("default schedule is valid")
    }

    /// Schedule from an explicit ladder, validated against the schedule
    /// invariants.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        let schedule = Self::from_alpha_bar_unchecked(alpha_bar)?;
        if let Some(violation) = schedule.invariant_violations().into_iter().next() {
            return Err(LabError::Config(violation));
        }
        Ok(schedule)
    }

    /// Builds a schedule without checking monotonicity or endpoint bounds.
    ///
    /// Only the length is checked. Used to inject faulty ladders into the
    /// verification suite.
    pub fn from_alpha_bar_unchecked(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(LabError::Config(
                "a schedule needs at least two alpha_bar values".into(),
            ));
        }
        let logs: Vec<f64> = alpha_bar.iter().map(|a| a.ln()).collect();
        let log_slopes = pchip_slopes(&logs);
        Ok(NoiseSchedule {
            alpha_bar,
            beta_spec: None,
            log_slopes,
        })
    }

    /// Human-readable descriptions of every violated schedule invariant.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some((i, a)) = self
            .alpha_bar
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0 && **a <= 1.0))
        {
            out.push(format!("alpha_bar[{i}] = {a} outside (0, 1]"));
        }
        if let Some(i) = self.alpha_bar.windows(2).position(|w| w[1] >= w[0]) {
            out.push(format!(
                "alpha_bar not strictly decreasing at t={}: {} -> {}",
                i + 1,
                self.alpha_bar[i],
                self.alpha_bar[i + 1]
            ));
        }
        if self.alpha_bar[0] < MIN_CLEAN_ALPHA_BAR {
            out.push(format!(
                "alpha_bar[0] = {} below {MIN_CLEAN_ALPHA_BAR}",
                self.alpha_bar[0]
            ));
        }
        let last = *self.alpha_bar.last().unwrap();
        if last > MAX_NOISY_ALPHA_BAR {
            out.push(format!("alpha_bar[T] = {last} above {MAX_NOISY_ALPHA_BAR}"));
        }
        out
    }

    /// Number of DDIM steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn beta_spec(&self) -> Option<BetaSpec> {
        self.beta_spec
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Signal level at integer step `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// The same beta ladder at full base resolution (no subsampling), if
    /// this schedule was generated from one.
    pub fn base_resolution(&self) -> Option<Result<NoiseSchedule>> {
        self.beta_spec
            .map(|spec| NoiseSchedule::linear(spec, spec.base_steps - 1))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let hi = self.steps() as f64;
        if !(0.0..=hi).contains(&t) {
            return Err(LabError::Domain { t, lo: 0.0, hi });
        }
        Ok(())
    }

    /// Continuous-time signal level; exact at integer `t`.
    pub fn alpha_bar_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let last = self.steps();
        let k = (t.floor() as usize).min(last - 1);
        let u = t - k as f64;
        if u == 0.0 {
            return Ok(self.alpha_bar[k]);
        }
        if u == 1.0 {
            return Ok(self.alpha_bar[k + 1]);
        }
        let y0 = self.alpha_bar[k].ln();
        let y1 = self.alpha_bar[k + 1].ln();
        let (m0, m1) = (self.log_slopes[k], self.log_slopes[k + 1]);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        Ok((h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1).exp())
    }

    /// Noise-to-signal ratio `sqrt((1 - alpha_bar) / alpha_bar)`.
    pub fn sigma_of(&self, t: f64) -> Result<f64> {
        Ok(sigma_from_alpha_bar(self.alpha_bar_at(t)?))
    }

    pub fn ddim_coeffs(&self, t: usize) -> Result<DdimCoeffs> {
        if t == 0 || t > self.steps() {
            return Err(LabError::Domain {
                t: t as f64,
                lo: 1.0,
                hi: self.steps() as f64,
            });
        }
        Ok(ddim_coeffs_from(self.alpha_bar[t - 1], self.alpha_bar[t]))
    }

    /// Coefficient of the predicted noise in the raw DDIM update,
    /// `-sqrt(alpha_bar[t-1] (1 - alpha_bar[t]) / alpha_bar[t]) + sqrt(1 - alpha_bar[t-1])`.
    pub fn noise_coefficient(&self, t: usize) -> Result<f64> {
        self.ddim_coeffs(t)?;
        let (prev, cur) = (self.alpha_bar[t - 1], self.alpha_bar[t]);
        Ok(-(prev * (1.0 - cur) / cur).sqrt() + (1.0 - prev).sqrt())
    }

    /// Product of the per-step gains `eta_t - lambda_t` over `1..=t_start`:
    /// the end-to-end DDIM gain for a standard normal data distribution.
    pub fn standard_normal_gain(&self, t_start: usize) -> f64 {
        (1..=t_start)
            .map(|t| ddim_coeffs_from(self.alpha_bar[t - 1], self.alpha_bar[t]).standard_normal_gain())
            .product()
    }
}

pub fn sigma_from_alpha_bar(alpha_bar: f64) -> f64 {
    ((1.0 - alpha_bar) / alpha_bar).max(0.0).sqrt()
}

pub fn alpha_bar_from_sigma(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma)
}

pub(crate) fn ddim_coeffs_from(prev: f64, cur: f64) -> DdimCoeffs {
    let eta = (prev / cur).sqrt();
    let lambda = eta * (1.0 - cur) - ((1.0 - prev) * (1.0 - cur)).sqrt();
    DdimCoeffs { eta, lambda }
}

// Fritsch-Carlson slopes on a unit-spaced grid.
fn pchip_slopes(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let secants: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    if n == 2 {
        return vec![secants[0]; 2];
    }
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (secants[k - 1], secants[k]);
        m[k] = if a * b <= 0.0 { 0.0 } else { 2.0 / (1.0 / a + 1.0 / b) };
    }
    m[0] = pchip_edge(secants[0], secants[1]);
    m[n - 1] = pchip_edge(secants[n - 2], secants[n - 3]);
    m
}

fn pchip_edge(d0: f64, d1: f64) -> f64 {
    let m = (3.0 * d0 - d1) / 2.0;
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
