//! Geometry of initial noise: angles, spherical interpolation, the closed
//! form scale-for-distance map, and norm concentration of Gaussian vectors.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::rng::{rng_for, standard_normal};
use crate::scoremodel::State;

/// Interpolation is refused when `sin(theta)` is at or below this.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

/// Default margin `delta` in the reachability cap `M <= (2 - delta) ||x||`.
pub const DEFAULT_DISTANCE_MARGIN: f64 = 0.05;

/// Angle in `[0, pi]` between two non-zero vectors.
pub fn angle_between(a: &State, b: &State) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::input(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(LabError::input("angle with a zero vector is undefined"));
    }
    let (ua, ub) = (a / na, b / nb);
    // Half-angle form; arccos loses about half the digits near 0 and pi.
    Ok((2.0 * (&ua - &ub).norm().atan2((&ua + &ub).norm())).clamp(0.0, PI))
}

#[derive(Debug, Clone)]
pub struct SlerpInputs {
    pub anchor: State,
    pub noise: State,
    pub c0: f64,
    pub theta: f64,
}

impl SlerpInputs {
    /// Measures `theta` from the two vectors.
    ///
    /// `c0` may exceed `theta`: the result then continues along the same great
    /// circle past the noise direction. This is what lets a target distance
    /// beyond the chord to `noise` be reached.
    pub fn new(anchor: State, noise: State, c0: f64) -> Result<Self> {
        if !(0.0..PI).contains(&c0) {
            return Err(LabError::Range(format!("c0 = {c0} outside [0, pi)")));
        }
        let theta = angle_between(&anchor, &noise)?;
        Ok(SlerpInputs {
            anchor,
            noise,
            c0,
            theta,
        })
    }
}

/// `sin(c0)/sin(theta) * noise + sin(theta - c0)/sin(theta) * anchor`.
pub fn slerp(inputs: &SlerpInputs) -> Result<State> {
    let sin_theta = inputs.theta.sin();
    if !(sin_theta > DEGENERACY_THRESHOLD) {
        return Err(LabError::Degenerate { sin_theta });
    }
    if inputs.c0 == 0.0 {
        return Ok(inputs.anchor.clone());
    }
    if inputs.c0 == inputs.theta {
        return Ok(inputs.noise.clone());
    }
    let wn = inputs.c0.sin() / sin_theta;
    let wa = (inputs.theta - inputs.c0).sin() / sin_theta;
    Ok(&inputs.noise * wn + &inputs.anchor * wa)
}

/// Scale whose slerp moves a vector of squared norm `anchor_norm_sq` by a
/// chord of length `m` when the noise has the same norm:
/// `C0 = acos(1 - m^2 / (2 ||x||^2))`.
pub fn c0_for_distance(anchor_norm_sq: f64, m: f64, delta: f64) -> Result<f64> {
    if !(anchor_norm_sq > 0.0) || !anchor_norm_sq.is_finite() {
        return Err(LabError::input("anchor norm must be positive"));
    }
    if !(m >= 0.0) {
        return Err(LabError::input(format!("target distance {m} must be non-negative")));
    }
    let cap = (2.0 - delta) * anchor_norm_sq.sqrt();
    if m > cap {
        return Err(LabError::Range(format!("distance {m} exceeds reachable cap {cap}")));
    }
    Ok((1.0 - m * m / (2.0 * anchor_norm_sq)).clamp(-1.0, 1.0).acos())
}

/// Lower bound on `P[ ||X||^2 in ((1 - delta) d, (1 + delta) d) ]` for a
/// standard normal `X` in `d` dimensions, clamped at zero.
pub fn concentration_bound(d: usize, delta: f64) -> f64 {
    let d = d as f64;
    let exponent = -0.5 * d * (0.5 * delta * delta - delta * delta * delta / 3.0);
    (1.0 - 2.0 * exponent.exp()).max(0.0)
}

/// Monte-Carlo frequency of the event bounded by [`concentration_bound`].
pub fn concentration_frequency(d: usize, delta: f64, n: usize, seed: u64) -> f64 {
    let hits: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = standard_normal(&mut rng_for(seed, &[i as u64]), d);
            let r = x.norm_squared() / d as f64;
            usize::from(r > 1.0 - delta && r < 1.0 + delta)
        })
        .sum();
    hits as f64 / n as f64
}

/// A zero-mean perturbation with a known covariance trace.
pub trait DriftSampler: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> State;
    fn trace_covariance(&self) -> f64;
}

/// `Delta = scale * eps` with `eps` standard normal.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicDrift {
    pub dim: usize,
    pub scale: f64,
}

impl DriftSampler for IsotropicDrift {
    fn draw(&self, rng: &mut ChaCha8Rng) -> State {
        standard_normal(rng, self.dim) * self.scale
    }

    fn trace_covariance(&self) -> f64 {
        self.scale * self.scale * self.dim as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormDrift {
    pub mean_norm_sq: f64,
    pub predicted: f64,
    /// Standard error of `mean_norm_sq`.
    pub std_error: f64,
    pub n: usize,
}

/// Estimates `E ||x + Delta||^2` next to the prediction `||x||^2 + tr Cov`.
pub fn norm_drift_stats(x: &State, sampler: &impl DriftSampler, n: usize, seed: u64) -> Result<NormDrift> {
    if n < 2 {
        return Err(LabError::input(format!("need at least 2 draws, got {n}")));
    }
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let delta = sampler.draw(&mut rng_for(seed, &[i as u64]));
            (x + delta).norm_squared()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(NormDrift {
        mean_norm_sq: mean,
        predicted: x.norm_squared() + sampler.trace_covariance(),
        std_error: (var / n as f64).sqrt(),
        n,
    })
}
