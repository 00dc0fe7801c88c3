//! Deterministic DDIM generation and inversion, the probability-flow ODE,
//! and forward sensitivity of the generated endpoint to the initial noise.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::schedule::{alpha_bar_from_sigma, NoiseSchedule};
use crate::scoremodel::{GaussianMixture, ScoreField, State};

/// Largest dimension for which a dense Jacobian is propagated by default.
pub const DEFAULT_JACOBIAN_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Noise to data, decreasing `t`.
    Generation,
    /// Data to noise, increasing `t`.
    Inversion,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub timesteps: Vec<usize>,
    pub direction: Direction,
}

impl Trajectory {
    pub fn endpoint(&self) -> &State {
        self.states.last().expect("trajectory holds its starting state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

fn check_finite(x: &State, step: usize, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Numerical {
            step,
            what: what.to_string(),
        })
    }
}

fn check_start(field: &impl ScoreField, x: &State) -> Result<()> {
    if x.len() != field.dim() {
        return Err(LabError::input(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            field.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::input("initial state contains non-finite values"));
    }
    Ok(())
}

fn check_step_range(schedule: &NoiseSchedule, t: usize, lo: usize) -> Result<()> {
    if t < lo || t > schedule.steps() {
        return Err(LabError::Domain {
            t: t as f64,
            lo: lo as f64,
            hi: schedule.steps() as f64,
        });
    }
    Ok(())
}

/// `x_{t-1} = eta_t x_t + lambda_t * score(x_t)`.
pub fn ddim_step(schedule: &NoiseSchedule, field: &impl ScoreField, x: &State, t: usize) -> Result<State> {
    let c = schedule.ddim_coeffs(t)?;
    let s = field.score(x, schedule.alpha_bar(t))?;
    let next = x * c.eta + s * c.lambda;
    check_finite(&next, t, "ddim step")?;
    Ok(next)
}

/// The same step written through the noise prediction
/// `eps = -sqrt(1 - a_t) * score`: predict the clean point, then re-noise it
/// deterministically to level `t - 1`.
pub fn ddim_step_eps(schedule: &NoiseSchedule, field: &impl ScoreField, x: &State, t: usize) -> Result<State> {
    check_step_range(schedule, t, 1)?;
    let a = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t - 1);
    let eps = field.score(x, a)? * -(1.0 - a).sqrt();
    let x0 = (x - &eps * (1.0 - a).sqrt()) / a.sqrt();
    let next = x0 * a_prev.sqrt() + eps * (1.0 - a_prev).sqrt();
    check_finite(&next, t, "ddim step")?;
    Ok(next)
}

/// Generation from `x_T` down to `t = 0`.
pub fn ddim_sample(schedule: &NoiseSchedule, field: &impl ScoreField, x_t: &State) -> Result<Trajectory> {
    ddim_sample_from(schedule, field, x_t, schedule.steps())
}

/// Generation starting at an intermediate level `t_start`.
pub fn ddim_sample_from(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x: &State,
    t_start: usize,
) -> Result<Trajectory> {
    check_start(field, x)?;
    check_step_range(schedule, t_start, 0)?;
    let mut states = Vec::with_capacity(t_start + 1);
    let mut timesteps = Vec::with_capacity(t_start + 1);
    states.push(x.clone());
    timesteps.push(t_start);
    for t in (1..=t_start).rev() {
        let next = ddim_step(schedule, field, states.last().unwrap(), t)?;
        states.push(next);
        timesteps.push(t - 1);
    }
    Ok(Trajectory {
        states,
        timesteps,
        direction: Direction::Generation,
    })
}

/// Endpoint of [`ddim_sample_from`] without storing the path.
pub fn ddim_endpoint(schedule: &NoiseSchedule, field: &impl ScoreField, x: &State, t_start: usize) -> Result<State> {
    check_start(field, x)?;
    check_step_range(schedule, t_start, 0)?;
    let mut x = x.clone();
    for t in (1..=t_start).rev() {
        x = ddim_step(schedule, field, &x, t)?;
    }
    Ok(x)
}

/// Reverse recursion from `x_0` up to `t_stop`.
///
/// Each step first solves `x_{t-1} = eta_t x_t + lambda_t score(x_t)` with
/// the score taken at `x_{t-1}`, then optionally refines with `refine_iters`
/// fixed-point sweeps `x_t <- (x_{t-1} - lambda_t score(x_t)) / eta_t`.
/// Refinement stops early once the update is at rounding level and fails if
/// the update grows over the sweeps.
pub fn ddim_invert(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x0: &State,
    t_stop: usize,
    refine_iters: usize,
) -> Result<State> {
    Ok(ddim_invert_trajectory(schedule, field, x0, t_stop, refine_iters)?
        .states
        .pop()
        .unwrap())
}

pub fn ddim_invert_trajectory(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x0: &State,
    t_stop: usize,
    refine_iters: usize,
) -> Result<Trajectory> {
    check_start(field, x0)?;
    check_step_range(schedule, t_stop, 0)?;
    let mut states = Vec::with_capacity(t_stop + 1);
    let mut timesteps = Vec::with_capacity(t_stop + 1);
    states.push(x0.clone());
    timesteps.push(0);
    for t in 1..=t_stop {
        let prev = states.last().unwrap();
        let c = schedule.ddim_coeffs(t)?;
        let a = schedule.alpha_bar(t);
        let mut x = (prev - field.score(prev, a)? * c.lambda) / c.eta;
        check_finite(&x, t, "inversion step")?;
        let mut first_residual = None;
        for _ in 0..refine_iters {
            let next = (prev - field.score(&x, a)? * c.lambda) / c.eta;
            let residual = (&next - &x).norm();
            if !residual.is_finite() {
                return Err(LabError::Inversion { step: t, residual });
            }
            x = next;
            let floor = 1e-15 * x.norm().max(1.0);
            if residual <= floor {
                break;
            }
            match first_residual {
                None => first_residual = Some(residual),
                Some(r0) if residual > r0 => return Err(LabError::Inversion { step: t, residual }),
                _ => {}
            }
        }
        states.push(x);
        timesteps.push(t);
    }
    Ok(Trajectory {
        states,
        timesteps,
        direction: Direction::Inversion,
    })
}

/// Probability-flow ODE in the noise-scale coordinate.
///
/// With `a = 1 / (1 + sigma^2)` and the rescaled state `y = x / sqrt(a)`,
/// the flow is `dy/dsigma = -sqrt(1 - a) * score(sqrt(a) y, a)`. The ODE is
/// integrated on `n_grid` equally spaced nodes from `sigma(T)` down to
/// `sigma(0)` and the endpoint is mapped back as `x_0 = sqrt(a_0) y_0`.
pub fn ode_integrate(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x_t: &State,
    n_grid: usize,
    method: OdeMethod,
) -> Result<State> {
    check_start(field, x_t)?;
    if n_grid < 2 {
        return Err(LabError::input(format!("n_grid must be at least 2, got {n_grid}")));
    }
    let sigma_hi = schedule.sigma_of(schedule.steps() as f64)?;
    let sigma_lo = schedule.sigma_of(0.0)?;
    let h = (sigma_lo - sigma_hi) / (n_grid - 1) as f64;
    let rhs = |sigma: f64, y: &State| -> Result<State> {
        let a = alpha_bar_from_sigma(sigma);
        Ok(field.score(&(y * a.sqrt()), a)? * -(1.0 - a).sqrt())
    };
    let mut y = x_t * (1.0 + sigma_hi * sigma_hi).sqrt();
    for k in 0..n_grid - 1 {
        let sigma = sigma_hi + k as f64 * h;
        y = match method {
            OdeMethod::Euler => &y + rhs(sigma, &y)? * h,
            OdeMethod::Rk4 => {
                let k1 = rhs(sigma, &y)?;
                let k2 = rhs(sigma + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
                let k3 = rhs(sigma + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
                let k4 = rhs(sigma + h, &(&y + &k3 * h))?;
                &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
        check_finite(&y, k + 1, "ode grid node")?;
    }
    Ok(y * alpha_bar_from_sigma(sigma_lo).sqrt())
}

/// Runs generation from `x_T` while carrying `d x_0 / d x_T`.
pub fn jacobian_propagate(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x_t: &State,
) -> Result<(State, DMatrix<f64>)> {
    jacobian_propagate_capped(schedule, field, x_t, DEFAULT_JACOBIAN_CAP)
}

pub fn jacobian_propagate_capped(
    schedule: &NoiseSchedule,
    field: &impl ScoreField,
    x_t: &State,
    cap: usize,
) -> Result<(State, DMatrix<f64>)> {
    check_start(field, x_t)?;
    let d = field.dim();
    if d > cap {
        return Err(LabError::Capability(format!(
            "Jacobian propagation limited to d <= {cap}, got {d}"
        )));
    }
    let mut x = x_t.clone();
    let mut gamma = DMatrix::identity(d, d);
    for t in (1..=schedule.steps()).rev() {
        let c = schedule.ddim_coeffs(t)?;
        let a = schedule.alpha_bar(t);
        let mut step_jac = field.hessian(&x, a)? * c.lambda;
        for i in 0..d {
            step_jac[(i, i)] += c.eta;
        }
        gamma = step_jac * gamma;
        x = ddim_step(schedule, field, &x, t)?;
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numerical {
                step: t,
                what: "Jacobian carry".into(),
            });
        }
    }
    Ok((x, gamma))
}

/// `||x_t(a) - x_t(b)|| / ||a - b||` along two generation paths started at
/// `a` and `b`, for `t = T` down to `0`.
pub fn separation_profile(schedule: &NoiseSchedule, field: &impl ScoreField, a: &State, b: &State) -> Result<Vec<f64>> {
    check_start(field, a)?;
    check_start(field, b)?;
    let gap = (a - b).norm();
    if gap == 0.0 {
        return Err(LabError::input("paths start at the same point"));
    }
    let (mut xa, mut xb) = (a.clone(), b.clone());
    let mut out = Vec::with_capacity(schedule.steps() + 1);
    out.push(1.0);
    for t in (1..=schedule.steps()).rev() {
        xa = ddim_step(schedule, field, &xa, t)?;
        xb = ddim_step(schedule, field, &xb, t)?;
        out.push((&xa - &xb).norm() / gap);
    }
    Ok(out)
}

/// Per-step Lipschitz factors `eta_t + |lambda_t| * sup ||H_t||`, ordered
/// from `t = T` down to `t = 1`.
///
/// `None` when the mixture admits no global Hessian bound.
pub fn step_lipschitz_factors(schedule: &NoiseSchedule, model: &GaussianMixture) -> Option<Vec<f64>> {
    (1..=schedule.steps())
        .rev()
        .map(|t| {
            let c = schedule.ddim_coeffs(t).ok()?;
            let h = model.hessian_norm_bound(schedule.alpha_bar(t))?;
            Some(c.eta + c.lambda.abs() * h)
        })
        .collect()
}

/// Product of [`step_lipschitz_factors`]: a global bound on how much the
/// generation map can stretch a perturbation of `x_T`.
pub fn lipschitz_bound(schedule: &NoiseSchedule, model: &GaussianMixture) -> Option<f64> {
    step_lipschitz_factors(schedule, model).map(|f| f.iter().product())
}
