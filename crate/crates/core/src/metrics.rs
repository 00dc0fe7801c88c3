//! Residual and diversity statistics.

use crate::error::{LabError, Result};
use crate::scoremodel::State;

/// Default intensity range: data modelled in `[-1, 1]`.
pub const DEFAULT_DATA_RANGE: f64 = 2.0;

/// Per-coordinate root-mean-square residual `||sample - reference|| / sqrt(d)`.
pub fn rmse(sample: &State, reference: &State) -> Result<f64> {
    if sample.len() != reference.len() || sample.is_empty() {
        return Err(LabError::input(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            sample.len(),
            reference.len()
        )));
    }
    Ok((sample - reference).norm() / (sample.len() as f64).sqrt())
}

pub fn mean_state(samples: &[State]) -> Result<State> {
    let first = samples.first().ok_or_else(|| LabError::input("empty batch"))?;
    let mut acc = State::zeros(first.len());
    for s in samples {
        if s.len() != first.len() {
            return Err(LabError::input("batch states differ in length"));
        }
        acc += s;
    }
    Ok(acc / samples.len() as f64)
}

/// `20 log10(data_range / rmse(mean, target))`; `+inf` when the mean hits
/// the target exactly.
pub fn psnr_of_mean(samples: &[State], target: &State, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(LabError::input(format!("data range {data_range} must be positive")));
    }
    let err = rmse(&mean_state(samples)?, target)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (data_range / err).log10())
}

/// Population standard deviation of the coordinates of one state.
pub fn population_sd(x: &State) -> f64 {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over draws of each draw's coordinate-wise population standard
/// deviation.
pub fn sample_sd(samples: &[State]) -> Result<f64> {
    if samples.is_empty() {
        return Err(LabError::input("empty batch"));
    }
    Ok(samples.iter().map(population_sd).sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub bias: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LabError::Protocol("line fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Protocol("degenerate fit: all abscissae equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        bias: my - slope * mx,
    })
}

impl LineFit {
    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.bias) / self.slope
    }
}

/// `1 - sum (y - x)^2 / sum (y - mean y)^2` for points that should lie on
/// the identity line, clamped to `[0, 1]`.
///
/// For points normalized by their own least-squares fit the identity line is
/// the least-squares line of the pooled data, so this is the usual
/// coefficient of determination.
pub fn identity_r2(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LabError::Protocol("R^2 needs at least two paired points".into()));
    }
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::Protocol("R^2 undefined: responses are constant".into()));
    }
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum();
    Ok((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn v(x: &[f64]) -> State {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn rmse_examples() {
        let r = v(&[0.5, -1.0]);
        assert_eq!(rmse(&r, &r).unwrap(), 0.0);
        assert_eq!(rmse(&v(&[1.0; 4]), &v(&[0.0; 4])).unwrap(), 1.0);
        assert!((rmse(&v(&[3.0, 4.0]), &v(&[0.0, 0.0])).unwrap() - 5.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn psnr_examples() {
        let t = v(&[0.0, 0.0]);
        assert_eq!(psnr_of_mean(&[v(&[1.0, -1.0]), v(&[-1.0, 1.0])], &t, 2.0).unwrap(), f64::INFINITY);
        assert!(psnr_of_mean(&[v(&[2.0, 2.0])], &t, 2.0).unwrap().abs() < 1e-12);
        let p = psnr_of_mean(&[v(&[0.02, 0.02])], &t, 2.0).unwrap();
        assert!((p - 40.0).abs() < 1e-10);
    }

    #[test]
    fn sd_examples() {
        assert_eq!(sample_sd(&[v(&[3.0, 3.0]), v(&[-1.0, -1.0])]).unwrap(), 0.0);
        assert_eq!(sample_sd(&[v(&[1.0, -1.0])]).unwrap(), 1.0);
        assert!(sample_sd(&[]).is_err());
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let x: Vec<f64> = [0.1, 0.3, 0.45, 0.7].iter().map(|c: &f64| c.sin()).collect();
        let y: Vec<f64> = x.iter().map(|s| 2.0 * s + 0.1).collect();
        let fit = fit_line(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.bias - 0.1).abs() < 1e-12);
        let yn: Vec<f64> = y.iter().map(|v| fit.normalize(*v)).collect();
        assert!((identity_r2(&x, &yn).unwrap() - 1.0).abs() < 1e-12);
        assert!(fit_line(&[0.2, 0.2], &[1.0, 2.0]).is_err());
    }
}
