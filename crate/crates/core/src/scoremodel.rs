//! Analytic Gaussian-mixture data distributions.
//!
//! Under the variance-preserving forward process a component `N(mu, Sigma)`
//! becomes `N(sqrt(a) mu, a Sigma + (1 - a) I)` at signal level `a`, so the
//! time-marginal density, its score and its Hessian are all closed form.
//! Every method here takes the signal level `alpha_bar` directly; the
//! samplers translate step indices through the schedule.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type State = DVector<f64>;

/// Dense full covariances are accepted up to this dimension.
pub const MAX_FULL_COVARIANCE_DIM: usize = 256;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A field that supplies the score and its Jacobian at a signal level.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &State, alpha_bar: f64) -> Result<State>;
    fn hessian(&self, x: &State, alpha_bar: f64) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

// Covariances are stored in an orthonormal eigenbasis so that the noised
// covariance `a * Sigma + (1 - a) I` stays diagonal in the same basis.
#[derive(Debug, Clone)]
enum Basis {
    Identity,
    Rotated(DMatrix<f64>),
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: State,
    spectrum: DVector<f64>,
    basis: Basis,
    label: Option<String>,
}

impl Component {
    fn to_basis(&self, v: &State) -> State {
        match &self.basis {
            Basis::Identity => v.clone(),
            Basis::Rotated(q) => q.tr_mul(v),
        }
    }

    fn out_of_basis(&self, v: &State) -> State {
        match &self.basis {
            Basis::Identity => v.clone(),
            Basis::Rotated(q) => q * v,
        }
    }

    fn noised_spectrum(&self, alpha_bar: f64) -> DVector<f64> {
        self.spectrum.map(|l| alpha_bar * l + (1.0 - alpha_bar))
    }

    /// (log weight + log density, score, noised spectrum) at `x`.
    fn evaluate(&self, x: &State, alpha_bar: f64) -> (f64, State, DVector<f64>) {
        let centred = x - &self.mean * alpha_bar.sqrt();
        let y = self.to_basis(&centred);
        let var = self.noised_spectrum(alpha_bar);
        let mut quad = 0.0;
        let mut logdet = 0.0;
        let mut py = DVector::zeros(y.len());
        for i in 0..y.len() {
            quad += y[i] * y[i] / var[i];
            logdet += var[i].ln();
            py[i] = -y[i] / var[i];
        }
        let logp = self.weight.ln() - 0.5 * (y.len() as f64 * LN_2PI + logdet + quad);
        (logp, self.out_of_basis(&py), var)
    }

    fn precision(&self, var: &DVector<f64>) -> DMatrix<f64> {
        let inv = var.map(|v| 1.0 / v);
        match &self.basis {
            Basis::Identity => DMatrix::from_diagonal(&inv),
            Basis::Rotated(q) => q * DMatrix::from_diagonal(&inv) * q.transpose(),
        }
    }
}

/// Classifier-free guidance: `s_null + gamma * (s_cond - s_null)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfgSpec {
    pub gamma: f64,
    #[serde(default)]
    pub condition: Option<String>,
}

impl Default for CfgSpec {
    fn default() -> Self {
        CfgSpec {
            gamma: 3.0,
            condition: None,
        }
    }
}

impl CfgSpec {
    pub fn unconditional() -> Self {
        CfgSpec::default()
    }

    pub fn conditional(condition: impl Into<String>, gamma: f64) -> Self {
        CfgSpec {
            gamma,
            condition: Some(condition.into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<State>,
        covariances: Vec<Covariance>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(LabError::input("mixture needs at least one component"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(LabError::input(format!(
                "mixture has {k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != k {
                return Err(LabError::input(format!("{} labels for {k} components", l.len())));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(LabError::input("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::input(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(LabError::input("dimension must be positive"));
        }
        let mut components = Vec::with_capacity(k);
        for (i, ((weight, mean), cov)) in weights.into_iter().zip(means).zip(covariances).enumerate() {
            if mean.len() != dim || mean.iter().any(|v| !v.is_finite()) {
                return Err(LabError::input(format!("mean {i} must be {dim} finite values")));
            }
            let (spectrum, basis) = decompose(cov, dim, i)?;
            components.push(Component {
                weight,
                mean,
                spectrum,
                basis,
                label: labels.as_ref().map(|l| l[i].clone()),
            });
        }
        Ok(GaussianMixture { dim, components })
    }

    /// `N(0, I)`; its score is `-x` at every noise level.
    pub fn standard_normal(dim: usize) -> Self {
        Self::isotropic(DVector::zeros(dim), 1.0)
    }

    /// A single `N(mean, variance * I)` component.
    pub fn isotropic(mean: State, variance: f64) -> Self {
        let dim = mean.len();
        GaussianMixture::new(
            vec![1.0],
            vec![mean],
            vec![Covariance::Diagonal(DVector::from_element(dim, variance))],
            None,
        )
        .expect("isotropic component is valid")
    }

    /// Two equally weighted components at `+offset * 1` and `-offset * 1`
    /// with per-coordinate standard deviation `std`, labelled "A" and "B".
    pub fn symmetric_pair(dim: usize, offset: f64, std: f64) -> Result<Self> {
        let mean = DVector::from_element(dim, offset);
        let cov = Covariance::Diagonal(DVector::from_element(dim, std * std));
        GaussianMixture::new(
            vec![0.5, 0.5],
            vec![mean.clone(), -mean],
            vec![cov.clone(), cov],
            Some(vec!["A".into(), "B".into()]),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<&State> {
        self.components.iter().map(|c| &c.mean).collect()
    }

    pub fn labels(&self) -> Vec<Option<&str>> {
        self.components.iter().map(|c| c.label.as_deref()).collect()
    }

    fn check_state(&self, x: &State) -> Result<()> {
        if x.len() != self.dim {
            return Err(LabError::input(format!(
                "state has length {}, model dimension is {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::input("state contains non-finite values"));
        }
        Ok(())
    }

    fn check_level(alpha_bar: f64) -> Result<()> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(LabError::input(format!("alpha_bar {alpha_bar} outside (0, 1]")));
        }
        Ok(())
    }

    fn all_indices(&self) -> Vec<usize> {
        (0..self.components.len()).collect()
    }

    /// Component indices whose label equals `condition`.
    pub fn indices_for(&self, condition: &str) -> Result<Vec<usize>> {
        let idx: Vec<usize> = self
            .components
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label.as_deref() == Some(condition))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(LabError::input(format!("unknown condition tag {condition:?}")));
        }
        Ok(idx)
    }

    fn evaluate_subset(
        &self,
        x: &State,
        alpha_bar: f64,
        subset: &[usize],
    ) -> (Vec<f64>, Vec<State>, Vec<DVector<f64>>) {
        let mut logs = Vec::with_capacity(subset.len());
        let mut scores = Vec::with_capacity(subset.len());
        let mut vars = Vec::with_capacity(subset.len());
        for &k in subset {
            let (lp, s, v) = self.components[k].evaluate(x, alpha_bar);
            logs.push(lp);
            scores.push(s);
            vars.push(v);
        }
        (logs, scores, vars)
    }

    fn log_density_subset(&self, x: &State, alpha_bar: f64, subset: &[usize]) -> f64 {
        let (logs, _, _) = self.evaluate_subset(x, alpha_bar, subset);
        let total_weight: f64 = subset.iter().map(|&k| self.components[k].weight).sum();
        log_sum_exp(&logs) - total_weight.ln()
    }

    fn score_subset(&self, x: &State, alpha_bar: f64, subset: &[usize]) -> State {
        let (logs, scores, _) = self.evaluate_subset(x, alpha_bar, subset);
        let post = softmax(&logs);
        let mut out = DVector::zeros(self.dim);
        for (p, s) in post.iter().zip(&scores) {
            out.axpy(*p, s, 1.0);
        }
        out
    }

    fn hessian_subset(&self, x: &State, alpha_bar: f64, subset: &[usize]) -> DMatrix<f64> {
        let (logs, scores, vars) = self.evaluate_subset(x, alpha_bar, subset);
        let post = softmax(&logs);
        let mut mean_score = DVector::zeros(self.dim);
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for ((p, s), (&k, var)) in post.iter().zip(&scores).zip(subset.iter().zip(&vars)) {
            mean_score.axpy(*p, s, 1.0);
            h -= self.components[k].precision(var) * *p;
            h.ger(*p, s, s, 1.0);
        }
        h.ger(-1.0, &mean_score, &mean_score, 1.0);
        // Exact symmetry; the rank-one updates can leave rounding asymmetry.
        let ht = h.transpose();
        (h + ht) * 0.5
    }

    /// Posterior responsibilities of each component at `x`; sums to 1.
    pub fn posterior(&self, x: &State, alpha_bar: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        Self::check_level(alpha_bar)?;
        let (logs, _, _) = self.evaluate_subset(x, alpha_bar, &self.all_indices());
        Ok(softmax(&logs))
    }

    pub fn log_density(&self, x: &State, alpha_bar: f64) -> Result<f64> {
        self.check_state(x)?;
        Self::check_level(alpha_bar)?;
        Ok(self.log_density_subset(x, alpha_bar, &self.all_indices()))
    }

    pub fn cfg_score(&self, x: &State, alpha_bar: f64, cfg: &CfgSpec) -> Result<State> {
        self.guided(cfg)?.score(x, alpha_bar)
    }

    pub fn cfg_hessian(&self, x: &State, alpha_bar: f64, cfg: &CfgSpec) -> Result<DMatrix<f64>> {
        self.guided(cfg)?.hessian(x, alpha_bar)
    }

    /// Binds a guidance spec, validating the condition tag.
    pub fn guided<'a>(&'a self, cfg: &CfgSpec) -> Result<Guided<'a>> {
        if !(cfg.gamma.is_finite() && cfg.gamma >= 0.0) {
            return Err(LabError::input(format!("guidance weight {} must be >= 0", cfg.gamma)));
        }
        let conditional = match &cfg.condition {
            Some(c) => Some(self.indices_for(c)?),
            None => None,
        };
        Ok(Guided {
            model: self,
            all: self.all_indices(),
            conditional,
            gamma: cfg.gamma,
        })
    }

    /// One draw from the clean data distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let c = &self.components[chosen];
        let z = DVector::from_fn(self.dim, |i, _| {
            let n: f64 = rng.sample(StandardNormal);
            n * c.spectrum[i].sqrt()
        });
        &c.mean + c.out_of_basis(&z)
    }

    /// Upper bound on the spectral norm of the Hessian of `log p_a` over all
    /// of state space.
    ///
    /// The Hessian is `-E[P_k] + Cov[s_k]` under the posterior. The first term
    /// is bounded by the largest precision eigenvalue. Component scores differ
    /// by `P_j (x - m_j) - P_k (x - m_k)`; for a shared precision `P` that is
    /// the constant `P (m_k - m_j)`, so the covariance of the scores is at most
    /// a quarter of the squared diameter. Mixtures with unequal covariances
    /// have unbounded Hessians and return `None`.
    pub fn hessian_norm_bound(&self, alpha_bar: f64) -> Option<f64> {
        let first = &self.components[0];
        let shared = self.components.iter().all(|c| {
            c.spectrum == first.spectrum
                && match (&c.basis, &first.basis) {
                    (Basis::Identity, Basis::Identity) => true,
                    (Basis::Rotated(a), Basis::Rotated(b)) => a == b,
                    _ => false,
                }
        });
        if !shared {
            return None;
        }
        let var = first.noised_spectrum(alpha_bar);
        let max_precision = var.iter().fold(0.0f64, |m, v| m.max(1.0 / v));
        let min_var = var.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let mut diameter: f64 = 0.0;
        for a in &self.components {
            for b in &self.components {
                let gap = (&a.mean - &b.mean).norm() * alpha_bar.sqrt() / min_var;
                diameter = diameter.max(gap);
            }
        }
        Some(max_precision + 0.25 * diameter * diameter)
    }
}

impl ScoreField for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &State, alpha_bar: f64) -> Result<State> {
        self.check_state(x)?;
        Self::check_level(alpha_bar)?;
        Ok(self.score_subset(x, alpha_bar, &self.all_indices()))
    }

    fn hessian(&self, x: &State, alpha_bar: f64) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        Self::check_level(alpha_bar)?;
        Ok(self.hessian_subset(x, alpha_bar, &self.all_indices()))
    }
}

/// A mixture with a bound guidance spec.
#[derive(Debug, Clone)]
pub struct Guided<'a> {
    model: &'a GaussianMixture,
    all: Vec<usize>,
    conditional: Option<Vec<usize>>,
    gamma: f64,
}

impl Guided<'_> {
    pub fn model(&self) -> &GaussianMixture {
        self.model
    }
}

impl ScoreField for Guided<'_> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn score(&self, x: &State, alpha_bar: f64) -> Result<State> {
        self.model.check_state(x)?;
        GaussianMixture::check_level(alpha_bar)?;
        let null = self.model.score_subset(x, alpha_bar, &self.all);
        match &self.conditional {
            None => Ok(null),
            Some(idx) => {
                let cond = self.model.score_subset(x, alpha_bar, idx);
                Ok(&null + (cond - &null) * self.gamma)
            }
        }
    }

    fn hessian(&self, x: &State, alpha_bar: f64) -> Result<DMatrix<f64>> {
        self.model.check_state(x)?;
        GaussianMixture::check_level(alpha_bar)?;
        let null = self.model.hessian_subset(x, alpha_bar, &self.all);
        match &self.conditional {
            None => Ok(null),
            Some(idx) => {
                let cond = self.model.hessian_subset(x, alpha_bar, idx);
                Ok(&null + (cond - &null) * self.gamma)
            }
        }
    }
}

fn decompose(cov: Covariance, dim: usize, i: usize) -> Result<(DVector<f64>, Basis)> {
    match cov {
        Covariance::Diagonal(v) => {
            if v.len() != dim {
                return Err(LabError::input(format!("covariance {i} has {} entries, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(LabError::input(format!("covariance {i} must have positive variances")));
            }
            Ok((v, Basis::Identity))
        }
        Covariance::Full(m) => {
            if dim > MAX_FULL_COVARIANCE_DIM {
                return Err(LabError::Capability(format!(
                    "full covariances are limited to d <= {MAX_FULL_COVARIANCE_DIM}, got {dim}"
                )));
            }
            if m.nrows() != dim || m.ncols() != dim {
                return Err(LabError::input(format!("covariance {i} must be {dim}x{dim}")));
            }
            let scale = m.amax().max(1.0);
            if (&m - m.transpose()).amax() > 1e-12 * scale {
                return Err(LabError::input(format!("covariance {i} is not symmetric")));
            }
            let eig = SymmetricEigen::new(m);
            if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
                return Err(LabError::input(format!("covariance {i} is not positive definite")));
            }
            Ok((eig.eigenvalues, Basis::Rotated(eig.eigenvectors)))
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}
