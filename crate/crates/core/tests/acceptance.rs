//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Pass a substring as the first argument to run only matching criteria.

use std::time::{Duration, Instant};

use ccslab::ccs::{controller_tune, BoundMechanism, ControllerConfig, Lab, Mechanism};
use ccslab::experiments::{compare_baselines, linearity_protocol, sample_targets, CompareConfig, LinearityConfig};
use ccslab::geometry::{
    c0_for_distance, concentration_bound, concentration_frequency, norm_drift_stats, slerp, IsotropicDrift, SlerpInputs,
    DEFAULT_DISTANCE_MARGIN,
};
use ccslab::rng::{derive_seed, rng_for, standard_normal};
use ccslab::sampler::{
    ddim_endpoint, ddim_invert, ddim_sample, jacobian_propagate, lipschitz_bound, ode_integrate, separation_profile,
    step_lipschitz_factors, OdeMethod,
};
use ccslab::schedule::{BetaSpec, NoiseSchedule};
use ccslab::verify::{mixture_testbed, verify_suite};
use ccslab::{CfgSpec, GaussianMixture, Result};

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

fn lab(model: GaussianMixture) -> Lab {
    Lab::new(NoiseSchedule::default_linear(), model)
}

fn linearity_exact() -> Result<Outcome> {
    let lab = lab(GaussianMixture::standard_normal(64));
    let targets = sample_targets(&lab.model, 4, derive_seed(SEED, &[1]));
    let config = LinearityConfig {
        n_scales: 8,
        samples_per_scale: 24,
        ..LinearityConfig::default()
    };
    let r2 = linearity_protocol(&lab, &targets, &config, derive_seed(SEED, &[1, 1]), &CfgSpec::unconditional())?.pooled_r2;
    let thr = 1.0 - 1e-6;
    Ok(Outcome::new(r2 >= thr, format!("pooled R2 = {r2:.9} (need >= {thr})")))
}

fn linearity_mixture() -> Result<Outcome> {
    let lab = lab(mixture_testbed(64));
    let targets = sample_targets(&lab.model, 8, derive_seed(SEED, &[2]));
    let config = LinearityConfig {
        n_scales: 8,
        samples_per_scale: 64,
        ..LinearityConfig::default()
    };
    let r2 = linearity_protocol(&lab, &targets, &config, derive_seed(SEED, &[2, 1]), &CfgSpec::unconditional())?.pooled_r2;
    Ok(Outcome::new(r2 >= 0.97, format!("pooled R2 = {r2:.6} (need >= 0.97)")))
}

fn jacobian() -> Result<Outcome> {
    let schedule = NoiseSchedule::default_linear();
    let model = mixture_testbed(16);
    let mut rng = rng_for(SEED, &[3]);
    let x = standard_normal(&mut rng, 16);
    let (_, gamma) = jacobian_propagate(&schedule, &model, &x)?;
    let lam = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let dir = standard_normal(&mut rng, 16);
        let plus = ddim_endpoint(&schedule, &model, &(&x + &dir * lam), 50)?;
        let minus = ddim_endpoint(&schedule, &model, &(&x - &dir * lam), 50)?;
        let fd = (plus - minus) / (2.0 * lam);
        let lin = &gamma * &dir;
        worst = worst.max((fd - &lin).norm() / lin.norm());
    }
    Ok(Outcome::new(worst <= 1e-4, format!("max relative directional error = {worst:.3e} (need <= 1e-4)")))
}

fn lipschitz() -> Result<Outcome> {
    let schedule = NoiseSchedule::default_linear();
    let model = mixture_testbed(64);
    let factors = step_lipschitz_factors(&schedule, &model).expect("equal covariances");
    let bound = lipschitz_bound(&schedule, &model).expect("equal covariances");
    let mut cumulative = vec![1.0];
    for f in &factors {
        cumulative.push(cumulative.last().unwrap() * f);
    }
    let mut rng = rng_for(SEED, &[4]);
    let mut worst_end: f64 = 0.0;
    let mut worst_profile: f64 = 0.0;
    for _ in 0..8 {
        let x = standard_normal(&mut rng, 64);
        let dir = standard_normal(&mut rng, 64);
        for lam in [1e-3, 1e-2, 1e-1, 1.0, 2.0] {
            let profile = separation_profile(&schedule, &model, &(&x + &dir * lam), &x)?;
            worst_end = worst_end.max(profile.last().unwrap() / bound);
            for (p, c) in profile.iter().zip(&cumulative) {
                worst_profile = worst_profile.max(p / c);
            }
        }
    }
    Ok(Outcome::new(
        worst_end <= 1.0 && worst_profile <= 1.0,
        format!(
            "max ratio / bound = {worst_end:.4}, max per-step ratio / cumulative bound = {worst_profile:.4} (both need <= 1; bound = {bound:.4})"
        ),
    ))
}

fn concentration() -> Result<Outcome> {
    let big = concentration_bound(50_000, 0.025);
    let bound = concentration_bound(1000, 0.1);
    let freq = concentration_frequency(1000, 0.1, 100_000, derive_seed(SEED, &[5]));
    Ok(Outcome::new(
        big >= 0.999 && freq >= bound,
        format!("bound(50000, 0.025) = {big:.6} (need >= 0.999); frequency(1000, 0.1) = {freq:.5} (need >= {bound:.5})"),
    ))
}

fn norm_drift() -> Result<Outcome> {
    let x = standard_normal(&mut rng_for(SEED, &[6]), 1000);
    let drift = IsotropicDrift { dim: 1000, scale: 0.5 };
    let stats = norm_drift_stats(&x, &drift, 10_000, derive_seed(SEED, &[6, 1]))?;
    let z = (stats.mean_norm_sq - stats.predicted).abs() / stats.std_error;
    // Every individual draw, not just the mean.
    let mut rng = rng_for(SEED, &[6, 2]);
    use ccslab::geometry::DriftSampler;
    let min_excess = (0..10_000)
        .map(|_| (&x + drift.draw(&mut rng)).norm_squared() - x.norm_squared())
        .fold(f64::INFINITY, f64::min);
    Ok(Outcome::new(
        z <= 3.0 && stats.mean_norm_sq > x.norm_squared(),
        format!(
            "|estimate - prediction| = {z:.3} SE (need <= 3); mean excess = {:.3} (need > 0); smallest single-draw excess = {min_excess:.3}",
            stats.mean_norm_sq - x.norm_squared()
        ),
    ))
}

fn distance_control() -> Result<Outcome> {
    let d = 10_000;
    let root = (d as f64).sqrt();
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, m) in [0.5 * root, root, 1.5 * root].into_iter().enumerate() {
        let mut hits = 0;
        for i in 0..1000u64 {
            let mut rng = rng_for(SEED, &[7, k as u64, i]);
            let x = standard_normal(&mut rng, d);
            let eps = standard_normal(&mut rng, d);
            let c0 = c0_for_distance(x.norm_squared(), m, DEFAULT_DISTANCE_MARGIN)?;
            let out = slerp(&SlerpInputs::new(x.clone(), eps, c0)?)?;
            if ((out - &x).norm() / m - 1.0).abs() <= 0.02 {
                hits += 1;
            }
        }
        let frac = hits as f64 / 1000.0;
        pass &= frac >= 0.99;
        parts.push(format!("M = {:.1} sqrt(d): {frac:.3}", m / root));
    }
    Ok(Outcome::new(pass, format!("{} within 2% (need >= 0.99 each)", parts.join(", "))))
}

fn controller() -> Result<Outcome> {
    let lab = lab(mixture_testbed(64));
    let mut good = 0;
    let mut off_target = 0;
    let runs = 20u64;
    let mut iters = Vec::new();
    for k in 0..runs {
        let target = lab.model.sample(&mut rng_for(SEED, &[8, k]));
        let mut bound = BoundMechanism::new(&lab, &target, Mechanism::CcsFull);
        bound.cfg_invert = CfgSpec::unconditional();
        bound.cfg_sample = CfgSpec::unconditional();
        let config = ControllerConfig {
            mse_target: 0.12,
            tol: 0.01,
            batch_size: 24,
            seed: derive_seed(SEED, &[8, k, 1]),
            ..ControllerConfig::default()
        };
        let (_, trace) = controller_tune(&bound, &config)?;
        iters.push(trace.iterations.len());
        if trace.converged {
            if trace.iterations.len() <= 6 {
                good += 1;
            }
            if (trace.final_measured().unwrap() - 0.12).abs() >= 0.01 {
                off_target += 1;
            }
        }
    }
    let frac = good as f64 / runs as f64;
    Ok(Outcome::new(
        frac >= 0.9 && off_target == 0,
        format!(
            "converged within 6 iterations in {good}/{runs} = {frac:.2} (need >= 0.90); converged runs off target: {off_target} (need 0); iterations {iters:?}"
        ),
    ))
}

fn baselines() -> Result<Outcome> {
    let lab = lab(mixture_testbed(64));
    let targets = sample_targets(&lab.model, 8, derive_seed(SEED, &[9]));
    let config = CompareConfig {
        mechanisms: vec![Mechanism::CcsFull, Mechanism::Gp],
        ..CompareConfig::default()
    };
    let report = compare_baselines(&lab, &targets, &config, derive_seed(SEED, &[9, 1]), &CfgSpec::unconditional())?;
    let mut wins = 0;
    let mut ccs_drift: f64 = 0.0;
    let mut gp_worst_z: f64 = 0.0;
    let mut margins = Vec::new();
    for i in 0..targets.len() {
        let id = i.to_string();
        let (Some(c), Some(g)) = (report.row(&id, Mechanism::CcsFull), report.row(&id, Mechanism::Gp)) else {
            return Ok(Outcome::new(false, format!("missing row for target {id}; failures {:?}", report.failures)));
        };
        if c.psnr_mean_db > g.psnr_mean_db {
            wins += 1;
        }
        margins.push(format!("{:+.2}", c.psnr_mean_db - g.psnr_mean_db));
        ccs_drift = ccs_drift.max(report.diagnostic(&id, Mechanism::CcsFull).unwrap().max_start_norm_drift);
        let gd = report.diagnostic(&id, Mechanism::Gp).unwrap();
        let z = (gd.mean_start_norm_sq_drift - gd.predicted_norm_sq_drift.unwrap()).abs() / gd.norm_sq_drift_std_error;
        gp_worst_z = gp_worst_z.max(z);
    }
    Ok(Outcome::new(
        wins >= 7 && ccs_drift <= 0.05 && gp_worst_z <= 3.0,
        format!(
            "CCS PSNR above GP on {wins}/8 (need >= 7; margins dB {}); CCS max norm drift {ccs_drift:.4} (need <= 0.05); GP drift vs prediction worst {gp_worst_z:.2} SE (need <= 3)",
            margins.join(" ")
        ),
    ))
}

fn ode_consistency() -> Result<Outcome> {
    let schedule = NoiseSchedule::default_linear();
    let model = GaussianMixture::standard_normal(64);
    let x = standard_normal(&mut rng_for(SEED, &[10]), 64);
    let ddim = ddim_sample(&schedule, &model, &x)?.endpoint().clone();
    let rk4 = ode_integrate(&schedule, &model, &x, 4096, OdeMethod::Rk4)?;
    let rel = (&rk4 - &ddim).norm() / ddim.norm();
    // The exact flow of a standard normal leaves every state fixed.
    let errs: Vec<f64> = [512, 1024, 2048, 4096]
        .iter()
        .map(|&n| Ok((ode_integrate(&schedule, &model, &x, n, OdeMethod::Euler)? - &x).norm() / x.norm()))
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    let halving = ratios.iter().all(|r| (r - 0.5).abs() <= 0.1);
    Ok(Outcome::new(
        rel <= 1e-3 && halving,
        format!(
            "rk4(4096) vs DDIM(T=50) relative difference = {rel:.4e} (need <= 1e-3); Euler error ratios per doubling {:?} (need 0.5 +- 20%)",
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()
        ),
    ))
}

fn inversion() -> Result<Outcome> {
    let schedule = NoiseSchedule::default_linear();
    let sn = GaussianMixture::standard_normal(64);
    let x0 = standard_normal(&mut rng_for(SEED, &[11]), 64);
    let xt = ddim_invert(&schedule, &sn, &x0, 50, 100)?;
    let exact = (ddim_endpoint(&schedule, &sn, &xt, 50)? - &x0).norm();

    let model = mixture_testbed(64);
    let targets = sample_targets(&model, 8, derive_seed(SEED, &[11, 1]));
    let errs: Vec<f64> = [50, 100, 200, 500]
        .iter()
        .map(|&t| {
            let s = NoiseSchedule::linear(BetaSpec::default(), t)?;
            let mut total = 0.0;
            for x in &targets {
                let noise = ddim_invert(&s, &model, x, t, 0)?;
                total += (ddim_endpoint(&s, &model, &noise, t)? - x).norm();
            }
            Ok(total / targets.len() as f64)
        })
        .collect::<Result<_>>()?;
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome::new(
        exact <= 1e-10 && monotone,
        format!(
            "refined single-Gaussian round trip = {exact:.3e} (need <= 1e-10); mixture first-order error at T = 50/100/200/500: {} (need strictly decreasing)",
            errs.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>().join(" / ")
        ),
    ))
}

fn verify() -> Result<Outcome> {
    let ledger = verify_suite(SEED);
    let failed: Vec<&str> = ledger.failures().iter().map(|r| r.name.as_str()).collect();
    Ok(Outcome::new(
        failed.is_empty(),
        format!("{} checks, failing: {failed:?}", ledger.rows.len()),
    ))
}

fn main() {
    let criteria = [
        Criterion { id: "01", name: "linearity_exact_regime", budget: Duration::from_secs(10), run: linearity_exact },
        Criterion { id: "02", name: "linearity_mixture_regime", budget: Duration::from_secs(120), run: linearity_mixture },
        Criterion { id: "03", name: "jacobian_propagation", budget: Duration::from_secs(30), run: jacobian },
        Criterion { id: "04", name: "lipschitz_growth_bound", budget: Duration::from_secs(60), run: lipschitz },
        Criterion { id: "05", name: "norm_concentration", budget: Duration::from_secs(30), run: concentration },
        Criterion { id: "06", name: "norm_drift_identity", budget: Duration::from_secs(5), run: norm_drift },
        Criterion { id: "07", name: "distance_control", budget: Duration::from_secs(30), run: distance_control },
        Criterion { id: "08", name: "controller_convergence", budget: Duration::MAX, run: controller },
        Criterion { id: "09", name: "baseline_dominance", budget: Duration::MAX, run: baselines },
        Criterion { id: "10", name: "ode_ddim_consistency", budget: Duration::MAX, run: ode_consistency },
        Criterion { id: "11", name: "inversion_round_trip", budget: Duration::MAX, run: inversion },
        Criterion { id: "12", name: "verify_suite", budget: Duration::from_secs(300), run: verify },
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        let label = format!("{}_{}", c.id, c.name);
        if filter.as_deref().is_some_and(|f| !label.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = start.elapsed();
        let in_budget = elapsed < c.budget;
        let pass = outcome.pass && in_budget;
        if !pass {
            failed += 1;
        }
        let budget = if c.budget == Duration::MAX {
            String::new()
        } else {
            format!(" budget {:.0}s", c.budget.as_secs_f64())
        };
        println!(
            "{} criterion {label}: {} [{:.2}s{budget}{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            if in_budget { "" } else { ", over budget" },
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
