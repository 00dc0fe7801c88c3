//! Worked examples that need Monte-Carlo batches or several modules at once.

use ccslab::ccs::{Lab, Mechanism};
use ccslab::experiments::{compare_baselines, linearity_protocol, sample_targets, CompareConfig, LinearityConfig};
use ccslab::geometry::{angle_between, c0_for_distance, slerp, SlerpInputs, DEFAULT_DISTANCE_MARGIN};
use ccslab::report::ExperimentReport;
use ccslab::rng::{derive_seed, rng_for, standard_normal};
use ccslab::sampler::ddim_endpoint;
use ccslab::schedule::NoiseSchedule;
use ccslab::verify::{mixture_testbed, verify_suite, verify_suite_with};
use ccslab::{CfgSpec, GaussianMixture, State};
use std::f64::consts::FRAC_PI_2;

fn testbed_lab() -> Lab {
    Lab::new(NoiseSchedule::default_linear(), mixture_testbed(64))
}

fn product_of_gains() -> f64 {
    let s = NoiseSchedule::default_linear();
    s.standard_normal_gain(s.steps())
}

#[test]
fn independent_gaussians_are_nearly_orthogonal_at_high_dimension() {
    let hits = (0..1000u64)
        .filter(|&i| {
            let mut rng = rng_for(11, &[i]);
            let a = standard_normal(&mut rng, 100_000);
            let b = standard_normal(&mut rng, 100_000);
            (angle_between(&a, &b).unwrap() - FRAC_PI_2).abs() <= 0.02
        })
        .count();
    assert!(hits >= 990, "{hits}/1000 within 0.02 of pi/2");
}

#[test]
fn closed_form_scale_reaches_requested_distance() {
    let d = 10_000;
    let m = 50.0;
    let hits = (0..1000u64)
        .filter(|&i| {
            let mut rng = rng_for(12, &[i]);
            let x = standard_normal(&mut rng, d);
            let eps = standard_normal(&mut rng, d);
            let c0 = c0_for_distance(x.norm_squared(), m, DEFAULT_DISTANCE_MARGIN).unwrap();
            let out = slerp(&SlerpInputs::new(x.clone(), eps, c0).unwrap()).unwrap();
            (49.0..=51.0).contains(&(out - &x).norm())
        })
        .count();
    assert!(hits >= 990, "{hits}/1000 realized distances in [49, 51]");
}

#[test]
fn ccs_full_is_unbiased_coordinatewise() {
    let lab = testbed_lab();
    let target = lab.model.sample(&mut rng_for(13, &[0]));
    let batch = lab.ccs_full_sample(&target, 0.4, 256, 13, &CfgSpec::unconditional()).unwrap();
    let samples = batch.samples();
    let n = samples.len() as f64;
    let mean = batch.sample_mean().unwrap();
    let within = (0..lab.dim())
        .filter(|&j| {
            let var = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (mean[j] - target[j]).abs() <= 3.0 * (var / n).sqrt()
        })
        .count();
    assert!(within as f64 >= 0.95 * lab.dim() as f64, "{within}/{} coordinates", lab.dim());
}

#[test]
fn ccs_full_with_zero_scale_regenerates_target_exactly() {
    let lab = Lab::new(NoiseSchedule::default_linear(), GaussianMixture::standard_normal(16)).with_refinement(50);
    let target = standard_normal(&mut rng_for(14, &[0]), 16);
    let batch = lab.ccs_full_sample(&target, 0.0, 4, 14, &CfgSpec::unconditional()).unwrap();
    for d in &batch.draws {
        assert!((&d.sample - &target).norm() <= 1e-8);
    }
}

#[test]
fn partial_at_last_step_is_the_reparameterized_full_sampler() {
    let lab = Lab::new(NoiseSchedule::default_linear(), GaussianMixture::standard_normal(32)).with_refinement(50);
    let cfg = CfgSpec::unconditional();
    let steps = lab.schedule.steps();
    let target = standard_normal(&mut rng_for(15, &[0]), 32);
    let c0 = 0.5;
    let seed = 15;
    let partial = lab.ccs_partial_sample(&target, c0, steps, 8, seed, &cfg, &cfg).unwrap();
    let full = lab.ccs_full_sample(&target, c0, 8, seed, &cfg).unwrap();
    let a = lab.schedule.alpha_bar(steps);
    let z_t = lab.invert(&target, steps, &cfg).unwrap();
    let gain = product_of_gains();
    for (p, f) in partial.draws.iter().zip(&full.draws) {
        // The same fresh draw, rescaled and applied to the extracted noise.
        let eps = standard_normal(&mut rng_for(derive_seed(seed, &[p.index as u64]), &[0]), 32);
        let inputs = SlerpInputs::new(&z_t - &target * a.sqrt(), eps * (1.0 - a).sqrt(), c0).unwrap();
        let start = &target * a.sqrt() + slerp(&inputs).unwrap();
        assert!((&p.sample - &start * gain).norm() <= 1e-8 * start.norm());
        // Extraction shifts the result by about sqrt(a_T) relative to the full sampler.
        assert!((&p.sample - &f.sample).norm() <= 0.02 * f.sample.norm());
    }
}

#[test]
fn partial_residual_grows_with_scale() {
    let lab = testbed_lab();
    let cfg = CfgSpec::unconditional();
    let target = lab.model.sample(&mut rng_for(16, &[0]));
    let r: Vec<f64> = [0.1, 0.3, 0.6]
        .iter()
        .map(|&c0| lab.ccs_partial_sample(&target, c0, 40, 64, 16, &cfg, &cfg).unwrap().mean_residual_norm())
        .collect();
    assert!(r[0] < r[1] && r[1] < r[2], "{r:?}");
}

#[test]
fn editing_toward_the_other_label_moves_toward_its_component() {
    let lab = testbed_lab();
    let target = lab.model.means()[0].clone();
    let unedited = lab.ccs_edit_sample(&target, 0.0, 40, 1, 17, "A", "A", 3.0).unwrap();
    let edited = lab.ccs_edit_sample(&target, 0.0, 40, 1, 17, "A", "B", 3.0).unwrap();
    let b_mean = lab.model.means()[1].clone();
    let d_edit = (&edited.draws[0].sample - &b_mean).norm();
    let d_same = (&unedited.draws[0].sample - &b_mean).norm();
    assert!(d_edit < d_same, "edited {d_edit} vs unedited {d_same}");
    let again = lab.ccs_edit_sample(&target, 0.0, 40, 1, 18, "A", "B", 3.0).unwrap();
    assert_eq!(again.draws[0].sample, edited.draws[0].sample);
}

#[test]
fn gp_on_single_gaussian_scales_the_noise_draw() {
    let lab = Lab::new(NoiseSchedule::default_linear(), GaussianMixture::standard_normal(64)).with_refinement(50);
    let target = standard_normal(&mut rng_for(19, &[0]), 64);
    let s = 0.3;
    let batch = lab.gp_sample(&target, s, 200, 19, &CfgSpec::unconditional()).unwrap();
    let gain = product_of_gains();
    for d in &batch.draws {
        let step = (&d.start - &batch.anchor).norm();
        assert!((d.residual_norm - gain * step).abs() <= 1e-8);
    }
    let mean = batch.mean_residual_norm();
    let predicted = gain * s * 64f64.sqrt();
    assert!((mean / predicted - 1.0).abs() < 0.03, "{mean} vs {predicted}");
    let drift = batch.mean_start_norm_sq_drift();
    let expected = s * s * 64.0 / batch.anchor.norm_squared();
    assert!((drift - expected).abs() <= 3.0 * batch.start_norm_sq_drift_std_error());
}

#[test]
fn gp_with_zero_scale_regenerates_target() {
    let lab = Lab::new(NoiseSchedule::default_linear(), GaussianMixture::standard_normal(8)).with_refinement(50);
    let target = standard_normal(&mut rng_for(20, &[0]), 8);
    let batch = lab.gp_sample(&target, 0.0, 3, 20, &CfgSpec::unconditional()).unwrap();
    assert!(batch.draws.iter().all(|d| d.residual_norm <= 1e-8));
}

#[test]
fn ccdf_closed_form_and_step_ordering() {
    let s = NoiseSchedule::default_linear();
    let lab = Lab::new(s.clone(), GaussianMixture::standard_normal(16));
    let target = standard_normal(&mut rng_for(21, &[0]), 16);
    let cfg = CfgSpec::unconditional();
    for t0 in [1, 10, 50] {
        let batch = lab.ccdf_sample(&target, t0, 6, 21, &cfg).unwrap();
        let a = s.alpha_bar(t0);
        let gain = s.standard_normal_gain(t0);
        for d in &batch.draws {
            let eps: State = standard_normal(&mut rng_for(d.seed, &[0]), 16);
            let expected = (&target * a.sqrt() + eps * (1.0 - a).sqrt()) * gain;
            assert!((&d.sample - expected).norm() <= 1e-10);
        }
        assert_eq!(batch, lab.ccdf_sample(&target, t0, 6, 21, &cfg).unwrap());
    }
    let mix = testbed_lab();
    let x = mix.model.sample(&mut rng_for(21, &[1]));
    let low = mix.ccdf_sample(&x, 1, 32, 21, &cfg).unwrap().mean_residual_norm();
    let high = mix.ccdf_sample(&x, 50, 32, 21, &cfg).unwrap().mean_residual_norm();
    assert!(low * 10.0 < high, "{low} vs {high}");
}

#[test]
fn ccs_start_norm_drift_stays_small_where_gp_does_not() {
    let lab = Lab::new(NoiseSchedule::default_linear(), mixture_testbed(1000));
    let target = lab.model.sample(&mut rng_for(22, &[0]));
    let cfg = CfgSpec::unconditional();
    let ccs = lab.ccs_full_sample(&target, 0.4, 32, 22, &cfg).unwrap();
    assert!(ccs.max_start_norm_drift() <= 0.05);
    let moved = ccs.draws.iter().map(|d| (&d.start - &ccs.anchor).norm()).sum::<f64>() / 32.0;
    let gp = lab.gp_sample(&target, moved / 1000f64.sqrt(), 32, 22, &cfg).unwrap();
    assert!(gp.max_start_norm_drift() > 0.05);
}

#[test]
fn linearity_points_use_configured_batch() {
    let lab = testbed_lab();
    let targets = sample_targets(&lab.model, 2, 23);
    let config = LinearityConfig {
        n_scales: 4,
        samples_per_scale: 6,
        ..LinearityConfig::default()
    };
    let report = linearity_protocol(&lab, &targets, &config, 23, &CfgSpec::unconditional()).unwrap();
    assert!((0.0..=1.0).contains(&report.pooled_r2));
    for t in &report.per_target {
        assert_eq!(t.points.len(), 4);
        assert!(t.points.iter().all(|p| p.n == 6));
    }
}

#[test]
fn comparison_reports_reproduce() {
    let lab = testbed_lab();
    let targets = sample_targets(&lab.model, 2, 24);
    let config = CompareConfig {
        mechanisms: vec![Mechanism::CcsFull, Mechanism::Gp, Mechanism::Ccdf],
        eval_batch: 16,
        ..CompareConfig::default()
    };
    let cfg = CfgSpec::unconditional();
    let run = || {
        let report = compare_baselines(&lab, &targets, &config, 24, &cfg).unwrap();
        ExperimentReport::new("compare", 24, serde_json::json!({})).with_compare(report)
    };
    let (a, b) = (run(), run());
    assert!(a.same_results(&b));
    let rows = a.compare.as_ref().unwrap();
    assert_eq!(rows.len() + a.failures.len(), 6);
    for r in rows.iter().filter(|r| r.converged) {
        assert!((r.achieved_rmse - config.mse_target).abs() < config.tol);
    }
}

#[test]
fn verify_ledger_is_deterministic_and_passes() {
    let a = verify_suite(0);
    assert_eq!(a, verify_suite(0));
    assert!(a.all_pass(), "{:?}", a.failures());
}

#[test]
fn verify_flags_a_non_monotone_schedule() {
    let mut ab = NoiseSchedule::default_linear().alpha_bars().to_vec();
    ab.swap(20, 21);
    let bad = NoiseSchedule::from_alpha_bar_unchecked(ab).unwrap();
    let ledger = verify_suite_with(&bad, 0);
    assert!(!ledger.row("schedule.invariant_violations").unwrap().pass);
    assert!(!ledger.all_pass());
}

#[test]
fn single_gaussian_generation_is_linear_in_the_start() {
    let s = NoiseSchedule::default_linear();
    let m = GaussianMixture::standard_normal(8);
    let x = standard_normal(&mut rng_for(25, &[0]), 8);
    let out = ddim_endpoint(&s, &m, &x, s.steps()).unwrap();
    assert!((out - &x * product_of_gains()).norm() <= 1e-12 * x.norm());
}
