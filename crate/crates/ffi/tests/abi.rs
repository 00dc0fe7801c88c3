use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ccslab_ffi::*;

fn last_error() -> String {
    let p = ccs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    schedule: *mut CcsSchedule,
    model: *mut CcsModel,
}

impl Handles {
    fn new(dim: usize) -> Self {
        let mut schedule = ptr::null_mut();
        let mut model = ptr::null_mut();
        unsafe {
            assert_eq!(ccs_schedule_default(&mut schedule), CcsStatus::Ok);
            assert_eq!(ccs_model_standard_normal(dim, &mut model), CcsStatus::Ok);
        }
        Handles { schedule, model }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            ccs_model_free(self.model);
            ccs_schedule_free(self.schedule);
        }
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ccs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn schedule_accessors() {
    let h = Handles::new(3);
    unsafe {
        assert_eq!(ccs_schedule_steps(h.schedule), 50);
        assert_eq!(ccs_schedule_steps(ptr::null()), 0);
        let mut a = 0.0;
        assert_eq!(ccs_schedule_alpha_bar(h.schedule, 0, &mut a), CcsStatus::Ok);
        assert!((a - 0.9999).abs() < 1e-12);
        assert_eq!(ccs_schedule_alpha_bar(h.schedule, 51, &mut a), CcsStatus::Domain);

        let bad = [0.9999, 0.5, 0.6, 0.001];
        let mut s = ptr::null_mut();
        assert_eq!(ccs_schedule_from_alpha_bar(bad.as_ptr(), bad.len(), &mut s), CcsStatus::Config);
        assert!(s.is_null());
        assert!(last_error().contains("decreasing"));

        assert_eq!(ccs_schedule_linear(1e-4, 2e-2, 1000, 10, &mut s), CcsStatus::Ok);
        assert_eq!(ccs_schedule_steps(s), 10);
        ccs_schedule_free(s);
    }
}

#[test]
fn score_of_standard_normal_is_minus_x() {
    let h = Handles::new(3);
    let x = [0.5, -1.0, 2.0];
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(ccs_model_dim(h.model), 3);
        assert_eq!(ccs_model_score(h.model, x.as_ptr(), 3, 0.3, out.as_mut_ptr()), CcsStatus::Ok);
        assert_eq!(ccs_model_score(h.model, x.as_ptr(), 2, 0.3, out.as_mut_ptr()), CcsStatus::InvalidInput);
    }
    for i in 0..3 {
        assert_eq!(out[i], -x[i]);
    }
}

#[test]
fn diagonal_mixture_validation() {
    let w = [0.5, 0.5];
    let m = [1.0, 1.0, -1.0, -1.0];
    let v = [1.0, 1.0, 1.0, 1.0];
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(ccs_model_diagonal(2, 2, w.as_ptr(), m.as_ptr(), v.as_ptr(), &mut model), CcsStatus::Ok);
        assert_eq!(ccs_model_dim(model), 2);
        ccs_model_free(model);
        let w_bad = [0.5, 0.6];
        let mut model = ptr::null_mut();
        assert_eq!(
            ccs_model_diagonal(2, 2, w_bad.as_ptr(), m.as_ptr(), v.as_ptr(), &mut model),
            CcsStatus::InvalidInput
        );
        assert_eq!(
            ccs_model_diagonal(2, 2, ptr::null(), m.as_ptr(), v.as_ptr(), &mut model),
            CcsStatus::NullPointer
        );
    }
}

#[test]
fn invert_then_sample_round_trips() {
    let h = Handles::new(4);
    let x0 = [0.3, -1.2, 0.7, 2.0];
    let mut noise = [0.0; 4];
    let mut back = [0.0; 4];
    unsafe {
        assert_eq!(ccs_ddim_invert(h.schedule, h.model, x0.as_ptr(), 4, 50, 50, noise.as_mut_ptr()), CcsStatus::Ok);
        assert_eq!(ccs_ddim_sample(h.schedule, h.model, noise.as_ptr(), 4, back.as_mut_ptr()), CcsStatus::Ok);
        assert_eq!(ccs_ddim_sample(ptr::null(), h.model, noise.as_ptr(), 4, back.as_mut_ptr()), CcsStatus::NullPointer);
    }
    for i in 0..4 {
        assert!((back[i] - x0[i]).abs() <= 1e-10);
    }
}

#[test]
fn geometry_calls() {
    let a = [1.0, 0.0];
    let b = [0.0, 1.0];
    let mut out = [0.0; 2];
    let mut c0 = 0.0;
    unsafe {
        assert_eq!(ccs_slerp(a.as_ptr(), b.as_ptr(), 2, std::f64::consts::FRAC_PI_4, out.as_mut_ptr()), CcsStatus::Ok);
        assert!((out[0] - 0.5f64.sqrt()).abs() < 1e-12 && (out[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(ccs_slerp(a.as_ptr(), a.as_ptr(), 2, 0.1, out.as_mut_ptr()), CcsStatus::Degenerate);
        assert_eq!(ccs_c0_for_distance(1.0, 1.0, 0.05, &mut c0), CcsStatus::Ok);
        assert!((c0 - std::f64::consts::FRAC_PI_3).abs() < 1e-12);
        assert_eq!(ccs_c0_for_distance(1.0, 3.0, 0.05, &mut c0), CcsStatus::OutOfRange);
        let mut buf = [0 as std::ffi::c_char; 8];
        let n = ccs_last_error_copy(buf.as_mut_ptr(), buf.len());
        assert!(n > 7);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 7);
    }
}

#[test]
fn lab_batch_matches_core() {
    let h = Handles::new(6);
    let target = [0.1, 0.2, -0.3, 0.4, -0.5, 0.6];
    let mut lab = ptr::null_mut();
    let mut samples = vec![0.0; 5 * 6];
    let mut residuals = vec![0.0; 5];
    unsafe {
        assert_eq!(ccs_lab_new(h.schedule, h.model, 0, &mut lab), CcsStatus::Ok);
        assert_eq!(
            ccs_lab_ccs_full_sample(lab, target.as_ptr(), 6, 0.4, 5, 11, samples.as_mut_ptr(), residuals.as_mut_ptr()),
            CcsStatus::Ok
        );
        assert_eq!(
            ccs_lab_ccs_full_sample(lab, target.as_ptr(), 6, 3.0, 5, 11, samples.as_mut_ptr(), ptr::null_mut()),
            CcsStatus::OutOfRange
        );
        ccs_lab_free(lab);
    }
    let core = ccslab::ccs::Lab::new(ccslab::NoiseSchedule::default_linear(), ccslab::GaussianMixture::standard_normal(6));
    let batch = core
        .ccs_full_sample(&nalgebra::DVector::from_column_slice(&target), 0.4, 5, 11, &ccslab::CfgSpec::unconditional())
        .unwrap();
    for (i, d) in batch.draws.iter().enumerate() {
        assert_eq!(&samples[i * 6..(i + 1) * 6], d.sample.as_slice());
        assert_eq!(residuals[i], d.residual_norm);
    }
}

#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libccslab_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ccslab_smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
