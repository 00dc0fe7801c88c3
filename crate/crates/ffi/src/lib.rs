//! C ABI over `ccslab`.
//!
//! Objects are opaque heap handles created by `*_new`/constructor functions
//! and released with the matching `*_free`. Every fallible call returns a
//! [`CcsStatus`]; on failure a message is available from
//! [`ccs_last_error_message`] on the same thread. Output buffers are caller
//! allocated and their lengths are passed explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ccslab::ccs::Lab;
use ccslab::geometry::{c0_for_distance, slerp, SlerpInputs};
use ccslab::sampler::{ddim_endpoint, ddim_invert};
use ccslab::schedule::{BetaSpec, NoiseSchedule};
use ccslab::{CfgSpec, Covariance, GaussianMixture, LabError, ScoreField};
use nalgebra::DVector;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    Numerical = 4,
    InversionDiverged = 5,
    Degenerate = 6,
    OutOfRange = 7,
    Capability = 8,
    Config = 9,
    Protocol = 10,
    Io = 11,
    Panic = 12,
}

/// Noise schedule handle.
pub struct CcsSchedule(NoiseSchedule);

/// Gaussian mixture handle.
pub struct CcsModel(GaussianMixture);

/// Schedule plus model, used by the batch samplers.
pub struct CcsLab(Lab);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LabError) -> CcsStatus {
    match e {
        LabError::Domain { .. } => CcsStatus::Domain,
        LabError::Input(_) => CcsStatus::InvalidInput,
        LabError::Numerical { .. } => CcsStatus::Numerical,
        LabError::Inversion { .. } => CcsStatus::InversionDiverged,
        LabError::Degenerate { .. } => CcsStatus::Degenerate,
        LabError::Range(_) => CcsStatus::OutOfRange,
        LabError::Capability(_) => CcsStatus::Capability,
        LabError::Config(_) => CcsStatus::Config,
        LabError::Protocol(_) => CcsStatus::Protocol,
        LabError::Io(_) | LabError::Json(_) | LabError::Csv(_) => CcsStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Len(String),
    Lab(LabError),
}

impl From<LabError> for Fail {
    fn from(e: LabError) -> Self {
        Fail::Lab(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CcsStatus::NullPointer
        }
        Ok(Err(Fail::Len(msg))) => {
            set_error(msg);
            CcsStatus::InvalidInput
        }
        Ok(Err(Fail::Lab(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CcsStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(Fail::Null(what)) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got != want {
        return Err(Fail::Len(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn write_state(dst: &mut [f64], src: &DVector<f64>) {
    dst.copy_from_slice(src.as_slice());
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ccs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ccs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Linear-beta schedule with `base_steps` fine steps subsampled to `steps`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_linear(
    beta_start: f64,
    beta_end: f64,
    base_steps: usize,
    steps: usize,
    out: *mut *mut CcsSchedule,
) -> CcsStatus {
    guard(|| {
        let spec = BetaSpec {
            start: beta_start,
            end: beta_end,
            base_steps,
        };
        put(out, CcsSchedule(NoiseSchedule::linear(spec, steps)?))
    })
}

/// The default 1000-step linear schedule subsampled to 50 steps.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_default(out: *mut *mut CcsSchedule) -> CcsStatus {
    guard(|| put(out, CcsSchedule(NoiseSchedule::default_linear())))
}

/// Schedule from an explicit `alpha_bar[0..=T]` ladder.
///
/// # Safety
/// `alpha_bar` must point to `len` readable values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_from_alpha_bar(
    alpha_bar: *const f64,
    len: usize,
    out: *mut *mut CcsSchedule,
) -> CcsStatus {
    guard(|| {
        let ab = slice(alpha_bar, len, "alpha_bar")?.to_vec();
        put(out, CcsSchedule(NoiseSchedule::from_alpha_bar(ab)?))
    })
}

/// Number of DDIM steps `T`; zero for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_steps(schedule: *const CcsSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.steps())
}

/// `alpha_bar` at integer step `t`.
///
/// # Safety
/// `schedule` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_alpha_bar(schedule: *const CcsSchedule, t: usize, out: *mut f64) -> CcsStatus {
    guard(|| {
        let s = &obj(schedule, "schedule")?.0;
        if t > s.steps() {
            return Err(LabError::Domain {
                t: t as f64,
                lo: 0.0,
                hi: s.steps() as f64,
            }
            .into());
        }
        *out.as_mut().ok_or(Fail::Null("out"))? = s.alpha_bar(t);
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccs_schedule_free(schedule: *mut CcsSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Single standard normal component in `dim` dimensions.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_standard_normal(dim: usize, out: *mut *mut CcsModel) -> CcsStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail::Len("dimension must be positive".into()));
        }
        put(out, CcsModel(GaussianMixture::standard_normal(dim)))
    })
}

/// Two equal-weight isotropic components at `+offset` and `-offset` in every
/// coordinate, labelled "A" and "B".
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_symmetric_pair(dim: usize, offset: f64, std: f64, out: *mut *mut CcsModel) -> CcsStatus {
    guard(|| put(out, CcsModel(GaussianMixture::symmetric_pair(dim, offset, std)?)))
}

/// Mixture of `k` diagonal Gaussians in `dim` dimensions. `means` and
/// `variances` are row-major `k x dim`.
///
/// # Safety
/// `weights` must hold `k` values, `means` and `variances` `k * dim` values;
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_diagonal(
    k: usize,
    dim: usize,
    weights: *const f64,
    means: *const f64,
    variances: *const f64,
    out: *mut *mut CcsModel,
) -> CcsStatus {
    guard(|| {
        let w = slice(weights, k, "weights")?.to_vec();
        let m = slice(means, k * dim, "means")?;
        let v = slice(variances, k * dim, "variances")?;
        let means = m.chunks(dim.max(1)).map(DVector::from_column_slice).collect();
        let covs = v
            .chunks(dim.max(1))
            .map(|c| Covariance::Diagonal(DVector::from_column_slice(c)))
            .collect();
        put(out, CcsModel(GaussianMixture::new(w, means, covs, None)?))
    })
}

/// Dimension of the model; zero for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_dim(model: *const CcsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Score of the noised model at level `alpha_bar`, written to `out`.
///
/// # Safety
/// `x` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_score(
    model: *const CcsModel,
    x: *const f64,
    dim: usize,
    alpha_bar: f64,
    out: *mut f64,
) -> CcsStatus {
    guard(|| {
        let m = &obj(model, "model")?.0;
        check_len(dim, m.dim(), "x")?;
        let x = DVector::from_column_slice(slice(x, dim, "x")?);
        let s = m.score(&x, alpha_bar)?;
        write_state(slice_mut(out, dim, "out")?, &s);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccs_model_free(model: *mut CcsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Deterministic generation from `x_t` at the last step down to step 0.
///
/// # Safety
/// `x_t` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ccs_ddim_sample(
    schedule: *const CcsSchedule,
    model: *const CcsModel,
    x_t: *const f64,
    dim: usize,
    out: *mut f64,
) -> CcsStatus {
    guard(|| {
        let s = &obj(schedule, "schedule")?.0;
        let m = &obj(model, "model")?.0;
        check_len(dim, m.dim(), "x_t")?;
        let x = DVector::from_column_slice(slice(x_t, dim, "x_t")?);
        let y = ddim_endpoint(s, m, &x, s.steps())?;
        write_state(slice_mut(out, dim, "out")?, &y);
        Ok(())
    })
}

/// Inversion of `x0` up to step `t_stop` with `refine_iters` fixed-point
/// sweeps per step.
///
/// # Safety
/// `x0` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ccs_ddim_invert(
    schedule: *const CcsSchedule,
    model: *const CcsModel,
    x0: *const f64,
    dim: usize,
    t_stop: usize,
    refine_iters: usize,
    out: *mut f64,
) -> CcsStatus {
    guard(|| {
        let s = &obj(schedule, "schedule")?.0;
        let m = &obj(model, "model")?.0;
        check_len(dim, m.dim(), "x0")?;
        let x = DVector::from_column_slice(slice(x0, dim, "x0")?);
        let y = ddim_invert(s, m, &x, t_stop, refine_iters)?;
        write_state(slice_mut(out, dim, "out")?, &y);
        Ok(())
    })
}

/// Spherical interpolation from `anchor` toward `noise` by arc `c0`.
///
/// # Safety
/// `anchor`, `noise` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ccs_slerp(
    anchor: *const f64,
    noise: *const f64,
    dim: usize,
    c0: f64,
    out: *mut f64,
) -> CcsStatus {
    guard(|| {
        let a = DVector::from_column_slice(slice(anchor, dim, "anchor")?);
        let n = DVector::from_column_slice(slice(noise, dim, "noise")?);
        let y = slerp(&SlerpInputs::new(a, n, c0)?)?;
        write_state(slice_mut(out, dim, "out")?, &y);
        Ok(())
    })
}

/// Arc length whose slerp moves a vector of squared norm `anchor_norm_sq`
/// by distance `m`; `delta` is the reachability margin.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_c0_for_distance(anchor_norm_sq: f64, m: f64, delta: f64, out: *mut f64) -> CcsStatus {
    guard(|| {
        let c0 = c0_for_distance(anchor_norm_sq, m, delta)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = c0;
        Ok(())
    })
}

/// Lab over copies of `schedule` and `model`; the inputs stay owned by the caller.
///
/// # Safety
/// `schedule` and `model` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccs_lab_new(
    schedule: *const CcsSchedule,
    model: *const CcsModel,
    refine_iters: usize,
    out: *mut *mut CcsLab,
) -> CcsStatus {
    guard(|| {
        let s = obj(schedule, "schedule")?.0.clone();
        let m = obj(model, "model")?.0.clone();
        put(out, CcsLab(Lab::new(s, m).with_refinement(refine_iters)))
    })
}

/// # Safety
/// `lab` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccs_lab_free(lab: *mut CcsLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// `n` full-inversion samples around `target` at scale `c0`, unguided.
/// Samples are written row-major to `samples` (`n * dim` values); the
/// per-draw residual norms go to `residuals` when it is not NULL.
///
/// # Safety
/// `target` must hold `dim` values, `samples` `n * dim` values and
/// `residuals`, if not NULL, `n` values.
#[no_mangle]
pub unsafe extern "C" fn ccs_lab_ccs_full_sample(
    lab: *const CcsLab,
    target: *const f64,
    dim: usize,
    c0: f64,
    n: usize,
    seed: u64,
    samples: *mut f64,
    residuals: *mut f64,
) -> CcsStatus {
    guard(|| {
        let lab = &obj(lab, "lab")?.0;
        check_len(dim, lab.dim(), "target")?;
        let x = DVector::from_column_slice(slice(target, dim, "target")?);
        let batch = lab.ccs_full_sample(&x, c0, n, seed, &CfgSpec::unconditional())?;
        let out = slice_mut(samples, n * dim, "samples")?;
        for (row, d) in out.chunks_mut(dim.max(1)).zip(&batch.draws) {
            write_state(row, &d.sample);
        }
        if !residuals.is_null() {
            let r = std::slice::from_raw_parts_mut(residuals, n);
            for (slot, d) in r.iter_mut().zip(&batch.draws) {
                *slot = d.residual_norm;
            }
        }
        Ok(())
    })
}

/// Copies the message of the last failure into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length, or
/// zero when there is none.
///
/// # Safety
/// `buf` must be null or writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ccs_last_error_copy(buf: *mut c_char, len: usize) -> usize {
    let p = ccs_last_error_message();
    if p.is_null() {
        return 0;
    }
    let msg = CStr::from_ptr(p).to_bytes();
    if !buf.is_null() && len > 0 {
        let n = msg.len().min(len - 1);
        ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
    }
    msg.len()
}
