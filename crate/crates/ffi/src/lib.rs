//! C ABI over `diffusion-core`.
//!
//! Objects are handed out as opaque pointers and released with the matching
//! `*_free` function. Every fallible call returns a [`DdStatus`]; on failure
//! the message is kept per thread and can be copied out with
//! [`dd_last_error_message`]. Images are passed as contiguous `double`
//! buffers in channel-major, row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use diffusion_core::denoiser::{Checkpoint, ConvDenoiser, GaussianOracle, NoisePredictor, TimeArg};
use diffusion_core::metrics;
use diffusion_core::sampler::{run_sampler, SampleOptions, SamplerKind};
use diffusion_core::{Error, ImageTensor, VarianceSchedule};

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Domain = 3,
    Shape = 4,
    Data = 5,
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

/// Variance schedule handle.
pub struct DdSchedule(VarianceSchedule);

/// Noise-predictor handle: a trained network or the Gaussian oracle.
pub struct DdPredictor(PredictorKind);

enum PredictorKind {
    Net(ConvDenoiser),
    Oracle(GaussianOracle),
}

impl NoisePredictor for PredictorKind {
    fn predict(
        &self,
        y_t: &ImageTensor,
        cond: Option<&ImageTensor>,
        t: TimeArg,
        schedule: &VarianceSchedule,
    ) -> diffusion_core::Result<ImageTensor> {
        match self {
            PredictorKind::Net(n) => n.predict(y_t, cond, t, schedule),
            PredictorKind::Oracle(o) => o.predict(y_t, cond, t, schedule),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DdStatus {
    match err {
        Error::Usage(_) => DdStatus::Usage,
        Error::Domain(_) | Error::TimeOutOfRange { .. } => DdStatus::Domain,
        Error::ShapeMismatch { .. } => DdStatus::Shape,
        Error::Corrupt(_) | Error::EmptyDataset | Error::Data(_) => DdStatus::Data,
        Error::Numeric(_) | Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => {
            DdStatus::Numeric
        }
        Error::Io(_) => DdStatus::Io,
    }
}

struct Fail(DdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DdStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DdStatus::Panic
        }
    }
}

unsafe fn image(
    data: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    what: &str,
) -> Result<ImageTensor, Fail> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Fail(DdStatus::Shape, "image dimensions overflow".into()))?;
    let values = slice::from_raw_parts(data, len).to_vec();
    Ok(ImageTensor::from_vec((channels, height, width), values)?)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, excluding the NUL;
/// 0 means no error has been recorded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dd_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Linear β schedule with `steps` entries from `beta_start` to `beta_end`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dd_schedule_linear(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut DdSchedule,
) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = VarianceSchedule::linear(steps, beta_start, beta_end)?;
        *out = Box::into_raw(Box::new(DdSchedule(s)));
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_schedule_free(schedule: *mut DdSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Number of diffusion steps `T`, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dd_schedule_steps(schedule: *const DdSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.steps())
}

/// Cumulative signal fraction `ᾱ_t` for `t ∈ 1..=T`.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_schedule_alpha_bar(
    schedule: *const DdSchedule,
    t: usize,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        s.0.check_step(t)?;
        *out = s.0.alpha_bar(t);
        Ok(())
    })
}

/// Half-log-SNR `λ(t)` of the continuous extension, `t ∈ [0, 1]`.
///
/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_schedule_lambda(
    schedule: *const DdSchedule,
    t: f64,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.0.continuous_coefficients(t)?.lambda;
        Ok(())
    })
}

/// Loads a checkpoint; returns the network and the schedule it was trained with.
///
/// # Safety
/// `path` must be a NUL-terminated string; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dd_predictor_load(
    path: *const c_char,
    out_predictor: *mut *mut DdPredictor,
    out_schedule: *mut *mut DdSchedule,
) -> DdStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out_predictor.is_null() || out_schedule.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(DdStatus::Usage, "path is not UTF-8".into()))?;
        let c = Checkpoint::load(Path::new(path))?;
        let schedule = c.variance_schedule()?;
        *out_predictor = Box::into_raw(Box::new(DdPredictor(PredictorKind::Net(c.net))));
        *out_schedule = Box::into_raw(Box::new(DdSchedule(schedule)));
        Ok(())
    })
}

/// Exact noise predictor for data distributed as `N(mu0, s0²)` per pixel.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dd_predictor_gaussian_oracle(
    mu0: f64,
    s0: f64,
    out: *mut *mut DdPredictor,
) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let o = GaussianOracle::scalar(mu0, s0)?;
        *out = Box::into_raw(Box::new(DdPredictor(PredictorKind::Oracle(o))));
        Ok(())
    })
}

/// # Safety
/// `predictor` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_predictor_free(predictor: *mut DdPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Sampler choice for [`dd_sample`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdSampler {
    /// `T`-step ancestral chain; `budget` is ignored.
    Ancestral = 0,
    /// DPM-Solver with `budget` predictor calls.
    Dpm = 1,
    /// Fixed-step RK4 with `budget` steps (`4·budget` calls).
    Rk4 = 2,
}

/// Draws one sample of shape `channels × height × width` into `out`.
/// `cond` may be null for unconditional sampling; otherwise it has the same
/// shape. `out_nfe` (optional) receives the number of predictor calls.
///
/// # Safety
/// Handles must be live; `cond` (if non-null) and `out` must hold
/// `channels·height·width` doubles; `out_nfe` must be null or writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn dd_sample(
    predictor: *const DdPredictor,
    schedule: *const DdSchedule,
    sampler: DdSampler,
    budget: usize,
    cond: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
    out: *mut f64,
    out_nfe: *mut usize,
) -> DdStatus {
    guard(|| {
        let p = predictor.as_ref().ok_or_else(|| null("predictor"))?;
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match (sampler, budget) {
            (DdSampler::Ancestral, _) => SamplerKind::Ancestral,
            (_, 0) => return Err(Fail(DdStatus::Usage, "budget must be at least 1".into())),
            (DdSampler::Dpm, n) => SamplerKind::Dpm { nfe: n },
            (DdSampler::Rk4, n) => SamplerKind::Rk4 { steps: n },
        };
        let cond = if cond.is_null() {
            None
        } else {
            Some(image(cond, channels, height, width, "cond")?)
        };
        let (img, trace) = run_sampler(
            kind,
            cond.as_ref(),
            (channels, height, width),
            &p.0,
            &s.0,
            &SampleOptions::seeded(seed),
        )?;
        ptr::copy_nonoverlapping(img.as_slice().as_ptr(), out, img.len());
        if !out_nfe.is_null() {
            *out_nfe = trace.nfe;
        }
        Ok(())
    })
}

/// PSNR in dB; identical images give `+inf`.
///
/// # Safety
/// `reference` and `test` must hold `channels·height·width` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_psnr(
    reference: *const f64,
    test: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    peak: f64,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = image(reference, channels, height, width, "reference")?;
        let b = image(test, channels, height, width, "test")?;
        *out = metrics::psnr(&a, &b, peak)?;
        Ok(())
    })
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5).
///
/// # Safety
/// As for [`dd_psnr`].
#[no_mangle]
pub unsafe extern "C" fn dd_ssim(
    reference: *const f64,
    test: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    peak: f64,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = image(reference, channels, height, width, "reference")?;
        let b = image(test, channels, height, width, "test")?;
        *out = metrics::ssim(&a, &b, peak)?;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
