//! C ABI for denseleaf.
//!
//! Objects cross the boundary as opaque pointers created by
//! [`dl_model_from_json`], [`dl_estimator_fit`] or [`dl_estimator_from_json`]
//! and released with the matching `dl_*_free`.
//! Every fallible function returns a [`DlStatus`]; on failure the message of
//! the last error on the calling thread is available through
//! [`dl_last_error_length`] and [`dl_last_error_message`]. Strings returned
//! through `char **` out-parameters are owned by the caller and must be
//! released with [`dl_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use denseleaf::densities::{DensityModel, ModelDescriptor};
use denseleaf::harness::{run_experiment, ExperimentConfig};
use denseleaf::kernels::build_order_kernel;
use denseleaf::network::{entropy_bound, rate_phi, CompositionDescriptor};
use denseleaf::theorycheck::{default_battery, write_json_lines};
use denseleaf::twostage::{fit_fd, fit_kde_reference, fit_sd, EstimatorHandle, NetworkFitConfig};
use denseleaf::{Dataset, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Io = 5,
    Runtime = 6,
    Panic = 7,
}

/// Estimator kinds accepted by [`dl_estimator_fit`], passed as their integer
/// value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlMethod {
    SplitData = 0,
    FullData = 1,
    Kde = 2,
}

/// A synthetic density model.
pub struct DlModel {
    inner: DensityModel,
}

/// A fitted estimator.
pub struct DlEstimator {
    inner: EstimatorHandle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> DlStatus {
    match e {
        Error::InvalidArgument(_) | Error::OutOfDomain { .. } => DlStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => DlStatus::DimensionMismatch,
        Error::Config(_) | Error::Json(_) => DlStatus::Config,
        Error::Io { .. } | Error::Csv(_) => DlStatus::Io,
        _ => DlStatus::Runtime,
    }
}

struct Fail(DlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            DlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            DlStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s)
        .map_err(|_| Fail(DlStatus::Runtime, "string contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn checked_len(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .ok_or_else(|| Fail(DlStatus::InvalidArgument, "buffer size overflows".into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn dl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message into `buf` (truncated and always
/// NUL-terminated when `len > 0`). Returns the number of bytes written,
/// excluding the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn dl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Clears the last error on this thread.
#[no_mangle]
pub extern "C" fn dl_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a model from a JSON descriptor such as
/// `{"family": "NBm", "d": 4, "seed": 0}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_model_from_json(
    json: *const c_char,
    out: *mut *mut DlModel,
) -> DlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let desc: ModelDescriptor = serde_json::from_str(text).map_err(Error::from)?;
        let model = desc.build()?;
        *out = Box::into_raw(Box::new(DlModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dl_model_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live model and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dl_model_dim(model: *const DlModel, out: *mut usize) -> DlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.dim();
        Ok(())
    })
}

/// Evaluates the density at `n` points stored row-major in `x` (`n * d`
/// values) and writes `n` values to `out`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dl_model_eval(
    model: *const DlModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if d != m.inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.inner.dim(),
                found: d,
            }
            .into());
        }
        let xs = slice_arg(x, checked_len(n, d)?, "x")?;
        let ys = slice_out(out, n, "out")?;
        for (row, y) in xs.chunks_exact(d.max(1)).zip(ys.iter_mut()) {
            *y = m.inner.eval(row)?;
        }
        Ok(())
    })
}

/// Draws `n` points and writes them row-major into `out` (`n * dim`
/// values).
///
/// # Safety
/// `out` must hold `n * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dl_model_sample(
    model: *const DlModel,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = m.inner.sample(n, seed)?;
        let dst = slice_out(out, checked_len(n, m.inner.dim())?, "out")?;
        dst.copy_from_slice(ds.as_flat());
        Ok(())
    })
}

/// Fits an estimator on `n` points (row-major, `n * d` values).
///
/// `c` is the bandwidth constant of the chosen method. `beta` is used only by
/// [`DlMethod::Kde`]. `config_json` is an optional network fit configuration
/// (null for defaults).
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_estimator_fit(
    method: i32,
    data: *const f64,
    n: usize,
    d: usize,
    kernel_order: usize,
    c: f64,
    beta: f64,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut DlEstimator,
) -> DlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = slice_arg(data, checked_len(n, d)?, "data")?;
        let ds = Dataset::new(d, flat.to_vec(), seed, "external")?;
        let kernel = build_order_kernel(kernel_order)?;
        let cfg: NetworkFitConfig = if config_json.is_null() {
            NetworkFitConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let handle = match method {
            m if m == DlMethod::SplitData as i32 => fit_sd(&ds, &kernel, c, &cfg, seed)?,
            m if m == DlMethod::FullData as i32 => fit_fd(&ds, &kernel, c, &cfg, seed)?,
            m if m == DlMethod::Kde as i32 => fit_kde_reference(&ds, &kernel, c, beta)?,
            other => {
                return Err(Fail(
                    DlStatus::InvalidArgument,
                    format!("unknown method {other}"),
                ))
            }
        };
        *out = Box::into_raw(Box::new(DlEstimator { inner: handle }));
        Ok(())
    })
}

/// Restores a network estimator from its JSON manifest.
///
/// # Safety
/// `json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dl_estimator_from_json(
    json: *const c_char,
    out: *mut *mut DlEstimator,
) -> DlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let handle = EstimatorHandle::network_from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(DlEstimator { inner: handle }));
        Ok(())
    })
}

/// Serializes an estimator to its JSON manifest; free with
/// [`dl_string_free`].
///
/// # Safety
/// `est` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dl_estimator_to_json(
    est: *const DlEstimator,
    out: *mut *mut c_char,
) -> DlStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimator"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_string(out, e.inner.to_json()?)
    })
}

/// # Safety
/// `est` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dl_estimator_free(est: *mut DlEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Evaluates the estimator at `n` points (row-major, `n * d` values).
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dl_estimator_eval(
    est: *const DlEstimator,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimator"))?;
        if d != e.inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: e.inner.dim(),
                found: d,
            }
            .into());
        }
        let xs = slice_arg(x, checked_len(n, d)?, "x")?;
        let ys = slice_out(out, n, "out")?;
        ys.copy_from_slice(&e.inner.eval_flat(xs)?);
        Ok(())
    })
}

/// `φ_n` for a composition with `len = q + 1` layers.
///
/// # Safety
/// `t` and `alpha` must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_rate_phi(
    t: *const usize,
    alpha: *const f64,
    len: usize,
    n: u64,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        if len == 0 {
            return Err(Fail(
                DlStatus::InvalidArgument,
                "need at least one layer".into(),
            ));
        }
        let t = slice_arg(t, len, "t")?.to_vec();
        let alpha = slice_arg(alpha, len, "alpha")?.to_vec();
        let desc = CompositionDescriptor::new(len - 1, t, alpha)?;
        let (phi, _) = rate_phi(&desc, n)?;
        *out.as_mut().ok_or_else(|| null("out"))? = phi;
        Ok(())
    })
}

/// Covering-entropy bound of the sparse network class, natural log.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_entropy_bound(
    depth: usize,
    p0: usize,
    p_out: usize,
    s: usize,
    delta: f64,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let v = entropy_bound(depth, p0, p_out, s, delta)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Runs the standard check battery and returns its JSON lines; `*all_pass`
/// receives 1 when every check passed.
///
/// # Safety
/// `out` and `all_pass` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_theory_check(
    trials: usize,
    seed: u64,
    out: *mut *mut c_char,
    all_pass: *mut i32,
) -> DlStatus {
    guard(|| {
        if out.is_null() || all_pass.is_null() {
            return Err(null("out"));
        }
        let reports = default_battery(trials, seed)?;
        let mut buf = Vec::new();
        write_json_lines(&mut buf, &reports)?;
        *all_pass = i32::from(reports.iter().all(|r| r.pass));
        write_string(out, String::from_utf8_lossy(&buf).into_owned())
    })
}

/// Runs an experiment described by a JSON config and writes its outputs to
/// the config's `output_dir`.
///
/// # Safety
/// `config_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dl_run_experiment(config_json: *const c_char) -> DlStatus {
    guard(|| {
        let cfg: ExperimentConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| Fail(DlStatus::Config, e.to_string()))?;
        run_experiment(&cfg)?;
        Ok(())
    })
}
