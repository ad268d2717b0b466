//! C ABI for pompkit.
//!
//! Models and data are opaque handles released with the matching `*_free`
//! function. Every fallible call returns a [`PkStatus`]; on failure a
//! message is available from [`pk_last_error`] on the same thread until the
//! next failing call.

use pompkit::benchmarks::gompertz::{gompertz_exact_loglik, GompertzParams};
use pompkit::benchmarks::ou2::{ou2_kalman_loglik, Ou2Params};
use pompkit::harness::{self, ExperimentConfig, Registry};
use pompkit::model::simulate;
use pompkit::{pfilter, FilterOptions, ModelSpec, ParamVector, PompError, RngStream, TimeSeriesData};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    FilteringLimit = 4,
    ModelError = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// A model: hooks, metadata and default parameters.
pub struct PkModel {
    name: String,
    spec: ModelSpec,
    defaults: Vec<f64>,
}

/// An observed time series.
pub struct PkData {
    data: TimeSeriesData,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &PompError) -> PkStatus {
    match e {
        PompError::InvalidArgument(_) | PompError::Range { .. } | PompError::Unsupported(_) => {
            PkStatus::InvalidArgument
        }
        PompError::Validation(_) => PkStatus::Validation,
        PompError::FilteringLimitExceeded { .. } | PompError::FilteringFailure { .. } => PkStatus::FilteringLimit,
        PompError::InvalidModel(_) | PompError::ModelContract(_) | PompError::InvalidData(_) => PkStatus::ModelError,
        PompError::Numerical(_) => PkStatus::Numerical,
        PompError::Io(_) | PompError::Csv(_) | PompError::Json(_) => PkStatus::Io,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> PkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PkStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PkStatus::NullPointer
        }
        Ok(Err(Fail::Pomp(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PkStatus::Panic
        }
    }
}

enum Fail {
    Null(&'static str),
    Pomp(PompError),
}

impl From<PompError> for Fail {
    fn from(e: PompError) -> Self {
        Fail::Pomp(e)
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Pomp(PompError::InvalidArgument(msg.into()))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn model_for(m: &PkModel, data: &TimeSeriesData) -> Result<ModelSpec, Fail> {
    Ok(m.spec.clone().with_times(m.spec.t0, data.times().to_vec())?)
}

fn params(m: &PkModel, theta: &[f64]) -> Result<ParamVector, Fail> {
    if theta.len() != m.spec.n_params() {
        return Err(invalid(format!(
            "model `{}` has {} parameters, got {}",
            m.name,
            m.spec.n_params(),
            theta.len()
        )));
    }
    Ok(ParamVector::for_model(&m.spec, theta.to_vec())?)
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a built-in model (`"ou2"` or `"gompertz"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_model_builtin(name: *const c_char, out: *mut *mut PkModel) -> PkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let name = string(name, "name")?;
        let reg = Registry::builtin();
        let e = reg.get(&name).ok_or_else(|| invalid(format!("unknown model `{name}`")))?;
        let m = PkModel {
            name,
            spec: e.model.clone(),
            defaults: e.defaults.clone(),
        };
        *out = Box::into_raw(Box::new(m));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pk_model_builtin`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pk_model_free(model: *mut PkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for NULL.
///
/// # Safety
/// `model` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pk_model_n_params(model: *const PkModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.n_params())
}

/// Copies the default parameter vector into `out` (length `len`).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pk_model_defaults(model: *const PkModel, out: *mut f64, len: usize) -> PkStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if len != m.defaults.len() {
            return Err(invalid(format!("need {} values, got buffer of {len}", m.defaults.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&m.defaults);
        Ok(())
    })
}

/// Writes the NUL-terminated name of parameter `i` into `buf` (capacity `len`).
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pk_model_param_name(
    model: *const PkModel,
    i: usize,
    buf: *mut c_char,
    len: usize,
) -> PkStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let name = m
            .spec
            .param_names
            .get(i)
            .ok_or_else(|| invalid(format!("parameter index {i} out of range")))?;
        if name.len() + 1 > len {
            return Err(invalid(format!("buffer of {len} bytes too small for `{name}`")));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Builds a series from `n` times and an `n x dim_obs` row-major array.
///
/// # Safety
/// `times` must hold `n` doubles and `obs` `n * dim_obs`.
#[no_mangle]
pub unsafe extern "C" fn pk_data_new(
    times: *const f64,
    n: usize,
    obs: *const f64,
    dim_obs: usize,
    out: *mut *mut PkData,
) -> PkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let t = slice(times, n, "times")?;
        let y = slice(obs, n * dim_obs, "obs")?;
        let data = TimeSeriesData::new(t.to_vec(), dim_obs, y.to_vec())?;
        *out = Box::into_raw(Box::new(PkData { data }));
        Ok(())
    })
}

/// Reads a `time,y1,..` CSV file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pk_data_read_csv(path: *const c_char, out: *mut *mut PkData) -> PkStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let data = TimeSeriesData::read_csv_path(string(path, "path")?)?;
        *out = Box::into_raw(Box::new(PkData { data }));
        Ok(())
    })
}

/// # Safety
/// `data` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn pk_data_free(data: *mut PkData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of observation times, or 0 for NULL.
///
/// # Safety
/// `data` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pk_data_len(data: *const PkData) -> usize {
    data.as_ref().map_or(0, |d| d.data.len())
}

/// Observation dimension, or 0 for NULL.
///
/// # Safety
/// `data` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn pk_data_dim(data: *const PkData) -> usize {
    data.as_ref().map_or(0, |d| d.data.dim_obs())
}

/// Copies the observations (row-major) into `out` of length `len`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pk_data_values(data: *const PkData, out: *mut f64, len: usize) -> PkStatus {
    guard(|| {
        let d = deref(data, "data")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let v = d.data.values();
        if len != v.len() {
            return Err(invalid(format!("need {} values, got buffer of {len}", v.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v);
        Ok(())
    })
}

/// Simulates `n` unit-spaced observations at `theta`.
///
/// # Safety
/// `theta` must hold `p` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_simulate(
    model: *const PkModel,
    theta: *const f64,
    p: usize,
    n: usize,
    seed: u64,
    out: *mut *mut PkData,
) -> PkStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let th = params(m, slice(theta, p, "theta")?)?;
        let t0 = m.spec.t0;
        let spec = m.spec.clone().with_times(t0, (1..=n).map(|k| t0 + k as f64).collect())?;
        let (data, _) = simulate(&spec, &th, &RngStream::new(seed))?;
        *out = Box::into_raw(Box::new(PkData { data }));
        Ok(())
    })
}

/// Particle-filter log-likelihood estimate with `j` particles.
///
/// # Safety
/// `theta` must hold `p` doubles and `loglik` be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_pfilter(
    model: *const PkModel,
    data: *const PkData,
    theta: *const f64,
    p: usize,
    j: usize,
    seed: u64,
    loglik: *mut f64,
) -> PkStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = deref(data, "data")?;
        if loglik.is_null() {
            return Err(Fail::Null("loglik"));
        }
        let th = params(m, slice(theta, p, "theta")?)?;
        let spec = model_for(m, &d.data)?;
        let r = pfilter(&spec, &th, &d.data, j, &RngStream::new(seed), &FilterOptions::default())?;
        *loglik = r.loglik;
        Ok(())
    })
}

/// Exact log-likelihood from the model's Kalman oracle.
///
/// # Safety
/// `theta` must hold `p` doubles and `loglik` be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_kalman_loglik(
    model: *const PkModel,
    data: *const PkData,
    theta: *const f64,
    p: usize,
    loglik: *mut f64,
) -> PkStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = deref(data, "data")?;
        if loglik.is_null() {
            return Err(Fail::Null("loglik"));
        }
        let th = params(m, slice(theta, p, "theta")?)?;
        *loglik = match m.name.as_str() {
            "ou2" => ou2_kalman_loglik(&Ou2Params::from_slice(th.values())?, &d.data)?.loglik,
            "gompertz" => gompertz_exact_loglik(&GompertzParams::from_slice(th.values())?, &d.data)?,
            other => return Err(invalid(format!("model `{other}` has no oracle"))),
        };
        Ok(())
    })
}

/// Runs an experiment config file, as the command-line tool does.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pk_run_config(config_path: *const c_char) -> PkStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_path(string(config_path, "config_path")?)?;
        harness::run(&cfg, &Registry::builtin())?;
        Ok(())
    })
}
