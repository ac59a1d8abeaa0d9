//! C ABI for the stochcal calibration toolkit.
//!
//! Every fallible call returns an [`ScStatus`]; on failure a message is kept
//! per thread and can be fetched with [`sc_last_error`]. Objects cross the
//! boundary as opaque handles and must be released with their `_free` call.
//! Matrices and point sets are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use stochcal::acquisition::ivar_replication_batch;
use stochcal::emulator::{fit, FitConfig, HetGpModel, SimulationDataset};
use stochcal::harness::{self, ExperimentConfig};
use stochcal::posterior::{posterior_moments, ObservationModel, UniformBoxPrior};
use stochcal::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    FitFailed = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
}

/// Replicated simulation outputs.
pub struct ScDataset(SimulationDataset);

/// Fitted heteroskedastic emulator.
pub struct ScEmulator(HetGpModel);

/// Observed data, its covariance and the parameter prior.
pub struct ScObservation(ObservationModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> ScStatus {
    match err {
        Error::DimensionMismatch { .. } => ScStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Parse { .. } => ScStatus::InvalidArgument,
        Error::Singular { .. } | Error::Numerical(_) => ScStatus::Numerical,
        Error::FitFailed(_) => ScStatus::FitFailed,
        Error::Config(_) => ScStatus::Config,
        Error::Io(_) => ScStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Run `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ScStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            ScStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn as_slice<'a>(
    p: *const f64,
    len: usize,
    what: &'static str,
) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn as_slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create an empty dataset for `p` parameters and `d` outputs.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_new(p: usize, d: usize, out: *mut *mut ScDataset) -> ScStatus {
    guard(|| store(out, ScDataset(SimulationDataset::new(p, d)?)))
}

/// Append `n_reps` replicate outputs (row-major, `n_reps x d`) at `theta`.
///
/// # Safety
/// `theta` must hold `p` values and `outputs` `n_reps * d` values.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_push(
    ds: *mut ScDataset,
    theta: *const f64,
    outputs: *const f64,
    n_reps: usize,
) -> ScStatus {
    guard(|| {
        let ds = &mut as_mut(ds, "dataset")?.0;
        let (p, d) = (ds.p(), ds.d());
        let theta = as_slice(theta, p, "theta")?;
        let outputs = as_slice(outputs, n_reps * d, "outputs")?;
        ds.push(theta, outputs.chunks(d).map(<[f64]>::to_vec).collect())?;
        Ok(())
    })
}

/// Number of unique parameters in the dataset.
///
/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_len(ds: *const ScDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must come from [`sc_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_free(ds: *mut ScDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fit an emulator by maximum likelihood with `restarts` random restarts.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_emulator_fit(
    ds: *const ScDataset,
    restarts: usize,
    seed: u64,
    out: *mut *mut ScEmulator,
) -> ScStatus {
    guard(|| {
        let ds = &as_ref(ds, "dataset")?.0;
        let cfg = FitConfig {
            restarts,
            seed,
            ..FitConfig::default()
        };
        store(out, ScEmulator(fit(ds, &cfg)?))
    })
}

/// Predictive mean, emulator variance and intrinsic noise variance at `theta`.
///
/// Each output buffer holds `d` values; `intrinsic` may be null.
///
/// # Safety
/// `theta` must hold `p` values and non-null outputs `d` values.
#[no_mangle]
pub unsafe extern "C" fn sc_emulator_predict(
    em: *const ScEmulator,
    theta: *const f64,
    mean: *mut f64,
    var: *mut f64,
    intrinsic: *mut f64,
) -> ScStatus {
    guard(|| {
        let em = &as_ref(em, "emulator")?.0;
        let pred = em.predict(as_slice(theta, em.p(), "theta")?)?;
        as_slice_mut(mean, em.d(), "mean")?.copy_from_slice(&pred.mean);
        as_slice_mut(var, em.d(), "var")?.copy_from_slice(&pred.var);
        if !intrinsic.is_null() {
            slice::from_raw_parts_mut(intrinsic, em.d()).copy_from_slice(&pred.intrinsic);
        }
        Ok(())
    })
}

/// # Safety
/// `em` must be a live emulator handle or null.
#[no_mangle]
pub unsafe extern "C" fn sc_emulator_dims(
    em: *const ScEmulator,
    p: *mut usize,
    d: *mut usize,
) -> ScStatus {
    guard(|| {
        let em = &as_ref(em, "emulator")?.0;
        *as_mut(p, "p")? = em.p();
        *as_mut(d, "d")? = em.d();
        Ok(())
    })
}

/// # Safety
/// `em` must come from [`sc_emulator_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_emulator_free(em: *mut ScEmulator) {
    if !em.is_null() {
        drop(Box::from_raw(em));
    }
}

/// Observation model with data `y` (length `d`), covariance `sigma`
/// (`d x d`, row-major) and a uniform prior on `[0, 1]^p`.
///
/// # Safety
/// Buffers must hold the stated number of values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_observation_new(
    y: *const f64,
    sigma: *const f64,
    d: usize,
    p: usize,
    out: *mut *mut ScObservation,
) -> ScStatus {
    guard(|| {
        let y = as_slice(y, d, "y")?.to_vec();
        let sigma = DMatrix::from_row_slice(d, d, as_slice(sigma, d * d, "sigma")?);
        store(
            out,
            ScObservation(ObservationModel::new(y, sigma, UniformBoxPrior::new(p))?),
        )
    })
}

/// # Safety
/// `obs` must come from [`sc_observation_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_observation_free(obs: *mut ScObservation) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

/// Mean and variance of the unnormalized posterior at `theta` under the emulator.
///
/// # Safety
/// Handles must be live, `theta` must hold `p` values, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sc_posterior_moments(
    em: *const ScEmulator,
    obs: *const ScObservation,
    theta: *const f64,
    mean: *mut f64,
    variance: *mut f64,
) -> ScStatus {
    guard(|| {
        let em = &as_ref(em, "emulator")?.0;
        let obs = &as_ref(obs, "observation")?.0;
        let theta = as_slice(theta, em.p(), "theta")?;
        let m = posterior_moments(&em.predict(theta)?, obs, theta)?;
        *as_mut(mean, "mean")? = m.mean;
        *as_mut(variance, "variance")? = m.variance;
        Ok(())
    })
}

/// Split `b` extra replicates across the design points to reduce the
/// integrated posterior variance over `n_ref` reference points.
///
/// `delta` receives one count per unique design point, in dataset order.
///
/// # Safety
/// `reference` must hold `n_ref * p` values and `delta` `n_delta` slots.
#[no_mangle]
pub unsafe extern "C" fn sc_allocate_replicates(
    em: *const ScEmulator,
    obs: *const ScObservation,
    reference: *const f64,
    n_ref: usize,
    b: usize,
    delta: *mut usize,
    n_delta: usize,
) -> ScStatus {
    guard(|| {
        let em = &as_ref(em, "emulator")?.0;
        let obs = &as_ref(obs, "observation")?.0;
        if n_delta != em.n() {
            return Err(Error::DimensionMismatch {
                expected: em.n(),
                got: n_delta,
            }
            .into());
        }
        let reference: Vec<Vec<f64>> = as_slice(reference, n_ref * em.p(), "reference")?
            .chunks(em.p())
            .map(<[f64]>::to_vec)
            .collect();
        let alloc = ivar_replication_batch(em, obs, &reference, b)?;
        as_slice_mut(delta, n_delta, "delta")?.copy_from_slice(&alloc.delta);
        Ok(())
    })
}

/// Run the experiment described by a TOML configuration, writing results
/// to `outdir`. With `bench` nonzero every method and batch size listed in
/// the configuration is run.
///
/// # Safety
/// Both strings must be valid NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn sc_run_config(
    config_toml: *const c_char,
    outdir: *const c_char,
    bench: i32,
) -> ScStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::from_toml(as_str(config_toml, "config")?)?;
        cfg.outdir = Path::new(as_str(outdir, "outdir")?).to_path_buf();
        if bench == 0 {
            harness::run(&cfg)?;
        } else {
            harness::bench(&cfg)?;
        }
        Ok(())
    })
}
