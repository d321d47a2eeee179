//! C ABI over `fpi-core`.
//!
//! Every function returns an [`FpiStatus`]. On a non-`Ok` status a message
//! is available from [`fpi_last_error_message`] on the same thread until the
//! next call. Latents cross the boundary as `double` arrays of exactly
//! [`fpi_model_dim`] entries. A `prompt` of `-1` means unconditional;
//! otherwise it indexes a mixture component.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fpi_core::bench::ExperimentConfig;
use fpi_core::denoiser::{Condition, Denoiser, GuidanceConfig, MixtureDenoiser};
use fpi_core::inversion::{invert, prompt_aware_adjust, AdjustmentConfig, FixedPointConfig};
use fpi_core::sampler::generate_final;
use fpi_core::{Error, LatentVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Config = 4,
    Panic = 5,
}

/// Opaque model handle.
pub struct FpiModel {
    model: MixtureDenoiser,
    adjust: AdjustmentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> FpiStatus {
    match e {
        Error::DimensionMismatch { .. } => FpiStatus::DimensionMismatch,
        Error::InvalidConfig(_)
        | Error::InvalidSchedule(_)
        | Error::InvalidMixture(_)
        | Error::InvalidCodec(_)
        | Error::Serialization(_)
        | Error::Io(_) => FpiStatus::Config,
        _ => FpiStatus::InvalidArgument,
    }
}

struct Failure(FpiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FpiStatus::NullPointer, format!("{what} is null"))
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> FpiStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            FpiStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const FpiModel) -> Result<&'a FpiModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn read_latent(m: &FpiModel, data: *const f64, len: usize) -> Result<LatentVector, Failure> {
    if data.is_null() {
        return Err(null("input latent"));
    }
    let d = m.model.dim();
    if len != d {
        return Err(Error::DimensionMismatch { expected: d, actual: len }.into());
    }
    Ok(LatentVector::new(std::slice::from_raw_parts(data, len).to_vec())?)
}

unsafe fn write_latent(z: &LatentVector, out: *mut f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(z.as_slice().as_ptr(), out, z.dim());
    Ok(())
}

fn condition(m: &FpiModel, prompt: i64) -> Result<Condition, Failure> {
    let k = m.model.mixture().num_components();
    match prompt {
        -1 => Ok(Condition::Unconditional),
        p if p >= 0 && (p as usize) < k => Ok(Condition::ComponentPrompt(p as usize)),
        p => Err(Failure(
            FpiStatus::InvalidArgument,
            format!("prompt {p} out of range for {k} components"),
        )),
    }
}

/// Null-terminated crate version. Static; do not free.
#[no_mangle]
pub extern "C" fn fpi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next `fpi_*` call on this thread.
#[no_mangle]
pub extern "C" fn fpi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a model from an experiment config given as JSON text.
///
/// # Safety
/// `config_json` must be a valid null-terminated string and `out` a valid
/// pointer. The handle written to `*out` must be released with
/// [`fpi_model_free`].
#[no_mangle]
pub unsafe extern "C" fn fpi_model_new(config_json: *const c_char, out: *mut *mut FpiModel) -> FpiStatus {
    guarded(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| Failure(FpiStatus::Config, format!("config is not UTF-8: {e}")))?;
        let cfg = ExperimentConfig::from_json(text)?;
        let model = MixtureDenoiser::new(cfg.mixture.clone(), cfg.schedule.build()?);
        *out = Box::into_raw(Box::new(FpiModel { model, adjust: cfg.adjust }));
        Ok(())
    })
}

/// Releases a handle from [`fpi_model_new`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpi_model_free(model: *mut FpiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension of the model.
///
/// # Safety
/// `model` must be a live handle and `out_dim` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fpi_model_dim(model: *const FpiModel, out_dim: *mut usize) -> FpiStatus {
    guarded(|| {
        let m = model_ref(model)?;
        if out_dim.is_null() {
            return Err(null("out_dim"));
        }
        *out_dim = m.model.dim();
        Ok(())
    })
}

/// Deterministic DDIM generation from `seed` to a clean latent.
///
/// # Safety
/// `seed` must point to `len` doubles and `out` to room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fpi_generate(
    model: *const FpiModel,
    seed: *const f64,
    len: usize,
    prompt: i64,
    guidance: f64,
    out: *mut f64,
) -> FpiStatus {
    guarded(|| {
        let m = model_ref(model)?;
        let z = read_latent(m, seed, len)?;
        let cond = condition(m, prompt)?;
        let z0 = generate_final(&m.model, &z, cond, GuidanceConfig::new(guidance)?)?;
        write_latent(&z0, out)
    })
}

/// Fixed-point inversion of a clean latent back to a seed. With
/// `max_iterations == 1` this is plain DDIM inversion. `out_nfe` may be null.
///
/// # Safety
/// `z0` must point to `len` doubles and `out_seed` to room for `len` doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fpi_invert(
    model: *const FpiModel,
    z0: *const f64,
    len: usize,
    prompt: i64,
    guidance: f64,
    max_iterations: u32,
    tolerance: f64,
    out_seed: *mut f64,
    out_nfe: *mut usize,
) -> FpiStatus {
    guarded(|| {
        let m = model_ref(model)?;
        let z = read_latent(m, z0, len)?;
        let cond = condition(m, prompt)?;
        let cfg = FixedPointConfig {
            max_iterations: max_iterations as usize,
            residual_tolerance: tolerance,
            track_trace: false,
        };
        cfg.validate()
            .map_err(|e| Failure(FpiStatus::InvalidArgument, e.to_string()))?;
        let inv = invert(&m.model, &z, cond, GuidanceConfig::new(guidance)?, &cfg)?;
        write_latent(&inv.seed, out_seed)?;
        if !out_nfe.is_null() {
            *out_nfe = inv.trace.nfe();
        }
        Ok(())
    })
}

/// Prompt-aware adjustment of an encoded latent, using the adjustment
/// settings from the model's config.
///
/// # Safety
/// `z0` must point to `len` doubles and `out` to room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fpi_adjust(
    model: *const FpiModel,
    z0: *const f64,
    len: usize,
    prompt: i64,
    guidance: f64,
    out: *mut f64,
) -> FpiStatus {
    guarded(|| {
        let m = model_ref(model)?;
        let z = read_latent(m, z0, len)?;
        let cond = condition(m, prompt)?;
        let adjusted = prompt_aware_adjust(&m.model, &z, cond, GuidanceConfig::new(guidance)?, &m.adjust)?;
        write_latent(&adjusted, out)
    })
}
