//! C ABI over `a2a-core`.
//!
//! Objects cross the boundary as opaque handles created by `a2a_*_new`-style
//! functions and released with the matching `a2a_*_free`. Every fallible
//! call returns an [`A2aStatus`]; on failure the message is available from
//! [`a2a_last_error`] on the same thread until the next call.
//!
//! Sample buffers are interleaved `f32` pairs (re, im), plane-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use a2a_core::cvnn::ComplexTensor;
use a2a_core::io::RunConfig;
use a2a_core::metrics::evaluate_envelope_with_bins;
use a2a_core::sweep::{run_method, Method};
use a2a_core::{ApertureStack, Error};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum A2aStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numeric = 2,
    Format = 3,
    Io = 4,
    Config = 5,
    NullPointer = 6,
    BufferSize = 7,
    Panic = 8,
}

/// An `N x H x W` complex stack.
pub struct A2aStack {
    inner: ApertureStack,
}

/// A run configuration.
pub struct A2aConfig {
    inner: RunConfig,
}

/// Image quality of one frame.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct A2aMetrics {
    pub snr_db: f64,
    pub cnr: f64,
    pub gcnr: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(A2aStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Argument(_) | Error::Contract(_) => A2aStatus::InvalidArgument,
            Error::Numeric(_) | Error::Diverged { .. } | Error::UndefinedMetric(_) => A2aStatus::Numeric,
            Error::Format { .. } => A2aStatus::Format,
            Error::Io { .. } => A2aStatus::Io,
            Error::Config(_) => A2aStatus::Config,
        };
        Failure(code, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> A2aStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => A2aStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            A2aStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(A2aStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(A2aStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    let slot = unsafe { as_mut(out, what)? };
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f32], out: *mut f32, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err(Failure(
            A2aStatus::BufferSize,
            format!("buffer holds {len} floats, {} needed", src.len()),
        ));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, len) };
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn a2a_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn a2a_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a stack from `2 * n * h * w` interleaved floats.
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_new(
    n: u32,
    h: u32,
    w: u32,
    data: *const f32,
    len: usize,
    out: *mut *mut A2aStack,
) -> A2aStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let (n, h, w) = (n as usize, h as usize, w as usize);
        let need = 2 * n * h * w;
        if len != need {
            return Err(Failure(
                A2aStatus::BufferSize,
                format!("{len} floats given, {need} needed for {n}x{h}x{w}"),
            ));
        }
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let t = ComplexTensor::from_interleaved(&[n, h, w], values)?;
        unsafe { put(out, A2aStack { inner: ApertureStack::new(t)? }, "out") }
    })
}

/// # Safety
/// `stack` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_free(stack: *mut A2aStack) {
    if !stack.is_null() {
        drop(unsafe { Box::from_raw(stack) });
    }
}

/// # Safety
/// `stack` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_dims(stack: *const A2aStack, n: *mut u32, h: *mut u32, w: *mut u32) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        unsafe {
            *as_mut(n, "n")? = s.inner.n() as u32;
            *as_mut(h, "h")? = s.inner.h() as u32;
            *as_mut(w, "w")? = s.inner.w() as u32;
        }
        Ok(())
    })
}

/// Copies the `2 * n * h * w` samples into `out`.
///
/// # Safety
/// `stack` must be a live handle; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_copy_data(stack: *const A2aStack, out: *mut f32, len: usize) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        unsafe { copy_out(s.inner.tensor().data(), out, len) }
    })
}

/// Writes the coherent sum over apertures (`2 * h * w` floats) into `out`.
///
/// # Safety
/// `stack` must be a live handle; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_compound(stack: *const A2aStack, out: *mut f32, len: usize) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        let y = s.inner.compound();
        let flat: Vec<f32> = y.data.iter().flat_map(|z| [z.re, z.im]).collect();
        unsafe { copy_out(&flat, out, len) }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_read(path: *const c_char, out: *mut *mut A2aStack) -> A2aStatus {
    guard(|| {
        let p = unsafe { as_str(path, "path")? };
        let inner = a2a_core::io::read_stack(p)?;
        unsafe { put(out, A2aStack { inner }, "out") }
    })
}

/// # Safety
/// `stack` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn a2a_stack_write(stack: *const A2aStack, path: *const c_char) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        let p = unsafe { as_str(path, "path")? };
        a2a_core::io::write_stack(p, &s.inner)?;
        Ok(())
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_config_default(out: *mut *mut A2aConfig) -> A2aStatus {
    guard(|| unsafe { put(out, A2aConfig { inner: RunConfig::default() }, "out") })
}

/// Parses and validates a JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_config_from_json(json: *const c_char, out: *mut *mut A2aConfig) -> A2aStatus {
    guard(|| {
        let text = unsafe { as_str(json, "json")? };
        let inner = RunConfig::from_json_str(text)?;
        inner.validate()?;
        unsafe { put(out, A2aConfig { inner }, "out") }
    })
}

/// Applies one `section.key=value` override. Unknown keys and values of the
/// wrong type are rejected and leave the config unchanged; cross-field
/// checks run in [`a2a_config_validate`] and before every operation.
///
/// # Safety
/// `config` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn a2a_config_set(config: *mut A2aConfig, assignment: *const c_char) -> A2aStatus {
    guard(|| {
        let c = unsafe { as_mut(config, "config")? };
        let a = unsafe { as_str(assignment, "assignment")? };
        c.inner = c.inner.with_overrides(&[a.to_string()])?;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn a2a_config_validate(config: *const A2aConfig) -> A2aStatus {
    guard(|| {
        unsafe { as_ref(config, "config")? }.inner.validate()?;
        Ok(())
    })
}

unsafe fn valid_config<'a>(config: *const A2aConfig) -> Result<&'a RunConfig, Failure> {
    let c = unsafe { as_ref(config, "config")? };
    c.inner.validate()?;
    Ok(&c.inner)
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn a2a_config_free(config: *mut A2aConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Generates the configured phantom. Either output may be null to skip it.
///
/// # Safety
/// `config` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_simulate(
    config: *const A2aConfig,
    noisy_out: *mut *mut A2aStack,
    clean_out: *mut *mut A2aStack,
) -> A2aStatus {
    guard(|| {
        let c = unsafe { valid_config(config)? };
        let b = a2a_core::phantom::generate_dataset(&c.phantom)?;
        if !noisy_out.is_null() {
            unsafe { put(noisy_out, A2aStack { inner: b.noisy_stack }, "noisy_out")? };
        }
        if !clean_out.is_null() {
            unsafe { put(clean_out, A2aStack { inner: b.clean_stack }, "clean_out")? };
        }
        Ok(())
    })
}

/// Fits the model on `stack` and returns the decoded clean stack.
/// `steps_run` may be null.
///
/// # Safety
/// `stack` and `config` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_denoise(
    stack: *const A2aStack,
    config: *const A2aConfig,
    out: *mut *mut A2aStack,
    steps_run: *mut u32,
) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        let c = unsafe { valid_config(config)? };
        let (clean, _, trace) = a2a_core::ttt::denoise(&s.inner, &c.ttt)?;
        if let Some(k) = unsafe { steps_run.as_mut() } {
            *k = trace.steps_run() as u32;
        }
        unsafe { put(out, A2aStack { inner: clean }, "out") }
    })
}

/// Runs `raw`, `cf`, `pcf` or `srad` and returns a single-plane stack.
///
/// # Safety
/// `stack` and `config` must be live handles, `method` a NUL-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_baseline(
    stack: *const A2aStack,
    config: *const A2aConfig,
    method: *const c_char,
    out: *mut *mut A2aStack,
) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        let c = unsafe { valid_config(config)? };
        let m: Method = unsafe { as_str(method, "method")? }.parse()?;
        if m == Method::A2a {
            return Err(Failure(A2aStatus::InvalidArgument, "use a2a_denoise for a2a".into()));
        }
        let y = run_method(m, &s.inner, c)?.into_field();
        let t = ComplexTensor::from_complex(&[1, y.h, y.w], &y.data)?;
        unsafe { put(out, A2aStack { inner: ApertureStack::new(t)? }, "out") }
    })
}

/// Metrics of the compound of `stack` against the compound of `reference`,
/// with regions from the configuration.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn a2a_metrics(
    stack: *const A2aStack,
    reference: *const A2aStack,
    config: *const A2aConfig,
    out: *mut A2aMetrics,
) -> A2aStatus {
    guard(|| {
        let s = unsafe { as_ref(stack, "stack")? };
        let r = unsafe { as_ref(reference, "reference")? };
        let c = unsafe { valid_config(config)? };
        let slot = unsafe { as_mut(out, "out")? };
        let y = s.inner.compound();
        let yr = r.inner.compound();
        let roi = c.roi()?;
        let m = evaluate_envelope_with_bins(
            &y.envelope(),
            &yr.envelope(),
            &roi,
            c.metrics.dynamic_range,
            c.metrics.gcnr_bins,
        )?;
        *slot = A2aMetrics {
            snr_db: m.snr_db,
            cnr: m.cnr,
            gcnr: m.gcnr,
            psnr_db: m.psnr_db,
            ssim: m.ssim,
        };
        Ok(())
    })
}
