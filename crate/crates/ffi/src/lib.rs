//! C interface. Objects cross the boundary as opaque handles that the caller
//! releases with the matching `*_free`; every fallible call returns an
//! [`SrStatus`] and leaves a message for [`sr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stochrecon::experiments::{run, walsh_sums, ExperimentConfig, Outcome};
use stochrecon::grid::GridField;
use stochrecon::increments::IndexSet;
use stochrecon::noise::{brownian_sheet, sample_white_noise, NoiseSample};
use stochrecon::sewing::{sew, FrozenIncrementGerm};
use stochrecon::spde::{solve, ProblemSpec, SolveOptions};
use stochrecon::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    InvalidArgument = 1,
    Resource = 2,
    Resolution = 3,
    Unsupported = 4,
    Diverged = 5,
    Hypothesis = 6,
    Config = 7,
    Io = 8,
    NullPointer = 9,
    Panic = 10,
}

/// Monte Carlo white-noise draw.
pub struct SrNoise(NoiseSample);

/// Grid field (corner values or cell masses) with one value per sample.
pub struct SrField(GridField);

/// Checks and artifacts of a configured experiment.
pub struct SrOutcome(Outcome);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SrStatus {
    match e {
        Error::InvalidArgument(_) => SrStatus::InvalidArgument,
        Error::Resource(_) => SrStatus::Resource,
        Error::Resolution(_) => SrStatus::Resolution,
        Error::Unsupported(_) => SrStatus::Unsupported,
        Error::Diverged(_) => SrStatus::Diverged,
        Error::Hypothesis(_) => SrStatus::Hypothesis,
        Error::Config { .. } => SrStatus::Config,
        Error::Io(_) | Error::Json(_) => SrStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), SrStatus>) -> SrStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SrStatus::Panic
        }
    }
}

fn lift<T>(r: stochrecon::Result<T>) -> Result<T, SrStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null(what: &str) -> SrStatus {
    set_error(format!("{what} is null"));
    SrStatus::NullPointer
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SrStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), SrStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SrStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], SrStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the message of the last failed call on this thread into `buf`
/// (truncated, always NUL-terminated when `len > 0`). Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn sr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Draws `m` samples of white noise on `[0,t]^d` with `n` cells per axis.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sr_noise_sample(n: usize, t: f64, d: usize, m: usize, seed: u64, out: *mut *mut SrNoise) -> SrStatus {
    guard(|| put(out, SrNoise(lift(sample_white_noise(n, t, d, m, seed))?)))
}

/// # Safety
/// `noise` must come from [`sr_noise_sample`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_noise_free(noise: *mut SrNoise) {
    if !noise.is_null() {
        drop(Box::from_raw(noise));
    }
}

/// Brownian sheet of a noise draw.
///
/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn sr_brownian_sheet(noise: *const SrNoise, out: *mut *mut SrField) -> SrStatus {
    guard(|| {
        let nz = as_ref(noise, "noise")?;
        put(out, SrField(lift(brownian_sheet(&nz.0))?))
    })
}

/// Primitive of the reconstructed Walsh product `B·ξ`, a corner field.
///
/// # Safety
/// Handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn sr_walsh_primitive(noise: *const SrNoise, out: *mut *mut SrField) -> SrStatus {
    guard(|| {
        let nz = &as_ref(noise, "noise")?.0;
        put(out, SrField(lift(walsh_sums(nz))?))
    })
}

/// `I^{[d]}Ξ_{s,t}` for `Ξ_{s,t} = B_s □_{s,t}B`, at grid resolution.
/// `s` and `t` are corner indices of length `d`; `values` receives one
/// entry per sample and must hold `len ≥ samples`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_sew_frozen_increment(
    noise: *const SrNoise,
    s: *const usize,
    t: *const usize,
    d: usize,
    values: *mut f64,
    len: usize,
) -> SrStatus {
    guard(|| {
        let nz = &as_ref(noise, "noise")?.0;
        if d != nz.grid().d {
            set_error(format!("points have {d} coordinates, the grid has {}", nz.grid().d));
            return Err(SrStatus::InvalidArgument);
        }
        let (s, t) = (slice(s, d, "s")?, slice(t, d, "t")?);
        if s.iter().chain(t).any(|&i| i > nz.grid().n) {
            set_error("corner index outside the grid".into());
            return Err(SrStatus::InvalidArgument);
        }
        let out = slice_mut(values, len, "values")?;
        if len < nz.samples() {
            set_error(format!("buffer holds {len} values, {} needed", nz.samples()));
            return Err(SrStatus::InvalidArgument);
        }
        let b = lift(brownian_sheet(nz))?;
        let xi = lift(FrozenIncrementGerm::new(b.clone(), b))?;
        let r = lift(sew(&xi, lift(IndexSet::full(d))?, s, t))?;
        out[..r.value.len()].copy_from_slice(&r.value);
        Ok(())
    })
}

/// Solves the default mixed SPDE regime on an `n × n` grid with `m` samples.
/// `contraction` (nullable) receives the estimated Picard contraction ratio.
///
/// # Safety
/// Pointers must be valid or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn sr_spde_solve_default(
    n: usize,
    m: usize,
    seed: u64,
    out: *mut *mut SrField,
    contraction: *mut f64,
) -> SrStatus {
    guard(|| {
        let (problem, _) = lift(ProblemSpec::default_regime(n).build())?;
        let noise = lift(sample_white_noise(n, 1.0, 2, m, seed))?;
        let sol = lift(solve(&problem, &noise, &SolveOptions::default()))?;
        if !contraction.is_null() {
            *contraction = sol.contraction;
        }
        put(out, SrField(sol.u))
    })
}

/// Grid shape of a field. Any output pointer may be null.
///
/// # Safety
/// `field` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sr_field_shape(field: *const SrField, n: *mut usize, d: *mut usize, samples: *mut usize) -> SrStatus {
    guard(|| {
        let f = &as_ref(field, "field")?.0;
        for (p, v) in [(n, f.grid.n), (d, f.grid.d), (samples, f.samples)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the per-sample values at corner `idx` (length `d`) of a corner field.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_field_corner(field: *const SrField, idx: *const usize, d: usize, values: *mut f64, len: usize) -> SrStatus {
    guard(|| {
        let f = &as_ref(field, "field")?.0;
        if f.kind != stochrecon::grid::FieldKind::CornerValues {
            set_error("not a corner field".into());
            return Err(SrStatus::InvalidArgument);
        }
        let idx = slice(idx, d, "idx")?;
        if d != f.grid.d || idx.iter().any(|&i| i > f.grid.n) {
            set_error(format!("corner {idx:?} outside a grid with d={} and N={}", f.grid.d, f.grid.n));
            return Err(SrStatus::InvalidArgument);
        }
        let src = f.corner(idx);
        if len < src.len() {
            set_error(format!("buffer holds {len} values, {} needed", src.len()));
            return Err(SrStatus::InvalidArgument);
        }
        slice_mut(values, len, "values")?[..src.len()].copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_field_free(field: *mut SrField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Parses a TOML experiment config and runs it.
///
/// # Safety
/// `config` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sr_run_config(config: *const c_char, out: *mut *mut SrOutcome) -> SrStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config).to_str().map_err(|e| {
            set_error(format!("config is not UTF-8: {e}"));
            SrStatus::InvalidArgument
        })?;
        let cfg = lift(ExperimentConfig::parse(text))?;
        put(out, SrOutcome(lift(run(&cfg))?))
    })
}

/// 1 when every check passed, 0 otherwise (also for a null handle).
///
/// # Safety
/// `outcome` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn sr_outcome_passed(outcome: *const SrOutcome) -> i32 {
    outcome.as_ref().map(|o| o.0.passed() as i32).unwrap_or(0)
}

/// Number of checks in an outcome.
///
/// # Safety
/// `outcome` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn sr_outcome_check_count(outcome: *const SrOutcome) -> usize {
    outcome.as_ref().map(|o| o.0.checks.len()).unwrap_or(0)
}

/// Value and pass flag of check `i`.
///
/// # Safety
/// `outcome` must be valid; `value` and `passed` may be null.
#[no_mangle]
pub unsafe extern "C" fn sr_outcome_check(outcome: *const SrOutcome, i: usize, value: *mut f64, passed: *mut i32) -> SrStatus {
    guard(|| {
        let o = &as_ref(outcome, "outcome")?.0;
        let c = o.checks.get(i).ok_or_else(|| {
            set_error(format!("check {i} of {}", o.checks.len()));
            SrStatus::InvalidArgument
        })?;
        if !value.is_null() {
            *value = c.value;
        }
        if !passed.is_null() {
            *passed = c.passed as i32;
        }
        Ok(())
    })
}

/// # Safety
/// `outcome` must come from [`sr_run_config`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sr_outcome_free(outcome: *mut SrOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}
