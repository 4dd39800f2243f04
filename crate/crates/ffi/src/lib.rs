//! C interface to the shadow-price solver.
//!
//! A model is created with [`sp_model_new`], queried through the `sp_model_*`
//! functions and released with [`sp_model_free`]. Every function returns an
//! [`SpStatus`]; on failure a description of the last error on the calling
//! thread is available from [`sp_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use shadow_price::shadow::{default_anchor, ShadowEvaluator};
use shadow_price::value::ValueError;
use shadow_price::{RawParams, SolverOptions, ValueFunction};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    SolverFailed = 3,
    OutsideNoTrade = 4,
    InvalidState = 5,
    Panic = 6,
}

/// Solved model together with the anchor fixing the shadow-market scale.
pub struct SpModel {
    vf: ValueFunction,
    anchor: (f64, f64),
}

/// Scalars of a solved model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpSummary {
    /// Sell boundary ratio `x / y`.
    pub u1: f64,
    /// Buy boundary ratio `x / y`.
    pub u2: f64,
    /// Smallest stock fraction of wealth in the no-trade region.
    pub theta1: f64,
    /// Largest stock fraction of wealth in the no-trade region.
    pub theta2: f64,
    pub merton_fraction: f64,
    /// Scale constant of the reduced value function `h`.
    pub k: f64,
}

/// Value function and its partial derivatives at `(x, y)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpDerivs {
    pub v: f64,
    pub vx: f64,
    pub vy: f64,
    pub vxx: f64,
    pub vxy: f64,
    pub vyy: f64,
}

/// Shadow-market quantities at one state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpShadowState {
    pub shadow_price: f64,
    pub consumption: f64,
    pub density: f64,
    pub m: f64,
    pub xi: f64,
    pub nu: f64,
    pub beta: f64,
    pub log_ratio: f64,
    pub phi0: f64,
    pub phi1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn value_status(e: ValueError) -> (SpStatus, String) {
    let status = match e {
        ValueError::OutsideNoTrade { .. } => SpStatus::OutsideNoTrade,
        ValueError::InvalidState(_) => SpStatus::InvalidState,
        _ => SpStatus::SolverFailed,
    };
    (status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SpStatus::Panic
        }
    }
}

fn null() -> (SpStatus, String) {
    (SpStatus::NullPointer, "null pointer argument".into())
}

/// # Safety
/// `model` must be null or a pointer returned by [`sp_model_new`] and not yet freed.
unsafe fn model_ref<'a>(model: *const SpModel) -> Result<&'a SpModel, (SpStatus, String)> {
    model.as_ref().ok_or_else(null)
}

/// Solves the model for the given market and writes a new handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_model_new(
    mu: f64,
    sigma: f64,
    delta: f64,
    gamma: f64,
    lambda_ask: f64,
    lambda_bid: f64,
    out: *mut *mut SpModel,
) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = std::ptr::null_mut();
        let raw = RawParams { mu, sigma, delta, gamma, lambda_ask, lambda_bid };
        let params = raw.validate().map_err(|e| (SpStatus::InvalidParams, e.to_string()))?;
        let vf = ValueFunction::solve(&params, &SolverOptions::default()).map_err(value_status)?;
        let anchor = default_anchor(&vf);
        *out = Box::into_raw(Box::new(SpModel { vf, anchor }));
        Ok(())
    })
}

/// Releases a model. Null is accepted and ignored.
///
/// # Safety
/// `model` must be null or a pointer returned by [`sp_model_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sp_model_free(model: *mut SpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Moves the anchor `(x0, y0)` that fixes the shadow-market scale.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_model_set_anchor(model: *mut SpModel, x0: f64, y0: f64) -> SpStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(null)?;
        ShadowEvaluator::new(&m.vf, x0, y0).map_err(value_status)?;
        m.anchor = (x0, y0);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_model_summary(model: *const SpModel, out: *mut SpSummary) -> SpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(null)?;
        let s = m.vf.summary();
        *out = SpSummary {
            u1: s.u1,
            u2: s.u2,
            theta1: s.theta1,
            theta2: s.theta2,
            merton_fraction: s.merton_fraction,
            k: s.k,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_model_eval_v(
    model: *const SpModel,
    x: f64,
    y: f64,
    out: *mut SpDerivs,
) -> SpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(null)?;
        let d = m.vf.eval_v(x, y).map_err(value_status)?;
        *out = SpDerivs { v: d.v, vx: d.vx, vy: d.vy, vxx: d.vxx, vxy: d.vxy, vyy: d.vyy };
        Ok(())
    })
}

/// Shadow-market state at time `t`, bond position `x`, stock value `y` and mid price `price`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_model_shadow_state(
    model: *const SpModel,
    t: f64,
    x: f64,
    y: f64,
    price: f64,
    out: *mut SpShadowState,
) -> SpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(null)?;
        let ev = ShadowEvaluator::new(&m.vf, m.anchor.0, m.anchor.1).map_err(value_status)?;
        let s = ev.snapshot(t, x, y, price).map_err(value_status)?;
        *out = SpShadowState {
            shadow_price: s.shadow_price,
            consumption: s.consumption,
            density: s.density,
            m: s.m,
            xi: s.xi,
            nu: s.nu,
            beta: s.beta,
            log_ratio: s.log_ratio,
            phi0: s.phi0,
            phi1: s.phi1,
        };
        Ok(())
    })
}

/// Relative residual of the reduced HJB equation at ratio `u`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sp_model_hjb_residual(model: *const SpModel, u: f64, out: *mut f64) -> SpStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = m.vf.relative_hjb_residual(u).map_err(value_status)?;
        Ok(())
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn sp_status_message(status: SpStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SpStatus::Ok => b"ok\0",
        SpStatus::NullPointer => b"null pointer argument\0",
        SpStatus::InvalidParams => b"invalid market parameters\0",
        SpStatus::SolverFailed => b"free boundary solve failed\0",
        SpStatus::OutsideNoTrade => b"state outside the no-trade region\0",
        SpStatus::InvalidState => b"invalid state\0",
        SpStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
