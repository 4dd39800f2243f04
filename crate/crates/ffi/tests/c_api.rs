use std::ffi::CStr;
use std::ptr;

use shadow_price_ffi::*;

fn reference() -> *mut SpModel {
    let mut m = ptr::null_mut();
    let st = unsafe { sp_model_new(0.05, 0.4, 0.1, 0.5, 0.01, 0.01, &mut m) };
    assert_eq!(st, SpStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sp_last_error_message()) }.to_str().unwrap().to_owned()
}

#[test]
fn summary_brackets_the_merton_fraction() {
    let m = reference();
    let mut s = SpSummary::default();
    assert_eq!(unsafe { sp_model_summary(m, &mut s) }, SpStatus::Ok);
    assert!((s.merton_fraction - 0.625).abs() < 1e-15);
    assert!(s.theta1 < 0.625 && 0.625 < s.theta2);
    assert!((s.theta1 - 1.0 / (1.0 + s.u2)).abs() < 1e-15);
    assert!((s.theta2 - 1.0 / (1.0 + s.u1)).abs() < 1e-15);
    assert!(last_error().is_empty());
    unsafe { sp_model_free(m) };
}

#[test]
fn value_and_shadow_state_are_consistent() {
    let m = reference();
    let mut s = SpSummary::default();
    unsafe { sp_model_summary(m, &mut s) };
    let u = (s.u1 * s.u2).sqrt();

    let mut d = SpDerivs::default();
    assert_eq!(unsafe { sp_model_eval_v(m, 2.0 * u, 2.0, &mut d) }, SpStatus::Ok);
    assert!(d.vx > 0.0 && d.vy > 0.0 && d.vxx < 0.0);
    let mut st = SpShadowState::default();
    assert_eq!(unsafe { sp_model_shadow_state(m, 0.0, 2.0 * u, 2.0, 3.0, &mut st) }, SpStatus::Ok);
    // the shadow price is the marginal rate of substitution
    assert!((st.shadow_price / 3.0 - d.vy / d.vx).abs() < 1e-12);
    assert!(st.shadow_price >= 0.99 * 3.0 && st.shadow_price <= 1.01 * 3.0);
    assert!((st.phi1 - 2.0 / 3.0).abs() < 1e-15);

    let mut r = f64::NAN;
    assert_eq!(unsafe { sp_model_hjb_residual(m, u, &mut r) }, SpStatus::Ok);
    assert!(r.abs() < 1e-8);
    unsafe { sp_model_free(m) };
}

#[test]
fn anchor_moves_the_density_scale() {
    let m = reference();
    let mut s = SpSummary::default();
    unsafe { sp_model_summary(m, &mut s) };
    let u = (s.u1 * s.u2).sqrt();
    let mut st = SpShadowState::default();
    unsafe { sp_model_shadow_state(m, 0.0, u, 1.0, 1.0, &mut st) };
    assert!((st.density - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { sp_model_set_anchor(m, 2.0 * u, 2.0) }, SpStatus::Ok);
    unsafe { sp_model_shadow_state(m, 0.0, u, 1.0, 1.0, &mut st) };
    assert!((st.density - 2f64.powf(0.5)).abs() < 1e-12);
    assert_eq!(unsafe { sp_model_set_anchor(m, 100.0, 1.0) }, SpStatus::OutsideNoTrade);
    unsafe { sp_model_free(m) };
}

#[test]
fn errors_are_codes_with_messages() {
    let mut m = ptr::dangling_mut::<SpModel>();
    let st = unsafe { sp_model_new(0.2, 0.4, 0.1, 0.5, 0.01, 0.01, &mut m) };
    assert_eq!(st, SpStatus::InvalidParams);
    assert!(m.is_null());
    assert!(last_error().contains("sigma^2 > mu"), "{}", last_error());

    assert_eq!(
        unsafe { sp_model_new(0.05, 0.4, 0.1, 0.5, 0.01, 0.01, ptr::null_mut()) },
        SpStatus::NullPointer
    );
    let mut s = SpSummary::default();
    assert_eq!(unsafe { sp_model_summary(ptr::null(), &mut s) }, SpStatus::NullPointer);

    let model = reference();
    let mut d = SpDerivs::default();
    assert_eq!(unsafe { sp_model_eval_v(model, 10.0, 1.0, &mut d) }, SpStatus::OutsideNoTrade);
    assert!(last_error().contains("outside"));
    assert_eq!(unsafe { sp_model_eval_v(model, 0.5, 1.0, ptr::null_mut()) }, SpStatus::NullPointer);
    unsafe {
        sp_model_free(model);
        sp_model_free(ptr::null_mut());
    }

    for code in [SpStatus::Ok, SpStatus::InvalidParams, SpStatus::Panic] {
        let msg = unsafe { CStr::from_ptr(sp_status_message(code)) };
        assert!(!msg.to_bytes().is_empty());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/shadow_price.h")).unwrap();
    for name in [
        "sp_model_new",
        "sp_model_free",
        "sp_model_set_anchor",
        "sp_model_summary",
        "sp_model_eval_v",
        "sp_model_shadow_state",
        "sp_model_hjb_residual",
        "sp_status_message",
        "sp_last_error_message",
        "typedef struct SpModel SpModel",
        "SP_STATUS_OUTSIDE_NO_TRADE = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
