use std::ffi::{CStr, CString};
use std::ptr;

use limitclass_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lc_last_error_message()) }.to_string_lossy().into_owned()
}

fn expression(order: u32, s: &[&str], q: &[&str]) -> (LcStatus, *mut LcExpression) {
    let s: Vec<CString> = s.iter().map(|t| CString::new(*t).unwrap()).collect();
    let q: Vec<CString> = q.iter().map(|t| CString::new(*t).unwrap()).collect();
    let sp: Vec<_> = s.iter().map(|c| c.as_ptr()).collect();
    let qp: Vec<_> = q.iter().map(|c| c.as_ptr()).collect();
    let mut out = ptr::null_mut();
    let st = unsafe { lc_expression_new(order, sp.as_ptr(), sp.len(), qp.as_ptr(), qp.len(), 0.0, &mut out) };
    (st, out)
}

#[test]
fn p1_concomitant_matrix() {
    let (st, e) = expression(2, &["0", "1"], &[]);
    assert_eq!(st, LcStatus::Ok);
    assert_eq!(unsafe { lc_expression_order(e) }, 2);
    let (mut re, mut im) = ([9.0; 4], [9.0; 4]);
    let st = unsafe { lc_concomitant_matrix(e, 0.0, re.as_mut_ptr(), im.as_mut_ptr(), 4) };
    assert_eq!(st, LcStatus::Ok);
    assert_eq!(re, [0.0, -1.0, 1.0, 0.0]);
    assert_eq!(im, [0.0; 4]);
    assert_eq!(last_error(), "");
    unsafe { lc_expression_free(e) };
}

#[test]
fn small_buffer_reported() {
    let (_, e) = expression(3, &["0"], &["0", "1"]);
    let (mut re, mut im) = ([0.0; 4], [0.0; 4]);
    let st = unsafe { lc_concomitant_matrix(e, 0.0, re.as_mut_ptr(), im.as_mut_ptr(), 4) };
    assert_eq!(st, LcStatus::BufferTooSmall);
    assert!(last_error().contains("need 9"));
    unsafe { lc_expression_free(e) };
}

#[test]
fn bracket_of_exponentials() {
    // f = 1 + 0i derivative vector (1, 0), g = (0, 1): [fg] = conj(g)ᵀ B f = B[1][0] = 1
    let (_, e) = expression(2, &["0", "1"], &[]);
    let (fr, fi, gr, gi) = ([1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]);
    let (mut or, mut oi) = (0.0, 0.0);
    let st = unsafe {
        lc_bracket(e, 0.0, fr.as_ptr(), fi.as_ptr(), gr.as_ptr(), gi.as_ptr(), 2, &mut or, &mut oi)
    };
    assert_eq!(st, LcStatus::Ok);
    assert_eq!((or, oi), (1.0, 0.0));
    let st = unsafe {
        lc_bracket(e, 0.0, fr.as_ptr(), fi.as_ptr(), gr.as_ptr(), gi.as_ptr(), 3, &mut or, &mut oi)
    };
    assert_eq!(st, LcStatus::InvalidInput);
    unsafe { lc_expression_free(e) };
}

#[test]
fn bad_expression_and_nulls() {
    let (st, e) = expression(2, &["0", "1+"], &[]);
    assert_eq!(st, LcStatus::InvalidInput);
    assert!(e.is_null());
    assert!(!last_error().is_empty());
    let st = unsafe { lc_expression_new(2, ptr::null(), 1, ptr::null(), 0, 0.0, &mut ptr::null_mut()) };
    assert_eq!(st, LcStatus::NullPointer);
    assert_eq!(unsafe { lc_expression_order(ptr::null()) }, 0);
    unsafe { lc_expression_free(ptr::null_mut()) };
    unsafe { lc_string_free(ptr::null_mut()) };
}

#[test]
fn classify_json_round_trip() {
    let cfg = CString::new(r#"{"name":"P3","order":3,"s":["0"],"q":["0","1"],"x_max":60}"#).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { lc_classify_config_json(cfg.as_ptr(), &mut out) };
    assert_eq!(st, LcStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { lc_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["n_plus"], 1);
    assert_eq!(v["n_minus"], 2);
    assert_eq!(v["limit_case"], "(1, 2)");
}

#[test]
fn classify_json_errors() {
    let cfg = CString::new(r#"{"name":"bad","order":3,"s":["0","0","1"],"q":["0","1"]}"#).unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { lc_classify_config_json(cfg.as_ptr(), &mut out) };
    assert_eq!(st, LcStatus::InvalidInput);
    assert!(out.is_null());
    assert!(last_error().contains("length rule"));

    let cfg = CString::new(r#"{"name":"short","order":2,"s":["-(1+x)^4","1"],"x_max":3}"#).unwrap();
    let st = unsafe { lc_classify_config_json(cfg.as_ptr(), &mut out) };
    assert_eq!(st, LcStatus::Flagged);
    assert!(!out.is_null());
    unsafe { lc_string_free(out) };
}
