//! C ABI for `limitclass`.
//!
//! Functions return an [`LcStatus`]. On failure the message is available from
//! [`lc_last_error_message`] on the same thread. Expressions are opaque
//! handles released with [`lc_expression_free`]; strings returned by the
//! library are released with [`lc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use limitclass::bracket::{bracket, concomitant_matrix};
use limitclass::classify::classify_with_probes;
use limitclass::config::ProblemConfig;
use limitclass::expression::SymmetricExpression;
use limitclass::{Error, C64};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Numerical = 4,
    /// Classification ran but the report is flagged inconsistent.
    Flagged = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque expression handle.
pub struct LcExpression(SymmetricExpression);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> LcStatus {
    match err {
        Error::Syntax { .. }
        | Error::UnknownIdentifier { .. }
        | Error::NonIntegerExponent { .. }
        | Error::ComplexConstant { .. }
        | Error::Coefficient { .. }
        | Error::InvalidExpression(_)
        | Error::Dimension(_)
        | Error::Config { .. }
        | Error::Json(_)
        | Error::Io(_) => LcStatus::InvalidInput,
        _ => LcStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<LcStatus, (LcStatus, String)>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => {
            set_error(if s == LcStatus::Flagged { "report is flagged; see diagnostics.flags" } else { "" });
            s
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            LcStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (LcStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LcStatus, String)> {
    if p.is_null() {
        return Err((LcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (LcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn str_list<'a>(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<&'a str>, (LcStatus, String)> {
    if n == 0 {
        return Ok(vec![]);
    }
    if p.is_null() {
        return Err((LcStatus::NullPointer, format!("{what} is null")));
    }
    (0..n).map(|i| str_arg(*p.add(i), &format!("{what}[{i}]"))).collect()
}

unsafe fn expr_arg<'a>(p: *const LcExpression) -> Result<&'a SymmetricExpression, (LcStatus, String)> {
    p.as_ref().map(|e| &e.0).ok_or((LcStatus::NullPointer, "expression handle is null".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn lc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an expression of order `order` from coefficient strings.
///
/// # Safety
/// `s` and `q` point to `n_s` and `n_q` NUL-terminated strings (either may be
/// null when its count is 0); `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_expression_new(
    order: u32,
    s: *const *const c_char,
    n_s: usize,
    q: *const *const c_char,
    n_q: usize,
    origin: f64,
    out: *mut *mut LcExpression,
) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err((LcStatus::NullPointer, "out is null".into()));
        }
        let s = str_list(s, n_s, "s")?;
        let q = str_list(q, n_q, "q")?;
        let e = SymmetricExpression::from_strings(order as usize, &s, &q, origin).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(LcExpression(e)));
        Ok(LcStatus::Ok)
    })
}

/// Releases an expression. Null is ignored.
///
/// # Safety
/// `expr` was returned by [`lc_expression_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_expression_free(expr: *mut LcExpression) {
    if !expr.is_null() {
        drop(Box::from_raw(expr));
    }
}

/// Order of the expression, or 0 for a null handle.
///
/// # Safety
/// `expr` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_expression_order(expr: *const LcExpression) -> u32 {
    expr.as_ref().map_or(0, |e| e.0.order() as u32)
}

/// Writes `B(x)` row-major into `re` and `im`, each of length `len >= m*m`.
///
/// # Safety
/// `re` and `im` point to at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_concomitant_matrix(
    expr: *const LcExpression,
    x: f64,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> LcStatus {
    guard(|| {
        let e = expr_arg(expr)?;
        if re.is_null() || im.is_null() {
            return Err((LcStatus::NullPointer, "output buffer is null".into()));
        }
        let m = e.order();
        if len < m * m {
            return Err((LcStatus::BufferTooSmall, format!("need {} entries, got {len}", m * m)));
        }
        let b = concomitant_matrix(e, x).map_err(lib_err)?;
        for r in 0..m {
            for c in 0..m {
                *re.add(r * m + c) = b.b[(r, c)].re;
                *im.add(r * m + c) = b.b[(r, c)].im;
            }
        }
        Ok(LcStatus::Ok)
    })
}

/// `[fg](x)` for derivative vectors `f`, `g` of length `m` given as real and
/// imaginary parts.
///
/// # Safety
/// The four input arrays hold `m` doubles each; `out_re`, `out_im` are valid.
#[no_mangle]
pub unsafe extern "C" fn lc_bracket(
    expr: *const LcExpression,
    x: f64,
    f_re: *const f64,
    f_im: *const f64,
    g_re: *const f64,
    g_im: *const f64,
    m: usize,
    out_re: *mut f64,
    out_im: *mut f64,
) -> LcStatus {
    guard(|| {
        let e = expr_arg(expr)?;
        if [f_re, f_im, g_re, g_im].iter().any(|p| p.is_null()) || out_re.is_null() || out_im.is_null() {
            return Err((LcStatus::NullPointer, "vector or output pointer is null".into()));
        }
        if m != e.order() {
            return Err((LcStatus::InvalidInput, format!("vectors must have length {}, got {m}", e.order())));
        }
        let load = |re: *const f64, im: *const f64| -> Vec<C64> {
            (0..m).map(|i| C64::new(*re.add(i), *im.add(i))).collect()
        };
        let v = bracket(e, &load(f_re, f_im), &load(g_re, g_im), x).map_err(lib_err)?;
        *out_re = v.re;
        *out_im = v.im;
        Ok(LcStatus::Ok)
    })
}

/// Classifies the problem in a JSON configuration and returns the report as
/// a JSON string in `out` (release with [`lc_string_free`]). Returns
/// `Flagged` with the report when it is inconsistent or unresolved.
///
/// # Safety
/// `config_json` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_classify_config_json(config_json: *const c_char, out: *mut *mut c_char) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return Err((LcStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let text = str_arg(config_json, "config_json")?;
        let cfg = ProblemConfig::from_json(text).map_err(lib_err)?;
        let expr = cfg.expression().map_err(lib_err)?;
        let c = classify_with_probes(&expr, &cfg.name, &cfg.classify_params(), &cfg.probes()).map_err(lib_err)?;
        let json = serde_json::to_string_pretty(&c.report).map_err(|e| lib_err(e.into()))?;
        *out = CString::new(json).map_err(|_| (LcStatus::Panic, "report contains NUL".to_string()))?.into_raw();
        Ok(if c.report.consistent { LcStatus::Ok } else { LcStatus::Flagged })
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` came from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
