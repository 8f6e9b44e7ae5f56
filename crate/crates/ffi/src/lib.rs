//! C ABI for symread: parse address expressions and memory snapshots, model
//! symbolic reads and render them as SMT-LIBv2.
//!
//! Every fallible function returns an [`SrStatus`]; on failure the message
//! is kept per thread and can be fetched with [`sr_last_error`]. Handles
//! are opaque and must be released with their `_free` function. Strings
//! returned by the library are released with [`sr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use symread::expr::{eval, parse_expr, Assignment, BitVecExpr, Declarations};
use symread::memmodel::{model_read, MemorySnapshot, ModeledRead, Strategy};
use symread::smtlib::emit_definition;

/// Opaque bitvector expression.
pub struct SrExpr(BitVecExpr);

/// Opaque memory snapshot.
pub struct SrSnapshot(MemorySnapshot);

/// Opaque modeled read.
pub struct SrRead(ModeledRead);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ModelError = 4,
    InvalidArgument = 5,
    EvalError = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStrategy {
    Ite = 0,
    Bst = 1,
    Linearized = 2,
}

impl From<SrStrategy> for Strategy {
    fn from(s: SrStrategy) -> Self {
        match s {
            SrStrategy::Ite => Strategy::Ite,
            SrStrategy::Bst => Strategy::Bst,
            SrStrategy::Linearized => Strategy::Linearized,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: SrStatus, msg: impl ToString) -> SrStatus {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
    status
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, SrStatus> {
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SrStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Parses `NAME:WIDTH` pairs separated by commas.
fn declarations(spec: &str) -> Result<Declarations, SrStatus> {
    let mut d = Declarations::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (n, w) = item
            .split_once(':')
            .and_then(|(n, w)| Some((n.trim(), w.trim().parse::<u32>().ok()?)))
            .ok_or_else(|| fail(SrStatus::InvalidArgument, format!("bad declaration `{item}`")))?;
        d.insert(n.to_string(), w);
    }
    Ok(d)
}

/// Last error message of this thread, or null. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version string (static).
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an s-expression. `decls` is null or `"x:8,y:64"` for bare
/// variable names.
///
/// # Safety
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_expr_parse(src: *const c_char, decls: *const c_char, out: *mut *mut SrExpr) -> SrStatus {
    if out.is_null() {
        return fail(SrStatus::NullPointer, "null output pointer");
    }
    let src = match c_str(src) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let d = if decls.is_null() {
        Declarations::new()
    } else {
        match c_str(decls).and_then(declarations) {
            Ok(d) => d,
            Err(e) => return e,
        }
    };
    match parse_expr(src, &d) {
        Ok(e) => {
            *out = boxed(SrExpr(e));
            SrStatus::Ok
        }
        Err(e) => fail(SrStatus::ParseError, e),
    }
}

/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_expr_free(e: *mut SrExpr) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Width in bits, 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_expr_width(e: *const SrExpr) -> u32 {
    e.as_ref().map_or(0, |e| e.0.width())
}

/// S-expression text; free with `sr_string_free`.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_expr_to_string(e: *const SrExpr) -> *mut c_char {
    e.as_ref().map_or(ptr::null_mut(), |e| to_c(e.0.to_string()))
}

/// Evaluates an expression of at most 64 bits. `names`/`values` hold `n`
/// variable bindings.
///
/// # Safety
/// `names` and `values` must point to `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_expr_eval(
    e: *const SrExpr,
    names: *const *const c_char,
    values: *const u64,
    n: usize,
    out: *mut u64,
) -> SrStatus {
    let Some(e) = e.as_ref() else {
        return fail(SrStatus::NullPointer, "null expression");
    };
    if out.is_null() || (n > 0 && (names.is_null() || values.is_null())) {
        return fail(SrStatus::NullPointer, "null argument");
    }
    let vars = e.0.variables();
    let mut asg = Assignment::new();
    for i in 0..n {
        let name = match c_str(*names.add(i)) {
            Ok(s) => s,
            Err(st) => return st,
        };
        if let Some(&w) = vars.get(name) {
            asg.insert_u64(name, w, *values.add(i));
        }
    }
    match eval(&e.0, &asg) {
        Ok(v) => match v.to_u64() {
            Some(x) => {
                *out = x;
                SrStatus::Ok
            }
            None => fail(SrStatus::EvalError, "value wider than 64 bits"),
        },
        Err(err) => fail(SrStatus::EvalError, err),
    }
}

/// Parses the snapshot text format (header line plus one line per cell).
///
/// # Safety
/// `src` must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_snapshot_parse(src: *const c_char, out: *mut *mut SrSnapshot) -> SrStatus {
    if out.is_null() {
        return fail(SrStatus::NullPointer, "null output pointer");
    }
    let src = match c_str(src) {
        Ok(s) => s,
        Err(e) => return e,
    };
    match src.parse::<MemorySnapshot>() {
        Ok(s) => {
            *out = boxed(SrSnapshot(s));
            SrStatus::Ok
        }
        Err(e) => fail(SrStatus::ParseError, e),
    }
}

/// Snapshot of `len` concrete cells of `access_size` bytes (at most 8) laid
/// out from `base`.
///
/// # Safety
/// `values` must point to `len` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_snapshot_from_values(
    base: u64,
    access_size: u32,
    values: *const u64,
    len: usize,
    current_offset: u64,
    out: *mut *mut SrSnapshot,
) -> SrStatus {
    if out.is_null() || (len > 0 && values.is_null()) {
        return fail(SrStatus::NullPointer, "null argument");
    }
    if !(1..=8).contains(&access_size) {
        return fail(SrStatus::InvalidArgument, "access size must be 1 to 8 bytes");
    }
    let vals = if len == 0 { &[][..] } else { std::slice::from_raw_parts(values, len) };
    match MemorySnapshot::from_values(base, access_size, vals, current_offset) {
        Ok(s) => {
            *out = boxed(SrSnapshot(s));
            SrStatus::Ok
        }
        Err(e) => fail(SrStatus::InvalidArgument, e),
    }
}

/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_snapshot_free(s: *mut SrSnapshot) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Snapshot text; free with `sr_string_free`.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_snapshot_to_string(s: *const SrSnapshot) -> *mut c_char {
    s.as_ref().map_or(ptr::null_mut(), |s| to_c(s.0.to_string()))
}

/// Models a read of `snap` at the 64-bit address `addr`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_model_read(
    snap: *const SrSnapshot,
    addr: *const SrExpr,
    strategy: SrStrategy,
    out: *mut *mut SrRead,
) -> SrStatus {
    let (Some(snap), Some(addr)) = (snap.as_ref(), addr.as_ref()) else {
        return fail(SrStatus::NullPointer, "null handle");
    };
    if out.is_null() {
        return fail(SrStatus::NullPointer, "null output pointer");
    }
    match model_read(&snap.0, &addr.0, strategy.into()) {
        Ok(r) => {
            *out = boxed(SrRead(r));
            SrStatus::Ok
        }
        Err(e) => fail(SrStatus::ModelError, e),
    }
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_read_free(r: *mut SrRead) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// New expression handle for the read value.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_read_expr(r: *const SrRead) -> *mut SrExpr {
    r.as_ref().map_or(ptr::null_mut(), |r| boxed(SrExpr(r.0.expr.clone())))
}

/// Whether a linearized request was built as a nested ITE instead.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_read_fell_back(r: *const SrRead) -> bool {
    r.as_ref().is_some_and(|r| r.0.fell_back_to_ite)
}

/// Number of linear segments in a linearized read.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_read_segment_count(r: *const SrRead) -> usize {
    r.as_ref().map_or(0, |r| r.0.segments.len())
}

/// SMT-LIBv2 script defining the read as `read`; free with `sr_string_free`.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_read_smtlib(r: *const SrRead) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| to_c(emit_definition("read", &r.0.expr)))
}
