//! C interface to `fracsym`.
//!
//! Domains and operators are opaque handles created by `fs_*_new`-style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns an [`FsStatus`]; on failure the message is kept per thread and can
//! be read with [`fs_last_error_message`]. Arrays are caller-allocated and
//! passed with their length, which is checked against the handle.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use fracsym::elliptic::{solve_nonlinear, Nonlinearity};
use fracsym::fraclap::{assemble_restricted, assemble_spectral};
use fracsym::rearrange::{concentration_report, decreasing_rearrangement, Concentration, Profile};
use fracsym::spectral::eigensolve;
use fracsym::{Domain, FracError, OperatorMatrix, ScalarField, Shape};

/// Status returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Hypothesis = 4,
    HashMismatch = 5,
    Malformed = 6,
    Io = 7,
    LengthMismatch = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsOperatorKind {
    Restricted = 0,
    Spectral = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsConcentration {
    Less = 0,
    Greater = 1,
    Equal = 2,
    Incomparable = 3,
}

/// Lattice domain.
pub struct FsDomain {
    inner: Arc<Domain>,
}

/// Assembled operator matrix.
pub struct FsOperator {
    inner: OperatorMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &FracError) -> FsStatus {
    match e {
        FracError::InvalidInput(_) => FsStatus::InvalidInput,
        FracError::Numerical(_) => FsStatus::Numerical,
        FracError::Hypothesis(_) => FsStatus::Hypothesis,
        FracError::HashMismatch { .. } => FsStatus::HashMismatch,
        FracError::Malformed(_) | FracError::Json(_) => FsStatus::Malformed,
        FracError::SuiteFailure(_) => FsStatus::Hypothesis,
        FracError::Io(_) => FsStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Length { what: &'static str, expected: usize, found: usize },
    Lib(FracError),
}

impl From<FracError> for Failure {
    fn from(e: FracError) -> Self {
        Failure::Lib(e)
    }
}

type Ffi<T> = Result<T, Failure>;

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Ffi<()>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FsStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            FsStatus::NullPointer
        }
        Ok(Err(Failure::Length { what, expected, found })) => {
            set_error(format!("{what}: expected length {expected}, got {found}"));
            FsStatus::LengthMismatch
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            FsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Ffi<&'a T> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Ffi<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| FracError::InvalidInput(format!("{what} is not valid UTF-8")).into())
}

unsafe fn input<'a>(p: *const f64, len: usize, expected: usize, what: &'static str) -> Ffi<&'a [f64]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    if len != expected {
        return Err(Failure::Length { what, expected, found: len });
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn output<'a>(p: *mut f64, len: usize, expected: usize, what: &'static str) -> Ffi<&'a mut [f64]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    if len != expected {
        return Err(Failure::Length { what, expected, found: len });
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Ffi<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Copies the last error message of the calling thread into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes, excluding the terminator. `buf` may be null to query the
/// length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a domain from a shape description such as `"disk:1"` or
/// `"union-intervals:0,1,2,3"` with `resolution` cells across its longest side.
///
/// # Safety
/// `shape` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_from_shape(
    shape: *const c_char,
    resolution: usize,
    out: *mut *mut FsDomain,
) -> FsStatus {
    guard(|| {
        let desc = unsafe { c_str(shape, "shape") }?;
        let d = Shape::parse(desc)?.build(resolution)?;
        unsafe { store(out, FsDomain { inner: Arc::new(d) }) }
    })
}

/// Parses a domain from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_from_json(json: *const c_char, out: *mut *mut FsDomain) -> FsStatus {
    guard(|| {
        let text = unsafe { c_str(json, "json") }?;
        let d = Domain::from_json(text)?;
        unsafe { store(out, FsDomain { inner: Arc::new(d) }) }
    })
}

/// Schwarz ball of `d` at the same spacing.
///
/// # Safety
/// `d` must be a live domain handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_schwarz_ball(d: *const FsDomain, out: *mut *mut FsDomain) -> FsStatus {
    guard(|| {
        let d = unsafe { deref(d, "domain") }?;
        unsafe { store(out, FsDomain { inner: Arc::new(d.inner.schwarz_ball()) }) }
    })
}

/// Number of active cells, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live domain handle.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_len(d: *const FsDomain) -> usize {
    unsafe { d.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Spatial dimension (1 or 2), or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live domain handle.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_dim(d: *const FsDomain) -> usize {
    unsafe { d.as_ref() }.map_or(0, |d| d.inner.dim())
}

/// Measure of one cell, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live domain handle.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_cell_measure(d: *const FsDomain) -> f64 {
    unsafe { d.as_ref() }.map_or(0.0, |d| d.inner.cell_measure())
}

/// Writes the cell centers as interleaved `(x, y)` pairs; `len` must be
/// `2 * fs_domain_len(d)`. In 1D every `y` is zero.
///
/// # Safety
/// `d` must be a live domain handle and `xy` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_centers(d: *const FsDomain, xy: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let d = unsafe { deref(d, "domain") }?;
        let out = unsafe { output(xy, len, 2 * d.inner.len(), "xy") }?;
        for (chunk, c) in out.chunks_exact_mut(2).zip(d.inner.centers()) {
            chunk.copy_from_slice(c);
        }
        Ok(())
    })
}

/// Short content hash identifying the domain, written NUL-terminated into
/// `buf`. Returns the hash length (16).
///
/// # Safety
/// `d` must be null or a live domain handle; `buf` null or `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_hash(d: *const FsDomain, buf: *mut c_char, len: usize) -> usize {
    let Some(d) = (unsafe { d.as_ref() }) else { return 0 };
    let h = d.inner.hash();
    if !buf.is_null() && len > 0 {
        let n = h.len().min(len - 1);
        unsafe {
            ptr::copy_nonoverlapping(h.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
    }
    h.len()
}

/// Releases a domain. Null is ignored.
///
/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_domain_free(d: *mut FsDomain) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Assembles the restricted or spectral operator of order `sigma` on `d`.
///
/// # Safety
/// `d` must be a live domain handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_assemble(
    d: *const FsDomain,
    sigma: f64,
    kind: FsOperatorKind,
    out: *mut *mut FsOperator,
) -> FsStatus {
    guard(|| {
        let d = unsafe { deref(d, "domain") }?;
        let a = match kind {
            FsOperatorKind::Restricted => assemble_restricted(&d.inner, sigma)?,
            FsOperatorKind::Spectral => assemble_spectral(&d.inner, sigma)?,
        };
        unsafe { store(out, FsOperator { inner: a }) }
    })
}

/// Matrix dimension, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live operator handle.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_len(a: *const FsOperator) -> usize {
    unsafe { a.as_ref() }.map_or(0, |a| a.inner.len())
}

/// Copies the matrix in row-major order; `len` must be `n * n`.
///
/// # Safety
/// `a` must be a live operator handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_matrix(a: *const FsOperator, out: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let a = unsafe { deref(a, "operator") }?;
        let n = a.inner.len();
        let out = unsafe { output(out, len, n * n, "out") }?;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = a.inner.matrix()[(i, j)];
            }
        }
        Ok(())
    })
}

/// Exterior killing coefficients `T_i` (row sums of the matrix); `len` must be `n`.
///
/// # Safety
/// `a` must be a live operator handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_killing(a: *const FsOperator, out: *mut f64, len: usize) -> FsStatus {
    guard(|| {
        let a = unsafe { deref(a, "operator") }?;
        let out = unsafe { output(out, len, a.inner.len(), "out") }?;
        out.copy_from_slice(a.inner.killing());
        Ok(())
    })
}

/// `out = A u`; both arrays have length `n`.
///
/// # Safety
/// `a` must be a live operator handle; `u` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_apply(
    a: *const FsOperator,
    u: *const f64,
    out: *mut f64,
    len: usize,
) -> FsStatus {
    guard(|| {
        let a = unsafe { deref(a, "operator") }?;
        let n = a.inner.len();
        let u = unsafe { input(u, len, n, "u") }?;
        let y = a.inner.apply(u);
        unsafe { output(out, len, n, "out") }?.copy_from_slice(&y);
        Ok(())
    })
}

/// Releases an operator. Null is ignored.
///
/// # Safety
/// `a` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fs_operator_free(a: *mut FsOperator) {
    if !a.is_null() {
        drop(unsafe { Box::from_raw(a) });
    }
}

/// Smallest `k` eigenvalues in increasing order. When `psi1` is not null it
/// receives the first eigenfunction (nonnegative, L²-normalized), which must
/// have room for `n` doubles.
///
/// # Safety
/// `a` must be a live operator handle, `lambda` point to `k` writable doubles
/// and `psi1` be null or point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_eigensolve(a: *const FsOperator, k: usize, lambda: *mut f64, psi1: *mut f64) -> FsStatus {
    guard(|| {
        let a = unsafe { deref(a, "operator") }?;
        let res = eigensolve(&a.inner, k)?;
        unsafe { output(lambda, k, res.lambda.len(), "lambda") }?.copy_from_slice(&res.lambda);
        if !psi1.is_null() {
            let n = a.inner.len();
            unsafe { output(psi1, n, n, "psi1") }?.copy_from_slice(&res.psi1);
        }
        Ok(())
    })
}

/// Solves `A v + B(v) = f` for nonnegative `f`, with `B` given as
/// `"linear:c"`, `"saturating"` or `"power:m"`.
///
/// # Safety
/// `a` must be a live operator handle, `nonlinearity` a NUL-terminated string,
/// and `f`, `v` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_solve_elliptic(
    a: *const FsOperator,
    nonlinearity: *const c_char,
    f: *const f64,
    v: *mut f64,
    len: usize,
) -> FsStatus {
    guard(|| {
        let a = unsafe { deref(a, "operator") }?;
        let b = Nonlinearity::parse(unsafe { c_str(nonlinearity, "nonlinearity") }?)?;
        let n = a.inner.len();
        let f = ScalarField::new(a.inner.domain().clone(), unsafe { input(f, len, n, "f") }?.to_vec())?;
        let sol = solve_nonlinear(&a.inner, &b, &f, 1.0)?;
        unsafe { output(v, len, n, "v") }?.copy_from_slice(sol.values());
        Ok(())
    })
}

/// Decreasing rearrangement of `|f|` on `d`: the step values of `f*`, one per
/// cell, each of width `fs_domain_cell_measure(d)`.
///
/// # Safety
/// `d` must be a live domain handle; `f` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_decreasing_rearrangement(
    d: *const FsDomain,
    f: *const f64,
    out: *mut f64,
    len: usize,
) -> FsStatus {
    guard(|| {
        let d = unsafe { deref(d, "domain") }?;
        let n = d.inner.len();
        let f = ScalarField::new(d.inner.clone(), unsafe { input(f, len, n, "f") }?.to_vec())?;
        let p = decreasing_rearrangement(&f);
        unsafe { output(out, len, n, "out") }?.copy_from_slice(p.values());
        Ok(())
    })
}

/// Mass-concentration comparison of two step profiles `f*` (length `nf`,
/// step width `wf`) and `g*` (length `ng`, step width `wg`) with tolerance
/// `tol`; the verdict `LESS` means `f ≺ g`.
///
/// # Safety
/// `f` and `g` must hold `nf` and `ng` doubles; `verdict` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fs_concentration_compare(
    f: *const f64,
    nf: usize,
    wf: f64,
    g: *const f64,
    ng: usize,
    wg: f64,
    tol: f64,
    verdict: *mut FsConcentration,
) -> FsStatus {
    guard(|| {
        let f = Profile::uniform(unsafe { input(f, nf, nf, "f") }?.to_vec(), wf)?;
        let g = Profile::uniform(unsafe { input(g, ng, ng, "g") }?.to_vec(), wg)?;
        let rep = concentration_report(&f, &g, tol)?;
        if verdict.is_null() {
            return Err(Failure::Null("verdict"));
        }
        let v = match rep.verdict {
            Concentration::Less => FsConcentration::Less,
            Concentration::Greater => FsConcentration::Greater,
            Concentration::Equal => FsConcentration::Equal,
            Concentration::Incomparable => FsConcentration::Incomparable,
        };
        unsafe { *verdict = v };
        Ok(())
    })
}
