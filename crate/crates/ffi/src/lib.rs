//! C ABI over `zresid-core`.
//!
//! Objects are opaque handles created by `zr_*` constructors and released
//! with the matching `*_free`. Every fallible call returns a [`ZrStatus`];
//! on failure [`zr_last_error_message`] describes the error for the calling
//! thread. Missing residuals are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use zresid::crossval::{cv_predict, plan_for};
use zresid::diagnostics::shapiro_wilk;
use zresid::residuals::{predict_nocv, ResidualSet};
use zresid::survdata::{kidney_dataset, load_csv, ColumnMap};
use zresid::{rng, CovariateSchema, Error, FitOptions, FrailtyFit, Regime, SurvivalDataset, ThetaMode};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NotConverged = 3,
    Io = 4,
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZrThetaMode {
    /// Maximize the profile marginal likelihood over theta.
    Profile = 0,
    /// Ordinary Cox model.
    None = 1,
    /// Fixed theta given separately.
    Fixed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZrRegime {
    NoCv = 0,
    KFold = 1,
    Loocv = 2,
}

/// Opaque survival dataset.
pub struct ZrDataset(SurvivalDataset);

/// Opaque fitted frailty model.
pub struct ZrFit(FrailtyFit);

/// Opaque residual set.
pub struct ZrResiduals(ResidualSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> ZrStatus {
    match e {
        Error::NotConverged { .. } => ZrStatus::NotConverged,
        Error::Io { .. } => ZrStatus::Io,
        _ => ZrStatus::InvalidInput,
    }
}

/// Run `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (ZrStatus, String)>) -> ZrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ZrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ZrStatus::Internal
        }
    }
}

fn lib(e: Error) -> (ZrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ZrStatus, String) {
    (ZrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (ZrStatus, String) {
    (ZrStatus::InvalidInput, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ZrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn str_list<'a>(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<&'a str>, (ZrStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts(p, n).iter().map(|&s| str_arg(s, what)).collect()
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), (ZrStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn theta_mode(mode: ZrThetaMode, theta: f64) -> Result<ThetaMode, (ZrStatus, String)> {
    match mode {
        ZrThetaMode::Profile => Ok(ThetaMode::Profile),
        ZrThetaMode::None => Ok(ThetaMode::None),
        ZrThetaMode::Fixed if theta.is_finite() && theta >= 0.0 => Ok(ThetaMode::Fixed(theta)),
        ZrThetaMode::Fixed => Err(invalid(format!("fixed theta must be finite and non-negative, got {theta}"))),
    }
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn zr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zr_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Embedded kidney infection dataset.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_kidney(out: *mut *mut ZrDataset) -> ZrStatus {
    guard(|| out_ptr(out, ZrDataset(kidney_dataset())))
}

/// Load a CSV file. `numeric` lists numeric covariate columns;
/// `categorical` lists categorical covariates as `NAME=REF,LEVEL,...` with the
/// reference level first.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; the arrays must
/// hold the stated number of such strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_load_csv(
    path: *const c_char,
    time_col: *const c_char,
    status_col: *const c_char,
    cluster_col: *const c_char,
    numeric: *const *const c_char,
    n_numeric: usize,
    categorical: *const *const c_char,
    n_categorical: usize,
    out: *mut *mut ZrDataset,
) -> ZrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let map = ColumnMap::new(
            str_arg(time_col, "time column")?,
            str_arg(status_col, "status column")?,
            str_arg(cluster_col, "cluster column")?,
        );
        let mut schema = CovariateSchema::new();
        for name in str_list(numeric, n_numeric, "numeric covariate")? {
            schema = schema.numeric(name);
        }
        for spec in str_list(categorical, n_categorical, "categorical covariate")? {
            let (name, levels) = spec
                .split_once('=')
                .ok_or_else(|| invalid(format!("categorical '{spec}' is not NAME=REF,LEVEL,...")))?;
            let levels: Vec<&str> = levels.split(',').map(str::trim).collect();
            let reference = levels[0].to_owned();
            schema = schema.categorical(name.trim(), levels, Some(&reference));
        }
        let data = load_csv(Path::new(path), &schema, &map).map_err(lib)?;
        out_ptr(out, ZrDataset(data))
    })
}

/// Copy of `data` without the given row ids.
///
/// # Safety
/// `data` must be a live handle, `rows` must hold `n_rows` values, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_without_rows(
    data: *const ZrDataset,
    rows: *const usize,
    n_rows: usize,
    out: *mut *mut ZrDataset,
) -> ZrStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("dataset"))?;
        let rows = if n_rows == 0 {
            &[][..]
        } else if rows.is_null() {
            return Err(null("rows"));
        } else {
            std::slice::from_raw_parts(rows, n_rows)
        };
        out_ptr(out, ZrDataset(data.0.without_rows(rows).map_err(lib)?))
    })
}

/// # Safety
/// `data` must be null or a handle from a `zr_dataset_*` constructor that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_free(data: *mut ZrDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of observations; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_n(data: *const ZrDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_events(data: *const ZrDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.events())
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_dataset_clusters(data: *const ZrDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.g())
}

/// Fit the shared gamma frailty model. `theta` is used only with
/// `ZrThetaMode::Fixed`.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zr_fit(
    data: *const ZrDataset,
    mode: ZrThetaMode,
    theta: f64,
    out: *mut *mut ZrFit,
) -> ZrStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("dataset"))?;
        let f = zresid::fit(&data.0, theta_mode(mode, theta)?).map_err(lib)?;
        if !f.converged {
            return Err((ZrStatus::NotConverged, format!("fit did not converge after {} iterations", f.iterations)));
        }
        out_ptr(out, ZrFit(f))
    })
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_free(fit: *mut ZrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of coefficients; 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_n_coef(fit: *const ZrFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.beta.len())
}

/// Frailty variance; NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_theta(fit: *const ZrFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.theta)
}

/// Copy coefficients and standard errors into arrays of length `len`, which
/// must equal `zr_fit_n_coef`. Either output may be null.
///
/// # Safety
/// Non-null outputs must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_coef(fit: *const ZrFit, beta: *mut f64, se: *mut f64, len: usize) -> ZrStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        if len != f.beta.len() {
            return Err(invalid(format!("expected {} coefficients, buffer holds {len}", f.beta.len())));
        }
        if !beta.is_null() {
            ptr::copy_nonoverlapping(f.beta.as_ptr(), beta, len);
        }
        if !se.is_null() {
            ptr::copy_nonoverlapping(f.se.as_ptr(), se, len);
        }
        Ok(())
    })
}

/// Write coefficient `i`'s name as a NUL-terminated string into `buf` of
/// `len` bytes. `*needed`, when non-null, receives the required size
/// including the terminator.
///
/// # Safety
/// `buf` must be null or have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_coef_name(
    fit: *const ZrFit,
    i: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> ZrStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        let name = f.covariate_names.get(i).ok_or_else(|| invalid(format!("coefficient index {i} out of range")))?;
        let bytes = name.as_bytes();
        if !needed.is_null() {
            *needed = bytes.len() + 1;
        }
        if buf.is_null() || len < bytes.len() + 1 {
            return Err(invalid("name buffer too small"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// Predicted survival probability at time `t` for expanded covariate row `x`
/// (length `zr_fit_n_coef`) in cluster `cluster`.
///
/// # Safety
/// `x` must hold `p` doubles, `cluster` must be a NUL-terminated string, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zr_fit_predict_survival(
    fit: *const ZrFit,
    x: *const f64,
    p: usize,
    cluster: *const c_char,
    t: f64,
    out: *mut f64,
) -> ZrStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if p != f.beta.len() {
            return Err(invalid(format!("expected {} covariate values, got {p}", f.beta.len())));
        }
        let x = if p == 0 {
            &[][..]
        } else if x.is_null() {
            return Err(null("x"));
        } else {
            std::slice::from_raw_parts(x, p)
        };
        *out = f.predict_survival(x, str_arg(cluster, "cluster")?, t).map_err(lib)?;
        Ok(())
    })
}

/// Z-residuals under the given regime. Fold and randomization seeds are
/// derived from `seed` exactly as the `zresid` command line does, so both
/// produce identical residuals. `k` is used only with `ZrRegime::KFold`.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals(
    data: *const ZrDataset,
    regime: ZrRegime,
    k: usize,
    seed: u64,
    mode: ZrThetaMode,
    theta: f64,
    out: *mut *mut ZrResiduals,
) -> ZrStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("dataset"))?.0;
        let mode = theta_mode(mode, theta)?;
        let regime = match regime {
            ZrRegime::NoCv => Regime::NoCV,
            ZrRegime::KFold => Regime::KFold(k),
            ZrRegime::Loocv => Regime::LOOCV,
        };
        let fold_seed = rng::derive(seed, 1, 0);
        let residual_seed = rng::derive(seed, 2, 0);
        let pred = match plan_for(data, regime, fold_seed).map_err(lib)? {
            None => {
                let f = zresid::fit(data, mode).map_err(lib)?;
                if !f.converged {
                    return Err((ZrStatus::NotConverged, "full-data fit did not converge".into()));
                }
                predict_nocv(&f, data).map_err(lib)?
            }
            Some(plan) => cv_predict(data, &plan, mode, &FitOptions::default()).map_err(lib)?,
        };
        out_ptr(out, ZrResiduals(pred.randomize(residual_seed)))
    })
}

/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_free(res: *mut ZrResiduals) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of observations (including NA); 0 for a null handle.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_len(res: *const ZrResiduals) -> usize {
    res.as_ref().map_or(0, |r| r.0.len())
}

unsafe fn copy_column(
    res: *const ZrResiduals,
    out: *mut f64,
    len: usize,
    col: impl Fn(&ResidualSet) -> Vec<f64>,
) -> ZrStatus {
    guard(|| {
        let r = &res.as_ref().ok_or_else(|| null("residuals"))?.0;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len != r.len() {
            return Err(invalid(format!("expected buffer of {} values, got {len}", r.len())));
        }
        let values = col(r);
        ptr::copy_nonoverlapping(values.as_ptr(), out, len);
        Ok(())
    })
}

fn nan_fill(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().map(|x| x.unwrap_or(f64::NAN)).collect()
}

/// Z-residuals in row order, NaN where not available.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_z(res: *const ZrResiduals, out: *mut f64, len: usize) -> ZrStatus {
    copy_column(res, out, len, |r| nan_fill(&r.z))
}

/// Randomized survival probabilities, NaN where not available.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_rsp(res: *const ZrResiduals, out: *mut f64, len: usize) -> ZrStatus {
    copy_column(res, out, len, |r| nan_fill(&r.rsp))
}

/// Cox-Snell residuals, NaN where not available.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_cs(res: *const ZrResiduals, out: *mut f64, len: usize) -> ZrStatus {
    copy_column(res, out, len, |r| nan_fill(&r.cs))
}

/// Original row ids.
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn zr_residuals_row_ids(res: *const ZrResiduals, out: *mut usize, len: usize) -> ZrStatus {
    guard(|| {
        let r = &res.as_ref().ok_or_else(|| null("residuals"))?.0;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len != r.len() {
            return Err(invalid(format!("expected buffer of {} values, got {len}", r.len())));
        }
        ptr::copy_nonoverlapping(r.row_ids.as_ptr(), out, len);
        Ok(())
    })
}

/// Shapiro-Wilk W and p-value for `n` values.
///
/// # Safety
/// `x` must hold `n` doubles; `w` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zr_shapiro_wilk(x: *const f64, n: usize, w: *mut f64, p: *mut f64) -> ZrStatus {
    guard(|| {
        if x.is_null() || w.is_null() || p.is_null() {
            return Err(null("argument"));
        }
        let (stat, pv) = shapiro_wilk(std::slice::from_raw_parts(x, n)).map_err(lib)?;
        *w = stat;
        *p = pv;
        Ok(())
    })
}
