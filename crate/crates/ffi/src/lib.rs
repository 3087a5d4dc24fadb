//! C ABI over `sparsity_bhm`.
//!
//! Objects cross the boundary as opaque handles created by `sb_*` constructors
//! and released with the matching `sb_*_free`. Fallible calls return an
//! [`SbStatus`]; the message of the last failure on the calling thread is
//! available from [`sb_last_error`]. Panics are caught and reported as
//! `SB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sparsity_bhm::estimator::abs_diff_percent;
use sparsity_bhm::imagio::{generate_phantom, load_image, GrayImage, ImageFormat, PhantomSpec};
use sparsity_bhm::inference::{
    fit_empirical_bayes, fit_fixed, EbOptions, FitOptions, Hyperparams, LaplaceFit, PriorSpec,
};
use sparsity_bhm::wavelet::{
    dwt2, estimate_noise_sigma, hard_threshold, universal_threshold, SigmaBand, SparseCoeffImage,
};
use sparsity_bhm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    NonConvergence = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbSigmaBand {
    Pooled = 0,
    Dd1 = 1,
}

/// Field range, variance and IID precision.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbTheta {
    pub kappa: f64,
    pub sigma2: f64,
    pub tau_iid: f64,
}

/// Grayscale image.
pub struct SbImage(GrayImage);

/// Thresholded coefficient lattice and its indicator.
pub struct SbSparse {
    sci: SparseCoeffImage,
    sigma_hat: f64,
}

/// Posterior fit of one indicator lattice.
pub struct SbFit {
    fit: LaplaceFit,
    estimate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SbStatus {
    match e {
        Error::Parse(_) | Error::Json(_) => SbStatus::Parse,
        Error::Io { .. } => SbStatus::Io,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => SbStatus::InvalidArgument,
        Error::NonConvergence { .. } | Error::SearchFailed(_) => SbStatus::NonConvergence,
        Error::NotPositiveDefinite { .. } => SbStatus::Numerical,
    }
}

struct Failure {
    status: SbStatus,
    msg: String,
}

impl Failure {
    fn new(status: SbStatus, msg: impl Into<String>) -> Self {
        Self {
            status,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure::new(SbStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SbStatus::Ok
        }
        Ok(Err(f)) => {
            set_error(&f.msg);
            f.status
        }
        Err(_) => {
            set_error("internal panic");
            SbStatus::Panic
        }
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn reset<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = ptr::null_mut();
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a PGM (by `.pgm` extension) or a CSV matrix.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_image_load(path: *const c_char, out: *mut *mut SbImage) -> SbStatus {
    guard(|| {
        reset(out)?;
        if path.is_null() {
            return Err(null("path"));
        }
        let s = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::new(SbStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let p = Path::new(s);
        let img = load_image(p, ImageFormat::from_path(p))?;
        put(out, SbImage(img));
        Ok(())
    })
}

/// Copies `n1 * n2` row-major values into a new image.
///
/// # Safety
/// `data` must point to `n1 * n2` readable doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn sb_image_from_data(
    data: *const f64,
    n1: usize,
    n2: usize,
    out: *mut *mut SbImage,
) -> SbStatus {
    guard(|| {
        reset(out)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let len = n1
            .checked_mul(n2)
            .ok_or_else(|| Failure::new(SbStatus::InvalidArgument, "dimensions overflow"))?;
        let v = std::slice::from_raw_parts(data, len).to_vec();
        put(out, SbImage(GrayImage::new(n1, n2, v)?));
        Ok(())
    })
}

/// Seeded Shepp-Logan phantom with Gaussian noise.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_image_phantom(
    n1: usize,
    n2: usize,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut SbImage,
) -> SbStatus {
    guard(|| {
        reset(out)?;
        let img = generate_phantom(&PhantomSpec::shepp_logan(n1, n2, noise_sigma, seed))?;
        put(out, SbImage(img));
        Ok(())
    })
}

/// Rows of the image, 0 for a null handle.
///
/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_image_rows(img: *const SbImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.n1())
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_image_cols(img: *const SbImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.n2())
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_image_free(img: *mut SbImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Three-level Haar transform and hard threshold. A null `threshold` uses
/// the universal threshold from the MAD noise estimate.
///
/// # Safety
/// `img` must be a live handle, `threshold` null or readable, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sb_sparsify(
    img: *const SbImage,
    threshold: *const f64,
    band: SbSigmaBand,
    out: *mut *mut SbSparse,
) -> SbStatus {
    guard(|| {
        reset(out)?;
        let img = img.as_ref().ok_or_else(|| null("image"))?;
        let pyr = dwt2(&img.0)?;
        let band = match band {
            SbSigmaBand::Pooled => SigmaBand::Pooled,
            SbSigmaBand::Dd1 => SigmaBand::Dd1,
        };
        let sigma_hat = estimate_noise_sigma(&pyr, band);
        let t = match threshold.as_ref() {
            Some(&t) if t >= 0.0 && t.is_finite() => t,
            Some(&t) => {
                return Err(Failure::new(
                    SbStatus::InvalidArgument,
                    format!("threshold must be finite and >= 0, got {t}"),
                ))
            }
            None => universal_threshold(sigma_hat, img.0.len()),
        };
        put(
            out,
            SbSparse {
                sci: hard_threshold(&pyr, t),
                sigma_hat,
            },
        );
        Ok(())
    })
}

/// Non-zero count `s`, 0 for a null handle.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_count(sp: *const SbSparse) -> usize {
    sp.as_ref().map_or(0, |s| s.sci.sparsity())
}

/// Pixel count `N`.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_len(sp: *const SbSparse) -> usize {
    sp.as_ref().map_or(0, |s| s.sci.n_pixels())
}

/// Threshold applied, NaN for a null handle.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_threshold(sp: *const SbSparse) -> f64 {
    sp.as_ref().map_or(f64::NAN, |s| s.sci.threshold_used())
}

/// MAD noise estimate, NaN for a null handle.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_sigma_hat(sp: *const SbSparse) -> f64 {
    sp.as_ref().map_or(f64::NAN, |s| s.sigma_hat)
}

/// Copies the 0/1 indicator into `out`, which must hold exactly `len = N` bytes.
///
/// # Safety
/// `sp` must be a live handle and `out` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_indicator(
    sp: *const SbSparse,
    out: *mut u8,
    len: usize,
) -> SbStatus {
    guard(|| {
        let sp = sp.as_ref().ok_or_else(|| null("sparse handle"))?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let src = sp.sci.indicator();
        if len != src.len() {
            return Err(Error::DimensionMismatch {
                expected: src.len(),
                got: len,
            }
            .into());
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `sp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_sparse_free(sp: *mut SbSparse) {
    if !sp.is_null() {
        drop(Box::from_raw(sp));
    }
}

/// Fits the model to the indicator with default priors. A null `theta`
/// selects hyperparameters by empirical Bayes.
///
/// # Safety
/// `sp` must be a live handle, `theta` null or readable, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sb_fit(
    sp: *const SbSparse,
    theta: *const SbTheta,
    seed: u64,
    out: *mut *mut SbFit,
) -> SbStatus {
    guard(|| {
        reset(out)?;
        let sp = sp.as_ref().ok_or_else(|| null("sparse handle"))?;
        let (n1, n2) = (sp.sci.n1(), sp.sci.n2());
        let o = sp.sci.indicator();
        let priors = PriorSpec::default();
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        let fit = match theta.as_ref() {
            Some(t) => {
                let h = Hyperparams::new(t.kappa, t.sigma2, t.tau_iid)?;
                fit_fixed(o, n1, n2, &h, &priors, &opts)?
            }
            None => fit_empirical_bayes(
                o,
                n1,
                n2,
                &priors,
                &EbOptions {
                    fit: opts,
                    ..EbOptions::default()
                },
            )?,
        };
        let estimate = fit.expected_sparsity();
        put(out, SbFit { fit, estimate });
        Ok(())
    })
}

/// `E(s)`, NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_estimate(fit: *const SbFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.estimate)
}

/// Log marginal likelihood plus log hyperprior at the fitted θ.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_log_marginal(fit: *const SbFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.log_marginal)
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_theta(fit: *const SbFit, out: *mut SbTheta) -> SbStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit handle"))?;
        let out = out.as_mut().ok_or_else(|| null("output theta"))?;
        let t = f.fit.theta_hat;
        *out = SbTheta {
            kappa: t.kappa,
            sigma2: t.sigma2_m,
            tau_iid: t.tau_iid,
        };
        Ok(())
    })
}

unsafe fn copy_field(
    fit: *const SbFit,
    out: *mut f64,
    len: usize,
    pick: fn(&SbFit) -> &[f64],
) -> SbStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit handle"))?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let src = pick(f);
        if len != src.len() {
            return Err(Error::DimensionMismatch {
                expected: src.len(),
                got: len,
            }
            .into());
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, len);
        Ok(())
    })
}

/// Copies the `N` posterior means `E(p_i|o)`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_p_mean(fit: *const SbFit, out: *mut f64, len: usize) -> SbStatus {
    copy_field(fit, out, len, |f| &f.fit.posterior.p_mean)
}

/// Copies the `N` posterior variances `Var(p_i|o)`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_p_var(fit: *const SbFit, out: *mut f64, len: usize) -> SbStatus {
    copy_field(fit, out, len, |f| &f.fit.posterior.p_var)
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_fit_free(fit: *mut SbFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// `|a − b| · 100 / n` written to `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_abs_diff_percent(a: f64, b: f64, n: usize, out: *mut f64) -> SbStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("output"))?;
        *out = abs_diff_percent(a, b, n)?;
        Ok(())
    })
}
