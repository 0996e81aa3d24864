//! C ABI over the `uncreg` library.
//!
//! Every function returns an [`UncregStatus`]. On failure a description is
//! kept per thread and can be read with [`uncreg_last_error_message`].
//! Objects are opaque handles created by `*_read` / `*_fit_*` functions and
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uncreg::demons::{demons_fit, DemonsMode, NonParamPosterior, SmoothingKernel, VarianceFormula};
use uncreg::grid::MeanStdField;
use uncreg::wls::{coefficient_variance, fit_unweighted, fit_weighted, sample_fields, NoiseModel, TransformPosterior};
use uncreg::{affine_basis, bspline_basis, io, DesignMatrix, Error};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Per-voxel predicted coordinates with their standard deviations.
pub struct UncregField {
    inner: MeanStdField,
}

/// Fitted transformation posterior together with its design matrix.
pub struct UncregPosterior {
    posterior: TransformPosterior,
    phi: DesignMatrix,
}

/// Smoothed nonparametric posterior.
pub struct UncregDemons {
    inner: NonParamPosterior,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> UncregStatus {
    match e {
        Error::Io { .. } => UncregStatus::Io,
        Error::BadMagic(_)
        | Error::UnsupportedDatatype(_)
        | Error::BigEndian
        | Error::NonAxisAlignedSform
        | Error::MissingSform
        | Error::NonzeroRescale { .. }
        | Error::InvalidHeader(_)
        | Error::TruncatedPayload { .. } => UncregStatus::Format,
        Error::Factorization { .. } | Error::DegenerateVariance => UncregStatus::Numerical,
        _ => UncregStatus::InvalidArgument,
    }
}

struct Failure(UncregStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(UncregStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UncregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UncregStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            UncregStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(UncregStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn epsilon_arg(eps: f64) -> Result<Option<f64>, Failure> {
    if eps.is_nan() {
        Ok(None)
    } else if eps >= 0.0 && eps.is_finite() {
        Ok(Some(eps))
    } else {
        Err(Failure(
            UncregStatus::InvalidArgument,
            format!("epsilon must be >= 0 or NaN, got {eps}"),
        ))
    }
}

fn direction_arg(direction: u32) -> Result<usize, Failure> {
    if direction < 3 {
        Ok(direction as usize)
    } else {
        Err(Failure(
            UncregStatus::InvalidArgument,
            format!("direction must be 0, 1 or 2, got {direction}"),
        ))
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn uncreg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uncreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a mean/std field (`.uaf` with mask companion, or `.nii`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uncreg_field_read(path: *const c_char, out: *mut *mut UncregField) -> UncregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        store(
            out,
            UncregField {
                inner: io::read_mean_std_field(path)?,
            },
        );
        Ok(())
    })
}

/// Number of foreground voxels.
///
/// # Safety
/// `field` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uncreg_field_masked_voxels(field: *const UncregField) -> usize {
    field.as_ref().map_or(0, |f| f.inner.mask.count())
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uncreg_field_free(field: *mut UncregField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

fn fit(field: &MeanStdField, phi: DesignMatrix, weighted: bool, eps: Option<f64>) -> Result<UncregPosterior, Failure> {
    let posterior = if weighted {
        fit_weighted(field, &phi, eps)?
    } else {
        fit_unweighted(field, &phi, eps)?
    };
    Ok(UncregPosterior { posterior, phi })
}

/// Affine fit. Pass NaN as `epsilon` for the default ridge.
///
/// # Safety
/// `field` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uncreg_fit_affine(
    field: *const UncregField,
    weighted: bool,
    epsilon: f64,
    out: *mut *mut UncregPosterior,
) -> UncregStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let eps = epsilon_arg(epsilon)?;
        let phi = affine_basis(&f.grid, &f.mask)?;
        store(out, fit(f, phi, weighted, eps)?);
        Ok(())
    })
}

/// Cubic B-spline fit with control-point spacing in mm.
///
/// # Safety
/// `field` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uncreg_fit_bspline(
    field: *const UncregField,
    spacing_mm: f64,
    weighted: bool,
    epsilon: f64,
    out: *mut *mut UncregPosterior,
) -> UncregStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let eps = epsilon_arg(epsilon)?;
        let (phi, _) = bspline_basis(&f.grid, &f.mask, spacing_mm)?;
        store(out, fit(f, phi, weighted, eps)?);
        Ok(())
    })
}

/// Reads a posterior file; the design matrix is rebuilt on `field`'s mask.
///
/// # Safety
/// `path` must be a NUL-terminated string, `field` a live handle and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_read(
    path: *const c_char,
    field: *const UncregField,
    out: *mut *mut UncregPosterior,
) -> UncregStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let posterior = io::read_posterior(path_arg(path, "path")?)?;
        let phi = posterior.basis.build(&f.grid, &f.mask)?;
        store(out, UncregPosterior { posterior, phi });
        Ok(())
    })
}

/// # Safety
/// `posterior` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_write(
    posterior: *const UncregPosterior,
    path: *const c_char,
) -> UncregStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        io::write_posterior(path_arg(path, "path")?, &p.posterior)?;
        Ok(())
    })
}

/// Number of coefficients B per direction.
///
/// # Safety
/// `posterior` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_num_coefficients(posterior: *const UncregPosterior) -> usize {
    posterior.as_ref().map_or(0, |p| p.posterior.columns)
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            UncregStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copies the coefficient means of one direction (0, 1 or 2) into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_coef_mean(
    posterior: *const UncregPosterior,
    direction: u32,
    buf: *mut f64,
    len: usize,
) -> UncregStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        copy_out(p.posterior.coef_mean(direction_arg(direction)?), buf, len)
    })
}

/// Copies the coefficient variances of one direction into `buf`. Columns
/// without support in the mask report +infinity.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_coef_variance(
    posterior: *const UncregPosterior,
    direction: u32,
    buf: *mut f64,
    len: usize,
) -> UncregStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        let j = direction_arg(direction)?;
        copy_out(&coefficient_variance(&p.posterior)[j], buf, len)
    })
}

/// Draws `count` transformation samples and writes them as one
/// 3·count-channel volume.
///
/// # Safety
/// Handles must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uncreg_sample_to_file(
    posterior: *const UncregPosterior,
    field: *const UncregField,
    count: usize,
    seed: u64,
    path: *const c_char,
) -> UncregStatus {
    guard(|| {
        let p = handle(posterior, "posterior")?;
        let f = &handle(field, "field")?.inner;
        let path = path_arg(path, "path")?;
        let samples = sample_fields(&p.posterior, &p.phi, f, count, seed, NoiseModel::StdScaled)?;
        io::write_samples(path, &samples, &f.mask)?;
        Ok(())
    })
}

/// # Safety
/// `posterior` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uncreg_posterior_free(posterior: *mut UncregPosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Gaussian smoothing of the field with variance propagation. `precision`
/// selects σ⁻²-weighted normalized convolution.
///
/// # Safety
/// `field` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uncreg_demons_fit(
    field: *const UncregField,
    kernel_sigma_mm: f64,
    precision: bool,
    out: *mut *mut UncregDemons,
) -> UncregStatus {
    guard(|| {
        let f = &handle(field, "field")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let kernel = SmoothingKernel::gaussian(kernel_sigma_mm, 3.0)?;
        let mode = if precision {
            DemonsMode::Precision
        } else {
            DemonsMode::Plain
        };
        let inner = demons_fit(f, &kernel, mode, VarianceFormula::SelfConsistent)?;
        store(out, UncregDemons { inner });
        Ok(())
    })
}

/// Writes the smoothed posterior under `prefix` (mean, variance, mask and
/// metadata files).
///
/// # Safety
/// `demons` must be a live handle and `prefix` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uncreg_demons_write(demons: *const UncregDemons, prefix: *const c_char) -> UncregStatus {
    guard(|| {
        let d = handle(demons, "demons")?;
        io::write_nonparam(path_arg(prefix, "prefix")?, &d.inner)?;
        Ok(())
    })
}

/// # Safety
/// `demons` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uncreg_demons_free(demons: *mut UncregDemons) {
    if !demons.is_null() {
        drop(Box::from_raw(demons));
    }
}
