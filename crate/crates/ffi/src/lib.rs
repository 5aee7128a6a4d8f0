//! C ABI over `sve-core`.
//!
//! Every fallible entry point returns an [`SveStatus`]; on failure the
//! message is retrievable with [`sve_last_error_message`] on the same thread.
//! Handles are opaque, owned by the caller, and released with their `_free`
//! function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sve_core::experiments::load_checkpoint;
use sve_core::metrics::{ood_metrics, MetricsReport, OodScores};
use sve_core::models::{predict, EnsembleModel, Mode};
use sve_core::svd::{svd, SvdFactors};
use sve_core::training::eval_mode;
use sve_core::{Error, Rng, Tensor};

/// Result code of every fallible call. `SVE_STATUS_OK` is 0.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SveStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numeric = 3,
    Io = 4,
    Format = 5,
    Unsupported = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A dense SVD `w = u · diag(sigma) · vt` with `u: m×r`, `vt: r×n`.
pub struct SveSvd {
    inner: SvdFactors,
}

/// A trained model loaded from a checkpoint.
pub struct SveModel {
    model: EnsembleModel,
    mode: Mode,
}

/// Scalar classification metrics of one prediction batch.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SveMetrics {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
}

/// Detection metrics with in-distribution as the positive class.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SveOodMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub fpr_at_95_tpr: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> SveStatus {
    match e {
        Error::Dimension { .. } | Error::Index { .. } | Error::Input(_) | Error::Parse { .. } | Error::Config { .. } => SveStatus::InvalidInput,
        Error::Numeric(_) | Error::Convergence { .. } | Error::NonFiniteLoss { .. } => SveStatus::Numeric,
        Error::Io { .. } | Error::Dependency(_) => SveStatus::Io,
        Error::Format(_) | Error::Length { .. } | Error::Checksum | Error::Json(_) => SveStatus::Format,
        Error::Capability(_) => SveStatus::Unsupported,
    }
}

struct Fail(SveStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SveStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SveStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            SveStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` is null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and valid for `len` reads by the caller's contract.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

/// # Safety
/// `out` is null or valid for `cap` writes.
unsafe fn write_out(src: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail(SveStatus::BufferTooSmall, format!("buffer holds {cap} values, {} needed", src.len())));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` holds at least `src.len()` values and cannot alias `src`, which Rust owns.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Fail> {
    rows.checked_mul(cols)
        .filter(|&n| n == data.len() && n > 0)
        .ok_or_else(|| Fail(SveStatus::InvalidInput, format!("{rows}×{cols} matrix needs a non-empty buffer")))?;
    Ok(Tensor::matrix(rows, cols, data.to_vec())?)
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn sve_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sve_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Decomposes the row-major `rows × cols` matrix at `data`.
///
/// # Safety
/// `data` is valid for `rows · cols` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn sve_svd_new(data: *const f64, rows: usize, cols: usize, out: *mut *mut SveSvd) -> SveStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Fail(SveStatus::InvalidInput, "shape overflows".into()))?;
        // SAFETY: forwarded caller contract.
        let w = matrix(unsafe { slice(data, n, "data") }?, rows, cols)?;
        let h = Box::new(SveSvd { inner: svd(&w)? });
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(h) };
        Ok(())
    })
}

/// Number of singular values, `min(rows, cols)`; 0 for a null handle.
///
/// # Safety
/// `h` is null or a live handle from [`sve_svd_new`].
#[no_mangle]
pub unsafe extern "C" fn sve_svd_rank(h: *const SveSvd) -> usize {
    // SAFETY: caller contract.
    unsafe { h.as_ref() }.map_or(0, |h| h.inner.rank_dim())
}

/// Copies the descending singular values into `out[0..rank]`.
///
/// # Safety
/// `h` is a live handle; `out` is valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn sve_svd_sigma(h: *const SveSvd, out: *mut f64, cap: usize) -> SveStatus {
    // SAFETY: caller contract.
    guard(|| unsafe { write_out(&h.as_ref().ok_or_else(|| null("handle"))?.inner.sigma, out, cap) })
}

/// Copies row-major `u` (`rows × rank`) into `out`.
///
/// # Safety
/// `h` is a live handle; `out` is valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn sve_svd_u(h: *const SveSvd, out: *mut f64, cap: usize) -> SveStatus {
    // SAFETY: caller contract.
    guard(|| unsafe { write_out(h.as_ref().ok_or_else(|| null("handle"))?.inner.u.data(), out, cap) })
}

/// Copies row-major `vt` (`rank × cols`) into `out`.
///
/// # Safety
/// `h` is a live handle; `out` is valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn sve_svd_vt(h: *const SveSvd, out: *mut f64, cap: usize) -> SveStatus {
    // SAFETY: caller contract.
    guard(|| unsafe { write_out(h.as_ref().ok_or_else(|| null("handle"))?.inner.vt.data(), out, cap) })
}

/// Releases an SVD handle; null is a no-op.
///
/// # Safety
/// `h` is null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sve_svd_free(h: *mut SveSvd) {
    if !h.is_null() {
        // SAFETY: `h` came from `Box::into_raw` in `sve_svd_new`.
        drop(unsafe { Box::from_raw(h) });
    }
}

/// Loads a checkpoint written by the `sve` CLI. The prediction mode
/// (plain or MC dropout) follows the training config stored with it.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn sve_model_load(path: *const c_char, out: *mut *mut SveModel) -> SveStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees a NUL-terminated string.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Fail(SveStatus::InvalidInput, "path is not UTF-8".into()))?;
        let (model, header) = load_checkpoint(Path::new(path))?;
        let mode = header.train_config.as_ref().map(eval_mode).unwrap_or(Mode::Eval);
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(SveModel { model, mode })) };
        Ok(())
    })
}

/// Input feature count; 0 for a null handle.
///
/// # Safety
/// `h` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sve_model_input_dim(h: *const SveModel) -> usize {
    // SAFETY: caller contract.
    unsafe { h.as_ref() }.map_or(0, |h| h.model.spec.input_dim())
}

/// Class count; 0 for a null handle.
///
/// # Safety
/// `h` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sve_model_n_classes(h: *const SveModel) -> usize {
    // SAFETY: caller contract.
    unsafe { h.as_ref() }.map_or(0, |h| h.model.spec.n_classes)
}

/// Ensemble member count; 0 for a null handle.
///
/// # Safety
/// `h` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sve_model_n_members(h: *const SveModel) -> usize {
    // SAFETY: caller contract.
    unsafe { h.as_ref() }.map_or(0, |h| h.model.n_members())
}

/// Writes the row-major `rows × n_classes` ensemble-mean probabilities of
/// the row-major `rows × input_dim` batch `x`. `seed` only matters for MC
/// dropout models; equal seeds give bit-identical output.
///
/// # Safety
/// `h` is a live model handle, `x` valid for `rows · cols` reads and `out`
/// for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn sve_model_predict(h: *const SveModel, x: *const f64, rows: usize, cols: usize, seed: u64, out: *mut f64, cap: usize) -> SveStatus {
    guard(|| {
        // SAFETY: caller contract.
        let h = unsafe { h.as_ref() }.ok_or_else(|| null("handle"))?;
        let n = rows.checked_mul(cols).ok_or_else(|| Fail(SveStatus::InvalidInput, "shape overflows".into()))?;
        // SAFETY: caller contract.
        let x = matrix(unsafe { slice(x, n, "x") }?, rows, cols)?;
        let p = predict(&h.model, &x, h.mode, &Rng::seed_from_u64(seed).split("predict"))?;
        // SAFETY: caller contract.
        unsafe { write_out(p.mean_probs.data(), out, cap) }
    })
}

/// Releases a model handle; null is a no-op.
///
/// # Safety
/// `h` is null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sve_model_free(h: *mut SveModel) {
    if !h.is_null() {
        // SAFETY: `h` came from `Box::into_raw` in `sve_model_load`.
        drop(unsafe { Box::from_raw(h) });
    }
}

/// Accuracy, 15-bin ECE, NLL and Brier score of row-major `rows × cols`
/// probabilities against `labels[0..rows]`.
///
/// # Safety
/// `probs` is valid for `rows · cols` reads, `labels` for `rows` reads and
/// `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn sve_metrics_compute(probs: *const f64, rows: usize, cols: usize, labels: *const usize, out: *mut SveMetrics) -> SveStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Fail(SveStatus::InvalidInput, "shape overflows".into()))?;
        // SAFETY: caller contract.
        let p = matrix(unsafe { slice(probs, n, "probs") }?, rows, cols)?;
        // SAFETY: caller contract.
        let y = unsafe { slice(labels, rows, "labels") }?;
        let r = MetricsReport::compute(&p, y)?;
        // SAFETY: `out` is non-null and writable.
        unsafe {
            *out = SveMetrics {
                accuracy: r.accuracy,
                ece: r.ece,
                nll: r.nll,
                brier: r.brier,
            }
        };
        Ok(())
    })
}

/// AUROC, AUPRC and FPR at 95% TPR for confidence scores, with higher
/// scores meaning more in-distribution.
///
/// # Safety
/// `in_dist` is valid for `n_in` reads, `ood` for `n_ood` reads and `out`
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn sve_ood_metrics(in_dist: *const f64, n_in: usize, ood: *const f64, n_ood: usize, out: *mut SveOodMetrics) -> SveStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scores = OodScores {
            // SAFETY: caller contract.
            in_dist: unsafe { slice(in_dist, n_in, "in_dist") }?.to_vec(),
            // SAFETY: caller contract.
            ood: unsafe { slice(ood, n_ood, "ood") }?.to_vec(),
        };
        let m = ood_metrics(&scores)?;
        // SAFETY: `out` is non-null and writable.
        unsafe {
            *out = SveOodMetrics {
                auroc: m.auroc,
                auprc: m.auprc,
                fpr_at_95_tpr: m.fpr_at_95_tpr,
            }
        };
        Ok(())
    })
}
