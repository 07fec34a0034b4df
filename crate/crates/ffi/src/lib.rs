//! C ABI for the ppap mining engine.
//!
//! Conventions:
//! - every fallible call returns a [`PpapStatus`]; on failure a message is
//!   available from [`ppap_last_error`] on the same thread;
//! - objects are opaque handles created by `ppap_*` constructors and
//!   released with the matching `*_free` (which accepts NULL);
//! - output pointers are written only on success;
//! - panics never cross the boundary, they surface as `PPAP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ppap::baselines::{kmeans_mine, knn_mine, KmeansConfig, KnnConfig};
use ppap::eval::{candidate_labels, trust_report};
use ppap::feature_store::{load_batch, normalize, save_batch};
use ppap::objective::{loss_and_grad, Rows};
use ppap::{Error, FeatureBatch, MiningConfig, MiningResult};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Numerical = 6,
    MissingLabels = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Opaque feature batch.
pub struct PpapBatch(FeatureBatch);

/// Opaque mining result.
pub struct PpapResult(MiningResult);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpapMiningConfig {
    pub phi0: f64,
    pub psi0: f64,
    pub sigma_pos: f64,
    pub sigma_amb: f64,
    pub steps: u32,
    pub clamp_margin: f64,
    pub normalize_proxy: bool,
}

impl From<MiningConfig> for PpapMiningConfig {
    fn from(c: MiningConfig) -> Self {
        Self {
            phi0: c.phi0,
            psi0: c.psi0,
            sigma_pos: c.sigma_pos,
            sigma_amb: c.sigma_amb,
            steps: c.steps as u32,
            clamp_margin: c.clamp_margin,
            normalize_proxy: c.normalize_proxy,
        }
    }
}

impl From<PpapMiningConfig> for MiningConfig {
    fn from(c: PpapMiningConfig) -> Self {
        Self {
            phi0: c.phi0,
            psi0: c.psi0,
            sigma_pos: c.sigma_pos,
            sigma_amb: c.sigma_amb,
            steps: c.steps as usize,
            clamp_margin: c.clamp_margin,
            normalize_proxy: c.normalize_proxy,
        }
    }
}

/// Aggregate trust metrics; see `ppap_trust_report`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpapTrust {
    pub anchors: usize,
    pub mean_positive_count: f64,
    pub tp_in_p_ratio: f64,
    pub anchor_mean_precision: f64,
    pub mean_ambiguous_count: f64,
    pub mean_negative_count: f64,
    pub fp_in_n_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(PpapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::IoFailure(_) => PpapStatus::Io,
            Error::MalformedHeader(_) | Error::TruncatedPayload { .. } | Error::Csv { .. } => PpapStatus::Format,
            Error::DimensionMismatch(_) => PpapStatus::DimensionMismatch,
            Error::InvalidConfig(_) => PpapStatus::InvalidArgument,
            Error::MissingLabels => PpapStatus::MissingLabels,
            Error::AnchorNotMined(_) => PpapStatus::OutOfRange,
            _ => PpapStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: PpapStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PpapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PpapStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            PpapStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(PpapStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(PpapStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(fail(PpapStatus::NullPointer, "path is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(PpapStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn array<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PpapStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next `ppap_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ppap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ppap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default mining configuration.
#[no_mangle]
pub extern "C" fn ppap_config_default() -> PpapMiningConfig {
    MiningConfig::default().into()
}

/// Named preset, e.g. `"coco-vit-s16"` or `"potsdam-vit-b8"`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_config_preset(name: *const c_char, out: *mut PpapMiningConfig) -> PpapStatus {
    guard(|| {
        let name = path_arg(name)?;
        let out = out_ptr(out, "out")?;
        let c = MiningConfig::named_preset(&name)
            .ok_or_else(|| fail(PpapStatus::InvalidArgument, format!("unknown preset {name:?}")))?;
        *out = c.into();
        Ok(())
    })
}

/// Loads a feature container.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_load(path: *const c_char, out: *mut *mut PpapBatch) -> PpapStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ptr(out, "out")?;
        let batch = load_batch(path)?;
        *out = Box::into_raw(Box::new(PpapBatch(batch)));
        Ok(())
    })
}

/// Copies `rows * dim` row-major values (and optionally `rows` labels) into a
/// new batch. Rows are taken as given; call `ppap_batch_normalize` for
/// cosine semantics.
///
/// # Safety
/// `data` must hold `rows * dim` doubles, `labels` NULL or `rows` values.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_from_rows(
    data: *const f64,
    rows: usize,
    dim: usize,
    labels: *const u32,
    out: *mut *mut PpapBatch,
) -> PpapStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| fail(PpapStatus::InvalidArgument, "rows * dim overflows"))?;
        let values = array(data, len, "data")?;
        let mut batch = FeatureBatch::new(values.to_vec(), rows, dim)?;
        if !labels.is_null() {
            batch = batch.with_labels(array(labels, rows, "labels")?.to_vec())?;
        }
        *out = Box::into_raw(Box::new(PpapBatch(batch)));
        Ok(())
    })
}

/// # Safety
/// `batch` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_save(batch: *const PpapBatch, path: *const c_char) -> PpapStatus {
    guard(|| {
        let batch = reference(batch, "batch")?;
        save_batch(&batch.0, path_arg(path)?)?;
        Ok(())
    })
}

/// New batch with every row scaled to unit length.
///
/// # Safety
/// `batch` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_normalize(batch: *const PpapBatch, out: *mut *mut PpapBatch) -> PpapStatus {
    guard(|| {
        let batch = reference(batch, "batch")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(PpapBatch(normalize(&batch.0)?)));
        Ok(())
    })
}

/// Row count, or 0 for NULL.
///
/// # Safety
/// `batch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_rows(batch: *const PpapBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.rows())
}

/// Feature dimension, or 0 for NULL.
///
/// # Safety
/// `batch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_dim(batch: *const PpapBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.0.dim())
}

/// # Safety
/// `batch` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppap_batch_free(batch: *mut PpapBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

fn store_result(out: &mut *mut PpapResult, result: MiningResult) {
    *out = Box::into_raw(Box::new(PpapResult(result)));
}

/// Mines every row of `batch` with the relocating-proxy strategy.
///
/// # Safety
/// Handles must be live, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_mine(
    batch: *const PpapBatch,
    config: *const PpapMiningConfig,
    out: *mut *mut PpapResult,
) -> PpapStatus {
    guard(|| {
        let batch = reference(batch, "batch")?;
        let config: MiningConfig = (*reference(config, "config")?).into();
        let out = out_ptr(out, "out")?;
        store_result(out, ppap::mine(&batch.0, &config, None)?);
        Ok(())
    })
}

/// Top-`k` nearest neighbours as positives.
///
/// # Safety
/// `batch` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_knn_mine(batch: *const PpapBatch, k: usize, out: *mut *mut PpapResult) -> PpapStatus {
    guard(|| {
        let batch = reference(batch, "batch")?;
        let out = out_ptr(out, "out")?;
        store_result(out, knn_mine(&batch.0, &KnnConfig { k }, None)?);
        Ok(())
    })
}

/// Same-cluster rows under spherical k-means as positives.
///
/// # Safety
/// `batch` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_kmeans_mine(
    batch: *const PpapBatch,
    clusters: usize,
    seed: u64,
    out: *mut *mut PpapResult,
) -> PpapStatus {
    guard(|| {
        let batch = reference(batch, "batch")?;
        let out = out_ptr(out, "out")?;
        let config = KmeansConfig {
            clusters,
            seed,
            ..KmeansConfig::default()
        };
        store_result(out, kmeans_mine(&batch.0, &config, None)?);
        Ok(())
    })
}

/// Loads a result written by `ppap_result_save` or the command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_load(path: *const c_char, out: *mut *mut PpapResult) -> PpapStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ptr(out, "out")?;
        store_result(out, MiningResult::load(path)?);
        Ok(())
    })
}

/// Saves as JSON when `path` ends in `.json`, in the binary form otherwise.
///
/// # Safety
/// `result` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_save(result: *const PpapResult, path: *const c_char) -> PpapStatus {
    guard(|| {
        let result = reference(result, "result")?;
        result.0.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Number of mined anchors, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_anchor_count(result: *const PpapResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.anchors.len())
}

/// Number of candidate rows, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_candidates(result: *const PpapResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.candidates)
}

unsafe fn anchor_at<'a>(result: *const PpapResult, index: usize) -> Result<&'a ppap::AnchorSets, Failure> {
    let r = reference(result, "result")?;
    r.0.anchors.get(index).ok_or_else(|| {
        fail(
            PpapStatus::OutOfRange,
            format!("anchor index {index} outside {} anchors", r.0.anchors.len()),
        )
    })
}

/// Row id of the `index`-th mined anchor.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_anchor(result: *const PpapResult, index: usize, out: *mut u32) -> PpapStatus {
    guard(|| {
        let a = anchor_at(result, index)?;
        *out_ptr(out, "out")? = a.anchor;
        Ok(())
    })
}

/// Sorted positive rows of the `index`-th anchor. The array is owned by
/// `result` and valid until it is freed.
///
/// # Safety
/// `result` must be a live handle; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_positives(
    result: *const PpapResult,
    index: usize,
    data: *mut *const u32,
    len: *mut usize,
) -> PpapStatus {
    guard(|| {
        let a = anchor_at(result, index)?;
        let (data, len) = (out_ptr(data, "data")?, out_ptr(len, "len")?);
        *data = a.positives.as_ptr();
        *len = a.positives.len();
        Ok(())
    })
}

/// Sorted ambiguous rows of the `index`-th anchor; ownership as for
/// `ppap_result_positives`.
///
/// # Safety
/// `result` must be a live handle; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_ambiguous(
    result: *const PpapResult,
    index: usize,
    data: *mut *const u32,
    len: *mut usize,
) -> PpapStatus {
    guard(|| {
        let a = anchor_at(result, index)?;
        let (data, len) = (out_ptr(data, "data")?, out_ptr(len, "len")?);
        *data = a.ambiguous.as_ptr();
        *len = a.ambiguous.len();
        Ok(())
    })
}

/// Final positiveness and ambiguity thresholds of the `index`-th anchor.
/// Fails with `PPAP_STATUS_OUT_OF_RANGE` for strategies without criteria.
///
/// # Safety
/// `result` must be a live handle; `phi` and `psi` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_criteria(
    result: *const PpapResult,
    index: usize,
    phi: *mut f64,
    psi: *mut f64,
) -> PpapStatus {
    guard(|| {
        let a = anchor_at(result, index)?;
        let d = a
            .diagnostics
            .as_ref()
            .ok_or_else(|| fail(PpapStatus::OutOfRange, "result carries no criteria"))?;
        let (phi, psi) = (out_ptr(phi, "phi")?, out_ptr(psi, "psi")?);
        *phi = d.phi;
        *psi = d.psi;
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppap_result_free(result: *mut PpapResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Mean contrastive loss of projected rows `z` (`rows * dim`, unit length)
/// under `result`; writes the gradient w.r.t. `z` when `grad` is not NULL.
///
/// # Safety
/// `z` must hold `rows * dim` doubles, `grad` be NULL or writable for as many.
#[no_mangle]
pub unsafe extern "C" fn ppap_contrastive_loss(
    z: *const f64,
    rows: usize,
    dim: usize,
    result: *const PpapResult,
    tau: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> PpapStatus {
    guard(|| {
        let result = reference(result, "result")?;
        let loss = out_ptr(loss, "loss")?;
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| fail(PpapStatus::InvalidArgument, "rows * dim overflows"))?;
        let z = Rows::new(array(z, len, "z")?, dim)?;
        let (value, g) = loss_and_grad(z, &result.0, tau, None)?;
        if !grad.is_null() {
            slice::from_raw_parts_mut(grad, len).copy_from_slice(&g);
        }
        *loss = value;
        Ok(())
    })
}

/// Positive precision and negative contamination of `result`, using the
/// labels carried by `labels` (indexed like the rows that were mined, or by
/// original row when the result was subsampled).
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppap_trust_report(
    result: *const PpapResult,
    labels: *const PpapBatch,
    out: *mut PpapTrust,
) -> PpapStatus {
    guard(|| {
        let result = reference(result, "result")?;
        let batch = reference(labels, "labels")?;
        let out = out_ptr(out, "out")?;
        let raw = batch.0.labels().ok_or(Error::MissingLabels)?;
        let labels = candidate_labels(&result.0, raw)?;
        let t = trust_report(&result.0, Some(&labels))?;
        *out = PpapTrust {
            anchors: t.anchors,
            mean_positive_count: t.mean_positive_count,
            tp_in_p_ratio: t.tp_in_p_ratio,
            anchor_mean_precision: t.anchor_mean_precision,
            mean_ambiguous_count: t.mean_ambiguous_count,
            mean_negative_count: t.mean_negative_count,
            fp_in_n_ratio: t.fp_in_n_ratio,
        };
        Ok(())
    })
}
