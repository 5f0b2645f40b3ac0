//! C ABI over `gnas_core`.
//!
//! Every fallible call returns a [`GnasStatus`]. On failure the message is
//! available from [`gnas_last_error`] on the same thread. Handles are opaque
//! and owned by the caller until passed to the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gnas_core::error::Error;
use gnas_core::graph::{generate_synthetic, load_dataset, Dataset, Split, SyntheticSpec, TaskType};
use gnas_core::search::{search, SearchConfig};
use gnas_core::supernet::{arch_weights, ArchEncoding, Mode, Supernet};
use gnas_core::trainer::{evaluate, train_discrete, EvalReport, HParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    Metric = 7,
    OutOfScope = 8,
    Internal = 9,
}

/// Split selector for [`gnas_model_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnasSplit {
    Train = 0,
    Valid = 1,
    Test = 2,
}

pub struct GnasDataset {
    inner: Dataset,
}

pub struct GnasArch {
    inner: ArchEncoding,
}

/// A trained discrete network together with the settings it was trained with.
pub struct GnasModel {
    net: Supernet,
    arch: ArchEncoding,
    hparams: HParams,
    reports: Vec<EvalReport>,
    best_epoch: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GnasStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::Json(_) => GnasStatus::Parse,
            Error::Validation(_) | Error::Shape { .. } | Error::InvalidArgument(_) => GnasStatus::InvalidArgument,
            Error::Config(_) => GnasStatus::Config,
            Error::OutOfScope(_) => GnasStatus::OutOfScope,
            Error::Metric(_) => GnasStatus::Metric,
            Error::Io { .. } => GnasStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GnasStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GnasStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            GnasStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GnasStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Optional JSON argument; null means the type's default.
unsafe fn json_arg<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    let text = str_arg(p, what)?;
    serde_json::from_str(text).map_err(|e| Failure(GnasStatus::Config, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = CString::new(s).map_err(|e| Failure(GnasStatus::Internal, e.to_string()))?.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gnas_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gnas_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a JSONL graph file and its splits. `task_json` is e.g.
/// `{"type":"binary"}`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_dataset_load(
    graphs_path: *const c_char,
    splits_path: *const c_char,
    task_json: *const c_char,
    out: *mut *mut GnasDataset,
) -> GnasStatus {
    guard(|| {
        let graphs = str_arg(graphs_path, "graphs_path")?;
        let splits = str_arg(splits_path, "splits_path")?;
        let task: TaskType = serde_json::from_str(str_arg(task_json, "task_json")?)
            .map_err(|e| Failure(GnasStatus::Config, format!("task_json: {e}")))?;
        let ds = load_dataset(Path::new(graphs), Path::new(splits), task)?;
        out_ptr(out, GnasDataset { inner: ds })
    })
}

/// Generate a synthetic dataset. A null `spec_json` gives the default
/// triangle task with 500 graphs.
///
/// # Safety
/// `spec_json` must be null or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_dataset_synthetic(
    spec_json: *const c_char,
    seed: u64,
    out: *mut *mut GnasDataset,
) -> GnasStatus {
    guard(|| {
        let spec = if spec_json.is_null() {
            SyntheticSpec::triangles(500)
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?)
                .map_err(|e| Failure(GnasStatus::Config, format!("spec_json: {e}")))?
        };
        out_ptr(out, GnasDataset { inner: generate_synthetic(&spec, seed)? })
    })
}

/// Number of graphs, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gnas_dataset_len(ds: *const GnasDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `ds` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gnas_dataset_free(ds: *mut GnasDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Parse and validate an architecture encoding.
///
/// # Safety
/// `json` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_arch_from_json(json: *const c_char, out: *mut *mut GnasArch) -> GnasStatus {
    guard(|| {
        let arch = ArchEncoding::from_json(str_arg(json, "json")?)?;
        out_ptr(out, GnasArch { inner: arch })
    })
}

/// Serialize an architecture; free the result with [`gnas_string_free`].
///
/// # Safety
/// `arch` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_arch_to_json(arch: *const GnasArch, out: *mut *mut c_char) -> GnasStatus {
    guard(|| out_string(out, handle(arch, "arch")?.inner.to_json()))
}

/// # Safety
/// `arch` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gnas_arch_free(arch: *mut GnasArch) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// Run the architecture search. `config_json` holds search settings; null
/// uses the defaults.
///
/// # Safety
/// `ds` must be live; `config_json` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_search(
    ds: *const GnasDataset,
    config_json: *const c_char,
    out: *mut *mut GnasArch,
) -> GnasStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let cfg: SearchConfig = json_arg(config_json, "config_json")?;
        let outcome = search(&ds.inner, &cfg)?;
        out_ptr(out, GnasArch { inner: outcome.arch })
    })
}

/// Train `arch` from scratch. `hparams_json` null uses the defaults.
///
/// # Safety
/// Handles must be live; `hparams_json` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_train(
    arch: *const GnasArch,
    ds: *const GnasDataset,
    hparams_json: *const c_char,
    out: *mut *mut GnasModel,
) -> GnasStatus {
    guard(|| {
        let arch = &handle(arch, "arch")?.inner;
        let ds = handle(ds, "dataset")?;
        let hp: HParams = json_arg(hparams_json, "hparams_json")?;
        let t = train_discrete(arch, &ds.inner, &hp)?;
        out_ptr(
            out,
            GnasModel { net: t.model, arch: arch.clone(), hparams: hp, reports: t.reports, best_epoch: t.best_epoch },
        )
    })
}

/// Score a trained model on one split of `ds` with the model's metric.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_model_evaluate(
    model: *const GnasModel,
    ds: *const GnasDataset,
    split: GnasSplit,
    out: *mut f64,
) -> GnasStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = &handle(ds, "dataset")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let vn;
        let ds = if m.hparams.virtual_node {
            vn = ds.with_virtual_nodes();
            &vn
        } else {
            ds
        };
        let split = match split {
            GnasSplit::Train => Split::Train,
            GnasSplit::Valid => Split::Valid,
            GnasSplit::Test => Split::Test,
        };
        let metric = m.hparams.metric_for(ds)?;
        let r = evaluate(&m.net, Mode::Discrete(&m.arch), ds, split, metric, m.hparams.batch_size, m.best_epoch)?;
        *out = r.value;
        Ok(())
    })
}

/// Train/valid/test reports from training as a JSON array.
///
/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gnas_model_report_json(model: *const GnasModel, out: *mut *mut c_char) -> GnasStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let json = serde_json::to_string(&m.reports).map_err(|e| Failure(GnasStatus::Internal, e.to_string()))?;
        out_string(out, json)
    })
}

/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gnas_model_free(model: *mut GnasModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Temperature softmax of `alpha[0..len]` into `out[0..len]`.
///
/// # Safety
/// `alpha` and `out` must point to `len` valid `double`s.
#[no_mangle]
pub unsafe extern "C" fn gnas_arch_weights(alpha: *const f64, len: usize, lambda: f64, out: *mut f64) -> GnasStatus {
    guard(|| {
        if alpha.is_null() || out.is_null() {
            return Err(null("alpha or out"));
        }
        let a = std::slice::from_raw_parts(alpha, len);
        let w = arch_weights(a, lambda)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&w);
        Ok(())
    })
}
