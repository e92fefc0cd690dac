//! C ABI for the unlearning laboratory.
//!
//! Conventions:
//!
//! * Handles (`CorpusHandle`, `ModelHandle`) are opaque; create them through
//!   the `ul_*` constructors and release them with the matching `_free`.
//! * Every fallible call returns a [`UlStatus`]; on failure a thread-local
//!   message is readable through [`ul_last_error`] until the next failing
//!   call on the same thread.
//! * Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`ul_string_free`].
//!
//! The header `include/unlearn_lab.h` is regenerated by the build script.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use unlearn_lab::corpus::{load_corpus, save_corpus, syntactic_similarity_mean, CorpusBundle};
use unlearn_lab::error::Error;
use unlearn_lab::harness::{run_experiment, ExperimentConfig};
use unlearn_lab::metrics::{evaluate_model, EvalOptions};
use unlearn_lab::seqmodel::ModelState;
use unlearn_lab::synth::{generate_synthetic, SyntheticSpec};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    ValidationError = 5,
    IoError = 6,
    TrainingError = 7,
    InternalError = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("nul bytes removed"));
    });
}

fn status_of(err: &Error) -> UlStatus {
    match err {
        Error::CorpusParse { .. } | Error::Json(_) | Error::Checkpoint(_) => UlStatus::ParseError,
        Error::EmptyCorpus
        | Error::DuplicateId(_)
        | Error::InvalidPair { .. }
        | Error::Composition { .. }
        | Error::InsufficientRetain { .. }
        | Error::OrphanEntity(_)
        | Error::UnresolvedRef(_) => UlStatus::ValidationError,
        Error::EmptyArgument(_)
        | Error::InvalidArgument(_)
        | Error::UnknownWord(_)
        | Error::SequenceTooLong { .. }
        | Error::Config(_) => UlStatus::InvalidArgument,
        Error::NonFinite(_) | Error::TrainingDiverged { .. } => UlStatus::TrainingError,
        Error::Io(_) => UlStatus::IoError,
        Error::Stage { source, .. } => status_of(source),
    }
}

fn fail(err: Error) -> UlStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Run a closure, converting panics into `InternalError`.
fn guarded<F: FnOnce() -> UlStatus>(f: F) -> UlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            UlStatus::InternalError
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, UlStatus> {
    if ptr.is_null() {
        set_error("null pointer argument".into());
        return Err(UlStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        UlStatus::InvalidUtf8
    })
}

fn give_string(text: String, out: *mut *mut c_char) -> UlStatus {
    let c = match CString::new(text.replace('\0', " ")) {
        Ok(c) => c,
        Err(_) => {
            set_error("output contained interior nul".into());
            return UlStatus::InternalError;
        }
    };
    unsafe { *out = c.into_raw() };
    UlStatus::Ok
}

/// Owned corpus behind the C boundary.
pub struct CorpusHandle {
    bundle: CorpusBundle,
}

/// Owned model behind the C boundary.
pub struct ModelHandle {
    model: ModelState,
}

/// Message describing the most recent failure on this thread, or null.
/// The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn ul_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Release a string returned through a `char **` out-parameter.
///
/// # Safety
/// `ptr` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ul_string_free(ptr: *mut c_char) {
    if !ptr.is_null() {
        drop(CString::from_raw(ptr));
    }
}

/// Library version string (static storage, do not free).
#[no_mangle]
pub extern "C" fn ul_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --- corpus ----------------------------------------------------------------

/// Load a JSONL corpus from disk.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_load(
    path: *const c_char,
    out: *mut *mut CorpusHandle,
) -> UlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_corpus(path) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(CorpusHandle { bundle }));
                UlStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Generate a synthetic corpus (test-set counts take their defaults).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_synth(
    n_entities: u64,
    forget_per_entity: u64,
    direct_per_entity: u64,
    indirect_per_entity: u64,
    n_general: u64,
    seed: u64,
    out: *mut *mut CorpusHandle,
) -> UlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let spec = SyntheticSpec::new(
            n_entities as usize,
            forget_per_entity as usize,
            direct_per_entity as usize,
            indirect_per_entity as usize,
            n_general as usize,
            seed,
        );
        match generate_synthetic(&spec) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(CorpusHandle { bundle }));
                UlStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Write a corpus as JSONL.
///
/// # Safety
/// `corpus` must be a live handle; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_save(
    corpus: *const CorpusHandle,
    path: *const c_char,
) -> UlStatus {
    guarded(|| {
        if corpus.is_null() {
            set_error("null corpus handle".into());
            return UlStatus::NullPointer;
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match save_corpus(&(*corpus).bundle, path) {
            Ok(()) => UlStatus::Ok,
            Err(err) => fail(err),
        }
    })
}

/// # Safety
/// `corpus` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_free(corpus: *mut CorpusHandle) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_forget_len(corpus: *const CorpusHandle) -> u64 {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).bundle.forget().len() as u64
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_retain_len(corpus: *const CorpusHandle) -> u64 {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).bundle.retain().len() as u64
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_test_len(corpus: *const CorpusHandle) -> u64 {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).bundle.test().len() as u64
}

/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_entity_count(corpus: *const CorpusHandle) -> u64 {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).bundle.entities().len() as u64
}

/// Mean nearest-neighbor edit-distance similarity between forget and
/// retain questions.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ul_corpus_similarity_mean(
    corpus: *const CorpusHandle,
    out: *mut f64,
) -> UlStatus {
    guarded(|| {
        if corpus.is_null() || out.is_null() {
            set_error("null pointer argument".into());
            return UlStatus::NullPointer;
        }
        let bundle = &(*corpus).bundle;
        match syntactic_similarity_mean(bundle.forget(), bundle.retain()) {
            Ok(v) => {
                *out = v;
                UlStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Character-level edit distance between two UTF-8 strings.
///
/// # Safety
/// `a` and `b` must be valid C strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ul_levenshtein(
    a: *const c_char,
    b: *const c_char,
    out: *mut u64,
) -> UlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let a = match str_arg(a) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let b = match str_arg(b) {
            Ok(s) => s,
            Err(status) => return status,
        };
        *out = unlearn_lab::corpus::levenshtein(a, b) as u64;
        UlStatus::Ok
    })
}

// --- model -----------------------------------------------------------------

/// Load a model checkpoint.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ul_model_load(
    path: *const c_char,
    out: *mut *mut ModelHandle,
) -> UlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match unlearn_lab::seqmodel::load_model(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(ModelHandle { model }));
                UlStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Save a model checkpoint (deterministic bytes).
///
/// # Safety
/// `model` must be a live handle; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ul_model_save(model: *const ModelHandle, path: *const c_char) -> UlStatus {
    guarded(|| {
        if model.is_null() {
            set_error("null model handle".into());
            return UlStatus::NullPointer;
        }
        let path = match str_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match unlearn_lab::seqmodel::save_model(&(*model).model, path) {
            Ok(()) => UlStatus::Ok,
            Err(err) => fail(err),
        }
    })
}

/// # Safety
/// `model` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ul_model_free(model: *mut ModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ul_model_param_count(model: *const ModelHandle) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).model.param_count() as u64
}

/// Evaluate a model on a corpus; writes the aggregate report (forget
/// efficacy, model utility, diversity, memorization, perplexities,
/// per-entity breakdown) as a JSON string.
///
/// # Safety
/// `model` and `corpus` must be live handles; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ul_model_evaluate(
    model: *const ModelHandle,
    corpus: *const CorpusHandle,
    max_new_tokens: u64,
    out_json: *mut *mut c_char,
) -> UlStatus {
    guarded(|| {
        if model.is_null() || corpus.is_null() || out_json.is_null() {
            set_error("null pointer argument".into());
            return UlStatus::NullPointer;
        }
        let opts = EvalOptions {
            max_new_tokens: max_new_tokens as usize,
            ..EvalOptions::default()
        };
        match evaluate_model(&(*model).model, &(*corpus).bundle, &opts)
            .and_then(|report| Ok(serde_json::to_string(&report)?))
        {
            Ok(json) => give_string(json, out_json),
            Err(err) => fail(err),
        }
    })
}

// --- pipeline ----------------------------------------------------------------

/// Run a full experiment from an `ExperimentConfig` JSON document and return
/// the run records as a JSON array. Outputs land under the config's
/// `output_dir`, exactly as the CLI `run` command writes them.
///
/// # Safety
/// `config_json` must be a valid C string; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ul_run_experiment(
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> UlStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let text = match str_arg(config_json) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg: ExperimentConfig = match serde_json::from_str(text) {
            Ok(cfg) => cfg,
            Err(err) => return fail(Error::Json(err)),
        };
        match run_experiment(&cfg).and_then(|results| Ok(serde_json::to_string(&results)?)) {
            Ok(json) => give_string(json, out_json),
            Err(err) => fail(err),
        }
    })
}

/// Fine-tune a fresh model on the corpus (with checkpoint and baseline
/// caching under the config's output directory) and hand back the trained
/// model. `config_json` is an `ExperimentConfig` document.
///
/// # Safety
/// `corpus` must be a live handle; `config_json` a valid C string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ul_finetune(
    corpus: *const CorpusHandle,
    config_json: *const c_char,
    run_seed: u64,
    out: *mut *mut ModelHandle,
) -> UlStatus {
    guarded(|| {
        if corpus.is_null() || out.is_null() {
            set_error("null pointer argument".into());
            return UlStatus::NullPointer;
        }
        let text = match str_arg(config_json) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg: ExperimentConfig = match serde_json::from_str(text) {
            Ok(cfg) => cfg,
            Err(err) => return fail(Error::Json(err)),
        };
        let bundle = &(*corpus).bundle;
        let bytes = match unlearn_lab::corpus::corpus_to_jsonl(bundle) {
            Ok(b) => b,
            Err(err) => return fail(err),
        };
        match unlearn_lab::harness::prepare_finetuned_model(
            &cfg,
            bytes.as_bytes(),
            bundle,
            run_seed,
        ) {
            Ok(prepared) => {
                *out = Box::into_raw(Box::new(ModelHandle {
                    model: prepared.model,
                }));
                UlStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Default experiment configuration as pretty JSON, with the given corpus
/// path and output directory filled in; a starting point for callers.
///
/// # Safety
/// `corpus_path` and `output_dir` must be valid C strings; `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn ul_default_config(
    corpus_path: *const c_char,
    output_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> UlStatus {
    guarded(|| {
        if out_json.is_null() {
            set_error("null out pointer".into());
            return UlStatus::NullPointer;
        }
        let corpus_path = match str_arg(corpus_path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let output_dir = match str_arg(output_dir) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg = ExperimentConfig::new(PathBuf::from(corpus_path), PathBuf::from(output_dir));
        match serde_json::to_string_pretty(&cfg) {
            Ok(json) => give_string(json, out_json),
            Err(err) => fail(Error::Json(err)),
        }
    })
}
