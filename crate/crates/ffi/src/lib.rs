//! C ABI over the `biasrel` library.
//!
//! Every function returns a [`BiasrelStatus`]; results go through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`biasrel_last_error`]. Embedding models are opaque handles created by
//! [`biasrel_model_load`] and released with [`biasrel_model_free`].

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use biasrel::alignment::procrustes;
use biasrel::config::RunConfig;
use biasrel::embedding::{parse_embedding_text, EmbeddingModel, TextFormat};
use biasrel::reliability::{cronbach_alpha, icc21, icc31, RatingsMatrix, ReliabilityScore};
use biasrel::scoring::{score_dbwa, score_nbm, score_ripa, BasePair};
use biasrel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasrelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    MissingWord = 5,
    Degenerate = 6,
    Collinear = 7,
    Config = 8,
    Panic = 9,
}

/// Opaque embedding model.
pub struct BiasrelModel {
    inner: EmbeddingModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BiasrelStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Io { .. } => BiasrelStatus::Io,
        Error::Parse { .. } | Error::EmptyFile(_) => BiasrelStatus::Parse,
        Error::MissingWord(_) | Error::UnknownLabel(_) | Error::AllMissing(_) => BiasrelStatus::MissingWord,
        Error::DegenerateVector(_) | Error::DegeneratePair { .. } => BiasrelStatus::Degenerate,
        Error::Collinear(_) => BiasrelStatus::Collinear,
        Error::Config(_) => BiasrelStatus::Config,
        _ => BiasrelStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (BiasrelStatus, String)>) -> BiasrelStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BiasrelStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BiasrelStatus::Panic
        }
    }
}

fn lib<T>(r: biasrel::Result<T>) -> Result<T, (BiasrelStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (BiasrelStatus, String) {
    (BiasrelStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BiasrelStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BiasrelStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn biasrel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn reliability(
    values: *const f64,
    n_rows: usize,
    n_cols: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
    f: fn(&RatingsMatrix) -> ReliabilityScore,
) -> BiasrelStatus {
    guard(|| {
        if values.is_null() || out_value.is_null() {
            return Err(null("values or out_value"));
        }
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| (BiasrelStatus::InvalidArgument, "matrix size overflows".to_string()))?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let m = lib(RatingsMatrix::new(data, n_rows, n_cols))?;
        let s = f(&m);
        *out_value = s.value;
        if !out_degenerate.is_null() {
            *out_degenerate = s.degenerate;
        }
        Ok(())
    })
}

/// ICC(2,1) of a row-major `n_rows x n_cols` matrix. Degenerate matrices
/// give NaN and set `*out_degenerate` (which may be null).
///
/// # Safety
/// `values` must point to `n_rows * n_cols` doubles; out pointers must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn biasrel_icc21(values: *const f64, n_rows: usize, n_cols: usize, out_value: *mut f64, out_degenerate: *mut bool) -> BiasrelStatus {
    reliability(values, n_rows, n_cols, out_value, out_degenerate, icc21)
}

/// ICC(3,1); same conventions as [`biasrel_icc21`].
///
/// # Safety
/// See [`biasrel_icc21`].
#[no_mangle]
pub unsafe extern "C" fn biasrel_icc31(values: *const f64, n_rows: usize, n_cols: usize, out_value: *mut f64, out_degenerate: *mut bool) -> BiasrelStatus {
    reliability(values, n_rows, n_cols, out_value, out_degenerate, icc31)
}

/// Cronbach's alpha with columns as items; same conventions as
/// [`biasrel_icc21`].
///
/// # Safety
/// See [`biasrel_icc21`].
#[no_mangle]
pub unsafe extern "C" fn biasrel_cronbach_alpha(
    values: *const f64,
    n_rows: usize,
    n_cols: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
) -> BiasrelStatus {
    reliability(values, n_rows, n_cols, out_value, out_degenerate, cronbach_alpha)
}

/// Loads a word2vec or GloVe text file (format detected from the header).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn biasrel_model_load(path: *const c_char, out: *mut *mut BiasrelModel) -> BiasrelStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let inner = lib(parse_embedding_text(Path::new(path), TextFormat::Auto))?;
        *out = Box::into_raw(Box::new(BiasrelModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is accepted.
///
/// # Safety
/// `model` must come from [`biasrel_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn biasrel_model_free(model: *mut BiasrelModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn biasrel_model_vocab_size(model: *const BiasrelModel, out: *mut usize) -> BiasrelStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.len();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn biasrel_model_dim(model: *const BiasrelModel, out: *mut usize) -> BiasrelStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.dim();
        Ok(())
    })
}

unsafe fn score(
    model: *const BiasrelModel,
    word: *const c_char,
    male: *const c_char,
    female: *const c_char,
    out: *mut f64,
    f: impl FnOnce(&EmbeddingModel, &str, &BasePair) -> biasrel::Result<f64>,
) -> BiasrelStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let w = str_arg(word, "word")?.to_lowercase();
        let pair = lib(BasePair::new(str_arg(male, "male")?, str_arg(female, "female")?))?;
        *out = lib(f(&m.inner, &w, &pair))?;
        Ok(())
    })
}

/// Cosine-difference score `cos(w, m) - cos(w, f)`.
///
/// # Safety
/// String arguments must be nul-terminated; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn biasrel_score_dbwa(
    model: *const BiasrelModel,
    word: *const c_char,
    male: *const c_char,
    female: *const c_char,
    out: *mut f64,
) -> BiasrelStatus {
    score(model, word, male, female, out, score_dbwa)
}

/// Projection of `w` on the normalized difference `m - f`.
///
/// # Safety
/// See [`biasrel_score_dbwa`].
#[no_mangle]
pub unsafe extern "C" fn biasrel_score_ripa(
    model: *const BiasrelModel,
    word: *const c_char,
    male: *const c_char,
    female: *const c_char,
    out: *mut f64,
) -> BiasrelStatus {
    score(model, word, male, female, out, score_ripa)
}

/// Signed fraction of the `k` nearest neighbours of `word` that lean male.
///
/// # Safety
/// See [`biasrel_score_dbwa`].
#[no_mangle]
pub unsafe extern "C" fn biasrel_score_nbm(
    model: *const BiasrelModel,
    word: *const c_char,
    male: *const c_char,
    female: *const c_char,
    k: usize,
    out: *mut f64,
) -> BiasrelStatus {
    score(model, word, male, female, out, |m, w, p| score_nbm(m, w, p, k, &HashSet::new()))
}

/// Orthogonal `Q` (row-major `dim x dim`) minimizing
/// `||w_ref - w_other Q||_F` for row-major `rows x dim` inputs.
///
/// # Safety
/// Inputs must hold `rows * dim` doubles and `q_out` room for `dim * dim`.
#[no_mangle]
pub unsafe extern "C" fn biasrel_procrustes(w_ref: *const f64, w_other: *const f64, rows: usize, dim: usize, q_out: *mut f64) -> BiasrelStatus {
    guard(|| {
        if w_ref.is_null() || w_other.is_null() || q_out.is_null() {
            return Err(null("w_ref, w_other or q_out"));
        }
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| (BiasrelStatus::InvalidArgument, "matrix size overflows".to_string()))?;
        let a = std::slice::from_raw_parts(w_ref, len);
        let b = std::slice::from_raw_parts(w_other, len);
        let map = lib(procrustes(a, b, rows, dim))?;
        std::slice::from_raw_parts_mut(q_out, dim * dim).copy_from_slice(&map.q);
        Ok(())
    })
}

/// Runs the full pipeline for a TOML config file.
///
/// # Safety
/// `config_path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn biasrel_run_config(config_path: *const c_char) -> BiasrelStatus {
    guard(|| {
        let path = str_arg(config_path, "config_path")?;
        let cfg = lib(RunConfig::load(Path::new(path)))?;
        lib(biasrel::pipeline::run(&cfg))?;
        Ok(())
    })
}
