//! C ABI over the maestro library: a SAX codec handle and a trained-model handle.
//!
//! Every fallible call returns a [`MaestroStatus`]; on failure the message is
//! available from [`maestro_last_error`] on the same thread. Handles are created
//! by `*_new`/`*_load` and must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use maestro::model::Maestro;
use maestro::sax::{encode_series, RawSeries, SaxCodec};
use maestro::MaestroError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaestroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numeric = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque SAX codec.
pub struct MaestroCodec(SaxCodec);

/// Opaque trained model loaded from a checkpoint.
pub struct MaestroModel(Maestro);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &MaestroError) -> MaestroStatus {
    match e {
        MaestroError::Contract(_) | MaestroError::Config(_) => MaestroStatus::InvalidArgument,
        MaestroError::Numeric { .. } => MaestroStatus::Numeric,
        MaestroError::Data(_) | MaestroError::Json(_) => MaestroStatus::Data,
        MaestroError::Io { .. } => MaestroStatus::Io,
    }
}

struct Fail(MaestroStatus, String);

impl From<MaestroError> for Fail {
    fn from(e: MaestroError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MaestroStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MaestroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MaestroStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MaestroStatus::Panic
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn maestro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn maestro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a codec with alphabet size `alpha` (2..=65535).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn maestro_codec_new(alpha: usize, out: *mut *mut MaestroCodec) -> MaestroStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let codec = SaxCodec::new(alpha)?;
        *out = Box::into_raw(Box::new(MaestroCodec(codec)));
        Ok(())
    })
}

/// # Safety
/// `codec` must be NULL or a handle from [`maestro_codec_new`] that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn maestro_codec_free(codec: *mut MaestroCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Z-normalizes `len` values, compresses them to `word_length` segment means and
/// writes `word_length` symbols (1..=alpha) to `out_symbols`.
///
/// # Safety
/// `codec` must be a live handle, `values` must point to `len` readable doubles and
/// `out_symbols` to `word_length` writable `uint16_t`.
#[no_mangle]
pub unsafe extern "C" fn maestro_codec_encode(
    codec: *const MaestroCodec,
    values: *const f64,
    len: usize,
    word_length: usize,
    out_symbols: *mut u16,
) -> MaestroStatus {
    guard(|| {
        let codec = codec.as_ref().ok_or_else(|| null("codec"))?;
        if values.is_null() || out_symbols.is_null() {
            return Err(null("values or out_symbols"));
        }
        let series = RawSeries::new(std::slice::from_raw_parts(values, len).to_vec(), 1.0)?;
        let word = encode_series(&series, word_length, &codec.0, false)?;
        std::slice::from_raw_parts_mut(out_symbols, word_length).copy_from_slice(&word);
        Ok(())
    })
}

/// Lower-bounding symbolic distance between two words of `word_length` symbols
/// that encode series of `series_len` samples.
///
/// # Safety
/// `codec` must be a live handle, `a` and `b` must each point to `word_length`
/// readable `uint16_t` and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn maestro_codec_mindist(
    codec: *const MaestroCodec,
    a: *const u16,
    b: *const u16,
    word_length: usize,
    series_len: usize,
    out: *mut f64,
) -> MaestroStatus {
    guard(|| {
        let codec = codec.as_ref().ok_or_else(|| null("codec"))?;
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("a, b or out"));
        }
        let a = std::slice::from_raw_parts(a, word_length);
        let b = std::slice::from_raw_parts(b, word_length);
        *out = codec.0.mindist(a, b, series_len)?;
        Ok(())
    })
}

/// Loads a checkpoint written by `maestro train`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer to
/// writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn maestro_model_load(path: *const c_char, out: *mut *mut MaestroModel) -> MaestroStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path or out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(MaestroStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let (model, _) = Maestro::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MaestroModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`maestro_model_load`] that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn maestro_model_free(model: *mut MaestroModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of modalities and classes the model expects.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn maestro_model_info(
    model: *const MaestroModel,
    out_modalities: *mut usize,
    out_classes: *mut usize,
) -> MaestroStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_modalities.is_null() || out_classes.is_null() {
            return Err(null("out pointer"));
        }
        *out_modalities = m.0.modality_count();
        *out_classes = m.0.shape.classes;
        Ok(())
    })
}

/// Variate count and series length of modality `index`.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn maestro_model_modality_shape(
    model: *const MaestroModel,
    index: usize,
    out_variates: *mut usize,
    out_length: *mut usize,
) -> MaestroStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_variates.is_null() || out_length.is_null() {
            return Err(null("out pointer"));
        }
        let spec = m.0.shape.modalities.get(index).ok_or_else(|| {
            Fail(MaestroStatus::InvalidArgument, format!("modality index {index} out of range"))
        })?;
        *out_variates = spec.variates;
        *out_length = spec.length;
        Ok(())
    })
}

/// Classifies one sample. `data[j]` points to modality `j` as `variates * length`
/// doubles, variate-major, or is NULL when that modality is missing. Writes
/// `classes` probabilities to `out_probs` and the 1-based predicted class to `out_class`.
///
/// # Safety
/// `model` must be a live handle; `data` must point to `modalities` pointers, each
/// NULL or pointing to `variates * length` readable doubles for that modality;
/// `out_probs` must hold `classes` writable doubles and `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn maestro_model_predict(
    model: *const MaestroModel,
    data: *const *const f64,
    modalities: usize,
    out_probs: *mut f64,
    classes: usize,
    out_class: *mut usize,
) -> MaestroStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if data.is_null() || out_probs.is_null() || out_class.is_null() {
            return Err(null("data, out_probs or out_class"));
        }
        if modalities != m.modality_count() || classes != m.shape.classes {
            return Err(Fail(
                MaestroStatus::InvalidArgument,
                format!(
                    "model expects {} modalities and {} classes, got {modalities} and {classes}",
                    m.modality_count(),
                    m.shape.classes
                ),
            ));
        }
        let ptrs = std::slice::from_raw_parts(data, modalities);
        let raw: Vec<Option<Vec<Vec<f64>>>> = ptrs
            .iter()
            .zip(&m.shape.modalities)
            .map(|(&p, spec)| {
                (!p.is_null()).then(|| {
                    std::slice::from_raw_parts(p, spec.variates * spec.length)
                        .chunks(spec.length)
                        .map(<[f64]>::to_vec)
                        .collect()
                })
            })
            .collect();
        if raw.iter().all(Option::is_none) {
            return Err(Fail(MaestroStatus::InvalidArgument, "at least one modality must be present".into()));
        }
        let sample = m.tokenize(&raw, 1)?;
        let (probs, class) = m.predict(&sample, m.config.seed)?;
        std::slice::from_raw_parts_mut(out_probs, classes).copy_from_slice(&probs);
        *out_class = class;
        Ok(())
    })
}
