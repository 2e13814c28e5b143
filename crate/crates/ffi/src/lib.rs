//! C interface to trained mtkd models.
//!
//! Every fallible function returns an [`MtkdStatus`]; on failure a message
//! for the calling thread is available from [`mtkd_last_error`]. Strings
//! are UTF-8 and NUL-terminated. Functions that produce a string write it
//! into a caller buffer and always report the required length (without the
//! terminator) through `out_len`, so a first call with a null buffer and
//! zero capacity can size the second.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mtkd::corpus::{
    render_text_image, translate_oracle, GlyphBank, ImageBatch, PaddedSeq, Vocab, DEFAULT_GLYPH_SEED, GLYPH_WIDTH, PAD,
};
use mtkd::evaluation::corpus_bleu_text;
use mtkd::models::{greedy_decode, Checkpoint, ModelInput, ModelKind, Seq2Seq};
use mtkd::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Runtime = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtkdModelKind {
    /// Image in, target-language text out.
    Timt = 0,
    /// Image in, source-language text out.
    Tir = 1,
    /// Source text in, target text out.
    Mt = 2,
}

/// A loaded checkpoint. Create with [`mtkd_model_load`], release with
/// [`mtkd_model_free`].
pub struct MtkdModel {
    checkpoint: Checkpoint,
    model: Seq2Seq,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MtkdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MtkdStatus::Io,
            Error::Checkpoint { .. } => MtkdStatus::Checkpoint,
            e if e.is_validation() => MtkdStatus::InvalidArgument,
            _ => MtkdStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MtkdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MtkdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MtkdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MtkdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(MtkdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_str(s: &str, buf: *mut c_char, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = s.len();
    if cap < s.len() + 1 {
        return Err(Failure(MtkdStatus::BufferTooSmall, format!("need {} bytes, buffer holds {cap}", s.len() + 1)));
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message describing the calling thread's most recent failure, or null
/// after a success. Valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mtkd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Seed of the glyph set used by generated corpora unless configured
/// otherwise.
#[no_mangle]
pub extern "C" fn mtkd_default_glyph_seed() -> u64 {
    DEFAULT_GLYPH_SEED
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtkd_model_load(path: *const c_char, out: *mut *mut MtkdModel) -> MtkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        let model = checkpoint.model()?;
        let src_vocab = Vocab::build(&checkpoint.header.src_alphabet)?;
        let tgt_vocab = Vocab::build(&checkpoint.header.tgt_alphabet)?;
        *out = Box::into_raw(Box::new(MtkdModel { checkpoint, model, src_vocab, tgt_vocab }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`mtkd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtkd_model_free(model: *mut MtkdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtkd_model_param_count(model: *const MtkdModel, out: *mut usize) -> MtkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.count_params();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtkd_model_kind(model: *const MtkdModel, out: *mut MtkdModelKind) -> MtkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = match m.model.kind {
            ModelKind::Timt => MtkdModelKind::Timt,
            ModelKind::Tir => MtkdModelKind::Tir,
            ModelKind::Mt => MtkdModelKind::Mt,
        };
        Ok(())
    })
}

/// Greedy output of the model for source sentence `text`. Image models
/// read `text` rendered with the glyph set of `glyph_seed`; the text model
/// reads it directly and ignores the seed.
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string, `buf`
/// writable for `cap` bytes (or null with `cap` 0) and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn mtkd_model_translate(
    model: *const MtkdModel,
    text: *const c_char,
    glyph_seed: u64,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> MtkdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = str_arg(text, "text")?;
        let params = &m.checkpoint.params;
        let max_len = m.model.config.max_len;
        let ids = if m.model.kind == ModelKind::Mt {
            if text.is_empty() {
                return Err(Error::EmptyString.into());
            }
            let src = PaddedSeq::from_rows(&[m.src_vocab.encode(text)?], PAD);
            greedy_decode(&m.model, params, ModelInput::Text(&src), max_len)?
        } else {
            let bank = GlyphBank::new(&m.checkpoint.header.src_alphabet, GLYPH_WIDTH, glyph_seed)?;
            let image = bank.render(text)?;
            let batch = ImageBatch::from_images(&[&image])?;
            greedy_decode(&m.model, params, ModelInput::Image(&batch), max_len)?
        };
        let vocab = if m.model.kind == ModelKind::Tir { &m.src_vocab } else { &m.tgt_vocab };
        write_str(&vocab.decode(&ids[0]), buf, cap, out_len)
    })
}

/// Reference translation of `text` under the corpus rule for `alphabet`.
///
/// # Safety
/// Same buffer contract as [`mtkd_model_translate`].
#[no_mangle]
pub unsafe extern "C" fn mtkd_translate_oracle(
    text: *const c_char,
    alphabet: *const c_char,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> MtkdStatus {
    guard(|| {
        let out = translate_oracle(str_arg(text, "text")?, str_arg(alphabet, "alphabet")?)?;
        write_str(&out, buf, cap, out_len)
    })
}

/// Character-level corpus BLEU-4 in `[0, 100]` of `n` hypotheses against
/// one reference each.
///
/// # Safety
/// `hyps` and `refs` must each point to `n` NUL-terminated strings and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtkd_corpus_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> MtkdStatus {
    guard(|| {
        if hyps.is_null() || refs.is_null() {
            return Err(null("sentence array"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let collect = |p: *const *const c_char, what: &str| -> Result<Vec<String>, Failure> {
            (0..n).map(|i| str_arg(*p.add(i), what).map(str::to_owned)).collect()
        };
        *out = corpus_bleu_text(&collect(hyps, "hypothesis")?, &collect(refs, "reference")?)?;
        Ok(())
    })
}

/// Renders `text` as a `32 x (8 * chars)` single-channel image, row-major.
/// Height and width are always reported; pixels are written only when
/// `cap` covers them.
///
/// # Safety
/// `text` must be NUL-terminated, `pixels` writable for `cap` floats (or
/// null with `cap` 0) and both dimension pointers valid.
#[no_mangle]
pub unsafe extern "C" fn mtkd_render_text_image(
    text: *const c_char,
    glyph_seed: u64,
    pixels: *mut f32,
    cap: usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> MtkdStatus {
    guard(|| {
        let image = render_text_image(str_arg(text, "text")?, GLYPH_WIDTH, glyph_seed)?;
        *out_height.as_mut().ok_or_else(|| null("out_height"))? = image.height;
        *out_width.as_mut().ok_or_else(|| null("out_width"))? = image.width;
        if cap < image.pixels.len() {
            return Err(Failure(
                MtkdStatus::BufferTooSmall,
                format!("need {} floats, buffer holds {cap}", image.pixels.len()),
            ));
        }
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        ptr::copy_nonoverlapping(image.pixels.as_ptr(), pixels, image.pixels.len());
        Ok(())
    })
}
