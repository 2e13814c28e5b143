use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use mtkd::corpus::Vocab;
use mtkd::models::{Checkpoint, CheckpointHeader, ModelConfig, ModelKind, Seq2Seq};
use mtkd_ffi::*;

const ALPHABET: &str = "abcd";

fn save_model(dir: &Path, kind: ModelKind) -> (CString, usize) {
    let v = Vocab::build(ALPHABET).unwrap().len();
    let config = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_len: 6, ..Default::default() }
        .with_vocab(v, v);
    let model = Seq2Seq::new(kind, config.clone()).unwrap();
    let header =
        CheckpointHeader { kind, config, src_alphabet: ALPHABET.into(), tgt_alphabet: ALPHABET.into() };
    let path = dir.join(format!("{}.ckpt", kind.name()));
    Checkpoint { header, params: model.init_params() }.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), model.count_params())
}

fn last_error() -> String {
    let p = mtkd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn translate(model: *const MtkdModel, text: &str) -> (MtkdStatus, String) {
    let text = CString::new(text).unwrap();
    let mut len = 0usize;
    let status = unsafe { mtkd_model_translate(model, text.as_ptr(), mtkd_default_glyph_seed(), ptr::null_mut(), 0, &mut len) };
    if status != MtkdStatus::BufferTooSmall {
        return (status, String::new());
    }
    let mut buf = vec![0 as c_char; len + 1];
    let status =
        unsafe { mtkd_model_translate(model, text.as_ptr(), mtkd_default_glyph_seed(), buf.as_mut_ptr(), buf.len(), &mut len) };
    let out = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(out.len(), len);
    (status, out)
}

#[test]
fn load_query_translate_free() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Timt, ModelKind::Tir, ModelKind::Mt] {
        let (path, n_params) = save_model(dir.path(), kind);
        let mut model = ptr::null_mut();
        assert_eq!(unsafe { mtkd_model_load(path.as_ptr(), &mut model) }, MtkdStatus::Ok);
        assert!(!model.is_null());
        assert!(mtkd_last_error().is_null());

        let mut count = 0usize;
        assert_eq!(unsafe { mtkd_model_param_count(model, &mut count) }, MtkdStatus::Ok);
        assert_eq!(count, n_params);

        let mut k = MtkdModelKind::Mt;
        assert_eq!(unsafe { mtkd_model_kind(model, &mut k) }, MtkdStatus::Ok);
        let expected = match kind {
            ModelKind::Timt => MtkdModelKind::Timt,
            ModelKind::Tir => MtkdModelKind::Tir,
            ModelKind::Mt => MtkdModelKind::Mt,
        };
        assert_eq!(k, expected);

        // Untrained weights: any in-alphabet output of bounded length will do.
        let (status, out) = translate(model, "abca");
        assert!(matches!(status, MtkdStatus::Ok | MtkdStatus::BufferTooSmall), "{status:?}");
        assert!(out.chars().all(|c| ALPHABET.contains(c)) && out.len() <= 6, "{out:?}");

        let (status, _) = translate(model, "abz");
        assert_eq!(status, MtkdStatus::InvalidArgument);
        assert!(last_error().contains('z'));
        unsafe { mtkd_model_free(model) };
    }
}

#[test]
fn load_failures_set_status_and_message() {
    let missing = CString::new("/nonexistent/dir/model.ckpt").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mtkd_model_load(missing.as_ptr(), &mut model) }, MtkdStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mtkd_model_load(junk.as_ptr(), &mut model) }, MtkdStatus::Checkpoint);

    assert_eq!(unsafe { mtkd_model_load(ptr::null(), &mut model) }, MtkdStatus::NullPointer);
    assert_eq!(unsafe { mtkd_model_load(missing.as_ptr(), ptr::null_mut()) }, MtkdStatus::NullPointer);
    let mut count = 0usize;
    assert_eq!(unsafe { mtkd_model_param_count(ptr::null(), &mut count) }, MtkdStatus::NullPointer);
    unsafe { mtkd_model_free(ptr::null_mut()) };
}

#[test]
fn oracle_with_size_query() {
    let text = CString::new("abcd").unwrap();
    let alphabet = CString::new(ALPHABET).unwrap();
    let mut len = 0usize;
    let status = unsafe { mtkd_translate_oracle(text.as_ptr(), alphabet.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!((status, len), (MtkdStatus::BufferTooSmall, 4));
    let mut buf = [0 as c_char; 4];
    let status = unsafe { mtkd_translate_oracle(text.as_ptr(), alphabet.as_ptr(), buf.as_mut_ptr(), 4, &mut len) };
    assert_eq!(status, MtkdStatus::BufferTooSmall, "no room for the terminator");
    let mut buf = [0 as c_char; 5];
    let status = unsafe { mtkd_translate_oracle(text.as_ptr(), alphabet.as_ptr(), buf.as_mut_ptr(), 5, &mut len) };
    assert_eq!(status, MtkdStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "badc");
}

#[test]
fn bleu_matches_hand_value() {
    let hyp = CString::new("abcd").unwrap();
    let reference = CString::new("abcde").unwrap();
    let hyps = [hyp.as_ptr()];
    let refs = [reference.as_ptr()];
    let mut bleu = 0.0;
    assert_eq!(unsafe { mtkd_corpus_bleu(hyps.as_ptr(), refs.as_ptr(), 1, &mut bleu) }, MtkdStatus::Ok);
    assert!((bleu - 100.0 * (-0.25f64).exp()).abs() < 1e-9, "{bleu}");

    let empty = CString::new("").unwrap();
    let refs = [empty.as_ptr()];
    assert_eq!(unsafe { mtkd_corpus_bleu(hyps.as_ptr(), refs.as_ptr(), 1, &mut bleu) }, MtkdStatus::InvalidArgument);
    assert!(last_error().contains("empty"));
}

#[test]
fn render_reports_dimensions_then_fills() {
    let text = CString::new("abc").unwrap();
    let (mut h, mut w) = (0usize, 0usize);
    let status = unsafe { mtkd_render_text_image(text.as_ptr(), 7, ptr::null_mut(), 0, &mut h, &mut w) };
    assert_eq!((status, h, w), (MtkdStatus::BufferTooSmall, 32, 24));
    let mut pixels = vec![-1.0f32; h * w];
    let status = unsafe { mtkd_render_text_image(text.as_ptr(), 7, pixels.as_mut_ptr(), pixels.len(), &mut h, &mut w) };
    assert_eq!(status, MtkdStatus::Ok);
    assert!(pixels.iter().all(|&p| p == 0.0 || p == 1.0));
    assert!(pixels.iter().any(|&p| p == 1.0));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mtkd.h")).unwrap();
    for name in [
        "mtkd_last_error",
        "mtkd_default_glyph_seed",
        "mtkd_model_load",
        "mtkd_model_free",
        "mtkd_model_param_count",
        "mtkd_model_kind",
        "mtkd_model_translate",
        "mtkd_translate_oracle",
        "mtkd_corpus_bleu",
        "mtkd_render_text_image",
        "typedef struct MtkdModel MtkdModel",
        "MTKD_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
