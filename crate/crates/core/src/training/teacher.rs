use std::path::Path;

use super::run::{run_training, RunSetup, Score};
use super::{TrainConfig, TrainOutcome};
use crate::corpus::{batch, Corpus, TripleSample, PAD};
use crate::error::{Error, Result};
use crate::evaluation::length_groups;
use crate::losses::{ce_loss, LossReport};
use crate::models::{argmax_lowest, CheckpointHeader, Ctx, ModelConfig, ModelInput, ModelKind, ParamStore, Seq2Seq};

pub const TIR_CHECKPOINT: &str = "tir.ckpt";
pub const MT_CHECKPOINT: &str = "mt.ckpt";

/// Fraction of gold tokens (EOS included) that are the arg-max under
/// teacher forcing.
pub fn token_accuracy(model: &Seq2Seq, params: &ParamStore<f32>, samples: &[TripleSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let lengths: Vec<usize> = samples.iter().map(TripleSample::char_len).collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for group in length_groups(&lengths, 64) {
        let refs: Vec<&TripleSample> = group.iter().map(|&i| &samples[i]).collect();
        let bt = batch(&refs, PAD)?;
        let (input, prefix, gold) = match model.kind {
            ModelKind::Tir => (ModelInput::Image(&bt.images), &bt.src_in, &bt.src_out),
            ModelKind::Mt => (ModelInput::Text(&bt.src), &bt.tgt_in, &bt.tgt_out),
            ModelKind::Timt => (ModelInput::Image(&bt.images), &bt.tgt_in, &bt.tgt_out),
        };
        let mut cx = Ctx::inference(params);
        let enc = model.encode(&mut cx, input)?;
        let d = model.decode_teacher_forced(&mut cx, &enc.memory, prefix)?;
        let logits = &cx.g.value(d.logits).data;
        for (r, (&id, &m)) in gold.ids.iter().zip(&gold.mask).enumerate() {
            if m {
                total += 1;
                hit += usize::from(argmax_lowest(&logits[r * d.vocab..(r + 1) * d.vocab]) as u32 == id);
            }
        }
    }
    Ok(hit as f64 / total as f64)
}

fn pretrain(
    kind: ModelKind,
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    checkpoint_name: &str,
) -> Result<TrainOutcome> {
    let config = model_cfg.clone().with_vocab(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let model = Seq2Seq::new(kind, config)?;
    let header = CheckpointHeader {
        kind,
        config: model.config.clone(),
        src_alphabet: corpus.spec.alphabet.clone(),
        tgt_alphabet: corpus.spec.alphabet.clone(),
    };
    let setup = RunSetup { model: &model, header, samples: &corpus.train, cfg, out_dir, checkpoint_name };
    run_training(
        setup,
        model.init_params(),
        |cx, bt| {
            let (input, prefix, gold) = match kind {
                ModelKind::Tir => (ModelInput::Image(&bt.images), &bt.src_in, &bt.src_out),
                _ => (ModelInput::Text(&bt.src), &bt.tgt_in, &bt.tgt_out),
            };
            let enc = model.encode(cx, input)?;
            let d = model.decode_teacher_forced(cx, &enc.memory, prefix)?;
            let loss = ce_loss(&mut cx.g, &d, gold)?;
            let total = cx.g.value(loss).item() as f64;
            Ok((loss, LossReport { total, ..Default::default() }))
        },
        |params| token_accuracy(&model, params, &corpus.valid).map(Score::Accuracy),
    )
}

/// Trains the recognition teacher on image to source-text pairs and keeps
/// the epoch with the best validation token accuracy.
pub fn pretrain_tir(corpus: &Corpus, model_cfg: &ModelConfig, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    pretrain(ModelKind::Tir, corpus, model_cfg, cfg, out_dir, TIR_CHECKPOINT)
}

/// Trains the text translation teacher on source to target pairs.
pub fn pretrain_mt(corpus: &Corpus, model_cfg: &ModelConfig, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    pretrain(ModelKind::Mt, corpus, model_cfg, cfg, out_dir, MT_CHECKPOINT)
}
