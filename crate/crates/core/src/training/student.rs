use std::path::Path;

use log::info;

use super::run::{run_training, RunSetup, Score};
use super::{TrainConfig, TrainOutcome};
use crate::autograd::{Graph, Tensor};
use crate::corpus::{batch, Corpus, TripleSample, PAD};
use crate::error::{Error, Result};
use crate::evaluation::{bleu_on, length_groups};
use crate::losses::{
    ce_loss, combined_loss, decoder_sentence_kd, decoder_token_kd, sentence_kd_l2, teacher_sequence_targets,
    token_kd_l2, LossTerms,
};
use crate::models::{
    greedy_decode, Checkpoint, CheckpointHeader, Ctx, FeatureSeq, ModelConfig, ModelInput, ModelKind, Seq2Seq,
};

pub const STUDENT_CHECKPOINT: &str = "student.ckpt";

/// Frozen teacher outputs for every training sample, computed once.
///
/// Teachers run without dropout, so their outputs are a pure function of
/// the input and can be shared by every student run.
#[derive(Debug, Clone)]
pub struct TeacherCache {
    pub tir: Checkpoint,
    pub mt: Checkpoint,
    dim: usize,
    vocab: usize,
    /// Recognition image features, `len x dim` per sample.
    image_features: Vec<Vec<f32>>,
    /// Translation sequential-encoder output, `len x dim` per sample.
    sequential_features: Vec<Vec<f32>>,
    /// Translation decoder distributions under the gold prefix,
    /// `(len + 1) x vocab` per sample.
    step_probs: Vec<Vec<f32>>,
    /// Greedy translations, without BOS/EOS.
    outputs: Vec<Vec<u32>>,
}

fn split_rows(values: &[f32], batch: usize) -> impl Iterator<Item = Vec<f32>> + '_ {
    let per = values.len() / batch;
    values.chunks(per).map(<[f32]>::to_vec)
}

impl TeacherCache {
    pub fn build(tir: Checkpoint, mt: Checkpoint, corpus: &Corpus) -> Result<Self> {
        if tir.header.kind != ModelKind::Tir || mt.header.kind != ModelKind::Mt {
            return Err(Error::InvalidArgument("teacher checkpoints must be a tir and an mt model".into()));
        }
        for ck in [&tir, &mt] {
            if ck.header.src_alphabet != corpus.spec.alphabet || ck.header.tgt_alphabet != corpus.spec.alphabet {
                return Err(Error::InvalidArgument(format!(
                    "{} teacher was trained on a different alphabet",
                    ck.header.kind.name()
                )));
            }
        }
        let tir_model = tir.model()?;
        let mt_model = mt.model()?;
        if tir_model.config.d_model != mt_model.config.d_model {
            return Err(Error::ShapeMismatch(format!(
                "teacher widths differ: tir {} vs mt {}",
                tir_model.config.d_model, mt_model.config.d_model
            )));
        }
        let n = corpus.train.len();
        let mut cache = Self {
            dim: mt_model.config.d_model,
            vocab: mt_model.out_vocab(),
            image_features: vec![Vec::new(); n],
            sequential_features: vec![Vec::new(); n],
            step_probs: vec![Vec::new(); n],
            outputs: vec![Vec::new(); n],
            tir,
            mt,
        };
        let lengths: Vec<usize> = corpus.train.iter().map(TripleSample::char_len).collect();
        for group in length_groups(&lengths, 64) {
            let refs: Vec<&TripleSample> = group.iter().map(|&i| &corpus.train[i]).collect();
            let bt = batch(&refs, PAD)?;
            let b = group.len();

            let mut cx = Ctx::inference(&cache.tir.params);
            let local = tir_model.encode(&mut cx, ModelInput::Image(&bt.images))?.local;
            for (&i, rows) in group.iter().zip(split_rows(&cx.g.value(local.var).data, b)) {
                cache.image_features[i] = rows;
            }

            let mut cx = Ctx::inference(&cache.mt.params);
            let enc = mt_model.encode(&mut cx, ModelInput::Text(&bt.src))?;
            let dists = mt_model.decode_teacher_forced(&mut cx, &enc.memory, &bt.tgt_in)?;
            let probs = dists.probs(&cx.g);
            for (&i, rows) in group.iter().zip(split_rows(&cx.g.value(enc.memory.var).data, b)) {
                cache.sequential_features[i] = rows;
            }
            for (&i, rows) in group.iter().zip(split_rows(&probs, b)) {
                cache.step_probs[i] = rows;
            }
            let outs = greedy_decode(&mt_model, &cache.mt.params, ModelInput::Text(&bt.src), mt_model.config.max_len)?;
            for (&i, out) in group.iter().zip(outs) {
                cache.outputs[i] = out;
            }
        }
        let exact = corpus.train.iter().zip(&cache.outputs).filter(|(s, o)| s.tgt_ids[1..s.tgt_ids.len() - 1] == o[..]).count();
        info!("teacher cache: {n} samples, translation teacher exact on {exact}");
        Ok(cache)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Greedy translation-teacher output for a training sample.
    pub fn output(&self, index: usize) -> &[u32] {
        &self.outputs[index]
    }

    fn check_student(&self, student: &ModelConfig) -> Result<()> {
        if student.d_model != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "student width {} does not match teacher width {}",
                student.d_model, self.dim
            )));
        }
        if student.tgt_vocab != self.vocab {
            return Err(Error::ShapeMismatch(format!(
                "student target vocabulary {} does not match teacher {}",
                student.tgt_vocab, self.vocab
            )));
        }
        Ok(())
    }

    /// Teacher rows laid out like `like`, as a gradient-free constant.
    fn features(&self, g: &mut Graph<f32>, rows: &[Vec<f32>], indices: &[usize], like: &FeatureSeq) -> Result<FeatureSeq> {
        let (len, dim) = (like.len, like.dim);
        let mut data = vec![0.0f32; like.batch * len * dim];
        for (b, &i) in indices.iter().enumerate() {
            let r = &rows[i];
            if r.len() != like.valid_len(b) * dim {
                return Err(Error::ShapeMismatch(format!(
                    "teacher features for sample {i} have {} rows, student has {}",
                    r.len() / dim,
                    like.valid_len(b)
                )));
            }
            data[b * len * dim..b * len * dim + r.len()].copy_from_slice(r);
        }
        let var = g.constant(Tensor::new(vec![like.batch, len, dim], data));
        Ok(FeatureSeq { var, ..like.clone() })
    }

    fn probs(&self, indices: &[usize], steps: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0f32; indices.len() * steps * self.vocab];
        for (b, &i) in indices.iter().enumerate() {
            let p = &self.step_probs[i];
            if p.len() > steps * self.vocab {
                return Err(Error::ShapeMismatch("teacher distributions longer than student prefix".into()));
            }
            let at = b * steps * self.vocab;
            out[at..at + p.len()].copy_from_slice(p);
        }
        Ok(out)
    }
}

/// Distils both teachers into a fresh image translation model with the
/// combined objective and keeps the epoch with the best validation BLEU.
///
/// With `lambda_kd = 0` the teachers are never consulted, so the run is
/// identical to one without teachers.
pub fn train_student(
    corpus: &Corpus,
    teachers: Option<&TeacherCache>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let config = model_cfg.clone().with_vocab(corpus.src_vocab.len(), corpus.tgt_vocab.len());
    let model = Seq2Seq::new(ModelKind::Timt, config)?;
    let w = cfg.kd.clone();
    let distil = w.lambda_kd > 0.0;
    if (distil || cfg.warm_start_image_encoder) && teachers.is_none() {
        return Err(Error::InvalidConfig("distillation and warm start need teacher checkpoints".into()));
    }
    if let Some(t) = teachers {
        t.check_student(&model.config)?;
        if t.train_len() != corpus.train.len() {
            return Err(Error::InvalidArgument("teacher cache was built for a different corpus".into()));
        }
    }
    let kd_source = teachers.filter(|_| distil);
    let mut params = model.init_params::<f32>();
    if cfg.warm_start_image_encoder {
        let tir = &teachers.expect("checked above").tir.params;
        for (name, t) in params.iter_mut().filter(|(n, _)| n.starts_with("image.")) {
            let src = tir.get(name).ok_or_else(|| Error::ShapeMismatch(format!("teacher lacks {name}")))?;
            if src.shape != t.shape {
                return Err(Error::ShapeMismatch(format!("{name}: teacher {:?} vs student {:?}", src.shape, t.shape)));
            }
            t.data.clone_from(&src.data);
        }
    }
    let header = CheckpointHeader {
        kind: ModelKind::Timt,
        config: model.config.clone(),
        src_alphabet: corpus.spec.alphabet.clone(),
        tgt_alphabet: corpus.spec.alphabet.clone(),
    };
    let active = w.active_terms();
    let max_len = model.config.max_len;
    let setup =
        RunSetup { model: &model, header, samples: &corpus.train, cfg, out_dir, checkpoint_name: STUDENT_CHECKPOINT };
    run_training(
        setup,
        params,
        |cx, bt| {
            let enc = model.encode(cx, ModelInput::Image(&bt.images))?;
            let dists = model.decode_teacher_forced(cx, &enc.memory, &bt.tgt_in)?;
            let l_timt = ce_loss(&mut cx.g, &dists, &bt.tgt_out)?;
            let mut kd = [None; 6];
            if let Some(t) = kd_source {
                let sq = w.squared_l2;
                if active[0] || active[1] {
                    let tf = t.features(&mut cx.g, &t.image_features, &bt.indices, &enc.local)?;
                    if active[0] {
                        kd[0] = Some(token_kd_l2(&mut cx.g, &enc.local, &tf, sq)?);
                    }
                    if active[1] {
                        kd[1] = Some(sentence_kd_l2(&mut cx.g, &enc.local, &tf, sq)?);
                    }
                }
                if active[2] || active[3] {
                    let tf = t.features(&mut cx.g, &t.sequential_features, &bt.indices, &enc.memory)?;
                    if active[2] {
                        kd[2] = Some(token_kd_l2(&mut cx.g, &enc.memory, &tf, sq)?);
                    }
                    if active[3] {
                        kd[3] = Some(sentence_kd_l2(&mut cx.g, &enc.memory, &tf, sq)?);
                    }
                }
                if active[4] {
                    let probs = t.probs(&bt.indices, bt.tgt_in.len)?;
                    kd[4] = Some(decoder_token_kd(&mut cx.g, &dists, &probs, &bt.tgt_in.mask)?);
                }
                if active[5] {
                    let outs: Vec<Vec<u32>> = bt.indices.iter().map(|&i| t.outputs[i].clone()).collect();
                    let (prefix, gold) = teacher_sequence_targets(&outs, max_len);
                    // A teacher that reproduces the reference shares the gold pass.
                    kd[5] = Some(if gold == bt.tgt_out {
                        decoder_sentence_kd(&mut cx.g, &dists, &gold)?
                    } else {
                        let d = model.decode_teacher_forced(cx, &enc.memory, &prefix)?;
                        decoder_sentence_kd(&mut cx.g, &d, &gold)?
                    });
                }
            }
            combined_loss(&mut cx.g, &LossTerms { l_timt, kd }, &w)
        },
        |params| bleu_on(&model, params, &corpus.valid).map(Score::Bleu),
    )
}

impl TeacherCache {
    fn train_len(&self) -> usize {
        self.outputs.len()
    }
}
