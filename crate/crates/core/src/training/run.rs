use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};

use super::log::{RunFiles, StepLog};
use super::optim::{clip_global_norm, Adam};
use super::sampler::length_bucketed_batches;
use super::{RunRecord, TrainConfig, TrainOutcome};
use crate::autograd::Var;
use crate::corpus::{batch, mix64, Batch, TripleSample, PAD};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::models::{Checkpoint, CheckpointHeader, Ctx, ParamStore, Seq2Seq};

const SHUFFLE_SALT: u64 = 0x7368_7566;
const DROPOUT_SALT: u64 = 0x6472_6f70;

/// Validation result used for checkpoint selection; higher is better.
pub(crate) enum Score {
    Bleu(f64),
    Accuracy(f64),
}

impl Score {
    fn value(&self) -> f64 {
        match *self {
            Score::Bleu(v) | Score::Accuracy(v) => v,
        }
    }
}

pub(crate) struct RunSetup<'a> {
    pub model: &'a Seq2Seq,
    pub header: CheckpointHeader,
    pub samples: &'a [TripleSample],
    pub cfg: &'a TrainConfig,
    pub out_dir: &'a Path,
    pub checkpoint_name: &'a str,
}

/// Runs one backward pass and gathers gradients of every bound parameter.
fn gradients(cx: &Ctx<'_, f32>, loss: Var) -> BTreeMap<String, Vec<f32>> {
    let mut grads = cx.g.backward(loss);
    cx.bound_params().filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g))).collect()
}

/// Epoch loop shared by every model: shuffled same-length batches, one
/// Adam step per batch with clipping, validation after each epoch, and the
/// best-scoring parameters saved at the end.
pub(crate) fn run_training<S, V>(
    setup: RunSetup<'_>,
    mut params: ParamStore<f32>,
    mut step_loss: S,
    mut validate: V,
) -> Result<TrainOutcome>
where
    S: FnMut(&mut Ctx<'_, f32>, &Batch) -> Result<(Var, LossReport)>,
    V: FnMut(&ParamStore<f32>) -> Result<Score>,
{
    let RunSetup { model, header, samples, cfg, out_dir, checkpoint_name } = setup;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let run = model.kind.name().to_string();
    let mut files = RunFiles::open(out_dir)?;
    let mut opt = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let lengths: Vec<usize> = samples.iter().map(TripleSample::char_len).collect();
    let shuffle_base = cfg.stream_seed(SHUFFLE_SALT);
    let dropout_base = cfg.stream_seed(DROPOUT_SALT);
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = length_bucketed_batches(&lengths, cfg.batch_size, mix64(shuffle_base ^ epoch as u64));
        let mut sum = LossReport::default();
        for (step, positions) in batches.iter().enumerate() {
            let refs: Vec<&TripleSample> = positions.iter().map(|&i| &samples[i]).collect();
            let bt = batch(&refs, PAD)?;
            global_step += 1;
            let mut cx = Ctx::training(&params, model.config.dropout, mix64(dropout_base ^ global_step));
            let (loss, report) = step_loss(&mut cx, &bt)?;
            let value = cx.g.value(loss).item();
            if !value.is_finite() || !report.total.is_finite() {
                return Err(Error::Divergence { epoch, step: step + 1 });
            }
            let mut grads = gradients(&cx, loss);
            drop(cx);
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, step: step + 1 });
            }
            opt.update(&mut params, &grads);
            files.step(&StepLog { epoch, step: step + 1, lr: opt.lr(), loss: report.clone() })?;
            sum.accumulate(&report);
        }
        let train = sum.scaled(1.0 / batches.len() as f64);
        let score = validate(&params)?;
        let improved = best.as_ref().is_none_or(|(b, _, _)| score.value() > *b);
        if improved {
            best = Some((score.value(), epoch, params.clone()));
        }
        let (valid_bleu, valid_accuracy) = match score {
            Score::Bleu(b) => (Some(b), None),
            Score::Accuracy(a) => (None, Some(a)),
        };
        let record = RunRecord {
            run: run.clone(),
            model: model.kind,
            epoch,
            train,
            valid_bleu,
            valid_accuracy,
            seconds: start.elapsed().as_secs_f64(),
            checkpoint: checkpoint_name.to_string(),
            best: improved,
        };
        info!(
            "{run} epoch {epoch}/{}: loss {:.4}, valid {:.4}{} ({:.1}s)",
            cfg.epochs,
            record.train.total,
            score.value(),
            if improved { " *" } else { "" },
            record.seconds
        );
        debug!("{run} epoch {epoch} terms {:?}", record.train);
        files.record(&record)?;
        records.push(record);
    }
    files.flush()?;
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let checkpoint = Checkpoint { header, params: best_params };
    checkpoint.save(&files.dir().join(checkpoint_name))?;
    Ok(TrainOutcome { checkpoint, records, best_epoch })
}
