//! BLEU scoring, end-to-end versus pipeline comparison, and report files.

mod bleu;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use bleu::{char_tokens, corpus_bleu, corpus_bleu_text, MAX_ORDER};
pub use report::{emit_report, ReportBundle, CURVE_FILE, REPORT_FILE, SUMMARY_FILE};

use crate::corpus::{batch, Corpus, ImageBatch, PaddedSeq, Split, TripleSample, NUM_SPECIALS, PAD};
use crate::error::{Error, Result};
use crate::models::{greedy_decode, Checkpoint, ModelInput, ModelKind, ParamStore, Seq2Seq};

/// Sentences decoded together when throughput, not latency, matters.
pub const DECODE_BATCH: usize = 64;

/// Groups positions of `lengths` into same-length chunks of at most
/// `batch_size`, in ascending length then position order.
pub(crate) fn length_groups(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in lengths.iter().enumerate() {
        by_len.entry(l).or_default().push(i);
    }
    by_len.into_values().flat_map(|v| v.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>()).collect()
}

fn input_for<'a>(kind: ModelKind, bt: &'a crate::corpus::Batch) -> ModelInput<'a> {
    match kind {
        ModelKind::Mt => ModelInput::Text(&bt.src),
        ModelKind::Timt | ModelKind::Tir => ModelInput::Image(&bt.images),
    }
}

/// Greedy outputs for every sample, in sample order. Samples are decoded in
/// same-length groups so no batch carries padding.
pub fn decode_samples(model: &Seq2Seq, params: &ParamStore<f32>, samples: &[TripleSample]) -> Result<Vec<Vec<u32>>> {
    let lengths: Vec<usize> = samples.iter().map(TripleSample::char_len).collect();
    let mut out = vec![Vec::new(); samples.len()];
    for group in length_groups(&lengths, DECODE_BATCH) {
        let refs: Vec<&TripleSample> = group.iter().map(|&i| &samples[i]).collect();
        let bt = batch(&refs, PAD)?;
        let decoded = greedy_decode(model, params, input_for(model.kind, &bt), model.config.max_len)?;
        for (i, ids) in group.into_iter().zip(decoded) {
            out[i] = ids;
        }
    }
    Ok(out)
}

/// Keeps only alphabet ids, the form the translation model reads.
fn as_mt_input(recognized: &[u32]) -> Vec<u32> {
    recognized.iter().copied().filter(|&id| id as usize >= NUM_SPECIALS).collect()
}

/// Recognition then translation for every sample. An empty recognition
/// yields an empty translation.
pub fn decode_pipeline(
    tir: (&Seq2Seq, &ParamStore<f32>),
    mt: (&Seq2Seq, &ParamStore<f32>),
    samples: &[TripleSample],
) -> Result<Vec<Vec<u32>>> {
    let recognized: Vec<Vec<u32>> =
        decode_samples(tir.0, tir.1, samples)?.iter().map(|r| as_mt_input(r)).collect();
    let lengths: Vec<usize> = recognized.iter().map(Vec::len).collect();
    let mut out = vec![Vec::new(); samples.len()];
    for group in length_groups(&lengths, DECODE_BATCH) {
        if lengths[group[0]] == 0 {
            continue;
        }
        let rows: Vec<Vec<u32>> = group.iter().map(|&i| recognized[i].clone()).collect();
        let src = PaddedSeq::from_rows(&rows, PAD);
        let decoded = greedy_decode(mt.0, mt.1, ModelInput::Text(&src), mt.0.config.max_len)?;
        for (i, ids) in group.into_iter().zip(decoded) {
            out[i] = ids;
        }
    }
    Ok(out)
}

/// What to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum EvalTarget<'a> {
    /// End-to-end image translation model.
    Student(&'a Checkpoint),
    /// Recognition model feeding the text translation model.
    Pipeline { tir: &'a Checkpoint, mt: &'a Checkpoint },
}

impl EvalTarget<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalTarget::Student(_) => "student",
            EvalTarget::Pipeline { .. } => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyOptions {
    pub warmup: usize,
    pub timed: usize,
}

impl Default for LatencyOptions {
    fn default() -> Self {
        Self { warmup: 10, timed: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub bleu: f64,
    pub n_params: usize,
    pub n_sentences: usize,
    pub latency_ms_mean: f64,
    pub latency_ms_median: f64,
    pub latency_samples: usize,
}

fn expect_kind(ck: &Checkpoint, kind: ModelKind) -> Result<Seq2Seq> {
    if ck.header.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {} checkpoint, got {}",
            kind.name(),
            ck.header.kind.name()
        )));
    }
    ck.model()
}

fn check_alphabets(ck: &Checkpoint, corpus: &Corpus) -> Result<()> {
    if ck.header.src_alphabet != corpus.spec.alphabet || ck.header.tgt_alphabet != corpus.spec.alphabet {
        return Err(Error::InvalidArgument(format!(
            "{} checkpoint was trained on alphabet {:?}, corpus uses {:?}",
            ck.header.kind.name(),
            ck.header.src_alphabet,
            corpus.spec.alphabet
        )));
    }
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-sentence decode times in milliseconds at batch size one. Inputs are
/// prepared before the clock starts; `warmup` sentences run untimed first.
/// Samples are reused cyclically when the split is short.
fn time_decoding<F>(samples: &[TripleSample], opts: LatencyOptions, mut decode: F) -> Result<Vec<f64>>
where
    F: FnMut(&ImageBatch) -> Result<()>,
{
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let inputs: Vec<ImageBatch> = (0..opts.warmup + opts.timed)
        .map(|i| ImageBatch::from_images(&[&samples[i % samples.len()].image]))
        .collect::<Result<_>>()?;
    let mut times = Vec::with_capacity(opts.timed);
    for (i, input) in inputs.iter().enumerate() {
        let start = Instant::now();
        decode(input)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= opts.warmup {
            times.push(ms);
        }
    }
    Ok(times)
}

/// BLEU over a whole split plus single-sentence decode latency.
pub fn evaluate_model(target: EvalTarget<'_>, corpus: &Corpus, split: Split, opts: LatencyOptions) -> Result<EvalReport> {
    if opts.timed == 0 {
        return Err(Error::InvalidArgument("latency needs at least one timed sentence".into()));
    }
    let samples = corpus.split(split);
    let (hyps, n_params, times) = match target {
        EvalTarget::Student(ck) => {
            check_alphabets(ck, corpus)?;
            let model = expect_kind(ck, ModelKind::Timt)?;
            let hyps = decode_samples(&model, &ck.params, samples)?;
            let max_len = model.config.max_len;
            let times = time_decoding(samples, opts, |img| {
                greedy_decode(&model, &ck.params, ModelInput::Image(img), max_len).map(drop)
            })?;
            (hyps, model.count_params(), times)
        }
        EvalTarget::Pipeline { tir, mt } => {
            check_alphabets(tir, corpus)?;
            check_alphabets(mt, corpus)?;
            let tir_model = expect_kind(tir, ModelKind::Tir)?;
            let mt_model = expect_kind(mt, ModelKind::Mt)?;
            let hyps = decode_pipeline((&tir_model, &tir.params), (&mt_model, &mt.params), samples)?;
            let times = time_decoding(samples, opts, |img| {
                let rec = greedy_decode(&tir_model, &tir.params, ModelInput::Image(img), tir_model.config.max_len)?;
                let src = as_mt_input(&rec[0]);
                if !src.is_empty() {
                    let src = PaddedSeq::from_rows(&[src], PAD);
                    greedy_decode(&mt_model, &mt.params, ModelInput::Text(&src), mt_model.config.max_len)?;
                }
                Ok(())
            })?;
            (hyps, tir_model.count_params() + mt_model.count_params(), times)
        }
    };
    let refs: Vec<Vec<u32>> = samples.iter().map(|s| s.tgt_ids[1..s.tgt_ids.len() - 1].to_vec()).collect();
    let bleu = corpus_bleu(&hyps, &refs)?;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(EvalReport {
        model: target.name().to_string(),
        split: split.name().to_string(),
        bleu,
        n_params,
        n_sentences: samples.len(),
        latency_ms_mean: times.iter().sum::<f64>() / times.len() as f64,
        latency_ms_median: median(&sorted),
        latency_samples: times.len(),
    })
}

/// BLEU of a target-language model's greedy outputs on `samples`.
pub fn bleu_on(model: &Seq2Seq, params: &ParamStore<f32>, samples: &[TripleSample]) -> Result<f64> {
    let hyps = decode_samples(model, params, samples)?;
    let refs: Vec<Vec<u32>> = samples
        .iter()
        .map(|s| {
            let ids = if model.kind == ModelKind::Tir { &s.src_ids } else { &s.tgt_ids };
            ids[1..ids.len() - 1].to_vec()
        })
        .collect();
    corpus_bleu(&hyps, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_are_same_length_and_cover_everything() {
        let g = length_groups(&[3, 5, 3, 3, 5, 4], 2);
        assert_eq!(g, vec![vec![0, 2], vec![3], vec![5], vec![1, 4]]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 9.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 9.0]), 3.0);
    }

    #[test]
    fn specials_are_dropped_between_stages() {
        assert_eq!(as_mt_input(&[0, 4, 3, 7, 2]), vec![4, 7]);
    }
}
