//! Central finite-difference verification of analytic gradients, run in
//! `f64` with dropout off.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{softmax_in_place, Graph, Tensor, Var};
use crate::corpus::{batch, generate_corpus, CorpusSpec, PaddedSeq, EOS, PAD};
use crate::error::{Error, Result};
use crate::losses::{
    ce_loss, decoder_sentence_kd, decoder_token_kd, sentence_kd_l2, teacher_sequence_targets, token_kd_l2,
};
use crate::models::{Ctx, FeatureSeq, ModelConfig, ModelInput, ModelKind, ParamStore, Seq2Seq, StepDistributions};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates probed; every coordinate when the input is smaller.
    pub max_probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_probes: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub probes: usize,
}

impl GradCheckResult {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss)
    }
}

fn probe_set(sizes: &[usize], max_probes: usize, seed: u64) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> =
        sizes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    if all.len() <= max_probes {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, all.len(), max_probes).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

/// Compares the gradient of `build`'s scalar output with respect to every
/// tensor in `inputs` against central differences on a random subset of
/// coordinates. `build` receives the inputs as leaves, in order.
pub fn gradient_check<F>(name: &str, inputs: &[Tensor<f64>], build: F, cfg: &GradCheckConfig) -> Result<GradCheckResult>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new(track);
        let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &leaves)?;
        finite(g.value(loss).item())?;
        Ok((g, leaves, loss))
    };
    let (g, leaves, loss) = eval(inputs, true)?;
    let grads = g.backward(loss);
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let probes = probe_set(&sizes, cfg.max_probes, cfg.seed);
    let mut worst = 0.0f64;
    let mut shifted = inputs.to_vec();
    for &(t, i) in &probes {
        let analytic = grads.get(leaves[t]).map_or(0.0, |g| g[i]);
        let orig = inputs[t].data[i];
        shifted[t].data[i] = orig + cfg.epsilon;
        let (gp, _, lp) = eval(&shifted, false)?;
        shifted[t].data[i] = orig - cfg.epsilon;
        let (gm, _, lm) = eval(&shifted, false)?;
        shifted[t].data[i] = orig;
        let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * cfg.epsilon);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(GradCheckResult { name: name.to_string(), max_rel_error: worst, probes: probes.len() })
}

/// Like [`gradient_check`] but differentiates with respect to a model's
/// parameters; `build` runs a deterministic forward and returns the loss.
pub fn param_gradient_check<F>(
    name: &str,
    params: &ParamStore<f64>,
    build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckResult>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut cx = Ctx::inference(params);
        let loss = build(&mut cx)?;
        finite(cx.g.value(loss).item())
    };
    let mut cx = Ctx::training(params, 0.0, 0);
    let loss = build(&mut cx)?;
    finite(cx.g.value(loss).item())?;
    let grads = cx.g.backward(loss);
    let names: Vec<String> = params.names().cloned().collect();
    let bound: std::collections::HashMap<&String, Var> = cx.bound_params().map(|(n, &v)| (n, v)).collect();
    let sizes: Vec<usize> = names.iter().map(|n| params.get(n).unwrap().numel()).collect();
    let probes = probe_set(&sizes, cfg.max_probes, cfg.seed);
    let mut worst = 0.0f64;
    let mut shifted = params.clone();
    for &(t, i) in &probes {
        let analytic = bound.get(&names[t]).and_then(|&v| grads.get(v)).map_or(0.0, |g| g[i]);
        let orig = params.get(&names[t]).unwrap().data[i];
        shifted.get_mut(&names[t]).unwrap().data[i] = orig + cfg.epsilon;
        let fp = eval(&shifted)?;
        shifted.get_mut(&names[t]).unwrap().data[i] = orig - cfg.epsilon;
        let fm = eval(&shifted)?;
        shifted.get_mut(&names[t]).unwrap().data[i] = orig;
        worst = worst.max(relative_error(analytic, (fp - fm) / (2.0 * cfg.epsilon)));
    }
    Ok(GradCheckResult { name: name.to_string(), max_rel_error: worst, probes: probes.len() })
}

const B: usize = 2;
const L: usize = 3;
const D: usize = 4;
const V: usize = 6;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

/// Second sample is one position shorter so masking is exercised.
fn toy_mask() -> Vec<bool> {
    vec![true, true, true, true, true, false]
}

fn feature(var: Var, mask: &[bool], len: usize, dim: usize) -> FeatureSeq {
    FeatureSeq { var, mask: mask.to_vec(), batch: mask.len() / len, len, dim }
}

fn steps(var: Var, mask: &[bool], steps: usize, vocab: usize) -> StepDistributions {
    StepDistributions { logits: var, mask: mask.to_vec(), batch: mask.len() / steps, steps, vocab }
}

type FeatureLoss = fn(&mut Graph<f64>, &FeatureSeq, &FeatureSeq, bool) -> Result<Var>;

const FEATURE_TERMS: [(&str, &str, FeatureLoss); 4] = [
    ("token_kd_image", "image", token_kd_l2),
    ("sentence_kd_image", "image", sentence_kd_l2),
    ("token_kd_sequential", "sequential", token_kd_l2),
    ("sentence_kd_sequential", "sequential", sentence_kd_l2),
];

/// The six distillation terms and the three cross-entropy losses at toy
/// sizes (batch 2, length 3, width 4, vocabulary 6), each differentiated
/// with respect to its student-side input.
pub fn standard_checks(cfg: &GradCheckConfig) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let mut out = Vec::new();
    let mask = toy_mask();

    // Student and teacher drawn independently, so no row difference is zero.
    for (name, _, loss) in FEATURE_TERMS {
        let student = Tensor::new(vec![B, L, D], uniform(&mut rng, B * L * D, 1.0));
        let teacher = Tensor::new(vec![B, L, D], uniform(&mut rng, B * L * D, 1.0));
        out.push(gradient_check(
            name,
            &[student],
            |g, v| {
                let t = g.constant(teacher.clone());
                loss(g, &feature(v[0], &mask, L, D), &feature(t, &mask, L, D), false)
            },
            cfg,
        )?);
    }

    let logits = Tensor::new(vec![B, L, V], uniform(&mut rng, B * L * V, 3.0));
    let mut teacher_probs = uniform(&mut rng, B * L * V, 2.0);
    teacher_probs.chunks_mut(V).for_each(softmax_in_place);
    out.push(gradient_check(
        "token_kd_decoder",
        std::slice::from_ref(&logits),
        |g, v| decoder_token_kd(g, &steps(v[0], &mask, L, V), &teacher_probs, &mask),
        cfg,
    )?);
    // Teacher outputs of lengths 2 and 1 give EOS-terminated golds of 3 and 2.
    let (_, teacher_gold) = teacher_sequence_targets(&[vec![4, 5], vec![5]], 16);
    out.push(gradient_check(
        "sentence_kd_decoder",
        std::slice::from_ref(&logits),
        |g, v| decoder_sentence_kd(g, &steps(v[0], &teacher_gold.mask, L, V), &teacher_gold),
        cfg,
    )?);

    let golds = [
        ("ce_timt", vec![vec![5, 4, EOS], vec![4, EOS]]),
        ("ce_tir", vec![vec![4, 4, EOS], vec![5, EOS]]),
        ("ce_mt", vec![vec![4, 5, EOS], vec![5, EOS]]),
    ];
    for (name, rows) in golds {
        let gold = PaddedSeq::from_rows(&rows, PAD);
        let logits = Tensor::new(vec![B, L, V], uniform(&mut rng, B * L * V, 3.0));
        out.push(gradient_check(name, &[logits], |g, v| ce_loss(g, &steps(v[0], &gold.mask, L, V), &gold), cfg)?);
    }
    Ok(out)
}

const NET_D: usize = 16;

fn toy_model(kind: ModelKind) -> Result<(Seq2Seq, ParamStore<f64>)> {
    let cfg = ModelConfig {
        d_model: NET_D,
        n_layers: 1,
        n_heads: 2,
        d_ff: 2 * NET_D,
        dropout: 0.0,
        seed: 11,
        ..Default::default()
    }
    .with_vocab(V, V);
    let model = Seq2Seq::new(kind, cfg)?;
    // Fresh biases and norm shifts are exactly zero, which parks blank image
    // patches on the ReLU kink; jitter every parameter off it.
    let mut params: ParamStore<f64> = model.init_params();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a69_7474);
    for (_, t) in params.iter_mut() {
        t.data.iter_mut().for_each(|x| *x += rng.gen_range(-0.2..0.2));
    }
    Ok((model, params))
}

/// The same nine losses differentiated through small networks (one layer,
/// width 16) with respect to a sample of their parameters: cross-entropy
/// through each model kind, feature terms through the student's encoders
/// and decoder terms through its decoder. A probe whose `±ε` window spans a
/// ReLU kink shows up as a large error even when the gradient is right.
pub fn network_checks(cfg: &GradCheckConfig) -> Result<Vec<GradCheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_74);
    let corpus = generate_corpus(&CorpusSpec {
        alphabet: "ab".into(),
        min_len: L - 1,
        max_len: L,
        n_train: 16,
        n_valid: 1,
        n_test: 1,
        seed: cfg.seed,
        ..Default::default()
    })?;
    let short = corpus.train.iter().find(|s| s.char_len() == L - 1).ok_or(Error::EmptyCorpus)?;
    let long = corpus.train.iter().find(|s| s.char_len() == L).ok_or(Error::EmptyCorpus)?;
    let bt = batch(&[long, short], PAD)?;
    let mut out = Vec::new();

    let (student, params) = toy_model(ModelKind::Timt)?;
    let img = ModelInput::Image(&bt.images);
    for (name, stage, loss) in FEATURE_TERMS {
        let target = Tensor::new(vec![B, L, NET_D], uniform(&mut rng, B * L * NET_D, 1.0));
        out.push(param_gradient_check(
            name,
            &params,
            |cx| {
                let enc = student.encode(cx, img)?;
                let s = if stage == "image" { enc.local } else { enc.memory };
                let t = FeatureSeq { var: cx.g.constant(target.clone()), ..s.clone() };
                loss(&mut cx.g, &s, &t, false)
            },
            cfg,
        )?);
    }
    let tgt_steps = bt.tgt_in.len;
    let mut teacher_probs = uniform(&mut rng, B * tgt_steps * V, 2.0);
    teacher_probs.chunks_mut(V).for_each(softmax_in_place);
    out.push(param_gradient_check(
        "token_kd_decoder",
        &params,
        |cx| {
            let enc = student.encode(cx, img)?;
            let d = student.decode_teacher_forced(cx, &enc.memory, &bt.tgt_in)?;
            decoder_token_kd(&mut cx.g, &d, &teacher_probs, &bt.tgt_in.mask)
        },
        cfg,
    )?);
    let (teacher_in, teacher_gold) = teacher_sequence_targets(&[vec![5, 4], vec![4, 4, 5]], 16);
    out.push(param_gradient_check(
        "sentence_kd_decoder",
        &params,
        |cx| {
            let enc = student.encode(cx, img)?;
            let d = student.decode_teacher_forced(cx, &enc.memory, &teacher_in)?;
            decoder_sentence_kd(&mut cx.g, &d, &teacher_gold)
        },
        cfg,
    )?);

    for (name, kind) in [("ce_timt", ModelKind::Timt), ("ce_tir", ModelKind::Tir), ("ce_mt", ModelKind::Mt)] {
        let (model, params) = toy_model(kind)?;
        let (prefix, gold) = match kind {
            ModelKind::Tir => (&bt.src_in, &bt.src_out),
            _ => (&bt.tgt_in, &bt.tgt_out),
        };
        let input = match kind {
            ModelKind::Mt => ModelInput::Text(&bt.src),
            _ => img,
        };
        out.push(param_gradient_check(
            name,
            &params,
            |cx| {
                let enc = model.encode(cx, input)?;
                let d = model.decode_teacher_forced(cx, &enc.memory, prefix)?;
                ce_loss(&mut cx.g, &d, gold)
            },
            cfg,
        )?);
    }
    Ok(out)
}
