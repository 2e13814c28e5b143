//! Training objectives: sequence cross-entropy, the six distillation terms
//! (token- and sentence-level for the image encoder, the sequential encoder
//! and the decoder), and their weighted combination.
//!
//! Every function appends nodes to the student's graph and returns a scalar
//! [`Var`]. Teacher quantities enter as constants, so no gradient can reach
//! a teacher.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Scalar, Var};
use crate::corpus::{PaddedSeq, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::models::{FeatureSeq, StepDistributions};

/// Distillation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdWeights {
    /// Interpolates between the end-to-end loss (0) and distillation (1).
    pub lambda_kd: f64,
    /// Image-encoder distillation from the recognition teacher.
    pub lambda_i: f64,
    /// Sequential-encoder distillation from the translation teacher.
    pub lambda_s: f64,
    /// Decoder distillation from the translation teacher.
    pub lambda_d: f64,
    pub enable_token: bool,
    pub enable_sentence: bool,
    /// Use squared instead of plain Euclidean distance in the feature terms.
    pub squared_l2: bool,
}

impl Default for KdWeights {
    fn default() -> Self {
        Self {
            lambda_kd: 0.8,
            lambda_i: 1.0,
            lambda_s: 1.0,
            lambda_d: 1.0,
            enable_token: true,
            enable_sentence: true,
            squared_l2: false,
        }
    }
}

impl KdWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_kd) {
            return Err(Error::InvalidConfig(format!("lambda_kd {} outside [0, 1]", self.lambda_kd)));
        }
        for (name, v) in [("lambda_i", self.lambda_i), ("lambda_s", self.lambda_s), ("lambda_d", self.lambda_d)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Which of the six terms carry non-zero weight, in
    /// [`KdTerm::ALL`] order.
    pub fn active_terms(&self) -> [bool; 6] {
        let kd = self.lambda_kd > 0.0;
        let (tok, sent) = (self.enable_token, self.enable_sentence);
        let (i, s, d) = (self.lambda_i > 0.0, self.lambda_s > 0.0, self.lambda_d > 0.0);
        [kd && i && tok, kd && i && sent, kd && s && tok, kd && s && sent, kd && d && tok, kd && d && sent]
    }

    fn term_weight(&self, term: KdTerm) -> f64 {
        match term {
            KdTerm::TokenImage | KdTerm::SentenceImage => self.lambda_i,
            KdTerm::TokenSequential | KdTerm::SentenceSequential => self.lambda_s,
            KdTerm::TokenDecoder | KdTerm::SentenceDecoder => self.lambda_d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdTerm {
    TokenImage,
    SentenceImage,
    TokenSequential,
    SentenceSequential,
    TokenDecoder,
    SentenceDecoder,
}

impl KdTerm {
    pub const ALL: [KdTerm; 6] = [
        KdTerm::TokenImage,
        KdTerm::SentenceImage,
        KdTerm::TokenSequential,
        KdTerm::SentenceSequential,
        KdTerm::TokenDecoder,
        KdTerm::SentenceDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KdTerm::TokenImage => "tkd_image",
            KdTerm::SentenceImage => "skd_image",
            KdTerm::TokenSequential => "tkd_seq",
            KdTerm::SentenceSequential => "skd_seq",
            KdTerm::TokenDecoder => "tkd_dec",
            KdTerm::SentenceDecoder => "skd_dec",
        }
    }
}

/// Values of every objective for one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub l_timt: f64,
    pub l_kd: f64,
    pub tkd_image: f64,
    pub skd_image: f64,
    pub tkd_seq: f64,
    pub skd_seq: f64,
    pub tkd_dec: f64,
    pub skd_dec: f64,
}

impl LossReport {
    pub fn term(&self, t: KdTerm) -> f64 {
        match t {
            KdTerm::TokenImage => self.tkd_image,
            KdTerm::SentenceImage => self.skd_image,
            KdTerm::TokenSequential => self.tkd_seq,
            KdTerm::SentenceSequential => self.skd_seq,
            KdTerm::TokenDecoder => self.tkd_dec,
            KdTerm::SentenceDecoder => self.skd_dec,
        }
    }

    fn term_mut(&mut self, t: KdTerm) -> &mut f64 {
        match t {
            KdTerm::TokenImage => &mut self.tkd_image,
            KdTerm::SentenceImage => &mut self.skd_image,
            KdTerm::TokenSequential => &mut self.tkd_seq,
            KdTerm::SentenceSequential => &mut self.skd_seq,
            KdTerm::TokenDecoder => &mut self.tkd_dec,
            KdTerm::SentenceDecoder => &mut self.skd_dec,
        }
    }

    /// Running sum, for per-epoch means.
    pub fn accumulate(&mut self, other: &LossReport) {
        self.total += other.total;
        self.l_timt += other.l_timt;
        self.l_kd += other.l_kd;
        for t in KdTerm::ALL {
            *self.term_mut(t) += other.term(t);
        }
    }

    pub fn scaled(&self, s: f64) -> LossReport {
        let mut r = LossReport { total: self.total * s, l_timt: self.l_timt * s, l_kd: self.l_kd * s, ..Default::default() };
        for t in KdTerm::ALL {
            *r.term_mut(t) = self.term(t) * s;
        }
        r
    }
}

fn batch_weight<T: Scalar>(batch: usize) -> T {
    T::one() / T::from_usize(batch).unwrap()
}

/// Negative log-likelihood of `gold` summed over unmasked steps and averaged
/// over the batch.
pub fn ce_loss<T: Scalar>(g: &mut Graph<T>, dists: &StepDistributions, gold: &PaddedSeq) -> Result<Var> {
    if gold.batch != dists.batch || gold.len != dists.steps {
        return Err(Error::ShapeMismatch(format!(
            "gold is [{}, {}] but distributions are [{}, {}]",
            gold.batch, gold.len, dists.batch, dists.steps
        )));
    }
    let v = dists.vocab;
    let mut targets = vec![T::zero(); gold.ids.len() * v];
    let mut weights = vec![T::zero(); gold.ids.len()];
    let w = batch_weight::<T>(gold.batch);
    for (r, (&id, &m)) in gold.ids.iter().zip(&gold.mask).enumerate() {
        if !m {
            continue;
        }
        if id as usize >= v {
            return Err(Error::IdOutOfRange { id, size: v });
        }
        targets[r * v + id as usize] = T::one();
        weights[r] = w;
    }
    Ok(g.soft_cross_entropy(dists.logits, targets, weights))
}

fn check_aligned<T: Scalar>(g: &Graph<T>, student: &FeatureSeq, teacher: &FeatureSeq) -> Result<()> {
    if g.shape(student.var) != g.shape(teacher.var)
        || student.batch != teacher.batch
        || student.len != teacher.len
        || student.dim != teacher.dim
    {
        return Err(Error::ShapeMismatch(format!(
            "student features {:?} vs teacher features {:?}",
            g.shape(student.var),
            g.shape(teacher.var)
        )));
    }
    if student.mask != teacher.mask {
        return Err(Error::ShapeMismatch("student and teacher feature masks differ".into()));
    }
    if (0..student.batch).any(|b| student.valid_len(b) == 0) {
        return Err(Error::ShapeMismatch("feature sequence with no valid positions".into()));
    }
    Ok(())
}

fn distance<T: Scalar>(g: &mut Graph<T>, diff: Var, squared: bool) -> Var {
    let n = g.row_norm(diff);
    if squared {
        g.mul(n, n)
    } else {
        n
    }
}

/// Mean over samples of the mean over valid positions of
/// `‖student − teacher‖₂`.
pub fn token_kd_l2<T: Scalar>(
    g: &mut Graph<T>,
    student: &FeatureSeq,
    teacher: &FeatureSeq,
    squared: bool,
) -> Result<Var> {
    check_aligned(g, student, teacher)?;
    let diff = g.sub(student.var, teacher.var);
    let dist = distance(g, diff, squared);
    let bw = batch_weight::<T>(student.batch);
    let mut weights = vec![T::zero(); student.batch * student.len];
    for b in 0..student.batch {
        let w = bw / T::from_usize(student.valid_len(b)).unwrap();
        for l in 0..student.len {
            if student.mask[b * student.len + l] {
                weights[b * student.len + l] = w;
            }
        }
    }
    Ok(g.weighted_sum(dist, weights))
}

fn pool_weights<T: Scalar>(f: &FeatureSeq) -> Vec<T> {
    let mut w = vec![T::zero(); f.batch * f.len];
    for b in 0..f.batch {
        let inv = T::one() / T::from_usize(f.valid_len(b)).unwrap();
        for l in 0..f.len {
            if f.mask[b * f.len + l] {
                w[b * f.len + l] = inv;
            }
        }
    }
    w
}

/// Mean over samples of `‖mean(student) − mean(teacher)‖₂`, means over
/// valid positions.
pub fn sentence_kd_l2<T: Scalar>(
    g: &mut Graph<T>,
    student: &FeatureSeq,
    teacher: &FeatureSeq,
    squared: bool,
) -> Result<Var> {
    check_aligned(g, student, teacher)?;
    let ps = g.masked_mean_pool(student.var, pool_weights(student));
    let pt = g.masked_mean_pool(teacher.var, pool_weights(teacher));
    let diff = g.sub(ps, pt);
    let dist = distance(g, diff, squared);
    Ok(g.weighted_sum(dist, vec![batch_weight::<T>(student.batch); student.batch]))
}

/// Cross-entropy of the student's step distributions against the teacher's
/// full distributions (`[B, steps, vocab]`, rows summing to one), summed
/// over steps and averaged over the batch.
pub fn decoder_token_kd<T: Scalar>(
    g: &mut Graph<T>,
    student: &StepDistributions,
    teacher_probs: &[T],
    mask: &[bool],
) -> Result<Var> {
    let rows = student.batch * student.steps;
    if teacher_probs.len() != rows * student.vocab {
        return Err(Error::ShapeMismatch(format!(
            "teacher distributions have {} values, expected {rows} x {}",
            teacher_probs.len(),
            student.vocab
        )));
    }
    if mask.len() != rows {
        return Err(Error::ShapeMismatch("step mask length".into()));
    }
    let w = batch_weight::<T>(student.batch);
    let weights = mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
    Ok(g.soft_cross_entropy(student.logits, teacher_probs.to_vec(), weights))
}

/// Decoder input and gold sequences built from teacher-decoded outputs:
/// `BOS y` and `y EOS`, with `y` truncated to `max_len - 1` tokens. An empty
/// output becomes a lone `EOS` target.
pub fn teacher_sequence_targets(outputs: &[Vec<u32>], max_len: usize) -> (PaddedSeq, PaddedSeq) {
    let keep = max_len.saturating_sub(1);
    let (inputs, golds): (Vec<Vec<u32>>, Vec<Vec<u32>>) = outputs
        .iter()
        .map(|y| {
            let y = &y[..y.len().min(keep)];
            let mut input = vec![BOS];
            input.extend_from_slice(y);
            let mut gold = y.to_vec();
            gold.push(EOS);
            (input, gold)
        })
        .unzip();
    (PaddedSeq::from_rows(&inputs, PAD), PaddedSeq::from_rows(&golds, PAD))
}

/// Sentence-level decoder distillation: the student's teacher-forced pass
/// over the teacher's decoded sentence, scored against that sentence.
pub fn decoder_sentence_kd<T: Scalar>(
    g: &mut Graph<T>,
    student_on_teacher_output: &StepDistributions,
    teacher_gold: &PaddedSeq,
) -> Result<Var> {
    ce_loss(g, student_on_teacher_output, teacher_gold)
}

/// Already-computed loss nodes for one step. Terms left as `None` are
/// treated as zero.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub l_timt: Var,
    pub kd: [Option<Var>; 6],
}

/// `total = (1 − λ_KD)·L_TIMT + λ_KD·(λ_I·L^I + λ_S·L^S + λ_D·L^D)` where each
/// per-teacher term is the sum of its token- and sentence-level parts.
pub fn combined_loss<T: Scalar>(g: &mut Graph<T>, terms: &LossTerms, w: &KdWeights) -> Result<(Var, LossReport)> {
    w.validate()?;
    let active = w.active_terms();
    let mut report = LossReport { l_timt: g.value(terms.l_timt).item().to_f64_lossy(), ..Default::default() };
    let mut kd: Option<Var> = None;
    let mut kd_value = 0.0;
    for (i, term) in KdTerm::ALL.into_iter().enumerate() {
        let Some(v) = terms.kd[i] else { continue };
        let value = g.value(v).item().to_f64_lossy();
        *report.term_mut(term) = value;
        if !active[i] {
            continue;
        }
        let weight = w.term_weight(term);
        kd_value += weight * value;
        let scaled = g.scale(v, T::from_f64_lossy(weight));
        kd = Some(match kd {
            Some(acc) => g.add(acc, scaled),
            None => scaled,
        });
    }
    report.l_kd = kd_value;
    let timt_part = g.scale(terms.l_timt, T::from_f64_lossy(1.0 - w.lambda_kd));
    let total = match kd {
        Some(kd) if w.lambda_kd > 0.0 => {
            let kd_part = g.scale(kd, T::from_f64_lossy(w.lambda_kd));
            g.add(timt_part, kd_part)
        }
        _ => timt_part,
    };
    report.total = (1.0 - w.lambda_kd) * report.l_timt + w.lambda_kd * report.l_kd;
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((total, report))
}
