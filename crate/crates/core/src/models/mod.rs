//! The three encoder-decoder networks: the end-to-end image translation
//! student, the recognition teacher and the text translation teacher.

mod checkpoint;
mod decode;
mod layers;
mod network;
mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{file_digest, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use decode::{argmax_lowest, greedy_decode};
pub use layers::{sinusoidal_table, Ctx};
pub use network::{Encoded, ModelInput, Seq2Seq, WIDTH_REDUCTION};
pub use params::{Init, ParamSpec, ParamStore};

use crate::autograd::{softmax_in_place, Graph, Scalar, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Image in, target-language text out.
    Timt,
    /// Image in, source-language text out.
    Tir,
    /// Source-language text in, target-language text out.
    Mt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Timt => "timt",
            ModelKind::Tir => "tir",
            ModelKind::Mt => "mt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Filled in from the corpus vocabulary when zero.
    pub src_vocab: usize,
    /// Filled in from the corpus vocabulary when zero.
    pub tgt_vocab: usize,
    /// Upper bound on generated tokens during greedy decoding.
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            src_vocab: 0,
            tgt_vocab: 0,
            max_len: 16,
            dropout: 0.1,
            seed: 1,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(mut self, src_vocab: usize, tgt_vocab: usize) -> Self {
        self.src_vocab = src_vocab;
        self.tgt_vocab = tgt_vocab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("model sizes must all be at least 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("vocabulary sizes are unset".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Batched `[B, L, d]` feature sequence on a graph, with a row-major
/// `[B, L]` validity mask.
#[derive(Debug, Clone)]
pub struct FeatureSeq {
    pub var: Var,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
}

impl FeatureSeq {
    pub fn valid_len(&self, b: usize) -> usize {
        self.mask[b * self.len..(b + 1) * self.len].iter().filter(|&&m| m).count()
    }
}

/// Per-step vocabulary scores `[B, steps, vocab]` from a decoder pass.
#[derive(Debug, Clone)]
pub struct StepDistributions {
    pub logits: Var,
    /// Row-major `[B, steps]`; false on padded prefix positions.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub steps: usize,
    pub vocab: usize,
}

impl StepDistributions {
    /// Softmax of every step row.
    pub fn probs<T: Scalar>(&self, g: &Graph<T>) -> Vec<T> {
        let mut p = g.value(self.logits).data.clone();
        p.chunks_mut(self.vocab).for_each(softmax_in_place);
        p
    }
}
