//! Teacher pretraining, distillation into the student, and the ablation and
//! λ-sweep experiment drivers.

mod experiments;
mod log;
mod optim;
mod run;
mod sampler;
mod student;
mod teacher;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use experiments::{
    ablate_teachers, sweep_lambda, AblationRow, AblationTable, Experiments, LambdaCurve, LambdaPoint, RunSummary,
    TeacherSet,
};
pub use log::{read_records, StepLog, RUNS_FILE, TRAIN_LOG_FILE};
pub use optim::{clip_global_norm, Adam};
pub use sampler::length_bucketed_batches;
pub use student::{train_student, TeacherCache, STUDENT_CHECKPOINT};
pub use teacher::{pretrain_mt, pretrain_tir, token_accuracy, MT_CHECKPOINT, TIR_CHECKPOINT};

use crate::corpus::mix64;
use crate::error::{Error, Result};
use crate::losses::{KdWeights, LossReport};
use crate::models::{Checkpoint, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// When false, shuffling and dropout seeds are mixed with the clock.
    pub deterministic: bool,
    /// Copy the recognition teacher's image encoder into the student before
    /// training.
    pub warm_start_image_encoder: bool,
    /// Read from and written to its own `[kd]` config section.
    #[serde(skip)]
    pub kd: KdWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 1,
            deterministic: true,
            warm_start_image_encoder: false,
            kd: KdWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm must be >= 0, got {}", self.clip_norm));
        }
        self.kd.validate()
    }

    /// Seed for shuffling and dropout, salted per purpose.
    pub(crate) fn stream_seed(&self, salt: u64) -> u64 {
        let base = if self.deterministic {
            self.seed
        } else {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
            self.seed ^ mix64(now)
        };
        mix64(base ^ mix64(salt))
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: String,
    pub model: ModelKind,
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's steps. Teacher runs fill `total` only.
    pub train: LossReport,
    /// Student runs: greedy validation BLEU.
    pub valid_bleu: Option<f64>,
    /// Teacher runs: teacher-forced validation token accuracy.
    pub valid_accuracy: Option<f64>,
    pub seconds: f64,
    pub checkpoint: String,
    /// Whether this epoch became the selected checkpoint.
    pub best: bool,
}

impl RunRecord {
    /// Copy with wall-clock time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord { seconds: 0.0, ..self.clone() }
    }
}

/// Best checkpoint and per-epoch history of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<RunRecord>,
    pub best_epoch: usize,
}
