use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::student::{train_student, TeacherCache};
use super::TrainConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evaluation::bleu_on;
use crate::losses::KdWeights;
use crate::models::ModelConfig;

/// Which teachers contribute distillation terms. Ablation rows are numbered
/// by a bitmask: 1 = decoder, 2 = sequential encoder, 4 = image encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TeacherSet {
    pub image: bool,
    pub sequential: bool,
    pub decoder: bool,
}

impl TeacherSet {
    pub const ALL: TeacherSet = TeacherSet { image: true, sequential: true, decoder: true };

    /// Row `1..=7` of the ablation table.
    pub fn from_row(row: usize) -> Result<Self> {
        if !(1..=7).contains(&row) {
            return Err(Error::InvalidArgument(format!("ablation rows are numbered 1 to 7, got {row}")));
        }
        Ok(Self { decoder: row & 1 != 0, sequential: row & 2 != 0, image: row & 4 != 0 })
    }

    pub fn table_row(self) -> usize {
        usize::from(self.decoder) | usize::from(self.sequential) << 1 | usize::from(self.image) << 2
    }

    /// Compact name such as `I+S+D`; `none` for the empty set.
    pub fn label(self) -> String {
        let parts: Vec<&str> = [(self.image, "I"), (self.sequential, "S"), (self.decoder, "D")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    /// `kd` with the weights of absent teachers set to zero.
    pub fn apply(self, kd: &KdWeights) -> KdWeights {
        let keep = |on: bool, w: f64| if on { w } else { 0.0 };
        KdWeights {
            lambda_i: keep(self.image, kd.lambda_i),
            lambda_s: keep(self.sequential, kd.lambda_s),
            lambda_d: keep(self.decoder, kd.lambda_d),
            ..kd.clone()
        }
    }
}

/// Outcome of one student run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub valid_bleu: f64,
    pub test_bleu: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Same configuration repeated over the experiment seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `0` for the no-distillation baseline.
    pub row: usize,
    pub teachers: String,
    pub lambda_kd: f64,
    pub runs: Vec<RunSummary>,
    pub valid_bleu_mean: f64,
    pub test_bleu_mean: f64,
}

impl AblationRow {
    fn new(row: usize, teachers: String, lambda_kd: f64, runs: Vec<RunSummary>) -> Self {
        Self {
            row,
            teachers,
            lambda_kd,
            valid_bleu_mean: mean(runs.iter().map(|r| r.valid_bleu)),
            test_bleu_mean: mean(runs.iter().map(|r| r.test_bleu)),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline: AblationRow,
    /// Rows 1 to 7 in order.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, set: TeacherSet) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.row == set.table_row())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda_kd: f64,
    pub runs: Vec<RunSummary>,
    pub valid_bleu_mean: f64,
    pub test_bleu_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCurve {
    pub points: Vec<LambdaPoint>,
}

impl LambdaCurve {
    /// Point with the highest mean validation BLEU; the smaller weight wins
    /// ties.
    pub fn best(&self) -> Option<&LambdaPoint> {
        self.points.iter().fold(None, |b: Option<&LambdaPoint>, p| match b {
            Some(b) if b.valid_bleu_mean >= p.valid_bleu_mean => Some(b),
            _ => Some(p),
        })
    }

    pub fn at(&self, lambda_kd: f64) -> Option<&LambdaPoint> {
        self.points.iter().find(|p| p.lambda_kd == lambda_kd)
    }
}

/// Student runs over shared teachers, memoized by configuration and seed so
/// the ablation and the sweep reuse each other's runs.
pub struct Experiments<'a> {
    corpus: &'a Corpus,
    teachers: &'a TeacherCache,
    model: ModelConfig,
    train: TrainConfig,
    seeds: Vec<u64>,
    out_dir: PathBuf,
    done: BTreeMap<(String, u64), RunSummary>,
}

impl<'a> Experiments<'a> {
    /// Every configuration is trained once per seed; a seed sets both the
    /// parameter initialization and the data order.
    pub fn new(
        corpus: &'a Corpus,
        teachers: &'a TeacherCache,
        model: ModelConfig,
        train: TrainConfig,
        seeds: Vec<u64>,
        out_dir: &Path,
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        model.clone().with_vocab(corpus.src_vocab.len(), corpus.tgt_vocab.len()).validate()?;
        train.validate()?;
        Ok(Self { corpus, teachers, model, train, seeds, out_dir: out_dir.to_path_buf(), done: BTreeMap::new() })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Runs (or recalls) one configuration for every seed.
    pub fn runs(&mut self, set: TeacherSet, lambda_kd: f64) -> Result<Vec<RunSummary>> {
        let mut kd = set.apply(&self.train.kd);
        kd.lambda_kd = lambda_kd;
        kd.validate()?;
        let key = if kd.active_terms().iter().any(|&a| a) {
            format!("lambda{lambda_kd}_{}", set.label())
        } else {
            "baseline".to_string()
        };
        let mut out = Vec::with_capacity(self.seeds.len());
        for &seed in &self.seeds {
            if let Some(r) = self.done.get(&(key.clone(), seed)) {
                out.push(r.clone());
                continue;
            }
            let cfg = TrainConfig { seed, kd: kd.clone(), ..self.train.clone() };
            let model = ModelConfig { seed, ..self.model.clone() };
            let dir = self.out_dir.join(&key).join(format!("seed{seed}"));
            info!("student run {key} seed {seed}");
            let outcome = train_student(self.corpus, Some(self.teachers), &model, &cfg, &dir)?;
            let trained = outcome.checkpoint.model()?;
            let summary = RunSummary {
                seed,
                best_epoch: outcome.best_epoch,
                valid_bleu: outcome.records[outcome.best_epoch - 1].valid_bleu.unwrap_or(0.0),
                test_bleu: bleu_on(&trained, &outcome.checkpoint.params, &self.corpus.test)?,
            };
            info!("student run {key} seed {seed}: valid {:.2}, test {:.2}", summary.valid_bleu, summary.test_bleu);
            self.done.insert((key.clone(), seed), summary.clone());
            out.push(summary);
        }
        Ok(out)
    }
}

/// The seven non-empty teacher subsets at the configured λ, plus a
/// no-distillation baseline.
pub fn ablate_teachers(exp: &mut Experiments<'_>) -> Result<AblationTable> {
    let lambda = exp.train.kd.lambda_kd;
    if lambda <= 0.0 {
        return Err(Error::InvalidConfig("the ablation needs lambda_kd > 0".into()));
    }
    let baseline = AblationRow::new(0, "none".into(), 0.0, exp.runs(TeacherSet::ALL, 0.0)?);
    let mut rows = Vec::with_capacity(7);
    for row in 1..=7 {
        let set = TeacherSet::from_row(row)?;
        rows.push(AblationRow::new(row, set.label(), lambda, exp.runs(set, lambda)?));
    }
    Ok(AblationTable { baseline, rows })
}

/// All three teachers at each weight of `grid`.
pub fn sweep_lambda(exp: &mut Experiments<'_>, grid: &[f64]) -> Result<LambdaCurve> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidArgument(format!("lambda_kd values must lie in [0, 1], got {bad}")));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &lambda_kd in grid {
        let runs = exp.runs(TeacherSet::ALL, lambda_kd)?;
        points.push(LambdaPoint {
            lambda_kd,
            valid_bleu_mean: mean(runs.iter().map(|r| r.valid_bleu)),
            test_bleu_mean: mean(runs.iter().map(|r| r.test_bleu)),
            runs,
        });
    }
    Ok(LambdaCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        for row in 1..=7 {
            assert_eq!(TeacherSet::from_row(row).unwrap().table_row(), row);
        }
        assert!(TeacherSet::from_row(0).is_err());
        assert!(TeacherSet::from_row(8).is_err());
        assert_eq!(TeacherSet::from_row(1).unwrap().label(), "D");
        assert_eq!(TeacherSet::from_row(6).unwrap().label(), "I+S");
        assert_eq!(TeacherSet::ALL.label(), "I+S+D");
        assert_eq!(TeacherSet::ALL.table_row(), 7);
    }

    #[test]
    fn apply_zeroes_absent_teachers() {
        let kd = KdWeights::default();
        let w = TeacherSet::from_row(2).unwrap().apply(&kd);
        assert_eq!((w.lambda_i, w.lambda_s, w.lambda_d), (0.0, kd.lambda_s, 0.0));
        assert_eq!(w.active_terms(), [false, false, true, true, false, false]);
    }

    #[test]
    fn best_prefers_smaller_weight_on_ties() {
        let p = |l: f64, b: f64| LambdaPoint { lambda_kd: l, runs: vec![], valid_bleu_mean: b, test_bleu_mean: b };
        let c = LambdaCurve { points: vec![p(0.0, 1.0), p(0.4, 3.0), p(0.8, 3.0), p(1.0, 2.0)] };
        assert_eq!(c.best().unwrap().lambda_kd, 0.4);
        assert_eq!(c.at(1.0).unwrap().valid_bleu_mean, 2.0);
        assert!(c.at(0.5).is_none());
    }
}
