use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::error::{Error, Result};
use crate::losses::LossReport;

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUNS_FILE: &str = "runs.jsonl";

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Per-run output files, truncated when opened.
pub(crate) struct RunFiles {
    dir: PathBuf,
    steps: BufWriter<File>,
    runs: BufWriter<File>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

impl RunFiles {
    pub(crate) fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            steps: create(&dir.join(TRAIN_LOG_FILE))?,
            runs: create(&dir.join(RUNS_FILE))?,
        })
    }

    pub(crate) fn dir(&self) -> &Path {
        &self.dir
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, value: &T) -> Result<()> {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub(crate) fn step(&mut self, s: &StepLog) -> Result<()> {
        Self::line(&mut self.steps, &self.dir.join(TRAIN_LOG_FILE), s)
    }

    pub(crate) fn record(&mut self, r: &RunRecord) -> Result<()> {
        Self::line(&mut self.runs, &self.dir.join(RUNS_FILE), r)?;
        self.flush()
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.steps.flush().map_err(|e| Error::io(&self.dir.join(TRAIN_LOG_FILE), e))?;
        self.runs.flush().map_err(|e| Error::io(&self.dir.join(RUNS_FILE), e))
    }
}

/// Reads a `runs.jsonl` file.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
