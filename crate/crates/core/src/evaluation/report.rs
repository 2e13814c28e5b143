use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::error::{Error, Result};
use crate::training::{AblationRow, AblationTable, LambdaCurve};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CURVE_FILE: &str = "lambda_curve.csv";

/// Everything a report can contain; any part may be absent but not all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub evaluations: Vec<EvalReport>,
    pub ablation: Option<AblationTable>,
    pub lambda_curve: Option<LambdaCurve>,
}

impl ReportBundle {
    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty() && self.ablation.is_none() && self.lambda_curve.is_none()
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    version: u32,
    #[serde(flatten)]
    bundle: &'a ReportBundle,
}

fn ablation_line(out: &mut String, r: &AblationRow) {
    let name = if r.row == 0 { "base".to_string() } else { format!("No.{}", r.row) };
    let _ = writeln!(out, "{name:<6} {:<7} {:>6.2} {:>10.2} {:>9.2}", r.teachers, r.lambda_kd, r.valid_bleu_mean, r.test_bleu_mean);
}

fn summary(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    if !bundle.evaluations.is_empty() {
        let _ = writeln!(
            out,
            "{:<10} {:<6} {:>7} {:>10} {:>9} {:>11} {:>7}",
            "model", "split", "bleu", "params", "sentences", "latency_ms", "median"
        );
        for e in &bundle.evaluations {
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:>7.2} {:>10} {:>9} {:>11.3} {:>7.3}",
                e.model, e.split, e.bleu, e.n_params, e.n_sentences, e.latency_ms_mean, e.latency_ms_median
            );
        }
    }
    if let Some(t) = &bundle.ablation {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{:<6} {:<7} {:>6} {:>10} {:>9}", "row", "kd", "lambda", "valid_bleu", "test_bleu");
        ablation_line(&mut out, &t.baseline);
        for r in &t.rows {
            ablation_line(&mut out, r);
        }
    }
    if let Some(c) = &bundle.lambda_curve {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{:>6} {:>10} {:>9}", "lambda", "valid_bleu", "test_bleu");
        for p in &c.points {
            let _ = writeln!(out, "{:>6.2} {:>10.2} {:>9.2}", p.lambda_kd, p.valid_bleu_mean, p.test_bleu_mean);
        }
    }
    out
}

fn curve_csv(curve: &LambdaCurve) -> String {
    let mut out = String::from("lambda_kd,bleu\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{}", p.lambda_kd, p.valid_bleu_mean);
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.json` and `summary.txt`, plus `lambda_curve.csv` when a
/// sweep is present. Output depends only on the bundle. Returns the paths
/// written.
pub fn emit_report(out_dir: &Path, bundle: &ReportBundle) -> Result<Vec<PathBuf>> {
    if bundle.is_empty() {
        return Err(Error::EmptyReport);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut json = serde_json::to_string_pretty(&ReportFile { version: 1, bundle })?;
    json.push('\n');
    let mut paths = vec![
        write(out_dir.join(REPORT_FILE), &json)?,
        write(out_dir.join(SUMMARY_FILE), &summary(bundle))?,
    ];
    if let Some(c) = &bundle.lambda_curve {
        paths.push(write(out_dir.join(CURVE_FILE), &curve_csv(c))?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{LambdaPoint, RunSummary};

    fn row(n: usize, bleu: f64) -> AblationRow {
        AblationRow {
            row: n,
            teachers: "x".into(),
            lambda_kd: 0.8,
            runs: vec![RunSummary { seed: 1, best_epoch: 2, valid_bleu: bleu, test_bleu: bleu }],
            valid_bleu_mean: bleu,
            test_bleu_mean: bleu,
        }
    }

    fn bundle() -> ReportBundle {
        let point = |l: f64, b: f64| LambdaPoint { lambda_kd: l, runs: vec![], valid_bleu_mean: b, test_bleu_mean: b };
        ReportBundle {
            evaluations: vec![EvalReport {
                model: "student".into(),
                split: "test".into(),
                bleu: 55.5,
                n_params: 1000,
                n_sentences: 500,
                latency_ms_mean: 1.25,
                latency_ms_median: 1.0,
                latency_samples: 100,
            }],
            ablation: Some(AblationTable { baseline: row(0, 40.0), rows: (1..=7).map(|n| row(n, 40.0 + n as f64)).collect() }),
            lambda_curve: Some(LambdaCurve { points: vec![point(0.0, 40.0), point(0.8, 47.0)] }),
        }
    }

    #[test]
    fn empty_bundle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(dir.path(), &ReportBundle::default()), Err(Error::EmptyReport)));
    }

    #[test]
    fn files_are_deterministic_and_complete() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = emit_report(a.path(), &bundle()).unwrap();
        emit_report(b.path(), &bundle()).unwrap();
        assert_eq!(pa.len(), 3);
        for name in [REPORT_FILE, SUMMARY_FILE, CURVE_FILE] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let csv = fs::read_to_string(a.path().join(CURVE_FILE)).unwrap();
        assert_eq!(csv, "lambda_kd,bleu\n0,40\n0.8,47\n");
        let summary = fs::read_to_string(a.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(summary.lines().filter(|l| l.starts_with("No.")).count(), 7);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(json["version"], 1);
        assert_eq!(json["ablation"]["rows"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn curve_file_only_with_a_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let b = ReportBundle { lambda_curve: None, ablation: None, ..bundle() };
        assert_eq!(emit_report(dir.path(), &b).unwrap().len(), 2);
        assert!(!dir.path().join(CURVE_FILE).exists());
    }
}
