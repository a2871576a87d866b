//! Arm × setting tables built from persisted records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Arm;
use super::sweep::{collect_records, CellStatus, RunRecord};
use crate::error::{Error, Result};
use crate::metrics::{wilcoxon_one_sided, WilcoxonResult};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
/// Paired tests need at least this many settings run by both arms.
pub const MIN_TEST_COMBINATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub arm: Arm,
    pub setting: String,
    /// Successful seeds averaged.
    pub n: usize,
    /// Mean target balanced accuracy.
    pub mean: f64,
    /// `mean − original mean` of the same setting.
    pub diff_from_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTest {
    pub arm: Arm,
    pub combinations: usize,
    pub mean_difference: f64,
    /// One-sided signed-rank test of arm > original over settings.
    pub wilcoxon: Option<WilcoxonResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub arms: Vec<Arm>,
    pub settings: Vec<String>,
    pub cells: Vec<SummaryCell>,
    pub tests: Vec<ArmTest>,
    pub failed_cells: usize,
}

fn setting_key(r: &RunRecord) -> (Vec<usize>, usize) {
    (r.sources.clone(), r.target)
}

/// Source ids and target id.
type SettingKey = (Vec<usize>, usize);

/// Mean target balanced accuracy per arm and setting, differences from the
/// original arm and a paired signed-rank test per arm.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut by_cell: BTreeMap<(Arm, SettingKey), Vec<f64>> = BTreeMap::new();
    let mut labels: BTreeMap<SettingKey, String> = BTreeMap::new();
    let mut failed_cells = 0;
    for r in records {
        labels.insert(setting_key(r), r.setting.clone());
        match (&r.status, &r.metrics) {
            (CellStatus::Ok, Some(m)) => {
                by_cell.entry((r.arm, setting_key(r))).or_default().push(m.target.balanced_accuracy)
            }
            _ => failed_cells += 1,
        }
    }
    let arms: Vec<Arm> = Arm::ALL.into_iter().filter(|a| records.iter().any(|r| r.arm == *a)).collect();
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let mut cells = Vec::new();
    for &arm in &arms {
        for key in labels.keys() {
            let Some(v) = by_cell.get(&(arm, key.clone())) else { continue };
            let m = mean(v);
            let diff = match arm {
                Arm::Original => None,
                _ => by_cell.get(&(Arm::Original, key.clone())).map(|o| m - mean(o)),
            };
            cells.push(SummaryCell { arm, setting: labels[key].clone(), n: v.len(), mean: m, diff_from_original: diff });
        }
    }
    let tests = arms
        .iter()
        .filter(|&&a| a != Arm::Original)
        .filter_map(|&arm| {
            let diffs: Vec<f64> =
                cells.iter().filter(|c| c.arm == arm).filter_map(|c| c.diff_from_original).collect();
            if diffs.is_empty() {
                return None;
            }
            let mean_difference = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let (wilcoxon, note) = if diffs.len() < MIN_TEST_COMBINATIONS {
                (None, Some(format!("{} combinations, need {MIN_TEST_COMBINATIONS}", diffs.len())))
            } else {
                match wilcoxon_one_sided(&diffs) {
                    Ok(w) => (Some(w), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            Some(ArmTest { arm, combinations: diffs.len(), mean_difference, wilcoxon, note })
        })
        .collect();
    Summary { arms, settings: labels.into_values().collect(), cells, tests, failed_cells }
}

impl Summary {
    /// Rows are arms, columns settings; non-original cells carry the
    /// difference from `original` in parentheses. Four decimals throughout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm");
        for s in &self.settings {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        for &arm in &self.arms {
            out.push_str(arm.name());
            for s in &self.settings {
                out.push(',');
                match self.cells.iter().find(|c| c.arm == arm && &c.setting == s) {
                    None => out.push_str("NA"),
                    Some(c) => {
                        let _ = write!(out, "{:.4}", c.mean);
                        if let Some(d) = c.diff_from_original {
                            let _ = write!(out, " ({d:+.4})");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Rebuilds `summary.csv` and `summary.json` from the records under `dir`.
pub fn write_summary(dir: &Path) -> Result<Summary> {
    let records: Vec<RunRecord> = collect_records(dir)?.into_iter().map(|(_, r)| r).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("no run records under {}", dir.display())));
    }
    let summary = summarize(&records);
    let csv_path = dir.join(SUMMARY_CSV);
    std::fs::write(&csv_path, summary.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(SUMMARY_JSON);
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Evaluation, RunConfig, SweepMode};
    use crate::harness::sweep::{CellMetrics, RECORD_FORMAT};
    use crate::metrics::MetricsReport;

    fn record(arm: Arm, target: usize, seed: u64, bacc: f64) -> RunRecord {
        let config = RunConfig {
            experiment_id: "x".into(),
            mode: SweepMode::Da,
            data_dir: "d".into(),
            sources: vec![0],
            targets: vec![target],
            arms: vec![arm],
            train: None,
            output_dir: "o".into(),
            seeds: vec![seed],
            evaluation: Evaluation::Transductive,
            macenko: Default::default(),
        };
        let report =
            MetricsReport { n: 10, balanced_accuracy: bacc, macro_f1: bacc, auroc: None, confusion: vec![] };
        RunRecord {
            format: RECORD_FORMAT.into(),
            toolkit_version: "0".into(),
            experiment_id: "x".into(),
            setting: format!("0->{target}"),
            sources: vec![0],
            target,
            arm,
            seed,
            config,
            input_hash: String::new(),
            status: CellStatus::Ok,
            error: None,
            metrics: Some(CellMetrics { target: report, source_balanced_accuracy: 1.0, final_ce: 0.0, final_lmmd: 0.0 }),
            wall_clock_secs: 0.0,
            artifacts: BTreeMap::new(),
        }
    }

    #[test]
    fn differences_and_layout() {
        let recs = vec![
            record(Arm::Lmmd, 4, 0, 0.9),
            record(Arm::Lmmd, 4, 1, 0.8),
            record(Arm::Original, 4, 0, 0.6),
            record(Arm::Original, 4, 1, 0.7),
        ];
        let s = summarize(&recs);
        assert_eq!(s.arms, vec![Arm::Original, Arm::Lmmd]);
        let c = s.cells.iter().find(|c| c.arm == Arm::Lmmd).unwrap();
        assert!((c.diff_from_original.unwrap() - (0.85 - 0.65)).abs() < 1e-12);
        assert_eq!(s.to_csv(), "arm,0->4\noriginal,0.6500\nlmmd,0.8500 (+0.2000)\n");
        assert!(s.tests[0].wilcoxon.is_none());
    }

    #[test]
    fn wilcoxon_from_five_combinations() {
        let mut recs = Vec::new();
        for t in 1..=5 {
            recs.push(record(Arm::Original, t, 0, 0.5));
            recs.push(record(Arm::Lmmd, t, 0, 0.5 + 0.01 * t as f64));
        }
        let s = summarize(&recs);
        let w = s.tests[0].wilcoxon.unwrap();
        assert_eq!(w.n, 5);
        assert!((w.p_value - 1.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn failed_cells_counted_not_averaged() {
        let mut bad = record(Arm::Lmmd, 4, 2, 0.0);
        bad.status = CellStatus::Failed;
        bad.metrics = None;
        let s = summarize(&[record(Arm::Lmmd, 4, 0, 0.9), bad]);
        assert_eq!(s.failed_cells, 1);
        assert_eq!(s.cells[0].n, 1);
        assert_eq!(s.to_csv(), "arm,0->4\nlmmd,0.9000\n");
    }
}
