//! Embedding analysis of recorded runs: inertia ratios, robustness index
//! and PCA scatter plots, original arm against every other arm.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Arm;
use super::sweep::{collect_records, read_embeddings_csv, CellStatus, RunRecord};
use crate::error::{Error, Result};
use crate::metrics::{inertia_ratio, pca_2d, robustness_index, scatter_svg, EmbeddingAudit};

pub const ANALYSIS_JSON: &str = "analysis.json";
pub const RI_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub inertia_ratio: f64,
    pub robustness_index: f64,
}

impl EmbeddingStats {
    pub fn of(audit: &EmbeddingAudit) -> Result<Self> {
        Ok(Self {
            inertia_ratio: inertia_ratio(audit)?,
            robustness_index: robustness_index(audit, RI_NEIGHBORS)?.value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub setting: String,
    pub seed: u64,
    pub arm: Arm,
    pub before: EmbeddingStats,
    pub after: EmbeddingStats,
    /// `after.inertia_ratio / before.inertia_ratio`.
    pub inertia_ratio_of_ratios: f64,
    pub plot_before: String,
    pub plot_after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmAggregate {
    pub arm: Arm,
    pub comparisons: usize,
    pub mean_inertia_before: f64,
    pub mean_inertia_after: f64,
    pub inertia_decreased: usize,
    pub ri_increased: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub comparisons: Vec<Comparison>,
    pub aggregates: Vec<ArmAggregate>,
}

fn embeddings_of(dir: &Path, record: &RunRecord) -> Result<EmbeddingAudit> {
    let name = record.artifacts.get("embeddings").ok_or_else(|| {
        Error::Data(format!("record {} {} seed {} has no embeddings", record.setting, record.arm.name(), record.seed))
    })?;
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::Data(format!("missing embeddings file {}", path.display())));
    }
    read_embeddings_csv(&path)
}

fn plot(audit: &EmbeddingAudit, title: &str, path: &Path) -> Result<()> {
    let pca = pca_2d(audit.embeddings())?;
    let svg = scatter_svg(pca.coords.view(), audit.class_labels(), audit.domain_labels(), title)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn slug(setting: &str) -> String {
    setting.replace("->", "-to-").replace('+', "_")
}

/// Compares each successful non-original record with the original record
/// of the same setting and seed; writes SVGs and `analysis.json` to `out`.
pub fn analyze(records_dir: &Path, out: &Path) -> Result<AnalysisBundle> {
    let records: Vec<(PathBuf, RunRecord)> = collect_records(records_dir)?
        .into_iter()
        .filter(|(_, r)| r.status == CellStatus::Ok)
        .collect();
    let mut originals: BTreeMap<(String, u64), &(PathBuf, RunRecord)> = BTreeMap::new();
    for entry in &records {
        if entry.1.arm == Arm::Original {
            originals.insert((entry.1.setting.clone(), entry.1.seed), entry);
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut comparisons = Vec::new();
    let mut before_cache: BTreeMap<(String, u64), (EmbeddingStats, String)> = BTreeMap::new();
    for (path, r) in records.iter().filter(|(_, r)| r.arm != Arm::Original) {
        let key = (r.setting.clone(), r.seed);
        let Some((opath, orec)) = originals.get(&key) else { continue };
        if !before_cache.contains_key(&key) {
            let audit = embeddings_of(opath.parent().expect("record in a dir"), orec)?;
            let name = format!("{}-seed-{}-original.svg", slug(&r.setting), r.seed);
            plot(&audit, &format!("{} seed {} original", r.setting, r.seed), &out.join(&name))?;
            before_cache.insert(key.clone(), (EmbeddingStats::of(&audit)?, name));
        }
        let (before, plot_before) = before_cache[&key].clone();
        let audit = embeddings_of(path.parent().expect("record in a dir"), r)?;
        let after = EmbeddingStats::of(&audit)?;
        let plot_after = format!("{}-seed-{}-{}.svg", slug(&r.setting), r.seed, r.arm.name());
        plot(&audit, &format!("{} seed {} {}", r.setting, r.seed, r.arm.name()), &out.join(&plot_after))?;
        comparisons.push(Comparison {
            setting: r.setting.clone(),
            seed: r.seed,
            arm: r.arm,
            before,
            after,
            inertia_ratio_of_ratios: after.inertia_ratio / before.inertia_ratio,
            plot_before,
            plot_after,
        });
    }
    if comparisons.is_empty() {
        return Err(Error::Data(format!(
            "no original/adapted record pairs with embeddings under {}",
            records_dir.display()
        )));
    }
    let aggregates = Arm::ALL
        .into_iter()
        .filter_map(|arm| {
            let cs: Vec<&Comparison> = comparisons.iter().filter(|c| c.arm == arm).collect();
            if cs.is_empty() {
                return None;
            }
            let n = cs.len() as f64;
            Some(ArmAggregate {
                arm,
                comparisons: cs.len(),
                mean_inertia_before: cs.iter().map(|c| c.before.inertia_ratio).sum::<f64>() / n,
                mean_inertia_after: cs.iter().map(|c| c.after.inertia_ratio).sum::<f64>() / n,
                inertia_decreased: cs.iter().filter(|c| c.after.inertia_ratio < c.before.inertia_ratio).count(),
                ri_increased: cs.iter().filter(|c| c.after.robustness_index > c.before.robustness_index).count(),
            })
        })
        .collect();
    let bundle = AnalysisBundle { comparisons, aggregates };
    let path = out.join(ANALYSIS_JSON);
    std::fs::write(&path, serde_json::to_string_pretty(&bundle)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(bundle)
}
