//! Single-run commands: adaptation, generalization, bag-level training and
//! image normalization. Each writes its artifacts into one directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{TrainDaConfig, TrainDgConfig, TrainMilConfig};
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nets::{Checkpoint, EncoderParams, EncoderSpec};
use crate::stain::{macenko_apply, macenko_fit, reinhard_apply, reinhard_fit, MacenkoConfig, RgbPatch};
use crate::trainer::{evaluate, evaluate_abmil, train_abmil, train_da, train_dg, LabeledDomain, TrainConfig};

/// Metrics written to `metrics.json` by the training commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub source_balanced_accuracy: f64,
    /// Keyed by domain id.
    pub evaluation: BTreeMap<usize, MetricsReport>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn make_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn with_seed(cfg: Option<TrainConfig>, default: fn(u64) -> TrainConfig, seed: Option<u64>) -> TrainConfig {
    let mut c = cfg.unwrap_or_else(|| default(0));
    if let Some(s) = seed {
        c.seed = s;
    }
    c
}

fn labeled(ds: &Dataset, ids: &[usize]) -> Result<Vec<LabeledDomain>> {
    ids.iter().map(|&k| LabeledDomain::from_samples(&ds.domain(k)?)).collect()
}

fn num_classes(domains: &[LabeledDomain]) -> usize {
    domains.iter().flat_map(|d| d.y.iter()).map(|y| y + 1).max().unwrap_or(0).max(2)
}

pub fn train_da_command(cfg: &TrainDaConfig, seed: Option<u64>, out: &Path) -> Result<TrainReport> {
    let train = with_seed(cfg.train.clone(), TrainConfig::da, seed);
    train.validate()?;
    if cfg.sources.is_empty() || cfg.sources.contains(&cfg.target) {
        return Err(Error::Config { field: "sources".into(), message: "need at least one source distinct from the target".into() });
    }
    let ds = Dataset::open(&cfg.data_dir)?;
    let sources = labeled(&ds, &cfg.sources)?;
    let target = LabeledDomain::from_samples(&ds.domain(cfg.target)?)?;
    let classes = num_classes(&sources);
    let (enc, head) = train.init_models(sources[0].x.ncols(), classes)?;
    let trained = train_da(&train, &sources, &target.unlabeled().stripped(), enc, head)?;
    make_dir(out)?;
    Checkpoint::from_encoder(&trained.encoder, train.seed)?.save(&out.join("encoder.json"))?;
    Checkpoint::from_classifier(&trained.head, train.seed).save(&out.join("head.json"))?;
    trained.history.write_csv(&out.join("history.csv"))?;
    let (_, report) = evaluate(&trained.encoder, &trained.head, target.x.view(), &target.y)?;
    let report = TrainReport {
        seed: train.seed,
        source_balanced_accuracy: trained.history.last().map_or(f64::NAN, |r| r.src_bacc),
        evaluation: BTreeMap::from([(cfg.target, report)]),
    };
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

pub fn train_dg_command(cfg: &TrainDgConfig, seed: Option<u64>, out: &Path) -> Result<TrainReport> {
    let train = with_seed(cfg.train.clone(), TrainConfig::dg, seed);
    train.validate()?;
    if cfg.unseen.iter().any(|k| cfg.sources.contains(k)) {
        return Err(Error::Config { field: "unseen".into(), message: "unseen domains must not be sources".into() });
    }
    let ds = Dataset::open(&cfg.data_dir)?;
    let sources = labeled(&ds, &cfg.sources)?;
    let unseen = labeled(&ds, &cfg.unseen)?;
    let (enc, head) = train.init_models(sources.first().map_or(0, |d| d.x.ncols()), num_classes(&sources))?;
    let trained = train_dg(&train, &sources, &[], enc, head)?;
    make_dir(out)?;
    Checkpoint::from_encoder(&trained.encoder, train.seed)?.save(&out.join("encoder.json"))?;
    Checkpoint::from_classifier(&trained.head, train.seed).save(&out.join("head.json"))?;
    trained.history.write_csv(&out.join("history.csv"))?;
    let mut evaluation = BTreeMap::new();
    for d in &unseen {
        evaluation.insert(d.domain_id, evaluate(&trained.encoder, &trained.head, d.x.view(), &d.y)?.1);
    }
    let report = TrainReport {
        seed: train.seed,
        source_balanced_accuracy: trained.history.last().map_or(f64::NAN, |r| r.src_bacc),
        evaluation,
    };
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

pub fn train_mil_command(cfg: &TrainMilConfig, seed: Option<u64>, out: &Path) -> Result<TrainReport> {
    let train = with_seed(cfg.train.clone(), TrainConfig::mil, seed);
    train.validate()?;
    let ds = Dataset::open(&cfg.data_dir)?;
    let encoder = match &cfg.encoder {
        Some(path) => Checkpoint::load(path)?.to_encoder()?,
        None => EncoderParams::init(&EncoderSpec::default(), train.seed)?,
    };
    let bags = ds.bags(cfg.train_domain)?;
    let (model, history) = train_abmil(&train, &bags, &encoder, None)?;
    make_dir(out)?;
    Checkpoint::from_abmil(&model, train.seed)?.save(&out.join("abmil.json"))?;
    history.write_csv(&out.join("history.csv"))?;
    let mut evaluation = BTreeMap::new();
    for &k in &cfg.eval_domains {
        evaluation.insert(k, evaluate_abmil(&model, &encoder, &ds.bags(k)?)?.1);
    }
    let report = TrainReport {
        seed: train.seed,
        source_balanced_accuracy: evaluate_abmil(&model, &encoder, &bags)?.1.balanced_accuracy,
        evaluation,
    };
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StainMethod {
    Reinhard,
    Macenko,
}

/// Files as given; directories contribute their `.png` files in name order.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut pngs = Vec::new();
            for entry in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
                let path = entry.map_err(|e| Error::io(p, e))?.path();
                if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    pngs.push(path);
                }
            }
            pngs.sort();
            out.extend(pngs);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Normalizes every input PNG to the reference; outputs keep file names.
pub fn stain_normalize_command(
    method: StainMethod,
    reference: &Path,
    inputs: &[PathBuf],
    macenko: &MacenkoConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let inputs = expand_inputs(inputs)?;
    if inputs.is_empty() {
        return Err(Error::Config { field: "inputs".into(), message: "no input images".into() });
    }
    let reference = RgbPatch::load_png(reference)?;
    enum Fitted {
        R(crate::stain::ReinhardStats),
        M(crate::stain::MacenkoReference),
    }
    let fitted = match method {
        StainMethod::Reinhard => Fitted::R(reinhard_fit(&reference)?),
        StainMethod::Macenko => Fitted::M(macenko_fit(&reference, macenko)?),
    };
    make_dir(out)?;
    let mut written = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let img = RgbPatch::load_png(path)?;
        let normalized = match &fitted {
            Fitted::R(stats) => reinhard_apply(&img, stats)?,
            Fitted::M(r) => macenko_apply(&img, r, macenko)?,
        };
        let name = path.file_name().ok_or_else(|| Error::Data(format!("{} has no file name", path.display())))?;
        let dest = out.join(name);
        normalized.save_png(&dest)?;
        written.push(dest);
    }
    Ok(written)
}
