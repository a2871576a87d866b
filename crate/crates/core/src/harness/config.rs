//! JSON configs for every command. Unknown fields are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stain::MacenkoConfig;
use crate::synth::{BagConfig, BenchmarkParams, BENCHMARK_DOMAINS, BENCHMARK_SAMPLES_PER_DOMAIN};
use crate::trainer::{TrainConfig, TrainMode};

/// Parses a config file; syntax and schema errors carry line and column.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config {
        field: format!("{origin} line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceConfig {
    /// Class-0 share after filtering.
    pub ratio: f64,
    /// Domains to filter; all others stay balanced.
    pub domains: Vec<usize>,
}

/// Dataset generation for `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seed for sample draws, imbalance filtering and bags.
    pub seed: u64,
    /// Seed for the benchmark's shift jitter; 0 is the frozen benchmark.
    pub benchmark_seed: u64,
    pub benchmark: BenchmarkParams,
    pub samples_per_domain: usize,
    pub imbalance: Option<ImbalanceConfig>,
    pub bags: BagConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            benchmark_seed: 0,
            benchmark: BenchmarkParams::default(),
            samples_per_domain: BENCHMARK_SAMPLES_PER_DOMAIN,
            imbalance: None,
            bags: BagConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_domain < 2 {
            return Err(config_err("samples_per_domain", "must be at least 2"));
        }
        if let Some(imb) = &self.imbalance {
            if !(imb.ratio > 0.0 && imb.ratio < 1.0) {
                return Err(config_err("imbalance.ratio", "must lie in (0, 1)"));
            }
            if let Some(&k) = imb.domains.iter().find(|&&k| k >= BENCHMARK_DOMAINS) {
                return Err(config_err("imbalance.domains", format!("domain {k} does not exist")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Frozen encoder without adapters; only the head is trained.
    Original,
    Reinhard,
    Macenko,
    /// Adapters and head trained on source cross-entropy alone.
    CeOnly,
    Lmmd,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Original, Arm::Reinhard, Arm::Macenko, Arm::CeOnly, Arm::Lmmd];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Reinhard => "reinhard",
            Arm::Macenko => "macenko",
            Arm::CeOnly => "ce_only",
            Arm::Lmmd => "lmmd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Da,
    Dg,
}

/// Which target samples are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// The same unlabeled samples used for adaptation.
    #[default]
    Transductive,
    /// Adapt on one stratified half, score the other.
    Heldout,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Experiment sweep for `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment_id: String,
    pub mode: SweepMode,
    pub data_dir: PathBuf,
    pub sources: Vec<usize>,
    /// Adaptation targets (DA) or unseen domains (DG).
    pub targets: Vec<usize>,
    pub arms: Vec<Arm>,
    /// Defaults to the mode's standard config; `seed` is replaced per cell.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub evaluation: Evaluation,
    #[serde(default)]
    pub macenko: MacenkoConfig,
}

fn has_duplicates<T: Ord + Clone>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty()
            || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(config_err("experiment_id", "must be non-empty ASCII letters, digits, '-', '_' or '.'"));
        }
        if self.arms.is_empty() {
            return Err(config_err("arms", "must not be empty"));
        }
        if has_duplicates(&self.arms) {
            return Err(config_err("arms", "contains duplicates"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "must not be empty"));
        }
        if has_duplicates(&self.seeds) {
            return Err(config_err("seeds", "contains duplicates"));
        }
        if has_duplicates(&self.sources) || has_duplicates(&self.targets) {
            return Err(config_err("sources", "domain lists must not repeat ids"));
        }
        match self.mode {
            SweepMode::Da => {
                if self.sources.is_empty() || self.targets.is_empty() {
                    return Err(config_err("sources", "adaptation needs at least one source and one target"));
                }
                if !self.sources.iter().any(|s| self.targets.iter().any(|t| t != s)) {
                    return Err(config_err("targets", "no source/target pair with distinct domains"));
                }
            }
            SweepMode::Dg => {
                if self.sources.len() < 2 || self.targets.is_empty() {
                    return Err(config_err("sources", "generalization needs at least two sources and one unseen target"));
                }
                if self.targets.iter().any(|t| self.sources.contains(t)) {
                    return Err(config_err("targets", "unseen targets must not be sources"));
                }
            }
        }
        let train = self.train_config();
        let expected = match self.mode {
            SweepMode::Da => TrainMode::Da,
            SweepMode::Dg => TrainMode::Dg,
        };
        if train.mode != expected {
            return Err(config_err("train.mode", "must match the sweep mode"));
        }
        train.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| match self.mode {
            SweepMode::Da => TrainConfig::da(0),
            SweepMode::Dg => TrainConfig::dg(0),
        })
    }
}

/// Single adaptation run for `train-da`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDaConfig {
    pub data_dir: PathBuf,
    pub sources: Vec<usize>,
    pub target: usize,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

/// Single generalization run for `train-dg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDgConfig {
    pub data_dir: PathBuf,
    pub sources: Vec<usize>,
    /// Evaluated after training, never seen during it.
    #[serde(default)]
    pub unseen: Vec<usize>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

/// Bag-level run for `train-mil`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMilConfig {
    pub data_dir: PathBuf,
    /// Domain whose bags train the attention model.
    pub train_domain: usize,
    pub eval_domains: Vec<usize>,
    /// Encoder checkpoint (e.g. from `train-da`); a fresh encoder otherwise.
    #[serde(default)]
    pub encoder: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_json(extra: &str) -> String {
        format!(
            r#"{{"experiment_id": "e1", "mode": "da", "data_dir": "d", "sources": [0], "targets": [4],
                "arms": ["original", "lmmd"], "seeds": [0, 1]{extra}}}"#
        )
    }

    #[test]
    fn minimal_run_config_parses_with_defaults() {
        let cfg: RunConfig = parse_config(&run_json(""), "cfg").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("runs"));
        assert_eq!(cfg.train_config(), TrainConfig::da(0));
        assert_eq!(cfg.evaluation, Evaluation::Transductive);
    }

    #[test]
    fn unknown_field_reports_position() {
        let err = parse_config::<RunConfig>(&run_json(r#", "lamda": 1.0"#), "cfg.json").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("lamda") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn invariants_rejected() {
        let base: RunConfig = parse_config(&run_json(""), "cfg").unwrap();
        let mut c = base.clone();
        c.arms.clear();
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = base.clone();
        c.targets = vec![0];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.mode = SweepMode::Dg;
        assert!(c.validate().is_err(), "one source is not enough for DG");
        c.sources = vec![0, 1];
        c.validate().unwrap();
        c.train = Some(TrainConfig::da(0));
        assert!(c.validate().is_err(), "DA train config under DG mode");
        c.train = Some(TrainConfig::dg(0));
        c.validate().unwrap();
        c.targets = vec![1];
        assert!(c.validate().is_err());
        let mut c = base;
        c.experiment_id = "a/b".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn data_config_defaults_and_checks() {
        let cfg: DataConfig = parse_config("{}", "d").unwrap();
        assert_eq!(cfg, DataConfig::default());
        let bad: DataConfig = parse_config(r#"{"imbalance": {"ratio": 1.5, "domains": [1]}}"#, "d").unwrap();
        assert!(bad.validate().is_err());
        assert!(parse_config::<DataConfig>(r#"{"sead": 1}"#, "d").is_err());
    }
}
