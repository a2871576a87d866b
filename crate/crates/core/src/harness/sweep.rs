//! Source × target × arm × seed sweeps with one persisted record per cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::arms::{run_arm, ArmResult, ArmTask};
use super::config::{Arm, Evaluation, RunConfig, SweepMode};
use super::data::{sha256_hex, Dataset};
use super::summary::{write_summary, Summary};
use crate::error::{Error, Result};
use crate::metrics::{EmbeddingAudit, MetricsReport};
use crate::nets::Checkpoint;
use crate::synth::{stratified_split, LabeledSample};

pub const RECORD_FORMAT: &str = "lmmd-align-record/1";
pub const RECORD_FILE: &str = "record.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One (setting, arm, seed) unit of work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub sources: Vec<usize>,
    pub target: usize,
    pub arm: Arm,
    pub seed: u64,
}

pub fn setting_label(sources: &[usize], target: usize) -> String {
    let s: Vec<String> = sources.iter().map(usize::to_string).collect();
    format!("{}->{target}", s.join("+"))
}

impl Cell {
    pub fn setting(&self) -> String {
        setting_label(&self.sources, self.target)
    }

    /// Directory relative to the experiment root.
    pub fn rel_dir(&self) -> PathBuf {
        let s: Vec<String> = self.sources.iter().map(usize::to_string).collect();
        PathBuf::from("cells")
            .join(format!("s{}-t{}", s.join("+"), self.target))
            .join(self.arm.name())
            .join(format!("seed-{}", self.seed))
    }

    /// The run config that reproduces exactly this cell.
    pub fn echo(&self, cfg: &RunConfig) -> RunConfig {
        RunConfig {
            sources: self.sources.clone(),
            targets: vec![self.target],
            arms: vec![self.arm],
            seeds: vec![self.seed],
            train: Some(cfg.train_config()),
            ..cfg.clone()
        }
    }
}

/// Cells in a fixed order: settings, then arms, then seeds.
pub fn plan(cfg: &RunConfig) -> Vec<Cell> {
    let mut settings: Vec<(Vec<usize>, usize)> = Vec::new();
    match cfg.mode {
        SweepMode::Da => {
            for &s in &cfg.sources {
                for &t in cfg.targets.iter().filter(|&&t| t != s) {
                    settings.push((vec![s], t));
                }
            }
        }
        SweepMode::Dg => settings.extend(cfg.targets.iter().map(|&t| (cfg.sources.clone(), t))),
    }
    let mut cells = Vec::new();
    for (sources, target) in settings {
        for &arm in &cfg.arms {
            for &seed in &cfg.seeds {
                cells.push(Cell { sources: sources.clone(), target, arm, seed });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellMetrics {
    pub target: MetricsReport,
    pub source_balanced_accuracy: f64,
    pub final_ce: f64,
    pub final_lmmd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub format: String,
    pub toolkit_version: String,
    pub experiment_id: String,
    pub setting: String,
    pub sources: Vec<usize>,
    pub target: usize,
    pub arm: Arm,
    pub seed: u64,
    /// Single-cell config; `sweep` on it reproduces this record.
    pub config: RunConfig,
    /// SHA-256 over the echoed config (minus output directory), dataset
    /// manifest and toolkit version.
    pub input_hash: String,
    pub status: CellStatus,
    pub error: Option<String>,
    pub metrics: Option<CellMetrics>,
    pub wall_clock_secs: f64,
    /// File names relative to the record's directory.
    pub artifacts: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

pub fn input_hash(echo: &RunConfig, dataset_hash: &str) -> Result<String> {
    let mut v = serde_json::to_value(echo)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
        obj.remove("data_dir");
    }
    let payload = serde_json::json!({ "config": v, "dataset": dataset_hash, "version": TOOLKIT_VERSION });
    Ok(sha256_hex(serde_json::to_string(&payload)?.as_bytes()))
}

pub fn experiment_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(&cfg.experiment_id)
}

/// Every record below `root`, sorted by path.
pub fn collect_records(root: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                if !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')) {
                    walk(&path, out)?;
                }
            } else if path.file_name().is_some_and(|n| n == RECORD_FILE) {
                out.push(path);
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(Error::Data(format!("records directory {} does not exist", root.display())));
    }
    let mut paths = Vec::new();
    walk(root, &mut paths)?;
    paths.sort();
    paths.into_iter().map(|p| RunRecord::load(&p).map(|r| (p, r))).collect()
}

/// Embeddings CSV: `domain_id,label,z0..`.
pub fn write_embeddings_csv(path: &Path, audit: &EmbeddingAudit) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let z = audit.embeddings();
    let mut header = vec!["domain_id".to_string(), "label".to_string()];
    header.extend((0..z.ncols()).map(|j| format!("z{j}")));
    let werr = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(werr)?;
    for (i, row) in z.rows().into_iter().enumerate() {
        let mut rec = vec![audit.domain_labels()[i].to_string(), audit.class_labels()[i].to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingAudit> {
    let samples = crate::synth::read_domain_csv(path)?;
    let audit_rows: Vec<f64> = samples.iter().flat_map(|s| s.features.iter().copied()).collect();
    let d = samples.first().map_or(0, |s| s.features.len());
    let z = ndarray::Array2::from_shape_vec((samples.len(), d), audit_rows)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    EmbeddingAudit::new(
        z,
        samples.iter().map(|s| s.label).collect(),
        samples.iter().map(|s| s.domain_id).collect(),
    )
}

struct SweepInputs<'a> {
    cfg: &'a RunConfig,
    domains: BTreeMap<usize, Vec<LabeledSample>>,
    dataset_hash: String,
    exp_dir: PathBuf,
}

fn execute(inputs: &SweepInputs<'_>, cell: &Cell) -> Result<ArmResult> {
    let cfg = inputs.cfg;
    let train = crate::trainer::TrainConfig { seed: cell.seed, ..cfg.train_config() };
    let get = |k: usize| -> Result<&Vec<LabeledSample>> {
        inputs.domains.get(&k).ok_or_else(|| Error::Data(format!("domain {k} not loaded")))
    };
    let sources: Vec<&[LabeledSample]> =
        cell.sources.iter().map(|&k| get(k).map(Vec::as_slice)).collect::<Result<_>>()?;
    let target = get(cell.target)?;
    match (cfg.mode, cfg.evaluation) {
        (SweepMode::Da, Evaluation::Transductive) => {
            run_arm(cell.arm, ArmTask::Adapt { sources: &sources, adapt: target, eval: target }, &train, &cfg.macenko)
        }
        (SweepMode::Da, Evaluation::Heldout) => {
            let split = stratified_split(target, cell.seed);
            let task = ArmTask::Adapt { sources: &sources, adapt: &split.train, eval: &split.heldout };
            run_arm(cell.arm, task, &train, &cfg.macenko)
        }
        (SweepMode::Dg, _) => run_arm(cell.arm, ArmTask::Generalize { sources: &sources, eval: target }, &train, &cfg.macenko),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Runs one cell into a private staging directory, then moves it into place.
fn run_cell(inputs: &SweepInputs<'_>, cell: &Cell, hash: String, staging: &Path) -> Result<RunRecord> {
    let echo = cell.echo(inputs.cfg);
    let start = Instant::now();
    let outcome = execute(inputs, cell);
    let wall = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(staging).map_err(|e| Error::io(staging, e))?;
    let mut artifacts = BTreeMap::new();
    let (status, error, metrics) = match outcome {
        Ok(r) => {
            write_embeddings_csv(&staging.join("embeddings.csv"), &r.embeddings)?;
            artifacts.insert("embeddings".into(), "embeddings.csv".into());
            r.history.write_csv(&staging.join("history.csv"))?;
            artifacts.insert("history".into(), "history.csv".into());
            Checkpoint::from_encoder(&r.encoder, cell.seed)?.save(&staging.join("encoder.json"))?;
            artifacts.insert("encoder".into(), "encoder.json".into());
            Checkpoint::from_classifier(&r.head, cell.seed).save(&staging.join("head.json"))?;
            artifacts.insert("head".into(), "head.json".into());
            let last = r.history.last();
            let m = CellMetrics {
                target: r.target,
                source_balanced_accuracy: r.source_balanced_accuracy,
                final_ce: last.map_or(f64::NAN, |l| l.ce),
                final_lmmd: last.map_or(f64::NAN, |l| l.lmmd),
            };
            (CellStatus::Ok, None, Some(m))
        }
        Err(e) => {
            log::warn!("cell {} {} seed {} failed: {e}", cell.setting(), cell.arm.name(), cell.seed);
            (CellStatus::Failed, Some(e.to_string()), None)
        }
    };
    let record = RunRecord {
        format: RECORD_FORMAT.into(),
        toolkit_version: TOOLKIT_VERSION.into(),
        experiment_id: inputs.cfg.experiment_id.clone(),
        setting: cell.setting(),
        sources: cell.sources.clone(),
        target: cell.target,
        arm: cell.arm,
        seed: cell.seed,
        config: echo,
        input_hash: hash,
        status,
        error,
        metrics,
        wall_clock_secs: wall,
        artifacts,
    };
    write_json(&staging.join(RECORD_FILE), &record)?;
    let dest = inputs.exp_dir.join(cell.rel_dir());
    if dest.exists() {
        std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
    }
    let parent = dest.parent().expect("cell dirs are nested");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    std::fs::rename(staging, &dest).map_err(|e| Error::io(&dest, e))?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Records of every planned cell, in plan order.
    pub records: Vec<RunRecord>,
    pub ran: usize,
    pub skipped: usize,
    pub failed: usize,
    pub summary: Summary,
    pub experiment_dir: PathBuf,
}

/// Runs every planned cell not already recorded with the same input hash,
/// using up to `jobs` worker threads, then rewrites the summary.
pub fn run_sweep(cfg: &RunConfig, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dataset = Dataset::open(&cfg.data_dir)?;
    let mut ids: Vec<usize> = cfg.sources.iter().chain(&cfg.targets).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let inputs = SweepInputs {
        cfg,
        domains: dataset.domains(&ids)?,
        dataset_hash: dataset.manifest.content_hash()?,
        exp_dir: experiment_dir(cfg),
    };
    std::fs::create_dir_all(&inputs.exp_dir).map_err(|e| Error::io(&inputs.exp_dir, e))?;
    let cells = plan(cfg);
    let mut slots: Vec<Option<RunRecord>> = vec![None; cells.len()];
    let mut pending = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let hash = input_hash(&cell.echo(cfg), &inputs.dataset_hash)?;
        let existing = inputs.exp_dir.join(cell.rel_dir()).join(RECORD_FILE);
        match existing.is_file().then(|| RunRecord::load(&existing)).transpose() {
            Ok(Some(r)) if r.input_hash == hash && r.status == CellStatus::Ok => slots[i] = Some(r),
            _ => pending.push((i, hash)),
        }
    }
    let skipped = cells.len() - pending.len();
    log::info!("{} cells planned, {} already recorded", cells.len(), skipped);

    let staging_root = inputs.exp_dir.join(".staging");
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<RunRecord>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for worker in 0..jobs.max(1).min(pending.len().max(1)) {
            let (inputs, pending, cells, next, results, staging_root) =
                (&inputs, &pending, &cells, &next, &results, &staging_root);
            scope.spawn(move || loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((i, hash)) = pending.get(j) else { break };
                let staging = staging_root.join(format!("{}-{worker}-{i}", std::process::id()));
                let r = run_cell(inputs, &cells[*i], hash.clone(), &staging);
                results.lock().expect("worker panicked").push((*i, r));
            });
        }
    });
    let _ = std::fs::remove_dir(&staging_root);
    let ran = pending.len();
    for (i, r) in results.into_inner().expect("worker panicked") {
        slots[i] = Some(r?);
    }
    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every cell resolved")).collect();
    let failed = records.iter().filter(|r| r.status == CellStatus::Failed).count();
    let summary = write_summary(&inputs.exp_dir)?;
    Ok(SweepOutcome { records, ran, skipped, failed, summary, experiment_dir: inputs.exp_dir })
}
