//! On-disk datasets: one CSV and one bag JSONL per domain plus a manifest
//! with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::DataConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::{
    benchmark, generate_balanced, imbalance_filter, make_bags, read_bags_jsonl, read_domain_csv, write_bags_jsonl,
    write_domain_csv, Bag, BagRecord, LabeledSample,
};
use crate::trainer::BagSet;

pub const DATASET_FORMAT: &str = "lmmd-align-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub domain_id: usize,
    pub samples: usize,
    pub class_counts: Vec<usize>,
    pub csv: FileEntry,
    pub num_bags: usize,
    pub bags: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: DataConfig,
    pub domains: Vec<DomainEntry>,
}

impl Manifest {
    /// Hash identifying the dataset contents.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

fn class_counts(samples: &[LabeledSample]) -> Vec<usize> {
    let c = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut counts = vec![0; c];
    for s in samples {
        counts[s.label] += 1;
    }
    counts
}

/// Samples of every benchmark domain under `cfg`, imbalance applied.
pub fn generate_domains(cfg: &DataConfig) -> Result<Vec<Vec<LabeledSample>>> {
    cfg.validate()?;
    let specs = benchmark(&cfg.benchmark, cfg.benchmark_seed);
    specs
        .iter()
        .map(|spec| {
            let k = spec.domain_id;
            let samples = generate_balanced(spec, cfg.samples_per_domain, rng::derive(cfg.seed, 100 + k as u64))?;
            match &cfg.imbalance {
                Some(imb) if imb.domains.contains(&k) => {
                    imbalance_filter(&samples, imb.ratio, rng::derive(cfg.seed, 200 + k as u64))
                }
                _ => Ok(samples),
            }
        })
        .collect()
}

/// Bags drawn from one domain's samples.
pub fn generate_bags(cfg: &DataConfig, domain_id: usize, samples: &[LabeledSample]) -> Result<Vec<Bag>> {
    make_bags(samples, &cfg.bags, rng::derive(cfg.seed, 300 + domain_id as u64))
}

/// Writes `domain_<k>.csv`, `bags_<k>.jsonl` and the manifest into `dir`.
pub fn gen_data(cfg: &DataConfig, dir: &Path) -> Result<Manifest> {
    let domains = generate_domains(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(domains.len());
    for (k, samples) in domains.iter().enumerate() {
        let csv_name = format!("domain_{k}.csv");
        let bag_name = format!("bags_{k}.jsonl");
        write_domain_csv(&dir.join(&csv_name), samples)?;
        let bags = generate_bags(cfg, k, samples)?;
        write_bags_jsonl(&dir.join(&bag_name), &bags)?;
        entries.push(DomainEntry {
            domain_id: k,
            samples: samples.len(),
            class_counts: class_counts(samples),
            csv: FileEntry { sha256: sha256_file(&dir.join(&csv_name))?, path: csv_name },
            num_bags: bags.len(),
            bags: FileEntry { sha256: sha256_file(&dir.join(&bag_name))?, path: bag_name },
        });
        log::info!("domain {k}: {} samples, {} bags", samples.len(), bags.len());
    }
    let manifest = Manifest { format: DATASET_FORMAT.into(), config: cfg.clone(), domains: entries };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A generated dataset with verified file hashes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::Data(format!("no dataset manifest at {}", path.display())));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Data(format!("unsupported dataset format {}", manifest.format)));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    fn entry(&self, domain_id: usize) -> Result<&DomainEntry> {
        self.manifest
            .domains
            .iter()
            .find(|d| d.domain_id == domain_id)
            .ok_or_else(|| Error::Data(format!("dataset {} has no domain {domain_id}", self.dir.display())))
    }

    fn verified(&self, file: &FileEntry) -> Result<PathBuf> {
        let path = self.dir.join(&file.path);
        if !path.is_file() {
            return Err(Error::Data(format!("missing dataset file {}", path.display())));
        }
        if sha256_file(&path)? != file.sha256 {
            return Err(Error::Data(format!("{} does not match its manifest hash", path.display())));
        }
        Ok(path)
    }

    pub fn domain(&self, domain_id: usize) -> Result<Vec<LabeledSample>> {
        let samples = read_domain_csv(&self.verified(&self.entry(domain_id)?.csv)?)?;
        if let Some(bad) = samples.iter().find(|s| s.domain_id != domain_id) {
            return Err(Error::Data(format!("domain {domain_id} file holds a row of domain {}", bad.domain_id)));
        }
        Ok(samples)
    }

    pub fn domains(&self, ids: &[usize]) -> Result<BTreeMap<usize, Vec<LabeledSample>>> {
        ids.iter().map(|&k| Ok((k, self.domain(k)?))).collect()
    }

    pub fn bag_records(&self, domain_id: usize) -> Result<Vec<BagRecord>> {
        read_bags_jsonl(&self.verified(&self.entry(domain_id)?.bags)?)
    }

    pub fn bags(&self, domain_id: usize) -> Result<BagSet> {
        let records = self.bag_records(domain_id)?;
        let mut bags = Vec::with_capacity(records.len());
        for r in &records {
            let d = r.instances.first().map_or(0, Vec::len);
            let flat: Vec<f64> = r.instances.iter().flatten().copied().collect();
            bags.push(
                ndarray::Array2::from_shape_vec((r.instances.len(), d), flat)
                    .map_err(|e| Error::Data(format!("bag {}: {e}", r.bag_id)))?,
            );
        }
        BagSet::new(bags, records.iter().map(|r| r.label).collect())
    }
}
