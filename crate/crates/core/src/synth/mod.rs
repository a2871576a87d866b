//! Synthetic multi-domain classification data.
//!
//! Each domain draws class-conditional Gaussians and then applies a
//! domain-specific affine distortion (rotation in the first two coordinates,
//! isotropic scale, translation), standing in for hospital-specific
//! signatures. The module also implements the sampling protocols used by the
//! trainers: balanced per-domain batches, stratified held-out splits, label
//! imbalance and bag construction for multiple-instance learning.

mod io;
mod render;

pub use io::{read_bags_jsonl, read_domain_csv, write_bags_jsonl, write_domain_csv, BagRecord};
pub use render::{decode_patch, render_patch, StainRendering, PATCH_SIDE};

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub domain_id: usize,
    /// `C × d` class means.
    pub class_means: Vec<Vec<f64>>,
    pub class_cov_scale: f64,
    pub shift: Vec<f64>,
    /// Radians, applied in the plane of the first two coordinates.
    pub rotation_angle: f64,
    pub scale: f64,
    pub label_marginal: Vec<f64>,
}

impl DomainSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.class_means.is_empty() || d == 0 || self.class_means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("class means must form a non-empty C × d matrix"));
        }
        if self.shift.len() != d {
            return Err(Error::DimMismatch { expected: d, got: self.shift.len() });
        }
        if !(self.scale > 0.0) || !(self.class_cov_scale > 0.0) {
            return Err(Error::invalid("scale and class_cov_scale must be positive"));
        }
        if self.label_marginal.len() != self.num_classes()
            || self.label_marginal.iter().any(|p| !(*p >= 0.0))
            || (self.label_marginal.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("label_marginal must be a simplex vector over the classes"));
        }
        Ok(())
    }

    fn draw(&self, label: usize, r: &mut rng::Rng) -> Vec<f64> {
        let sd = self.class_cov_scale.sqrt();
        let mut x: Vec<f64> = self.class_means[label]
            .iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(r);
                m + sd * e
            })
            .collect();
        if x.len() >= 2 {
            let (s, c) = self.rotation_angle.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for (xi, t) in x.iter_mut().zip(&self.shift) {
            *xi = self.scale * *xi + t;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain_id: usize,
}

/// A domain's samples split into an adaptation part and a held-out part.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: Vec<LabeledSample>,
    pub heldout: Vec<LabeledSample>,
}

/// `n` samples with labels drawn from the label marginal.
pub fn generate_domain(spec: &DomainSpec, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut r = rng::seeded(rng::derive(seed, rng::stream::DATA));
    let cumulative: Vec<f64> = spec
        .label_marginal
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok((0..n)
        .map(|_| {
            let u: f64 = r.random();
            let label = cumulative.iter().position(|&c| u < c).unwrap_or_else(|| {
                spec.label_marginal.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            });
            LabeledSample { features: spec.draw(label, &mut r), label, domain_id: spec.domain_id }
        })
        .collect())
}

/// Exactly `n / C` samples per class (n must divide evenly), shuffled.
pub fn generate_balanced(spec: &DomainSpec, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    let c = spec.num_classes();
    if n == 0 || !n.is_multiple_of(c) {
        return Err(Error::invalid(format!("balanced set size {n} is not a positive multiple of {c}")));
    }
    let mut r = rng::seeded(rng::derive(seed, rng::stream::DATA));
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut r);
    Ok(labels
        .into_iter()
        .map(|label| LabeledSample { features: spec.draw(label, &mut r), label, domain_id: spec.domain_id })
        .collect())
}

pub const BENCHMARK_DOMAINS: usize = 6;
pub const BENCHMARK_DIM: usize = 8;
pub const BENCHMARK_CLASSES: usize = 2;
pub const BENCHMARK_SAMPLES_PER_DOMAIN: usize = 300;

/// Knobs of the six-domain difficulty ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkParams {
    /// Half-distance between the two class means.
    pub class_offset: f64,
    pub angles_deg: [f64; BENCHMARK_DOMAINS],
    pub shift_norms: [f64; BENCHMARK_DOMAINS],
    pub scales: [f64; BENCHMARK_DOMAINS],
    /// Base translation direction; normalized after jitter.
    pub shift_direction: [f64; BENCHMARK_DIM],
    /// Relative jitter of every nonzero coordinate of the direction.
    pub shift_jitter: f64,
    /// Per-coordinate class noise standard deviation.
    pub noise_sd: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            class_offset: 0.8,
            angles_deg: [0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            shift_norms: [0.0, 0.4, 0.6, 0.8, 2.0, 2.0],
            scales: [1.0, 1.0, 1.0, 1.0, 0.8, 0.8],
            shift_direction: [1.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
            shift_jitter: 0.25,
            noise_sd: 0.4,
        }
    }
}

/// Six two-class, eight-dimensional domains on a difficulty ladder.
///
/// Domain 0 is the undistorted reference. The seed jitters each translation
/// direction; norms, angles and scales are fixed by `params`.
pub fn benchmark(params: &BenchmarkParams, seed: u64) -> Vec<DomainSpec> {
    let d = BENCHMARK_DIM;
    let dir: Vec<f64> = vec![1.0 / (d as f64).sqrt(); d];
    let class_means = vec![
        dir.iter().map(|v| -params.class_offset * v).collect(),
        dir.iter().map(|v| params.class_offset * v).collect(),
    ];
    let mut r = rng::seeded(rng::derive(seed, rng::stream::BENCHMARK));
    (0..BENCHMARK_DOMAINS)
        .map(|k| {
            let mut shift = vec![0.0; d];
            if params.shift_norms[k] > 0.0 {
                for (s, &base) in shift.iter_mut().zip(&params.shift_direction) {
                    if base != 0.0 {
                        *s = base * (1.0 + params.shift_jitter * r.random_range(-1.0..1.0));
                    }
                }
                let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in &mut shift {
                    *v *= params.shift_norms[k] / norm;
                }
            }
            DomainSpec {
                domain_id: k,
                class_means: class_means.clone(),
                class_cov_scale: params.noise_sd * params.noise_sd,
                shift,
                rotation_angle: params.angles_deg[k].to_radians(),
                scale: params.scales[k],
                label_marginal: vec![0.5, 0.5],
            }
        })
        .collect()
}

/// [`benchmark`] with the frozen default parameters.
pub fn default_benchmark(seed: u64) -> Vec<DomainSpec> {
    benchmark(&BenchmarkParams::default(), seed)
}

/// Materializes every benchmark domain as a balanced 300-sample set.
pub fn materialize_benchmark(specs: &[DomainSpec], seed: u64) -> Result<Vec<Vec<LabeledSample>>> {
    specs
        .iter()
        .map(|s| generate_balanced(s, BENCHMARK_SAMPLES_PER_DOMAIN, rng::derive(seed, 100 + s.domain_id as u64)))
        .collect()
}

/// Per-domain sample indices making up one balanced batch.
pub type BatchIndices = Vec<Vec<usize>>;

/// Number of full balanced batches per epoch: an epoch is one pass over the
/// smallest domain.
pub fn batches_per_epoch(domain_sizes: &[usize], per_domain: usize) -> Result<usize> {
    let smallest = domain_sizes.iter().copied().min().unwrap_or(0);
    if per_domain == 0 || smallest < per_domain {
        return Err(Error::invalid(format!(
            "per-domain batch size {per_domain} exceeds the smallest domain ({smallest})"
        )));
    }
    Ok(smallest / per_domain)
}

/// The batch drawn at global `step`: `per_domain` indices from every domain,
/// without replacement within an epoch and reshuffled every epoch.
pub fn balanced_batch(domain_sizes: &[usize], per_domain: usize, seed: u64, step: usize) -> Result<BatchIndices> {
    let bpe = batches_per_epoch(domain_sizes, per_domain)?;
    let epoch = (step / bpe) as u64;
    let slot = step % bpe;
    Ok(domain_sizes
        .iter()
        .enumerate()
        .map(|(d, &size)| {
            let stream = rng::derive(rng::derive(seed, rng::stream::BATCHES), ((d as u64) << 32) | epoch);
            let mut perm: Vec<usize> = (0..size).collect();
            perm.shuffle(&mut rng::seeded(stream));
            perm[slot * per_domain..(slot + 1) * per_domain].to_vec()
        })
        .collect())
}

/// Feature matrix and labels for the selected rows.
pub fn gather(samples: &[LabeledSample], idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut x = Array2::zeros((idx.len(), d));
    let mut y = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        for (j, v) in samples[i].features.iter().enumerate() {
            x[[row, j]] = *v;
        }
        y.push(samples[i].label);
    }
    (x, y)
}

pub fn features(samples: &[LabeledSample]) -> Array2<f64> {
    gather(samples, &(0..samples.len()).collect::<Vec<_>>()).0
}

pub fn labels(samples: &[LabeledSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

/// 50/50 split, stratified by class; the first half of each shuffled class
/// goes to `train`.
pub fn stratified_split(samples: &[LabeledSample], seed: u64) -> SplitSet {
    let mut r = rng::seeded(rng::derive(seed, rng::stream::SPLIT));
    let num_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut train_idx = Vec::new();
    let mut held_idx = Vec::new();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        idx.shuffle(&mut r);
        let half = idx.len() / 2;
        train_idx.extend_from_slice(&idx[..half]);
        held_idx.extend_from_slice(&idx[half..]);
    }
    train_idx.sort_unstable();
    held_idx.sort_unstable();
    SplitSet {
        train: train_idx.iter().map(|&i| samples[i].clone()).collect(),
        heldout: held_idx.iter().map(|&i| samples[i].clone()).collect(),
    }
}

/// Largest two-class subset with class 0 : class 1 ≈ `ratio : (1 − ratio)`.
///
/// The majority side keeps all of its samples when possible; the other side
/// is subsampled to `⌊n·(1−ratio)/ratio⌋` (or the mirrored count).
pub fn imbalance_filter(samples: &[LabeledSample], ratio: f64, seed: u64) -> Result<Vec<LabeledSample>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("ratio must lie in (0, 1)"));
    }
    if samples.iter().any(|s| s.label > 1) {
        return Err(Error::invalid("imbalance filter expects exactly two classes"));
    }
    let idx0: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 0).collect();
    let idx1: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    if idx0.is_empty() || idx1.is_empty() {
        return Err(Error::invalid("both classes must be present"));
    }
    let (n0, n1) = (idx0.len(), idx1.len());
    let want1 = (n0 as f64 * (1.0 - ratio) / ratio + 1e-9).floor() as usize;
    let (keep0, keep1) = if want1 <= n1 {
        (n0, want1)
    } else {
        ((n1 as f64 * ratio / (1.0 - ratio) + 1e-9).floor() as usize, n1)
    };
    let mut r = rng::seeded(rng::derive(seed, rng::stream::IMBALANCE));
    let mut pick = |idx: &[usize], k: usize| -> Vec<usize> {
        let mut v = idx.to_vec();
        v.shuffle(&mut r);
        v.truncate(k);
        v
    };
    let mut keep = pick(&idx0, keep0);
    keep.extend(pick(&idx1, keep1));
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

/// Bag construction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagConfig {
    pub num_bags: usize,
    /// Inclusive instance-count range.
    pub size_range: (usize, usize),
    /// Inclusive range for the fraction of class-1 instances in positive bags.
    pub positive_fraction_range: (f64, f64),
}

impl Default for BagConfig {
    fn default() -> Self {
        Self { num_bags: 24, size_range: (16, 32), positive_fraction_range: (0.3, 0.7) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub instances: Vec<LabeledSample>,
    pub label: usize,
}

impl Bag {
    pub fn matrix(&self) -> Array2<f64> {
        features(&self.instances)
    }
}

/// Number of class-1 instances in a positive bag of `size` with fraction `f`.
pub fn positive_count(size: usize, fraction: f64) -> usize {
    ((fraction * size as f64 + 1e-9).floor() as usize).clamp(1, size)
}

/// Alternating positive/negative bags. Positive bags mix class-1 instances
/// (at a sampled fraction) with class-0 background; negative bags hold
/// background only.
pub fn make_bags(samples: &[LabeledSample], cfg: &BagConfig, seed: u64) -> Result<Vec<Bag>> {
    let (lo, hi) = cfg.size_range;
    let (flo, fhi) = cfg.positive_fraction_range;
    if lo == 0 || hi < lo {
        return Err(Error::invalid("bag size range must satisfy 1 ≤ min ≤ max"));
    }
    if !(flo > 0.0 && flo <= fhi && fhi <= 1.0) {
        return Err(Error::invalid("positive fraction range must satisfy 0 < min ≤ max ≤ 1"));
    }
    let background: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 0).collect();
    let positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    if background.len() < hi || positives.len() < hi {
        return Err(Error::invalid("not enough instances per class to fill a bag"));
    }
    let mut r = rng::seeded(rng::derive(seed, rng::stream::BAGS));
    let mut bags = Vec::with_capacity(cfg.num_bags);
    for b in 0..cfg.num_bags {
        let size = r.random_range(lo..=hi);
        let label = b % 2;
        let n_pos = if label == 1 { positive_count(size, r.random_range(flo..=fhi)) } else { 0 };
        let mut chosen: Vec<usize> = positives.choose_multiple(&mut r, n_pos).copied().collect();
        chosen.extend(background.choose_multiple(&mut r, size - n_pos).copied());
        chosen.shuffle(&mut r);
        bags.push(Bag { instances: chosen.iter().map(|&i| samples[i].clone()).collect(), label });
    }
    bags.shuffle(&mut r);
    Ok(bags)
}
