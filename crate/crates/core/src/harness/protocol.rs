//! Fixed benchmark protocols: paired arm comparisons on freshly drawn data
//! for one seed, used by the acceptance suite and benches.

use ndarray::{concatenate, Axis};

use super::arms::{run_arm, ArmTask};
use super::config::Arm;
use crate::error::{Error, Result};
use crate::metrics::{inertia_ratio, robustness_index, EmbeddingAudit};
use crate::nets::EncoderParams;
use crate::stain::MacenkoConfig;
use crate::synth::{
    generate_balanced, imbalance_filter, make_bags, stratified_split, BagConfig, DomainSpec, LabeledSample,
    BENCHMARK_SAMPLES_PER_DOMAIN,
};
use crate::trainer::{evaluate, evaluate_abmil, train_abmil, train_da, train_dg, BagSet, LabeledDomain, TrainConfig};

/// Near source → far target pairs of the default benchmark.
pub const DA_PAIRS: [(usize, usize); 5] = [(0, 4), (1, 4), (2, 4), (3, 4), (0, 5)];
pub const DG_SOURCES: [usize; 4] = [0, 1, 2, 3];
pub const DG_UNSEEN: [usize; 2] = [4, 5];
pub const IMBALANCE_RATIO: f64 = 0.7;

/// Sample seed of domain `k` in trial `seed`.
pub fn domain_seed(k: usize, seed: u64) -> u64 {
    1000 * (k as u64 + 1) + seed
}

pub fn trial_domain(specs: &[DomainSpec], k: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    let spec = specs.get(k).ok_or_else(|| Error::invalid(format!("benchmark has no domain {k}")))?;
    generate_balanced(spec, BENCHMARK_SAMPLES_PER_DOMAIN, domain_seed(k, seed))
}

/// Target balanced accuracy of the treatment arm and its baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Paired {
    pub treatment: f64,
    pub baseline: f64,
}

impl Paired {
    pub fn margin(&self) -> f64 {
        self.treatment - self.baseline
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetVariant {
    Balanced,
    /// Class-0 share of the target after filtering.
    Imbalanced(f64),
    /// Adapt on a stratified half, score on the other.
    Heldout,
}

/// LMMD adaptation against source cross-entropy fine-tuning on one pair.
pub fn da_trial(specs: &[DomainSpec], pair: (usize, usize), seed: u64, variant: TargetVariant) -> Result<Paired> {
    let src = trial_domain(specs, pair.0, seed)?;
    let tgt = trial_domain(specs, pair.1, seed)?;
    let (adapt, eval) = match variant {
        TargetVariant::Balanced => (tgt.clone(), tgt),
        TargetVariant::Imbalanced(ratio) => {
            let t = imbalance_filter(&tgt, ratio, 50 + seed)?;
            (t.clone(), t)
        }
        TargetVariant::Heldout => {
            let split = stratified_split(&tgt, 60 + seed);
            (split.train, split.heldout)
        }
    };
    let cfg = TrainConfig::da(seed);
    let macenko = MacenkoConfig::default();
    let task = ArmTask::Adapt { sources: &[&src], adapt: &adapt, eval: &eval };
    let treatment = run_arm(Arm::Lmmd, task, &cfg, &macenko)?.target.balanced_accuracy;
    let baseline = run_arm(Arm::CeOnly, task, &cfg, &macenko)?.target.balanced_accuracy;
    Ok(Paired { treatment, baseline })
}

/// Four-source generalization with and without the alignment term, scored
/// as the mean over unseen domains.
pub fn dg_trial(specs: &[DomainSpec], sources: &[usize], unseen: &[usize], seed: u64) -> Result<Paired> {
    let load = |ids: &[usize]| -> Result<Vec<LabeledDomain>> {
        ids.iter().map(|&k| LabeledDomain::from_samples(&trial_domain(specs, k, seed)?)).collect()
    };
    let (src, uns) = (load(sources)?, load(unseen)?);
    let cfg = TrainConfig::dg(seed);
    let (enc, head) = cfg.init_models(src[0].x.ncols(), 2)?;
    let aligned = train_dg(&cfg, &src, &[], enc.clone(), head.clone())?;
    let plain = train_dg(&TrainConfig { lambda: 0.0, ..cfg.clone() }, &src, &[], enc, head)?;
    let score = |e: &EncoderParams, h| -> Result<f64> {
        let mut acc = 0.0;
        for d in &uns {
            acc += evaluate(e, h, d.x.view(), &d.y)?.1.balanced_accuracy;
        }
        Ok(acc / uns.len() as f64)
    };
    Ok(Paired { treatment: score(&aligned.encoder, &aligned.head)?, baseline: score(&plain.encoder, &plain.head)? })
}

/// Attention MIL on source bags, scored on target bags, over the
/// LMMD-adapted encoder versus the unadapted one.
pub fn mil_trial(specs: &[DomainSpec], pair: (usize, usize), seed: u64) -> Result<Paired> {
    let src_s = trial_domain(specs, pair.0, seed)?;
    let tgt_s = trial_domain(specs, pair.1, seed)?;
    let (src, tgt) = (LabeledDomain::from_samples(&src_s)?, LabeledDomain::from_samples(&tgt_s)?);
    let cfg = TrainConfig::da(seed);
    let (enc, head) = cfg.init_models(src.x.ncols(), 2)?;
    let adapted = train_da(&cfg, &[src], &tgt.unlabeled().stripped(), enc.clone(), head)?.encoder;
    let bags = BagConfig::default();
    let train = BagSet::from_bags(&make_bags(&src_s, &bags, 10 + seed)?)?;
    let test = BagSet::from_bags(&make_bags(&tgt_s, &bags, 20 + seed)?)?;
    let mil = TrainConfig::mil(seed);
    let (m_adapted, _) = train_abmil(&mil, &train, &adapted, None)?;
    let (m_original, _) = train_abmil(&mil, &train, &enc, None)?;
    Ok(Paired {
        treatment: evaluate_abmil(&m_adapted, &adapted, &test)?.1.balanced_accuracy,
        baseline: evaluate_abmil(&m_original, &enc, &test)?.1.balanced_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTrial {
    pub inertia_before: f64,
    pub inertia_after: f64,
    pub ri_before: f64,
    pub ri_after: f64,
}

/// Embedding geometry of source + target before and after adaptation;
/// domain labels are 0 for source and 1 for target.
pub fn alignment_trial(specs: &[DomainSpec], pair: (usize, usize), seed: u64) -> Result<AlignmentTrial> {
    let src = LabeledDomain::from_samples(&trial_domain(specs, pair.0, seed)?)?;
    let tgt = LabeledDomain::from_samples(&trial_domain(specs, pair.1, seed)?)?;
    let cfg = TrainConfig::da(seed);
    let (enc, head) = cfg.init_models(src.x.ncols(), 2)?;
    let adapted = train_da(&cfg, std::slice::from_ref(&src), &tgt.unlabeled().stripped(), enc.clone(), head)?.encoder;
    let audit = |e: &EncoderParams| -> Result<EmbeddingAudit> {
        let (zs, zt) = (e.embed(src.x.view())?, e.embed(tgt.x.view())?);
        let z = concatenate(Axis(0), &[zs.view(), zt.view()]).map_err(|e| Error::Numerical(e.to_string()))?;
        let classes = src.y.iter().chain(&tgt.y).copied().collect();
        let domains = std::iter::repeat_n(0, src.len()).chain(std::iter::repeat_n(1, tgt.len())).collect();
        EmbeddingAudit::new(z, classes, domains)
    };
    let (before, after) = (audit(&enc)?, audit(&adapted)?);
    Ok(AlignmentTrial {
        inertia_before: inertia_ratio(&before)?,
        inertia_after: inertia_ratio(&after)?,
        ri_before: robustness_index(&before, 10)?.value,
        ri_after: robustness_index(&after, 10)?.value,
    })
}
