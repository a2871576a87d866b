//! In-memory execution of one arm on one source/target setting.

use ndarray::{concatenate, Axis};

use super::config::Arm;
use crate::error::{Error, Result};
use crate::metrics::{EmbeddingAudit, MetricsReport};
use crate::nets::{ClassifierParams, EncoderParams};
use crate::stain::{macenko_apply, macenko_fit, reinhard_apply, reinhard_fit, MacenkoConfig, RgbPatch};
use crate::synth::{decode_patch, render_patch, LabeledSample, StainRendering, PATCH_SIDE};
use crate::trainer::{
    evaluate, train_da, train_dg, train_source_only, LabeledDomain, TrainConfig, TrainHistory,
};

/// What an arm trains on and what it is scored on.
#[derive(Debug, Clone, Copy)]
pub enum ArmTask<'a> {
    /// Labeled sources, one unlabeled adaptation set, one scoring set.
    Adapt { sources: &'a [&'a [LabeledSample]], adapt: &'a [LabeledSample], eval: &'a [LabeledSample] },
    /// Labeled sources, scored on an unseen domain.
    Generalize { sources: &'a [&'a [LabeledSample]], eval: &'a [LabeledSample] },
}

impl<'a> ArmTask<'a> {
    fn sources(&self) -> &'a [&'a [LabeledSample]] {
        match *self {
            ArmTask::Adapt { sources, .. } | ArmTask::Generalize { sources, .. } => sources,
        }
    }

    fn eval(&self) -> &'a [LabeledSample] {
        match *self {
            ArmTask::Adapt { eval, .. } | ArmTask::Generalize { eval, .. } => eval,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub target: MetricsReport,
    /// Mean balanced accuracy over the source domains.
    pub source_balanced_accuracy: f64,
    /// Encoder as used at inference, adapters merged.
    pub encoder: EncoderParams,
    pub head: ClassifierParams,
    pub history: TrainHistory,
    /// Source and scored-target embeddings with class and domain labels.
    pub embeddings: EmbeddingAudit,
}

fn domain_of(samples: &[LabeledSample]) -> Result<usize> {
    samples.first().map(|s| s.domain_id).ok_or_else(|| Error::Data("empty sample set".into()))
}

enum Normalizer {
    Reinhard(crate::stain::ReinhardStats),
    Macenko(crate::stain::MacenkoReference, MacenkoConfig),
}

/// All patches of a set rendered as one strip, so no padding pixels enter
/// the color statistics.
fn render_strip(samples: &[LabeledSample]) -> Result<RgbPatch> {
    let tint = StainRendering::for_domain(domain_of(samples)?);
    let patches: Vec<RgbPatch> =
        samples.iter().map(|s| render_patch(&s.features, &tint)).collect::<Result<_>>()?;
    RgbPatch::mosaic(&patches, patches.len())
}

impl Normalizer {
    fn fit(arm: Arm, reference: &[LabeledSample], macenko: &MacenkoConfig) -> Result<Self> {
        let strip = render_strip(reference)?;
        match arm {
            Arm::Reinhard => Ok(Normalizer::Reinhard(reinhard_fit(&strip)?)),
            Arm::Macenko => Ok(Normalizer::Macenko(macenko_fit(&strip, macenko)?, *macenko)),
            _ => Err(Error::invalid("not a stain arm")),
        }
    }

    /// Render with the set's domain tint, normalize, decode.
    fn apply(&self, samples: &[LabeledSample]) -> Result<Vec<LabeledSample>> {
        let strip = render_strip(samples)?;
        let normalized = match self {
            Normalizer::Reinhard(stats) => reinhard_apply(&strip, stats)?,
            Normalizer::Macenko(reference, cfg) => macenko_apply(&strip, reference, cfg)?,
        };
        let patches = normalized.split_mosaic(PATCH_SIDE, PATCH_SIDE, samples.len())?;
        samples
            .iter()
            .zip(&patches)
            .map(|(s, p)| Ok(LabeledSample { features: decode_patch(p)?, ..s.clone() }))
            .collect()
    }
}

fn num_classes(sets: &[&[LabeledSample]]) -> usize {
    sets.iter().flat_map(|s| s.iter()).map(|s| s.label + 1).max().unwrap_or(0).max(2)
}

/// Trains and scores `arm`. Target labels of the adaptation set are
/// stripped before training; only the scoring step reads `eval` labels.
pub fn run_arm(arm: Arm, task: ArmTask<'_>, cfg: &TrainConfig, macenko: &MacenkoConfig) -> Result<ArmResult> {
    let raw_sources = task.sources();
    if raw_sources.is_empty() {
        return Err(Error::invalid("no source domains"));
    }
    let normalizer = match arm {
        Arm::Reinhard | Arm::Macenko => Some(Normalizer::fit(arm, raw_sources[0], macenko)?),
        _ => None,
    };
    let prepare = |s: &[LabeledSample]| -> Result<Vec<LabeledSample>> {
        match &normalizer {
            Some(n) => n.apply(s),
            None => Ok(s.to_vec()),
        }
    };
    let sources: Vec<Vec<LabeledSample>> = raw_sources.iter().map(|s| prepare(s)).collect::<Result<_>>()?;
    let eval = prepare(task.eval())?;
    let source_domains: Vec<LabeledDomain> =
        sources.iter().map(|s| LabeledDomain::from_samples(s)).collect::<Result<_>>()?;
    let eval_domain = LabeledDomain::from_samples(&eval)?;

    let dim = source_domains[0].x.ncols();
    let mut all: Vec<&[LabeledSample]> = raw_sources.to_vec();
    all.push(task.eval());
    let (init_encoder, head) = cfg.init_models(dim, num_classes(&all))?;
    let frozen = matches!(arm, Arm::Original | Arm::Reinhard | Arm::Macenko);
    let encoder = if frozen { init_encoder.without_adapters() } else { init_encoder };
    let lambda_free = TrainConfig { lambda: 0.0, ..cfg.clone() };

    let trained = match task {
        ArmTask::Adapt { adapt, .. } => {
            let target = LabeledDomain::from_samples(&prepare(adapt)?)?.unlabeled().stripped();
            if arm == Arm::Lmmd {
                train_da(cfg, &source_domains, &target, encoder, head)?
            } else {
                train_source_only(cfg, &source_domains, &target, encoder, head)?
            }
        }
        ArmTask::Generalize { .. } => {
            let c = if arm == Arm::Lmmd { cfg } else { &lambda_free };
            train_dg(c, &source_domains, &[], encoder, head)?
        }
    };
    let encoder = trained.encoder.merged();
    let (_, target) = evaluate(&encoder, &trained.head, eval_domain.x.view(), &eval_domain.y)?;
    let mut source_bacc = 0.0;
    for d in &source_domains {
        source_bacc += evaluate(&encoder, &trained.head, d.x.view(), &d.y)?.1.balanced_accuracy;
    }
    source_bacc /= source_domains.len() as f64;

    let mut blocks = Vec::new();
    let (mut classes, mut domains) = (Vec::new(), Vec::new());
    for set in sources.iter().chain(std::iter::once(&eval)) {
        blocks.push(encoder.embed(crate::synth::features(set).view())?);
        classes.extend(set.iter().map(|s| s.label));
        domains.extend(set.iter().map(|s| s.domain_id));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let z = concatenate(Axis(0), &views).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(ArmResult {
        target,
        source_balanced_accuracy: source_bacc,
        embeddings: EmbeddingAudit::new(z, classes, domains)?,
        encoder,
        head: trained.head,
        history: trained.history,
    })
}
