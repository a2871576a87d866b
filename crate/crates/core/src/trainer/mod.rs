//! Training loops for adaptation, generalization and bag-level transfer.
//!
//! All loops are sequential and fully determined by `(config, seed, data)`.
//! Target labels live in [`UnlabeledDomain`] only as evaluation metadata; the
//! gradient path never reads them.

mod history;
mod mil;

pub use history::{EpochRecord, TrainHistory};
pub use mil::{evaluate_abmil, train_abmil, BagSet};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nets::{ClassifierParams, EncoderGrads, EncoderParams, EncoderSpec, ParamGroup};
use crate::objectives::{
    cosine_lr, dg_objective, multi_source_da_objective, optimizer_step, pseudo_labels, softmax_rows,
    source_only_objective, AdamState, LabeledEmbeddings, LrSchedule, ObjectiveOutput, ParamGroupKind,
    PseudoLabelMode, DEFAULT_LAMBDA,
};
use crate::synth::{balanced_batch, batches_per_epoch, features, labels, LabeledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Da,
    Dg,
    Mil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    pub epochs: usize,
    /// Samples drawn from every participating domain per step.
    pub per_domain_batch: usize,
    pub lr_classifier: f64,
    pub lr_adapters: f64,
    pub lora_rank: usize,
    pub seed: u64,
    pub kernel: KernelConfig,
    pub pseudo_labels: PseudoLabelMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::da(0)
    }
}

impl TrainConfig {
    pub fn da(seed: u64) -> Self {
        Self {
            mode: TrainMode::Da,
            lambda: DEFAULT_LAMBDA,
            epochs: 50,
            per_domain_batch: 64,
            lr_classifier: 1e-1,
            lr_adapters: 3e-3,
            lora_rank: 4,
            seed,
            kernel: KernelConfig::default(),
            pseudo_labels: PseudoLabelMode::Soft,
        }
    }

    pub fn dg(seed: u64) -> Self {
        Self { mode: TrainMode::Dg, per_domain_batch: 96, ..Self::da(seed) }
    }

    /// Bag-level training uses `lr_classifier` as the attention-model rate.
    pub fn mil(seed: u64) -> Self {
        Self { mode: TrainMode::Mil, epochs: 30, lr_classifier: 1e-2, lambda: 0.0, ..Self::da(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.per_domain_batch == 0 {
            return bad("per_domain_batch", "must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", "must be finite and ≥ 0");
        }
        if !(self.lr_classifier > 0.0 && self.lr_classifier.is_finite()) {
            return bad("lr_classifier", "must be positive");
        }
        if !(self.lr_adapters > 0.0 && self.lr_adapters.is_finite()) {
            return bad("lr_adapters", "must be positive");
        }
        self.kernel.validate().map_err(|e| Error::Config { field: "kernel".into(), message: e.to_string() })
    }

    /// Default encoder shape with this config's adapter rank.
    pub fn encoder_spec(&self, input_dim: usize) -> EncoderSpec {
        EncoderSpec { input_dim, lora_rank: self.lora_rank, ..EncoderSpec::default() }
    }

    /// Encoder drawn from the seed and a zero-initialized head.
    pub fn init_models(&self, input_dim: usize, num_classes: usize) -> Result<(EncoderParams, ClassifierParams)> {
        let encoder = EncoderParams::init(&self.encoder_spec(input_dim), self.seed)?;
        let head = ClassifierParams::zeros(num_classes, encoder.output_dim())?;
        Ok((encoder, head))
    }
}

/// Labeled samples of one domain as a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDomain {
    pub domain_id: usize,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl LabeledDomain {
    pub fn new(domain_id: usize, x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid(format!("domain {domain_id} is empty")));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimMismatch { expected: x.nrows(), got: y.len() });
        }
        Ok(Self { domain_id, x, y })
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let id = samples.first().map_or(0, |s| s.domain_id);
        Self::new(id, features(samples), labels(samples))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Unlabeled view whose labels are kept for evaluation only.
    pub fn unlabeled(&self) -> UnlabeledDomain {
        UnlabeledDomain::new(self.domain_id, self.x.clone()).with_eval_labels(self.y.clone())
    }
}

/// Target data for adaptation. Labels, when attached, are reachable only
/// through [`UnlabeledDomain::eval_labels`], which training code calls for
/// logging alone.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDomain {
    pub domain_id: usize,
    pub x: Array2<f64>,
    eval_labels: Option<Vec<usize>>,
}

impl UnlabeledDomain {
    pub fn new(domain_id: usize, x: Array2<f64>) -> Self {
        Self { domain_id, x, eval_labels: None }
    }

    pub fn with_eval_labels(mut self, labels: Vec<usize>) -> Self {
        self.eval_labels = Some(labels);
        self
    }

    pub fn stripped(&self) -> Self {
        Self::new(self.domain_id, self.x.clone())
    }

    pub fn eval_labels(&self) -> Option<&[usize]> {
        self.eval_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub encoder: EncoderParams,
    pub head: ClassifierParams,
    pub history: TrainHistory,
}

pub fn predict(encoder: &EncoderParams, head: &ClassifierParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(softmax_rows(head.forward(encoder.embed(x)?.view())?.view()))
}

/// Argmax predictions (ties to the lowest class) and their metrics.
pub fn evaluate(
    encoder: &EncoderParams,
    head: &ClassifierParams,
    x: ArrayView2<'_, f64>,
    y: &[usize],
) -> Result<(ConfusionMatrix, MetricsReport)> {
    let probs = predict(encoder, head, x)?;
    report_from_probs(probs.view(), y)
}

pub(crate) fn report_from_probs(probs: ArrayView2<'_, f64>, y: &[usize]) -> Result<(ConfusionMatrix, MetricsReport)> {
    let c = probs.ncols();
    let pred: Vec<usize> = probs.rows().into_iter().map(|r| crate::objectives::argmax(r.iter().copied())).collect();
    let cm = ConfusionMatrix::from_predictions(y, &pred, c)?;
    let scores: Vec<f64> = probs.column(c.saturating_sub(1)).to_vec();
    let both = y.contains(&0) && y.contains(&1);
    let report = MetricsReport::from_confusion(&cm, y, (c == 2 && both).then_some(&scores[..]))?;
    Ok((cm, report))
}

#[derive(Clone, Copy)]
enum Objective {
    Adapt,
    SourceOnly,
    Generalize,
}

fn check_labels(domains: &[LabeledDomain], num_classes: usize) -> Result<()> {
    for d in domains {
        if let Some(&bad) = d.y.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!(
                "domain {} has label {bad} but the head has {num_classes} classes",
                d.domain_id
            )));
        }
    }
    Ok(())
}

/// Shared loop: balanced per-domain batches, objective, backprop into
/// adapters and head, two Adam groups on one cosine schedule.
fn run(
    cfg: &TrainConfig,
    objective: Objective,
    sources: &[LabeledDomain],
    target: Option<&UnlabeledDomain>,
    monitors: &[LabeledDomain],
    mut encoder: EncoderParams,
    mut head: ClassifierParams,
) -> Result<TrainedModels> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::invalid("no source domains"));
    }
    check_labels(sources, head.num_classes())?;
    for d in sources {
        if d.x.ncols() != encoder.input_dim() {
            return Err(Error::DimMismatch { expected: encoder.input_dim(), got: d.x.ncols() });
        }
    }
    let mut sizes: Vec<usize> = sources.iter().map(LabeledDomain::len).collect();
    if let Some(t) = target {
        if t.is_empty() {
            return Err(Error::invalid("target domain is empty"));
        }
        if t.x.ncols() != encoder.input_dim() {
            return Err(Error::DimMismatch { expected: encoder.input_dim(), got: t.x.ncols() });
        }
        sizes.push(t.len());
    }
    let per_domain = cfg.per_domain_batch;
    let bpe = batches_per_epoch(&sizes, per_domain)?;
    let schedule = LrSchedule::new(cfg.lr_classifier, cfg.lr_adapters, cfg.epochs * bpe)?;
    let mut adam_head = AdamState::for_params(&head);
    let mut adam_enc = AdamState::for_params(&encoder);
    let mut history = TrainHistory::default();
    let k = sources.len();

    for epoch in 0..cfg.epochs {
        let (mut ce, mut lmmd, mut total) = (0.0, 0.0, 0.0);
        for slot in 0..bpe {
            let step = epoch * bpe + slot;
            let idx = balanced_batch(&sizes, per_domain, cfg.seed, step)?;
            let mut zs = Vec::with_capacity(k);
            let mut caches = Vec::with_capacity(k + 1);
            let mut ys = Vec::with_capacity(k);
            for (d, rows) in sources.iter().zip(&idx) {
                let (z, cache) = encoder.forward(d.x.select(ndarray::Axis(0), rows).view())?;
                zs.push(z);
                caches.push(cache);
                ys.push(rows.iter().map(|&i| d.y[i]).collect::<Vec<_>>());
            }
            let src: Vec<LabeledEmbeddings<'_>> =
                zs.iter().zip(&ys).map(|(z, y)| LabeledEmbeddings { z: z.view(), labels: y }).collect();
            let out: ObjectiveOutput = match (objective, target) {
                (Objective::Adapt, Some(t)) => {
                    let (zt, cache) = encoder.forward(t.x.select(ndarray::Axis(0), &idx[k]).view())?;
                    caches.push(cache);
                    let probs = pseudo_labels(head.forward(zt.view())?.view(), cfg.pseudo_labels);
                    multi_source_da_objective(&head, &src, zt.view(), probs.view(), cfg.lambda, &cfg.kernel)?
                }
                (Objective::Adapt, None) => return Err(Error::invalid("adaptation needs a target domain")),
                (Objective::SourceOnly, _) => source_only_objective(&head, &src)?,
                (Objective::Generalize, _) => dg_objective(&head, &src, cfg.lambda, &cfg.kernel)?,
            };
            let b = &out.breakdown;
            if !b.total.is_finite() {
                return Err(Error::NonFinite("training objective"));
            }
            ce += b.ce_term;
            lmmd += b.lmmd_term;
            total += b.total;

            let mut enc_grad: Option<EncoderGrads> = None;
            let upstream = out.grad_sources.iter().chain(out.grad_target.iter());
            for (cache, g) in caches.iter().zip(upstream) {
                let grads = encoder.backward(cache, g.view())?;
                match enc_grad.as_mut() {
                    None => enc_grad = Some(grads),
                    Some(acc) => {
                        for (a, b) in acc.slices_mut().into_iter().zip(grads.slices()) {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let lr_c = cosine_lr(&schedule, step, ParamGroupKind::Classifier)?;
            let lr_a = cosine_lr(&schedule, step, ParamGroupKind::Adapter)?;
            optimizer_step(&mut adam_head, &mut head, &out.grad_head, lr_c)?;
            if let Some(g) = enc_grad.filter(|g| g.num_params() > 0) {
                optimizer_step(&mut adam_enc, &mut encoder, &g, lr_a)?;
            }
        }
        let n = bpe as f64;
        let mut src_bacc = 0.0;
        for d in sources {
            src_bacc += evaluate(&encoder, &head, d.x.view(), &d.y)?.1.balanced_accuracy;
        }
        src_bacc /= k as f64;
        let tgt_bacc = match target.and_then(|t| t.eval_labels().map(|y| (t, y))) {
            Some((t, y)) => Some(evaluate(&encoder, &head, t.x.view(), y)?.1.balanced_accuracy),
            None if !monitors.is_empty() => {
                let mut acc = 0.0;
                for d in monitors {
                    acc += evaluate(&encoder, &head, d.x.view(), &d.y)?.1.balanced_accuracy;
                }
                Some(acc / monitors.len() as f64)
            }
            None => None,
        };
        history.push(EpochRecord { epoch: epoch + 1, ce: ce / n, lmmd: lmmd / n, total: total / n, src_bacc, tgt_bacc });
        log::debug!("epoch {} total {:.5} src_bacc {:.4}", epoch + 1, total / n, src_bacc);
    }
    Ok(TrainedModels { encoder, head, history })
}

/// Adapts to an unlabeled target: `CE(sources) + λ·LMMD(source, target)`
/// with target pseudo-labels recomputed every step.
pub fn train_da(
    cfg: &TrainConfig,
    sources: &[LabeledDomain],
    target: &UnlabeledDomain,
    encoder: EncoderParams,
    head: ClassifierParams,
) -> Result<TrainedModels> {
    run(cfg, Objective::Adapt, sources, Some(target), &[], encoder, head)
}

/// Source cross-entropy only, on the batch schedule `train_da` would use
/// for the same target; the target contributes nothing but its size and,
/// when labeled, logging.
pub fn train_source_only(
    cfg: &TrainConfig,
    sources: &[LabeledDomain],
    target: &UnlabeledDomain,
    encoder: EncoderParams,
    head: ClassifierParams,
) -> Result<TrainedModels> {
    run(cfg, Objective::SourceOnly, sources, Some(target), &[], encoder, head)
}

/// Multi-source generalization: mean CE plus λ times the mean pairwise
/// LMMD over sources. `unseen` domains are evaluated for logging only.
pub fn train_dg(
    cfg: &TrainConfig,
    sources: &[LabeledDomain],
    unseen: &[LabeledDomain],
    encoder: EncoderParams,
    head: ClassifierParams,
) -> Result<TrainedModels> {
    if sources.len() < 2 {
        return Err(Error::invalid("generalization needs at least two source domains"));
    }
    run(cfg, Objective::Generalize, sources, None, unseen, encoder, head)
}
