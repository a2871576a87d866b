//! Training objectives: cross-entropy, the LMMD adaptation objective (single
//! and multi-source), the pairwise LMMD generalization objective, plus the
//! cosine schedule, Adam and a finite-difference gradient checker.
//!
//! Every objective returns its value split into a cross-entropy term and an
//! LMMD term with `total = ce_term + λ·lmmd_term` computed exactly that way,
//! together with gradients with respect to the embeddings and the classifier
//! head. Target pseudo-labels enter only as constant class weights.

mod gradcheck;
mod optim;
mod schedule;

pub use gradcheck::{grad_check, relative_error, CoordinateMismatch, GradCheckReport, MAX_COORDS, REL_FLOOR};
pub use optim::{optimizer_step, AdamConfig, AdamState, FlatParams};
pub use schedule::{cosine_lr, LrSchedule, ParamGroupKind};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{class_weights, lmmd2, ClassWeightMatrix, DiscrepancyWarning, EmbeddingBatch, KernelConfig};
use crate::nets::{ClassifierGrads, ClassifierParams};

/// Default trade-off between cross-entropy and LMMD.
pub const DEFAULT_LAMBDA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub ce_term: f64,
    pub lmmd_term: f64,
    pub lambda: f64,
    /// Per-source (adaptation) or per-pair (generalization) contributions.
    pub parts: Vec<(String, f64)>,
    /// Number of LMMD evaluations that had no shared active class.
    pub empty_alignments: usize,
}

impl ObjectiveBreakdown {
    fn new(ce_term: f64, lmmd_term: f64, lambda: f64, parts: Vec<(String, f64)>, empty_alignments: usize) -> Self {
        Self { total: ce_term + lambda * lmmd_term, ce_term, lmmd_term, lambda, parts, empty_alignments }
    }
}

/// Soft (full softmax) or hard (argmax one-hot) target pseudo-labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelMode {
    #[default]
    Soft,
    Hard,
}

/// Objective value with gradients for the embeddings and head.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub breakdown: ObjectiveBreakdown,
    /// One gradient per source batch, in input order.
    pub grad_sources: Vec<Array2<f64>>,
    /// Target embedding gradient (adaptation only).
    pub grad_target: Option<Array2<f64>>,
    pub grad_head: ClassifierGrads,
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Pseudo-label rows from target logits; ties in hard mode go to the lowest class.
pub fn pseudo_labels(logits: ArrayView2<'_, f64>, mode: PseudoLabelMode) -> Array2<f64> {
    match mode {
        PseudoLabelMode::Soft => softmax_rows(logits),
        PseudoLabelMode::Hard => {
            let labels: Vec<usize> = logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
            one_hot(&labels, logits.ncols())
        }
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        m[[i, y]] = 1.0;
    }
    m
}

/// Mean of `−log softmax(logits)_y` and its gradient `(softmax − onehot)/n`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::DimMismatch { expected: n, got: labels.len() });
    }
    if n == 0 {
        return Err(Error::invalid("cross-entropy of an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[y];
        for (gj, &v) in g.iter_mut().zip(row.iter()) {
            *gj = (v - lse).exp();
        }
        g[y] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    grad *= inv;
    Ok((loss * inv, grad))
}

/// Labeled embeddings from one domain.
#[derive(Debug, Clone, Copy)]
pub struct LabeledEmbeddings<'a> {
    pub z: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

struct SourceTerm {
    ce: f64,
    grad_z_ce: Array2<f64>,
    grad_head: ClassifierGrads,
}

fn source_ce(head: &ClassifierParams, src: LabeledEmbeddings<'_>) -> Result<SourceTerm> {
    let logits = head.forward(src.z)?;
    let (ce, grad_logits) = cross_entropy(logits.view(), src.labels)?;
    let (grad_head, grad_z_ce) = head.backward(src.z, grad_logits.view());
    Ok(SourceTerm { ce, grad_z_ce, grad_head })
}

fn labeled_weights(src: LabeledEmbeddings<'_>, num_classes: usize) -> Result<ClassWeightMatrix> {
    class_weights(one_hot(src.labels, num_classes).view())
}

fn batch(z: ArrayView2<'_, f64>) -> Result<EmbeddingBatch> {
    EmbeddingBatch::new(z.to_owned())
}

fn add_head(acc: &mut ClassifierGrads, g: &ClassifierGrads, scale: f64) {
    acc.weight.scaled_add(scale, &g.weight);
    acc.bias.scaled_add(scale, &g.bias);
}

/// Single-source adaptation objective `CE(src) + λ·LMMD(src, tgt)`.
///
/// `tgt_probs` are the classifier's current predictions on the target batch
/// and are treated as constants.
pub fn da_objective(
    head: &ClassifierParams,
    src: LabeledEmbeddings<'_>,
    tgt_z: ArrayView2<'_, f64>,
    tgt_probs: ArrayView2<'_, f64>,
    lambda: f64,
    cfg: &KernelConfig,
) -> Result<ObjectiveOutput> {
    multi_source_da_objective(head, &[src], tgt_z, tgt_probs, lambda, cfg)
}

/// Average of per-source adaptation objectives against one target batch.
pub fn multi_source_da_objective(
    head: &ClassifierParams,
    sources: &[LabeledEmbeddings<'_>],
    tgt_z: ArrayView2<'_, f64>,
    tgt_probs: ArrayView2<'_, f64>,
    lambda: f64,
    cfg: &KernelConfig,
) -> Result<ObjectiveOutput> {
    if sources.is_empty() {
        return Err(Error::invalid("adaptation needs at least one source"));
    }
    let c = head.num_classes();
    if tgt_probs.ncols() != c {
        return Err(Error::DimMismatch { expected: c, got: tgt_probs.ncols() });
    }
    if tgt_probs.nrows() != tgt_z.nrows() {
        return Err(Error::DimMismatch { expected: tgt_z.nrows(), got: tgt_probs.nrows() });
    }
    let k = sources.len() as f64;
    let tgt_batch = batch(tgt_z)?;
    let tgt_w = class_weights(tgt_probs)?;
    let mut grad_head = ClassifierGrads { weight: Array2::zeros(head.weight.raw_dim()), bias: ndarray::Array1::zeros(c) };
    let mut grad_target = Array2::zeros(tgt_z.raw_dim());
    let mut grad_sources = Vec::with_capacity(sources.len());
    let (mut ce_sum, mut lmmd_sum) = (0.0, 0.0);
    let mut parts = Vec::with_capacity(sources.len());
    let mut empty = 0;
    for (i, src) in sources.iter().enumerate() {
        let term = source_ce(head, *src)?;
        let mut grad_src = term.grad_z_ce;
        let mut lmmd_value = 0.0;
        if lambda != 0.0 {
            let d = lmmd2(&batch(src.z)?, &labeled_weights(*src, c)?, &tgt_batch, &tgt_w, cfg)?;
            if d.warning == Some(DiscrepancyWarning::NoActiveClass) {
                empty += 1;
            }
            lmmd_value = d.value;
            grad_src.scaled_add(lambda, &d.grad_lhs);
            grad_target.scaled_add(lambda / k, &d.grad_rhs);
        }
        grad_src /= k;
        add_head(&mut grad_head, &term.grad_head, 1.0 / k);
        parts.push((format!("source_{i}"), term.ce + lambda * lmmd_value));
        ce_sum += term.ce;
        lmmd_sum += lmmd_value;
        grad_sources.push(grad_src);
    }
    Ok(ObjectiveOutput {
        breakdown: ObjectiveBreakdown::new(ce_sum / k, lmmd_sum / k, lambda, parts, empty),
        grad_sources,
        grad_target: Some(grad_target),
        grad_head,
    })
}

/// Generalization objective: mean CE over sources plus λ times the mean
/// LMMD over all unordered source pairs, with ground-truth weights on both
/// sides.
pub fn dg_objective(
    head: &ClassifierParams,
    sources: &[LabeledEmbeddings<'_>],
    lambda: f64,
    cfg: &KernelConfig,
) -> Result<ObjectiveOutput> {
    let k = sources.len();
    if k < 2 {
        return Err(Error::invalid("generalization needs at least two sources"));
    }
    let c = head.num_classes();
    let kf = k as f64;
    let mut grad_head = ClassifierGrads { weight: Array2::zeros(head.weight.raw_dim()), bias: ndarray::Array1::zeros(c) };
    let mut grad_sources = Vec::with_capacity(k);
    let mut ce_sum = 0.0;
    for src in sources {
        let term = source_ce(head, *src)?;
        ce_sum += term.ce;
        add_head(&mut grad_head, &term.grad_head, 1.0 / kf);
        grad_sources.push(term.grad_z_ce / kf);
    }
    let pairs = pair_indices(k);
    let mut parts = Vec::with_capacity(pairs.len());
    let mut lmmd_sum = 0.0;
    let mut empty = 0;
    if lambda != 0.0 {
        let batches = sources.iter().map(|s| batch(s.z)).collect::<Result<Vec<_>>>()?;
        let weights = sources.iter().map(|s| labeled_weights(*s, c)).collect::<Result<Vec<_>>>()?;
        let scale = lambda / pairs.len() as f64;
        for &(a, b) in &pairs {
            let d = lmmd2(&batches[a], &weights[a], &batches[b], &weights[b], cfg)?;
            if d.warning.is_some() {
                empty += 1;
            }
            grad_sources[a].scaled_add(scale, &d.grad_lhs);
            grad_sources[b].scaled_add(scale, &d.grad_rhs);
            lmmd_sum += d.value;
            parts.push((format!("pair_{a}_{b}"), d.value));
        }
    } else {
        parts.extend(pairs.iter().map(|&(a, b)| (format!("pair_{a}_{b}"), 0.0)));
    }
    Ok(ObjectiveOutput {
        breakdown: ObjectiveBreakdown::new(ce_sum / kf, lmmd_sum / pairs.len() as f64, lambda, parts, empty),
        grad_sources,
        grad_target: None,
        grad_head,
    })
}

/// All `(a, b)` with `a < b < k`.
pub fn pair_indices(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|a| ((a + 1)..k).map(move |b| (a, b))).collect()
}

/// Mean cross-entropy over labeled sources: the λ = 0 reduction of the
/// adaptation objective, computed without any target batch.
pub fn source_only_objective(head: &ClassifierParams, sources: &[LabeledEmbeddings<'_>]) -> Result<ObjectiveOutput> {
    if sources.is_empty() {
        return Err(Error::invalid("training needs at least one source"));
    }
    let c = head.num_classes();
    let k = sources.len() as f64;
    let mut grad_head = ClassifierGrads { weight: Array2::zeros(head.weight.raw_dim()), bias: ndarray::Array1::zeros(c) };
    let mut grad_sources = Vec::with_capacity(sources.len());
    let mut parts = Vec::with_capacity(sources.len());
    let mut ce_sum = 0.0;
    for (i, src) in sources.iter().enumerate() {
        let term = source_ce(head, *src)?;
        let mut grad_src = term.grad_z_ce;
        grad_src /= k;
        add_head(&mut grad_head, &term.grad_head, 1.0 / k);
        parts.push((format!("source_{i}"), term.ce));
        ce_sum += term.ce;
        grad_sources.push(grad_src);
    }
    Ok(ObjectiveOutput {
        breakdown: ObjectiveBreakdown::new(ce_sum / k, 0.0, 0.0, parts, 0),
        grad_sources,
        grad_target: None,
        grad_head,
    })
}
