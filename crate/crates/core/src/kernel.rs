//! Multi-bandwidth Gaussian kernels and the MMD / LMMD discrepancy estimators.
//!
//! Every estimator here is a weighted sum of kernel evaluations,
//!
//! ```text
//! D = Σ A_ss ∘ K_ss + Σ A_tt ∘ K_tt − 2 Σ A_st ∘ K_st
//! ```
//!
//! where the coefficient matrices `A` encode the estimator: uniform `1/n²`
//! weights give the biased MMD², off-diagonal `1/(n(n−1))` weights give the
//! unbiased form, and per-class outer products of normalized class weights
//! give LMMD. Gradients with respect to both embedding batches are exact for a
//! fixed bandwidth; the median-heuristic bandwidth is treated as a constant.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the multi-kernel Gaussian `Σ_m exp(−‖a−b‖² / (m·σ²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// σ² in squared-distance units; ignored when the median heuristic is on.
    pub bandwidth_base: f64,
    /// Bandwidth multipliers `m`, strictly increasing.
    pub multipliers: Vec<f64>,
    /// Recompute σ² per call from the concatenated inputs.
    pub use_median_heuristic: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth_base: 1.0,
            multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            use_median_heuristic: true,
        }
    }
}

impl KernelConfig {
    /// Same multipliers, σ² pinned to `sigma2`.
    pub fn fixed(sigma2: f64) -> Self {
        Self { bandwidth_base: sigma2, use_median_heuristic: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() {
            return Err(Error::invalid("kernel multipliers must be non-empty"));
        }
        if self.multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::invalid("kernel multipliers must be finite and > 0"));
        }
        if self.multipliers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("kernel multipliers must be strictly increasing"));
        }
        if !self.use_median_heuristic && !(self.bandwidth_base.is_finite() && self.bandwidth_base > 0.0)
        {
            return Err(Error::invalid("bandwidth_base must be > 0 when the median heuristic is off"));
        }
        Ok(())
    }

    /// The σ² used for a comparison of `lhs` against `rhs`.
    pub fn resolve_bandwidth(&self, lhs: &EmbeddingBatch, rhs: &EmbeddingBatch) -> Result<f64> {
        if !self.use_median_heuristic {
            return Ok(self.bandwidth_base);
        }
        let joint = ndarray::concatenate(Axis(0), &[lhs.view(), rhs.view()])
            .map_err(|_| Error::DimMismatch { expected: lhs.dim(), got: rhs.dim() })?;
        median_heuristic(&EmbeddingBatch(joint))
    }
}

/// One embedding per row; at least one row and one column, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch(Array2<f64>);

impl EmbeddingBatch {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::invalid("embedding batch must have at least one row and column"));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding batch"));
        }
        Ok(Self(rows))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimMismatch { expected: d, got: bad.len() });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(arr)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Per-class sample weights, each non-empty column summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightMatrix {
    weights: Array2<f64>,
    empty: Vec<bool>,
}

impl ClassWeightMatrix {
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_empty_class(&self, c: usize) -> bool {
        self.empty[c]
    }

    /// Uniform single-class weights `1/n`; LMMD with these is plain MMD².
    pub fn uniform(n: usize) -> Self {
        Self { weights: Array2::from_elem((n, 1), 1.0 / n as f64), empty: vec![n == 0] }
    }
}

/// Why a discrepancy evaluation degraded to its empty value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscrepancyWarning {
    /// No class carried mass on both sides of the comparison.
    NoActiveClass,
}

#[derive(Debug, Clone)]
pub struct DiscrepancyResult {
    pub value: f64,
    pub grad_lhs: Array2<f64>,
    pub grad_rhs: Array2<f64>,
    /// σ² the kernel was evaluated with.
    pub bandwidth: f64,
    /// Classes that contributed (always 1 for MMD²).
    pub active_classes: usize,
    pub warning: Option<DiscrepancyWarning>,
}

/// Median of pairwise squared Euclidean distances over distinct row pairs.
///
/// Returns `1.0` when the median is zero (e.g. all rows identical).
pub fn median_heuristic(joint: &EmbeddingBatch) -> Result<f64> {
    let n = joint.n();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least two rows"));
    }
    let rows = joint.view();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(rows.row(i), rows.row(j)));
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// `Σ_m exp(−‖a−b‖² / (m·σ²))` with σ² = `cfg.bandwidth_base`.
pub fn multi_gaussian_kernel(a: &[f64], b: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    cfg.validate()?;
    let d2 = sq_dist(ArrayView1::from(a), ArrayView1::from(b));
    Ok(kernel_and_slope(d2, cfg.bandwidth_base, &cfg.multipliers).0)
}

/// Squared MMD between the two batches.
///
/// The biased (V-statistic) form is non-negative; the unbiased form drops the
/// diagonal of both within-batch kernel matrices and needs two rows per side.
pub fn mmd2(
    lhs: &EmbeddingBatch,
    rhs: &EmbeddingBatch,
    cfg: &KernelConfig,
    unbiased: bool,
) -> Result<DiscrepancyResult> {
    check_pair(lhs, rhs)?;
    cfg.validate()?;
    let (n, m) = (lhs.n(), rhs.n());
    let (a_ss, a_tt) = if unbiased {
        if n < 2 || m < 2 {
            return Err(Error::invalid("unbiased MMD² needs at least two rows per batch"));
        }
        (off_diagonal(n), off_diagonal(m))
    } else {
        (Array2::from_elem((n, n), 1.0 / (n * n) as f64), Array2::from_elem((m, m), 1.0 / (m * m) as f64))
    };
    let a_st = Array2::from_elem((n, m), 1.0 / (n * m) as f64);
    let sigma2 = cfg.resolve_bandwidth(lhs, rhs)?;
    let (value, grad_lhs, grad_rhs) =
        weighted_discrepancy(lhs.view(), rhs.view(), &a_ss, &a_tt, &a_st, sigma2, &cfg.multipliers);
    Ok(DiscrepancyResult { value, grad_lhs, grad_rhs, bandwidth: sigma2, active_classes: 1, warning: None })
}

/// Normalizes one-hot label rows or softmax rows into per-class weights
/// `w[i,c] = p[i,c] / Σ_j p[j,c]`. Columns without mass stay zero and are
/// flagged empty.
pub fn class_weights(probs: ArrayView2<'_, f64>) -> Result<ClassWeightMatrix> {
    if probs.ncols() == 0 {
        return Err(Error::invalid("class weight matrix needs at least one class"));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("row {i} sums to {s}, expected 1")));
        }
    }
    let mut weights = probs.to_owned();
    let mut empty = vec![false; probs.ncols()];
    for (c, mut col) in weights.columns_mut().into_iter().enumerate() {
        let mass: f64 = col.sum();
        if mass > 0.0 {
            col.mapv_inplace(|p| p / mass);
        } else {
            col.fill(0.0);
            empty[c] = true;
        }
    }
    Ok(ClassWeightMatrix { weights, empty })
}

/// Class-conditional (local) MMD² averaged over classes active on both sides.
///
/// A comparison with no shared active class yields value 0, zero gradients
/// and [`DiscrepancyWarning::NoActiveClass`].
pub fn lmmd2(
    src: &EmbeddingBatch,
    src_w: &ClassWeightMatrix,
    tgt: &EmbeddingBatch,
    tgt_w: &ClassWeightMatrix,
    cfg: &KernelConfig,
) -> Result<DiscrepancyResult> {
    check_pair(src, tgt)?;
    cfg.validate()?;
    if src_w.num_classes() != tgt_w.num_classes() {
        return Err(Error::DimMismatch { expected: src_w.num_classes(), got: tgt_w.num_classes() });
    }
    if src_w.n() != src.n() {
        return Err(Error::DimMismatch { expected: src.n(), got: src_w.n() });
    }
    if tgt_w.n() != tgt.n() {
        return Err(Error::DimMismatch { expected: tgt.n(), got: tgt_w.n() });
    }
    let active: Vec<usize> = (0..src_w.num_classes())
        .filter(|&c| !src_w.is_empty_class(c) && !tgt_w.is_empty_class(c))
        .collect();
    let sigma2 = cfg.resolve_bandwidth(src, tgt)?;
    if active.is_empty() {
        log::warn!("lmmd2: no class is active on both sides; returning zero discrepancy");
        return Ok(DiscrepancyResult {
            value: 0.0,
            grad_lhs: Array2::zeros(src.view().raw_dim()),
            grad_rhs: Array2::zeros(tgt.view().raw_dim()),
            bandwidth: sigma2,
            active_classes: 0,
            warning: Some(DiscrepancyWarning::NoActiveClass),
        });
    }
    let ws = src_w.weights().select(Axis(1), &active);
    let wt = tgt_w.weights().select(Axis(1), &active);
    let scale = 1.0 / active.len() as f64;
    let a_ss = ws.dot(&ws.t()) * scale;
    let a_tt = wt.dot(&wt.t()) * scale;
    let a_st = ws.dot(&wt.t()) * scale;
    let (value, grad_lhs, grad_rhs) =
        weighted_discrepancy(src.view(), tgt.view(), &a_ss, &a_tt, &a_st, sigma2, &cfg.multipliers);
    Ok(DiscrepancyResult {
        value,
        grad_lhs,
        grad_rhs,
        bandwidth: sigma2,
        active_classes: active.len(),
        warning: None,
    })
}

fn check_pair(lhs: &EmbeddingBatch, rhs: &EmbeddingBatch) -> Result<()> {
    if lhs.dim() != rhs.dim() {
        return Err(Error::DimMismatch { expected: lhs.dim(), got: rhs.dim() });
    }
    Ok(())
}

fn off_diagonal(n: usize) -> Array2<f64> {
    let w = 1.0 / (n * (n - 1)) as f64;
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { w })
}

#[inline]
fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel value and `Σ_m exp(−d²/(mσ²)) / (mσ²)`, the negated derivative
/// with respect to d².
#[inline]
fn kernel_and_slope(d2: f64, sigma2: f64, multipliers: &[f64]) -> (f64, f64) {
    multipliers.iter().fold((0.0, 0.0), |(k, s), m| {
        let bw = m * sigma2;
        let e = (-d2 / bw).exp();
        (k + e, s + e / bw)
    })
}

/// Sums `A ∘ K` over one block and accumulates `−4 (x_i − y_j) A_ij κ'_ij`
/// into the gradient of `x_i` (and the mirrored term into `y_j`).
///
/// Pushes the individual products into `terms` so every block is summed in
/// a canonical order; that makes `lmmd2` exactly symmetric in its arguments
/// and `mmd2(a, a)` exactly zero.
#[allow(clippy::too_many_arguments)]
fn block(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    coeff: &Array2<f64>,
    sigma2: f64,
    multipliers: &[f64],
    grad_scale: f64,
    grad_x: &mut Array2<f64>,
    mut grad_y: Option<&mut Array2<f64>>,
    terms: &mut Vec<f64>,
) {
    let d = x.ncols();
    let mut diff = vec![0.0; d];
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            let a = coeff[[i, j]];
            if a == 0.0 {
                continue;
            }
            let mut d2 = 0.0;
            for ((slot, p), q) in diff.iter_mut().zip(xi.iter()).zip(yj.iter()) {
                *slot = p - q;
                d2 += *slot * *slot;
            }
            let (k, slope) = kernel_and_slope(d2, sigma2, multipliers);
            terms.push(a * k);
            let g = grad_scale * a * slope;
            if g != 0.0 {
                for (gx, v) in grad_x.row_mut(i).iter_mut().zip(&diff) {
                    *gx -= g * v;
                }
                if let Some(gy) = grad_y.as_deref_mut() {
                    for (gyv, v) in gy.row_mut(j).iter_mut().zip(&diff) {
                        *gyv += g * v;
                    }
                }
            }
        }
    }
}

fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn weighted_discrepancy(
    s: ArrayView2<'_, f64>,
    t: ArrayView2<'_, f64>,
    a_ss: &Array2<f64>,
    a_tt: &Array2<f64>,
    a_st: &Array2<f64>,
    sigma2: f64,
    multipliers: &[f64],
) -> (f64, Array2<f64>, Array2<f64>) {
    let mut grad_s = Array2::zeros(s.raw_dim());
    let mut grad_t = Array2::zeros(t.raw_dim());
    let mut terms = Vec::with_capacity(s.nrows().max(t.nrows()).pow(2));

    // Within-batch blocks: each unordered pair appears twice in the sum and
    // only the row-side gradient is accumulated per visit, so the factor is
    // 2 (chain rule on d²) × 2 (both orderings).
    block(s, s, a_ss, sigma2, multipliers, 4.0, &mut grad_s, None, &mut terms);
    let ss = canonical_sum(&mut terms);
    terms.clear();
    block(t, t, a_tt, sigma2, multipliers, 4.0, &mut grad_t, None, &mut terms);
    let tt = canonical_sum(&mut terms);
    terms.clear();

    // Cross block carries the −2 factor; d/dx of k = −2 (x − y) κ'.
    let mut gs_cross = Array2::zeros(s.raw_dim());
    let mut gt_cross = Array2::zeros(t.raw_dim());
    block(s, t, a_st, sigma2, multipliers, 2.0, &mut gs_cross, Some(&mut gt_cross), &mut terms);
    let st = canonical_sum(&mut terms);
    grad_s.scaled_add(-2.0, &gs_cross);
    grad_t.scaled_add(-2.0, &gt_cross);

    ((ss + tt) - 2.0 * st, grad_s, grad_t)
}
