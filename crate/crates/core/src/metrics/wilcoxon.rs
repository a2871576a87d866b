use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::midranks;
use crate::error::{Error, Result};

/// Largest number of non-zero pairs evaluated by exact enumeration.
pub const EXACT_MAX_N: usize = 20;
const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of midranks of positive differences.
    pub w_plus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// One-sided signed-rank test of `H1: median difference > 0`.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] pairs the null
/// distribution of `W+` is enumerated over all sign assignments of the
/// observed midranks; beyond that a tie-corrected normal approximation with
/// continuity correction is used.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences"));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n < MIN_PAIRS {
        return Err(Error::invalid(format!("Wilcoxon needs at least {MIN_PAIRS} non-zero differences, got {n}")));
    }
    let ranks = midranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks.iter().zip(&nz).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    if n <= EXACT_MAX_N {
        return Ok(WilcoxonResult { w_plus, n, p_value: exact_upper_tail(&ranks, w_plus), exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes(&ranks).iter().map(|&t| t * t * t - t).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    let p = 1.0 - Normal::standard().cdf(z);
    Ok(WilcoxonResult { w_plus, n, p_value: p.clamp(f64::MIN_POSITIVE, 1.0), exact: false })
}

fn tie_sizes(ranks: &[f64]) -> Vec<f64> {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        out.push(j as f64);
        i += j;
    }
    out
}

/// `P(W+ ≥ observed)` under independent fair signs. Midranks are multiples
/// of ½, so doubled ranks index an integer-valued count table.
fn exact_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut ways = vec![0f64; max + 1];
    ways[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            ways[s] += ways[s - r];
        }
    }
    let threshold = (2.0 * w_plus).round() as usize;
    let tail: f64 = ways[threshold..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}
