use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Maximum number of coordinates probed per check.
pub const MAX_COORDS: usize = 200;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<CoordinateMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_error.is_finite()
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// At most [`MAX_COORDS`] coordinates are probed, chosen with `seed`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let n = params.len();
    let coords: Vec<usize> = if n <= MAX_COORDS {
        (0..n).collect()
    } else {
        let mut r = rng::seeded(rng::derive(seed, rng::stream::GRADCHECK));
        let mut idx = sample(&mut r, n, MAX_COORDS).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = params.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut failures = Vec::new();
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = loss(&probe);
        probe[i] = orig - step;
        let minus = loss(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[i], numeric);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        max_rel = max_rel.max(rel);
        if rel >= tolerance {
            failures.push(CoordinateMismatch { index: i, analytic: analytic[i], numeric, rel_error: rel });
        }
    }
    GradCheckReport { checked: coords.len(), max_rel_error: max_rel, tolerance, failures }
}
