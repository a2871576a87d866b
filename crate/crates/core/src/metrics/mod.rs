//! Classification, alignment and significance metrics.

mod embedding;
mod plot;
mod wilcoxon;

pub use embedding::{inertia_ratio, pca_2d, robustness_index, EmbeddingAudit, Pca2d, RobustnessIndex};
pub use plot::scatter_svg;
pub use wilcoxon::{wilcoxon_one_sided, WilcoxonResult, EXACT_MAX_N};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::invalid("confusion matrix must be square and non-empty"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimMismatch { expected: truth.len(), got: predicted.len() });
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("class id out of range for {num_classes} classes")));
            }
            counts[t][p] += 1;
        }
        Self::new(counts)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// Mean per-class recall.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let c = cm.num_classes();
    let mut sum = 0.0;
    for k in 0..c {
        let n = cm.row_sum(k);
        if n == 0 {
            return Err(Error::UndefinedClass(k));
        }
        sum += cm.counts[k][k] as f64 / n as f64;
    }
    Ok(sum / c as f64)
}

/// Unweighted mean of per-class F1; a class with no true positives scores 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let c = cm.num_classes();
    let total: f64 = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k] as f64;
            if tp == 0.0 {
                return 0.0;
            }
            let precision = tp / cm.col_sum(k) as f64;
            let recall = tp / cm.row_sum(k) as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    total / c as f64
}

/// Midranks (1-based) of `values`, ties sharing the mean of their positions.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve for binary labels (1 = positive), via the
/// Mann–Whitney rank-sum with midranks.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch { expected: scores.len(), got: labels.len() });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("AUROC expects binary labels"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("AUROC scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC needs both classes"));
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Flat evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    /// Present for two-class problems.
    pub auroc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// `positive_scores` (probability of class 1) enables AUROC for binary
    /// problems.
    pub fn from_confusion(cm: &ConfusionMatrix, labels: &[usize], positive_scores: Option<&[f64]>) -> Result<Self> {
        let auroc = match positive_scores {
            Some(s) if cm.num_classes() == 2 => Some(auroc(s, labels)?),
            _ => None,
        };
        Ok(Self {
            n: cm.total(),
            balanced_accuracy: balanced_accuracy(cm)?,
            macro_f1: macro_f1(cm),
            auroc,
            confusion: cm.counts.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(c: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::new(c).unwrap()
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&cm(vec![vec![5, 0], vec![0, 7]])).unwrap(), 1.0);
        assert!((balanced_accuracy(&cm(vec![vec![30, 20], vec![10, 40]])).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            balanced_accuracy(&cm(vec![vec![3, 1], vec![0, 0]])),
            Err(Error::UndefinedClass(1))
        ));
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&cm(vec![vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 9]])), 1.0);
        let f = macro_f1(&cm(vec![vec![30, 20], vec![10, 40]]));
        let f0 = 2.0 * 0.75 * 0.6 / 1.35;
        let f1 = 2.0 * (40.0 / 60.0) * 0.8 / (40.0 / 60.0 + 0.8);
        assert!((f - (f0 + f1) / 2.0).abs() < 1e-15);
        assert!((f - 0.6970).abs() < 5e-5);
        // class 1 never predicted
        let f = macro_f1(&cm(vec![vec![10, 0], vec![5, 0]]));
        assert!((f - (2.0 * (10.0 / 15.0) / (10.0 / 15.0 + 1.0)) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn uniform_random_predictions_are_near_chance() {
        use rand::Rng as _;
        let mut r = crate::rng::seeded(3);
        let truth: Vec<usize> = (0..30000).map(|i| i % 3).collect();
        let pred: Vec<usize> = (0..30000).map(|_| r.random_range(0..3)).collect();
        let b = balanced_accuracy(&ConfusionMatrix::from_predictions(&truth, &pred, 3).unwrap()).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn report_json_is_flat_snake_case() {
        let c = cm(vec![vec![30, 20], vec![10, 40]]);
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = MetricsReport::from_confusion(&c, &labels, Some(&scores)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["balanced_accuracy"], 0.7);
        assert_eq!(v["auroc"], 1.0);
        assert_eq!(v["n"], 100);
    }

    proptest! {
        #[test]
        fn balanced_accuracy_ignores_class_duplication(
            counts in proptest::collection::vec(1u64..50, 4),
            m0 in 1u64..5, m1 in 1u64..5,
        ) {
            let base = cm(vec![vec![counts[0], counts[1]], vec![counts[2], counts[3]]]);
            let dup = cm(vec![vec![m0 * counts[0], m0 * counts[1]], vec![m1 * counts[2], m1 * counts[3]]]);
            prop_assert!((balanced_accuracy(&base).unwrap() - balanced_accuracy(&dup).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auroc_is_monotone_invariant(
            scores in proptest::collection::vec(-5.0f64..5.0, 6..30),
            seed in any::<u64>(),
        ) {
            let n = scores.len();
            let labels: Vec<usize> = (0..n).map(|i| usize::from((seed >> (i % 64)) & 1 == 1 || i == 0)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let a = auroc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
            prop_assert!((a - auroc(&t, &labels).unwrap()).abs() < 1e-12);
        }
    }
}
