use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embeddings with their class and domain labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingAudit {
    embeddings: Array2<f64>,
    class_labels: Vec<usize>,
    domain_labels: Vec<usize>,
}

impl EmbeddingAudit {
    pub fn new(embeddings: Array2<f64>, class_labels: Vec<usize>, domain_labels: Vec<usize>) -> Result<Self> {
        let n = embeddings.nrows();
        for len in [class_labels.len(), domain_labels.len()] {
            if len != n {
                return Err(Error::DimMismatch { expected: n, got: len });
            }
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audit embeddings"));
        }
        Ok(Self { embeddings, class_labels, domain_labels })
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn domain_labels(&self) -> &[usize] {
        &self.domain_labels
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn distinct(labels: &[usize]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessIndex {
    /// `same_class / same_domain`; `+∞` when no neighbor shares a domain.
    pub value: f64,
    pub same_class: u64,
    pub same_domain: u64,
    pub infinite: bool,
}

/// Ratio of same-class to same-domain neighbors over every sample's `k`
/// nearest neighbors (Euclidean, self excluded, distance ties broken by
/// sample index).
pub fn robustness_index(audit: &EmbeddingAudit, k: usize) -> Result<RobustnessIndex> {
    let n = audit.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, n) for n = {n}")));
    }
    if distinct(&audit.class_labels) < 2 || distinct(&audit.domain_labels) < 2 {
        return Err(Error::invalid("robustness index needs at least two classes and two domains"));
    }
    let z = &audit.embeddings;
    let (mut same_class, mut same_domain) = (0u64, 0u64);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let zi = z.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let d: f64 = zi.iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d, j));
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &cand[..k] {
            same_class += u64::from(audit.class_labels[j] == audit.class_labels[i]);
            same_domain += u64::from(audit.domain_labels[j] == audit.domain_labels[i]);
        }
    }
    let infinite = same_domain == 0;
    let value = if infinite { f64::INFINITY } else { same_class as f64 / same_domain as f64 };
    Ok(RobustnessIndex { value, same_class, same_domain, infinite })
}

/// Sum of squared distances to group centroids.
fn partition_inertia(z: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in labels.iter().enumerate() {
        groups.entry(g).or_default().push(i);
    }
    groups
        .values()
        .map(|idx| {
            let sub = z.select(Axis(0), idx);
            let centroid = sub.mean_axis(Axis(0)).expect("non-empty group");
            sub.rows().into_iter().map(|r| (&r - &centroid).mapv(|v| v * v).sum()).sum::<f64>()
        })
        .sum()
}

/// Inertia under the class partition divided by inertia under the domain
/// partition. Lower means embeddings group by class more than by domain.
pub fn inertia_ratio(audit: &EmbeddingAudit) -> Result<f64> {
    if audit.is_empty() {
        return Err(Error::invalid("inertia of an empty audit"));
    }
    let by_class = partition_inertia(&audit.embeddings, &audit.class_labels);
    let by_domain = partition_inertia(&audit.embeddings, &audit.domain_labels);
    if !(by_domain > 0.0) {
        return Err(Error::Numerical("domain-partition inertia is zero".into()));
    }
    Ok(by_class / by_domain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// `n × 2` projected coordinates.
    pub coords: Array2<f64>,
    /// Variance along each component.
    pub explained_variance: [f64; 2],
    /// `2 × d` unit loadings.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
}

/// Projection onto the top two principal axes. Each axis is signed so its
/// largest-magnitude loading is positive.
pub fn pca_2d(x: ArrayView2<'_, f64>) -> Result<Pca2d> {
    let (n, d) = x.dim();
    if n < 3 {
        return Err(Error::invalid("PCA needs at least 3 samples"));
    }
    if d < 2 {
        return Err(Error::invalid("PCA needs at least 2 dimensions"));
    }
    let mean = x.mean_axis(Axis(0)).expect("n ≥ 3");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Array2::zeros((2, d));
    for (row, &k) in order[..2].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[row, j]] = sign * v[j];
        }
    }
    let explained_variance = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];
    Ok(Pca2d { coords: centered.dot(&components.t()), explained_variance, components, mean })
}
