//! Discrepancy-minimization toolkit for cross-domain robustness.
//!
//! The crate is organized bottom-up:
//!
//! * [`kernel`]: multi-bandwidth Gaussian kernels, MMD² and class-conditional LMMD² with
//!   analytic embedding gradients.
//! * [`nets`]: a small feed-forward encoder with low-rank adapters, a linear head and an
//!   attention-pooling bag classifier, all with hand-written backward passes.
//! * [`objectives`]: cross-entropy, the adaptation and generalization objectives, cosine
//!   learning-rate schedule, Adam and a finite-difference gradient checker.
//! * [`synth`]: synthetic multi-domain data with controllable shift, sampling protocols and
//!   bag construction.
//! * [`stain`]: Reinhard and Macenko color normalization.
//! * [`metrics`]: balanced accuracy, macro F1, AUROC, Wilcoxon signed-rank, robustness index,
//!   inertia ratio and PCA.
//! * [`trainer`]: adaptation, generalization and bag-level training loops.
//! * [`harness`]: experiment configs, sweeps, run records, analysis bundles and reports.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod stain;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use kernel::{
    class_weights, lmmd2, median_heuristic, mmd2, multi_gaussian_kernel, ClassWeightMatrix,
    DiscrepancyResult, EmbeddingBatch, KernelConfig,
};
