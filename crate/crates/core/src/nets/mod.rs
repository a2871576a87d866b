//! Desk-scale differentiable models with hand-written backward passes.
//!
//! * [`EncoderParams`]: feed-forward encoder whose last half of layers carry
//!   low-rank adapters. Frozen weights are never exposed mutably.
//! * [`ClassifierParams`]: linear head producing logits.
//! * [`AbmilParams`]: attention-pooling bag classifier.
//!
//! Trainable tensors are exposed through [`ParamGroup`] as flat slices in a
//! fixed order so the optimizer can stay model-agnostic.

mod abmil;
mod checkpoint;
mod classifier;
mod encoder;

pub use abmil::{AbmilCache, AbmilGrads, AbmilOutput, AbmilParams, AbmilSpec};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use classifier::{ClassifierGrads, ClassifierParams};
pub use encoder::{
    Activation, DenseLayer, EncoderCache, EncoderGrads, EncoderParams, EncoderSpec, LayerGrads,
    LoraAdapter,
};

use ndarray::Array2;
use rand::Rng as _;

use crate::rng::Rng;

/// A set of trainable tensors viewed as flat slices, in a stable order.
pub trait ParamGroup {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter vector length mismatch");
    }
}

/// `sqrt(6 / (fan_in + fan_out))`, the scaled-uniform bound.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Row-major copy when `a` is not already in standard layout; matrix
/// products of transposed views can come back column-major.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn slice_of(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice_of_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}
