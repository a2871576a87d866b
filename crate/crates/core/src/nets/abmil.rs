use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{init_bound, slice_of, slice_of_mut, standard, uniform_matrix, ClassifierGrads, ClassifierParams, ParamGroup};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmilSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for AbmilSpec {
    fn default() -> Self {
        Self { input_dim: 16, hidden: 16, num_classes: 2 }
    }
}

/// Ungated attention-MIL: `e_k = wᵀ tanh(V h_k)`, `a = softmax(e)`,
/// bag embedding `Σ a_k h_k`, then a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmilParams {
    pub attn_v: Array2<f64>,
    pub attn_w: Array1<f64>,
    pub head: ClassifierParams,
}

#[derive(Debug, Clone)]
pub struct AbmilCache {
    hidden: Array2<f64>,
    pooled: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AbmilOutput {
    pub logits: Array1<f64>,
    pub attention: Array1<f64>,
    pub cache: AbmilCache,
}

#[derive(Debug, Clone)]
pub struct AbmilGrads {
    pub attn_v: Array2<f64>,
    pub attn_w: Array1<f64>,
    pub head: ClassifierGrads,
    /// dL/d instance embeddings.
    pub instances: Array2<f64>,
}

impl AbmilParams {
    /// Uniform attention parameters; the head starts at zero.
    pub fn init(spec: &AbmilSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden == 0 {
            return Err(Error::invalid("ABMIL dims must be positive"));
        }
        let mut r = rng::seeded(rng::derive(seed, rng::stream::INIT_ABMIL));
        let attn_v = uniform_matrix(spec.hidden, spec.input_dim, init_bound(spec.input_dim, spec.hidden), &mut r);
        let attn_w = uniform_matrix(1, spec.hidden, init_bound(spec.hidden, 1), &mut r).row(0).to_owned();
        Ok(Self { attn_v, attn_w, head: ClassifierParams::zeros(spec.num_classes, spec.input_dim)? })
    }

    pub fn dim(&self) -> usize {
        self.attn_v.ncols()
    }

    pub fn forward(&self, bag: ArrayView2<'_, f64>) -> Result<AbmilOutput> {
        if bag.nrows() == 0 {
            return Err(Error::invalid("empty bag"));
        }
        if bag.ncols() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: bag.ncols() });
        }
        let hidden = bag.dot(&self.attn_v.t()).mapv(f64::tanh);
        let scores = hidden.dot(&self.attn_w);
        let attention = softmax(scores.view());
        let pooled = attention.dot(&bag);
        let logits = self.head.forward(pooled.view().insert_axis(Axis(0)))?.row(0).to_owned();
        Ok(AbmilOutput { logits, attention, cache: AbmilCache { hidden, pooled } })
    }

    pub fn backward(&self, bag: ArrayView2<'_, f64>, out: &AbmilOutput, grad_logits: ArrayView1<'_, f64>) -> AbmilGrads {
        let a = &out.attention;
        let pooled = out.cache.pooled.view().insert_axis(Axis(0));
        let (head, d_pooled) = self.head.backward(pooled, grad_logits.insert_axis(Axis(0)));
        let d_pooled = d_pooled.row(0).to_owned();
        // d/d attention_k = h_k · d_pooled, then through the softmax.
        let d_att = bag.dot(&d_pooled);
        let mean = a.dot(&d_att);
        let d_scores = a * &(&d_att - mean);
        let attn_w = out.cache.hidden.t().dot(&d_scores);
        // d_pre[k, j] = d_scores_k · w_j · (1 − tanh²)
        let mut d_pre = out.cache.hidden.mapv(|u| 1.0 - u * u);
        for (mut row, &ds) in d_pre.rows_mut().into_iter().zip(d_scores.iter()) {
            row.zip_mut_with(&self.attn_w, |v, &w| *v *= ds * w);
        }
        let attn_v = standard(d_pre.t().dot(&bag));
        let mut instances = d_pre.dot(&self.attn_v);
        for (mut row, &ak) in instances.rows_mut().into_iter().zip(a.iter()) {
            row.scaled_add(ak, &d_pooled);
        }
        AbmilGrads { attn_v, attn_w, head, instances }
    }
}

pub(crate) fn softmax(scores: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = scores.mapv(|v| (v - max).exp());
    let s = e.sum();
    e /= s;
    e
}

impl ParamGroup for AbmilParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = vec![slice_of(&self.attn_v), self.attn_w.as_slice().expect("contiguous")];
        v.extend(self.head.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![slice_of_mut(&mut self.attn_v), self.attn_w.as_slice_mut().expect("contiguous")];
        v.extend(self.head.slices_mut());
        v
    }
}

impl ParamGroup for AbmilGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = vec![slice_of(&self.attn_v), self.attn_w.as_slice().expect("contiguous")];
        v.extend(self.head.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![slice_of_mut(&mut self.attn_v), self.attn_w.as_slice_mut().expect("contiguous")];
        v.extend(self.head.slices_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hand_params() -> AbmilParams {
        AbmilParams {
            attn_v: array![[1.0, 0.0], [0.0, 1.0]],
            attn_w: array![1.0, -1.0],
            head: ClassifierParams::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.5]).unwrap(),
        }
    }

    #[test]
    fn singleton_bag_has_unit_attention() {
        let p = AbmilParams::init(&AbmilSpec { input_dim: 3, hidden: 4, num_classes: 2 }, 9).unwrap();
        let out = p.forward(array![[0.3, -2.0, 1.0]].view()).unwrap();
        assert_eq!(out.attention, array![1.0]);
    }

    #[test]
    fn duplicate_instances_share_attention() {
        let p = hand_params();
        let out = p.forward(array![[0.5, 0.1], [0.5, 0.1], [0.5, 0.1]].view()).unwrap();
        assert!(out.attention.iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn three_instance_hand_case() {
        let p = hand_params();
        let bag = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let out = p.forward(bag.view()).unwrap();
        // scores: tanh(1), -tanh(1), 0
        let t = 1.0f64.tanh();
        let e = [t.exp(), (-t).exp(), 1.0];
        let s: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|v| v / s).collect();
        for (got, want) in out.attention.iter().zip(&a) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((out.logits[0] - a[0]).abs() < 1e-15);
        assert!((out.logits[1] - (a[1] + 0.5)).abs() < 1e-15);
        assert!((out.attention.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_bag_rejected() {
        let p = hand_params();
        assert!(p.forward(Array2::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_head() {
        let spec = AbmilSpec::default();
        let a = AbmilParams::init(&spec, 4).unwrap();
        assert_eq!(a, AbmilParams::init(&spec, 4).unwrap());
        assert!(a.head.weight.iter().all(|&w| w == 0.0));
        let bound = init_bound(spec.input_dim, spec.hidden);
        assert!(a.attn_v.iter().all(|v| v.abs() <= bound));
    }
}
