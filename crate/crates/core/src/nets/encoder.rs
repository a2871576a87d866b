use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{init_bound, slice_of, slice_of_mut, standard, uniform_matrix, ParamGroup};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation.
    fn slope(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - pre.tanh().powi(2),
        }
    }
}

/// Shape of an encoder: input width, per-layer output widths, adapter setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    /// Adapter rank; `0` disables adapters (linear-probe mode).
    pub lora_rank: usize,
    /// Adapter scale α; the update is `(α/r)·up·down`. Defaults to `2r`.
    pub lora_alpha: Option<f64>,
    pub activation: Activation,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            input_dim: 8,
            widths: vec![32, 32, 32, 16],
            lora_rank: 4,
            lora_alpha: None,
            activation: Activation::Relu,
        }
    }
}

impl EncoderSpec {
    pub fn output_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.input_dim)
    }

    /// Index of the first adapted layer: adapters sit on the last ⌈L/2⌉ layers.
    pub fn first_adapted_layer(&self) -> usize {
        let l = self.widths.len();
        l - l.div_ceil(2)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("encoder needs a positive input width and at least one layer"));
        }
        if let Some(a) = self.lora_alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::invalid("lora_alpha must be positive"));
            }
        }
        if self.lora_rank > 0 {
            let first = self.first_adapted_layer();
            for l in first..self.widths.len() {
                let d_in = if l == 0 { self.input_dim } else { self.widths[l - 1] };
                if self.lora_rank > d_in.min(self.widths[l]) {
                    return Err(Error::invalid(format!(
                        "lora rank {} exceeds min(d_in, d_out) = {} at layer {l}",
                        self.lora_rank,
                        d_in.min(self.widths[l])
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Low-rank update `(alpha/rank)·up·down` added to a frozen weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub(crate) down: Array2<f64>,
    pub(crate) up: Array2<f64>,
    pub(crate) rank: usize,
    pub(crate) alpha: f64,
}

impl LoraAdapter {
    pub fn down(&self) -> &Array2<f64> {
        &self.down
    }

    pub fn up(&self) -> &Array2<f64> {
        &self.up
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn delta(&self) -> Array2<f64> {
        self.up.dot(&self.down) * self.scale()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weight: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) adapter: Option<LoraAdapter>,
}

impl DenseLayer {
    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn adapter(&self) -> Option<&LoraAdapter> {
        self.adapter.as_ref()
    }

    pub fn effective_weight(&self) -> Array2<f64> {
        match &self.adapter {
            Some(a) => &self.weight + &a.delta(),
            None => self.weight.clone(),
        }
    }
}

/// Encoder parameters. Frozen weights (and biases of unadapted layers) are
/// only reachable immutably; trainable tensors go through [`ParamGroup`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<DenseLayer>,
    activation: Activation,
    spec: EncoderSpec,
    generation: u64,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    effective: Vec<Array2<f64>>,
    generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub down: Array2<f64>,
    pub up: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    /// One entry per layer; `None` for layers without trainable tensors.
    pub layers: Vec<Option<LayerGrads>>,
    /// Gradient with respect to the encoder input.
    pub input: Array2<f64>,
}

impl EncoderParams {
    /// Scaled-uniform frozen weights and down factors, zero up factors and biases.
    pub fn init(spec: &EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::seeded(rng::derive(seed, rng::stream::INIT_ENCODER));
        let first_adapted = spec.first_adapted_layer();
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut d_in = spec.input_dim;
        for (l, &d_out) in spec.widths.iter().enumerate() {
            let weight = uniform_matrix(d_out, d_in, init_bound(d_in, d_out), &mut r);
            let adapter = (spec.lora_rank > 0 && l >= first_adapted).then(|| {
                let rank = spec.lora_rank;
                LoraAdapter {
                    down: uniform_matrix(rank, d_in, init_bound(d_in, rank), &mut r),
                    up: Array2::zeros((d_out, rank)),
                    rank,
                    alpha: spec.lora_alpha.unwrap_or(2.0 * rank as f64),
                }
            });
            layers.push(DenseLayer { weight, bias: Array1::zeros(d_out), adapter });
            d_in = d_out;
        }
        Ok(Self { layers, activation: spec.activation, spec: spec.clone(), generation: 0 })
    }

    /// Builds an encoder from explicit layers; used by hand-set tests and checkpoints.
    pub fn from_layers(spec: EncoderSpec, layers: Vec<DenseLayer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.widths.len() {
            return Err(Error::DimMismatch { expected: spec.widths.len(), got: layers.len() });
        }
        let mut d_in = spec.input_dim;
        for (layer, &d_out) in layers.iter().zip(&spec.widths) {
            if layer.weight.dim() != (d_out, d_in) || layer.bias.len() != d_out {
                return Err(Error::invalid("layer shapes do not chain"));
            }
            if let Some(a) = &layer.adapter {
                if a.down.dim() != (a.rank, d_in) || a.up.dim() != (d_out, a.rank) {
                    return Err(Error::invalid("adapter shapes do not match layer"));
                }
            }
            d_in = d_out;
        }
        Ok(Self { layers, activation: spec.activation, spec, generation: 0 })
    }

    pub fn dense(weight: Array2<f64>, bias: Array1<f64>, adapter: Option<(Array2<f64>, Array2<f64>, f64)>) -> DenseLayer {
        let adapter = adapter.map(|(down, up, alpha)| LoraAdapter { rank: down.nrows(), down, up, alpha });
        DenseLayer { weight, bias, adapter }
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Same encoder with every adapter folded into its frozen weight.
    pub fn merged(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer { weight: l.effective_weight(), bias: l.bias.clone(), adapter: None })
            .collect();
        let spec = EncoderSpec { lora_rank: 0, ..self.spec.clone() };
        Self { layers, activation: self.activation, spec, generation: 0 }
    }

    /// Same frozen weights with adapters removed (the unadapted encoder).
    pub fn without_adapters(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer { weight: l.weight.clone(), bias: l.bias.clone(), adapter: None })
            .collect();
        let spec = EncoderSpec { lora_rank: 0, ..self.spec.clone() };
        Self { layers, activation: self.activation, spec, generation: 0 }
    }

    /// Embeds a batch (one sample per row) and records activations.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<(Array2<f64>, EncoderCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::DimMismatch { expected: self.input_dim(), got: batch.ncols() });
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        let last = self.layers.len() - 1;
        let mut x = batch.to_owned();
        let mut cache = EncoderCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            effective: Vec::with_capacity(self.layers.len()),
            generation: self.generation,
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let w = layer.effective_weight();
            let mut pre = x.dot(&w.t());
            pre += &layer.bias;
            let out = if l == last { pre.clone() } else { pre.mapv(|v| self.activation.apply(v)) };
            cache.inputs.push(std::mem::replace(&mut x, out));
            cache.pre.push(pre);
            cache.effective.push(w);
        }
        Ok((x, cache))
    }

    /// Embeds without keeping a cache.
    pub fn embed(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(batch).map(|(z, _)| z)
    }

    /// Backpropagates `grad_out` (dL/d embedding) through the cached pass.
    ///
    /// Only adapter factors and biases of adapted layers receive gradients.
    pub fn backward(&self, cache: &EncoderCache, grad_out: ArrayView2<'_, f64>) -> Result<EncoderGrads> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache { cached: cache.generation, current: self.generation });
        }
        let n = cache.inputs[0].nrows();
        if grad_out.dim() != (n, self.output_dim()) {
            return Err(Error::DimMismatch { expected: self.output_dim(), got: grad_out.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut upstream = grad_out.to_owned();
        let mut grads = vec![None; self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let delta = if l == last {
                upstream
            } else {
                let mut d = upstream;
                d.zip_mut_with(&cache.pre[l], |g, &p| *g *= self.activation.slope(p));
                d
            };
            if let Some(a) = &layer.adapter {
                let grad_w = delta.t().dot(&cache.inputs[l]);
                let s = a.scale();
                grads[l] = Some(LayerGrads {
                    up: standard(grad_w.dot(&a.down.t()) * s),
                    down: standard(a.up.t().dot(&grad_w) * s),
                    bias: delta.sum_axis(Axis(0)),
                });
            }
            upstream = delta.dot(&cache.effective[l]);
        }
        Ok(EncoderGrads { layers: grads, input: upstream })
    }
}

impl ParamGroup for EncoderParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(a) = &layer.adapter {
                out.push(slice_of(&a.down));
                out.push(slice_of(&a.up));
                out.push(layer.bias.as_slice().expect("contiguous"));
            }
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Some(a) = &mut layer.adapter {
                out.push(slice_of_mut(&mut a.down));
                out.push(slice_of_mut(&mut a.up));
                out.push(layer.bias.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }
}

impl ParamGroup for EncoderGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.push(slice_of(&g.down));
            out.push(slice_of(&g.up));
            out.push(g.bias.as_slice().expect("contiguous"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in self.layers.iter_mut().flatten() {
            out.push(slice_of_mut(&mut g.down));
            out.push(slice_of_mut(&mut g.up));
            out.push(g.bias.as_slice_mut().expect("contiguous"));
        }
        out
    }
}
