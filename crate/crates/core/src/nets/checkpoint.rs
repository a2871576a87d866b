//! Parameter checkpoints: one JSON document, tensors as base64 of
//! little-endian `f64` with explicit dims.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AbmilParams, AbmilSpec, ClassifierParams, DenseLayer, EncoderParams, EncoderSpec, LoraAdapter};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lmmd-align-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    /// Base64 of the row-major little-endian f64 bytes.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub seed: u64,
    pub spec: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl TensorRecord {
    fn new(name: impl Into<String>, dims: Vec<usize>, values: &[f64]) -> Self {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { name: name.into(), dims, data: STANDARD.encode(bytes) }
    }

    fn from_matrix(name: impl Into<String>, m: &Array2<f64>) -> Self {
        Self::new(name, vec![m.nrows(), m.ncols()], m.as_slice().expect("contiguous"))
    }

    fn from_vector(name: impl Into<String>, v: &Array1<f64>) -> Self {
        Self::new(name, vec![v.len()], v.as_slice().expect("contiguous"))
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Data(format!("tensor {}: {e}", self.name)))?;
        let expected: usize = self.dims.iter().product();
        if bytes.len() != expected * 8 {
            return Err(Error::Data(format!(
                "tensor {}: {} bytes for dims {:?}",
                self.name,
                bytes.len(),
                self.dims
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn matrix(&self) -> Result<Array2<f64>> {
        match self.dims[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.values()?).map_err(|e| Error::Data(e.to_string())),
            _ => Err(Error::Data(format!("tensor {} is not a matrix", self.name))),
        }
    }

    fn vector(&self) -> Result<Array1<f64>> {
        match self.dims[..] {
            [_] => Ok(Array1::from(self.values()?)),
            _ => Err(Error::Data(format!("tensor {} is not a vector", self.name))),
        }
    }
}

struct TensorMap(BTreeMap<String, TensorRecord>);

impl TensorMap {
    fn take(&mut self, name: &str) -> Result<TensorRecord> {
        self.0.remove(name).ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))
    }
}

impl Checkpoint {
    fn tensors(&self, kind: &str) -> Result<TensorMap> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format {}", self.format)));
        }
        if self.kind != kind {
            return Err(Error::Data(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(TensorMap(self.tensors.iter().map(|t| (t.name.clone(), t.clone())).collect()))
    }

    pub fn from_encoder(enc: &EncoderParams, seed: u64) -> Result<Self> {
        let mut tensors = Vec::new();
        for (l, layer) in enc.layers().iter().enumerate() {
            tensors.push(TensorRecord::from_matrix(format!("layers.{l}.weight"), layer.weight()));
            tensors.push(TensorRecord::from_vector(format!("layers.{l}.bias"), layer.bias()));
            if let Some(a) = layer.adapter() {
                tensors.push(TensorRecord::from_matrix(format!("layers.{l}.lora_down"), a.down()));
                tensors.push(TensorRecord::from_matrix(format!("layers.{l}.lora_up"), a.up()));
                tensors.push(TensorRecord::new(format!("layers.{l}.lora_alpha"), vec![1], &[a.alpha]));
            }
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            kind: "encoder".into(),
            seed,
            spec: serde_json::to_value(enc.spec())?,
            tensors,
        })
    }

    pub fn to_encoder(&self) -> Result<EncoderParams> {
        let spec: EncoderSpec = serde_json::from_value(self.spec.clone())?;
        let mut map = self.tensors("encoder")?;
        let mut layers = Vec::with_capacity(spec.widths.len());
        for l in 0..spec.widths.len() {
            let weight = map.take(&format!("layers.{l}.weight"))?.matrix()?;
            let bias = map.take(&format!("layers.{l}.bias"))?.vector()?;
            let adapter = match map.0.remove(&format!("layers.{l}.lora_down")) {
                Some(down) => {
                    let down = down.matrix()?;
                    let up = map.take(&format!("layers.{l}.lora_up"))?.matrix()?;
                    let alpha = map.take(&format!("layers.{l}.lora_alpha"))?.values()?[0];
                    Some(LoraAdapter { rank: down.nrows(), down, up, alpha })
                }
                None => None,
            };
            layers.push(DenseLayer { weight, bias, adapter });
        }
        EncoderParams::from_layers(spec, layers)
    }

    pub fn from_classifier(head: &ClassifierParams, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            kind: "classifier".into(),
            seed,
            spec: serde_json::json!({ "num_classes": head.num_classes(), "input_dim": head.dim() }),
            tensors: vec![
                TensorRecord::from_matrix("weight", &head.weight),
                TensorRecord::from_vector("bias", &head.bias),
            ],
        }
    }

    pub fn to_classifier(&self) -> Result<ClassifierParams> {
        let mut map = self.tensors("classifier")?;
        ClassifierParams::new(map.take("weight")?.matrix()?, map.take("bias")?.vector()?)
    }

    pub fn from_abmil(p: &AbmilParams, seed: u64) -> Result<Self> {
        let spec = AbmilSpec { input_dim: p.dim(), hidden: p.attn_v.nrows(), num_classes: p.head.num_classes() };
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            kind: "abmil".into(),
            seed,
            spec: serde_json::to_value(spec)?,
            tensors: vec![
                TensorRecord::from_matrix("attn_v", &p.attn_v),
                TensorRecord::from_vector("attn_w", &p.attn_w),
                TensorRecord::from_matrix("head.weight", &p.head.weight),
                TensorRecord::from_vector("head.bias", &p.head.bias),
            ],
        })
    }

    pub fn to_abmil(&self) -> Result<AbmilParams> {
        let mut map = self.tensors("abmil")?;
        Ok(AbmilParams {
            attn_v: map.take("attn_v")?.matrix()?,
            attn_w: map.take("attn_w")?.vector()?,
            head: ClassifierParams::new(map.take("head.weight")?.matrix()?, map.take("head.bias")?.vector()?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
