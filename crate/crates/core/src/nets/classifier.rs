use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{slice_of, slice_of_mut, standard, ParamGroup};
use crate::error::{Error, Result};

/// Linear head: `logits = z·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierParams {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() < 2 {
            return Err(Error::invalid("classifier needs at least two classes"));
        }
        if bias.len() != weight.nrows() {
            return Err(Error::DimMismatch { expected: weight.nrows(), got: bias.len() });
        }
        Ok(Self { weight, bias })
    }

    /// A head learned from scratch starts at zero: all classes tie and the
    /// softmax is uniform.
    pub fn zeros(num_classes: usize, dim: usize) -> Result<Self> {
        Self::new(Array2::zeros((num_classes, dim)), Array1::zeros(num_classes))
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: z.ncols() });
        }
        let mut logits = z.dot(&self.weight.t());
        logits += &self.bias;
        Ok(logits)
    }

    /// Parameter gradients and dL/dz for upstream `grad_logits`.
    pub fn backward(
        &self,
        z: ArrayView2<'_, f64>,
        grad_logits: ArrayView2<'_, f64>,
    ) -> (ClassifierGrads, Array2<f64>) {
        let grads = ClassifierGrads {
            weight: standard(grad_logits.t().dot(&z)),
            bias: grad_logits.sum_axis(Axis(0)),
        };
        (grads, grad_logits.dot(&self.weight))
    }
}

impl ParamGroup for ClassifierParams {
    fn slices(&self) -> Vec<&[f64]> {
        vec![slice_of(&self.weight), self.bias.as_slice().expect("contiguous")]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_of_mut(&mut self.weight), self.bias.as_slice_mut().expect("contiguous")]
    }
}

impl ParamGroup for ClassifierGrads {
    fn slices(&self) -> Vec<&[f64]> {
        vec![slice_of(&self.weight), self.bias.as_slice().expect("contiguous")]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_of_mut(&mut self.weight), self.bias.as_slice_mut().expect("contiguous")]
    }
}
