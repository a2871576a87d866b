use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn for_params(params: &impl ParamGroup) -> Self {
        Self::new(params.num_params(), AdamConfig::default())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }
}

/// One bias-corrected Adam update. A shape mismatch or any non-finite
/// gradient rejects the step before anything is modified.
pub fn optimizer_step<P, G>(state: &mut AdamState, params: &mut P, grads: &G, lr: f64) -> Result<()>
where
    P: ParamGroup + ?Sized,
    G: ParamGroup + ?Sized,
{
    let grad_slices = grads.slices();
    let shapes_ok = {
        let ps = params.slices();
        ps.len() == grad_slices.len() && ps.iter().zip(&grad_slices).all(|(p, g)| p.len() == g.len())
    };
    let total: usize = grad_slices.iter().map(|g| g.len()).sum();
    if !shapes_ok || total != state.m.len() {
        return Err(Error::DimMismatch { expected: state.m.len(), got: total });
    }
    if grad_slices.iter().flat_map(|g| g.iter()).any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let mut k = 0;
    for (p, g) in params.slices_mut().into_iter().zip(grad_slices) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            k += 1;
        }
    }
    Ok(())
}

/// Plain flat vector, handy for tests and scalar cases.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl ParamGroup for FlatParams {
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = FlatParams(vec![1.0, -2.0]);
        let mut s = AdamState::new(2, AdamConfig::default());
        optimizer_step(&mut s, &mut p, &FlatParams(vec![0.0, 0.0]), 0.1).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_scalar() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε).
        let g = 0.3;
        let lr = 0.01;
        let mut p = FlatParams(vec![1.0]);
        let mut s = AdamState::new(1, AdamConfig::default());
        optimizer_step(&mut s, &mut p, &FlatParams(vec![g]), lr).unwrap();
        let expected = 1.0 - lr * g / (g + 1e-8);
        assert!((p.0[0] - expected).abs() < 1e-15);
        let mut p = FlatParams(vec![1.0]);
        let mut s = AdamState::new(1, AdamConfig::default());
        optimizer_step(&mut s, &mut p, &FlatParams(vec![-5.0]), lr).unwrap();
        assert!((p.0[0] - (1.0 + lr * 5.0 / (5.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_steps() {
        let mut p = FlatParams(vec![1.0, 2.0]);
        let mut s = AdamState::new(2, AdamConfig::default());
        assert!(optimizer_step(&mut s, &mut p, &FlatParams(vec![1.0]), 0.1).is_err());
        assert!(optimizer_step(&mut s, &mut p, &FlatParams(vec![f64::NAN, 1.0]), 0.1).is_err());
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(s.steps_taken(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = FlatParams(vec![0.5, -0.5, 2.0]);
            let mut s = AdamState::new(3, AdamConfig::default());
            for t in 0..50 {
                let g: Vec<f64> = p.0.iter().map(|x| 2.0 * x + (t as f64 * 0.1).sin()).collect();
                optimizer_step(&mut s, &mut p, &FlatParams(g), 0.05).unwrap();
            }
            p.0
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
