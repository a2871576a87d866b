//! Finite-difference checks of every hand-written backward pass.

use std::fmt;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{class_weights, lmmd2, mmd2, EmbeddingBatch, KernelConfig};
use crate::nets::{AbmilParams, AbmilSpec, EncoderParams, EncoderSpec, ParamGroup};
use crate::objectives::{cross_entropy, grad_check, softmax_rows, GradCheckReport};
use crate::rng;

pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
/// Relative corruption applied to analytic gradients by the negative control.
const FAULT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Corrupts every analytic gradient so the suite must fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub components: Vec<ComponentResult>,
    pub passed: bool,
}

impl fmt::Display for GradcheckSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.components {
            writeln!(
                f,
                "{:<20} {:>5} coords  max rel error {:.3e}  {}",
                c.component,
                c.checked,
                c.max_rel_error,
                if c.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed { "all gradient checks passed" } else { "gradient check FAILED" })
    }
}

fn normal(shape: (usize, usize), r: &mut rng::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
}

fn corrupt(mut g: Vec<f64>, opts: &GradcheckOptions) -> Vec<f64> {
    if opts.inject_fault {
        g.iter_mut().for_each(|v| *v *= 1.0 + FAULT);
    }
    g
}

fn result(component: &str, report: GradCheckReport) -> ComponentResult {
    ComponentResult {
        component: component.into(),
        checked: report.checked,
        max_rel_error: report.max_rel_error,
        tolerance: report.tolerance,
        passed: report.passed(),
    }
}

fn check_ce(opts: &GradcheckOptions, r: &mut rng::Rng) -> Result<ComponentResult> {
    let logits = normal((6, 3), r);
    let labels = [0, 2, 1, 1, 0, 2];
    let (_, grad) = cross_entropy(logits.view(), &labels)?;
    let shape = logits.raw_dim();
    let loss = |p: &[f64]| {
        let l = Array2::from_shape_vec(shape, p.to_vec()).expect("shape");
        cross_entropy(l.view(), &labels).expect("valid").0
    };
    let flat = logits.iter().copied().collect::<Vec<_>>();
    let analytic = corrupt(grad.iter().copied().collect(), opts);
    Ok(result("cross_entropy", grad_check(loss, &flat, &analytic, STEP, TOLERANCE, opts.seed)))
}

/// `(lhs, rhs)` packed into one vector for perturbation.
fn split_pair(p: &[f64], n: usize, m: usize, d: usize) -> (EmbeddingBatch, EmbeddingBatch) {
    let a = Array2::from_shape_vec((n, d), p[..n * d].to_vec()).expect("shape");
    let b = Array2::from_shape_vec((m, d), p[n * d..].to_vec()).expect("shape");
    (EmbeddingBatch::new(a).expect("finite"), EmbeddingBatch::new(b).expect("finite"))
}

fn check_mmd(opts: &GradcheckOptions, r: &mut rng::Rng) -> Result<ComponentResult> {
    let (n, m, d) = (5, 4, 3);
    let a = normal((n, d), r);
    let b = normal((m, d), r) + 0.5;
    let cfg = KernelConfig::fixed(1.5);
    let res = mmd2(&EmbeddingBatch::new(a.clone())?, &EmbeddingBatch::new(b.clone())?, &cfg, false)?;
    let flat: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let analytic = corrupt(res.grad_lhs.iter().chain(res.grad_rhs.iter()).copied().collect(), opts);
    let loss = |p: &[f64]| {
        let (x, y) = split_pair(p, n, m, d);
        mmd2(&x, &y, &cfg, false).expect("valid").value
    };
    Ok(result("mmd2", grad_check(loss, &flat, &analytic, STEP, TOLERANCE, opts.seed)))
}

fn check_lmmd(opts: &GradcheckOptions, r: &mut rng::Rng) -> Result<ComponentResult> {
    let (n, m, d, c) = (6, 5, 3, 3);
    let a = normal((n, d), r);
    let b = normal((m, d), r) - 0.3;
    let ws = class_weights(softmax_rows(normal((n, c), r).view()).view())?;
    let wt = class_weights(softmax_rows(normal((m, c), r).view()).view())?;
    let cfg = KernelConfig::fixed(2.0);
    let res = lmmd2(&EmbeddingBatch::new(a.clone())?, &ws, &EmbeddingBatch::new(b.clone())?, &wt, &cfg)?;
    let flat: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let analytic = corrupt(res.grad_lhs.iter().chain(res.grad_rhs.iter()).copied().collect(), opts);
    let loss = |p: &[f64]| {
        let (x, y) = split_pair(p, n, m, d);
        lmmd2(&x, &ws, &y, &wt, &cfg).expect("valid").value
    };
    Ok(result("lmmd2", grad_check(loss, &flat, &analytic, STEP, TOLERANCE, opts.seed)))
}

/// Adapter parameters through `Σ z ⊙ R`, with nonzero up-projections so
/// both adapter factors carry gradient.
fn check_encoder(opts: &GradcheckOptions, r: &mut rng::Rng) -> Result<ComponentResult> {
    let spec = EncoderSpec { input_dim: 5, widths: vec![7, 6, 4], lora_rank: 2, ..EncoderSpec::default() };
    let mut enc = EncoderParams::init(&spec, opts.seed)?;
    let u = Uniform::new(-0.5, 0.5).expect("valid range");
    let start: Vec<f64> = (0..enc.num_params()).map(|_| u.sample(r)).collect();
    enc.assign(&start);
    let x = normal((9, 5), r);
    let weights = normal((9, 4), r);
    let (_, cache) = enc.forward(x.view())?;
    let analytic = corrupt(enc.backward(&cache, weights.view())?.flatten(), opts);
    let mut probe = enc.clone();
    let loss = |p: &[f64]| {
        probe.assign(p);
        (probe.embed(x.view()).expect("valid") * &weights).sum()
    };
    Ok(result("encoder_lora", grad_check(loss, &start, &analytic, STEP, TOLERANCE, opts.seed)))
}

fn check_abmil(opts: &GradcheckOptions, r: &mut rng::Rng) -> Result<Vec<ComponentResult>> {
    let spec = AbmilSpec { input_dim: 4, hidden: 5, num_classes: 2 };
    let mut model = AbmilParams::init(&spec, opts.seed)?;
    let u = Uniform::new(-0.5, 0.5).expect("valid range");
    let start: Vec<f64> = (0..model.num_params()).map(|_| u.sample(r)).collect();
    model.assign(&start);
    let bag = normal((7, 4), r);
    let label = 1;
    let bag_loss = |m: &AbmilParams, b: &Array2<f64>| {
        let out = m.forward(b.view()).expect("valid");
        cross_entropy(out.logits.view().insert_axis(Axis(0)), &[label]).expect("valid")
    };
    let out = model.forward(bag.view())?;
    let (_, g) = cross_entropy(out.logits.view().insert_axis(Axis(0)), &[label])?;
    let grads = model.backward(bag.view(), &out, g.row(0));

    let mut probe = model.clone();
    let param_loss = |p: &[f64]| {
        probe.assign(p);
        bag_loss(&probe, &bag).0
    };
    let params = grad_check(param_loss, &start, &corrupt(grads.flatten(), opts), STEP, TOLERANCE, opts.seed);

    let flat_bag: Vec<f64> = bag.iter().copied().collect();
    let instance_loss = |p: &[f64]| {
        let b = Array2::from_shape_vec(bag.raw_dim(), p.to_vec()).expect("shape");
        bag_loss(&model, &b).0
    };
    let analytic = corrupt(grads.instances.iter().copied().collect(), opts);
    let inputs = grad_check(instance_loss, &flat_bag, &analytic, STEP, TOLERANCE, opts.seed);
    Ok(vec![result("abmil", params), result("abmil_instances", inputs)])
}

/// Runs every component on seeded small instances.
pub fn run_gradcheck_suite(opts: &GradcheckOptions) -> Result<GradcheckSuite> {
    let mut r = rng::seeded(rng::derive(opts.seed, rng::stream::GRADCHECK));
    let mut components =
        vec![check_ce(opts, &mut r)?, check_mmd(opts, &mut r)?, check_lmmd(opts, &mut r)?, check_encoder(opts, &mut r)?];
    components.extend(check_abmil(opts, &mut r)?);
    let passed = components.iter().all(|c| c.passed);
    Ok(GradcheckSuite { components, passed })
}
