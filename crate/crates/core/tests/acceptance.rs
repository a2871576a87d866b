//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use lmmd_align::harness::protocol::{
    alignment_trial, da_trial, dg_trial, mil_trial, Paired, TargetVariant, DA_PAIRS, DG_SOURCES, DG_UNSEEN,
    IMBALANCE_RATIO,
};
use lmmd_align::harness::{gen_data, run_gradcheck_suite, run_sweep, Arm, DataConfig, GradcheckOptions, RunConfig, SweepMode};
use lmmd_align::kernel::{class_weights, lmmd2, mmd2, EmbeddingBatch, KernelConfig};
use lmmd_align::metrics::{
    auroc, balanced_accuracy, inertia_ratio, macro_f1, pca_2d, robustness_index, wilcoxon_one_sided, ConfusionMatrix,
    EmbeddingAudit,
};
use lmmd_align::nets::{ClassifierParams, ParamGroup};
use lmmd_align::objectives::{da_objective, dg_objective, pair_indices, softmax_rows, LabeledEmbeddings};
use lmmd_align::stain::{
    macenko_apply, macenko_fit, mix_stains, reinhard_apply, reinhard_apply_unit, reinhard_fit, reinhard_fit_unit,
    to_unit, MacenkoConfig, RgbPatch, EOSIN, HEMATOXYLIN,
};
use lmmd_align::synth::{default_benchmark, generate_balanced};
use lmmd_align::trainer::{train_da, train_source_only, LabeledDomain, TrainConfig};
use lmmd_align::{Error, Result};
use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(r))
}

/// Runs `f(seed)` for every seed on its own thread.
fn per_seed<T: Send>(seeds: u64, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..seeds).map(|seed| s.spawn({
            let f = &f;
            move || f(seed)
        })).collect();
        handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

// ---- independent oracles -------------------------------------------------

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_oracle(rows: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(&rows[i], &rows[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 { med } else { 1.0 }
}

fn kernel_oracle(a: &[f64], b: &[f64], sigma2: f64) -> f64 {
    [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|m| (-sq_dist(a, b) / (m * sigma2)).exp()).sum()
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn mmd_oracle(x: &[Vec<f64>], y: &[Vec<f64>], sigma2: f64, unbiased: bool) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for (i, a) in x.iter().enumerate() {
        for (j, b) in x.iter().enumerate() {
            if !(unbiased && i == j) {
                xx += kernel_oracle(a, b, sigma2);
            }
        }
        for b in y {
            xy += kernel_oracle(a, b, sigma2);
        }
    }
    for (i, a) in y.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            if !(unbiased && i == j) {
                yy += kernel_oracle(a, b, sigma2);
            }
        }
    }
    if unbiased {
        xx / (n * (n - 1.0)) + yy / (m * (m - 1.0)) - 2.0 * xy / (n * m)
    } else {
        xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
    }
}

/// Class-weighted triple sum averaged over classes with mass on both sides.
fn lmmd_oracle(x: &[Vec<f64>], px: &[Vec<f64>], y: &[Vec<f64>], py: &[Vec<f64>], sigma2: f64) -> f64 {
    let c = px[0].len();
    let mut total = 0.0;
    let mut active = 0;
    for k in 0..c {
        let sx: f64 = px.iter().map(|p| p[k]).sum();
        let sy: f64 = py.iter().map(|p| p[k]).sum();
        if sx <= 0.0 || sy <= 0.0 {
            continue;
        }
        active += 1;
        let wx: Vec<f64> = px.iter().map(|p| p[k] / sx).collect();
        let wy: Vec<f64> = py.iter().map(|p| p[k] / sy).collect();
        let mut v = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                v += wx[i] * wx[j] * kernel_oracle(&x[i], &x[j], sigma2);
            }
            for j in 0..y.len() {
                v -= 2.0 * wx[i] * wy[j] * kernel_oracle(&x[i], &y[j], sigma2);
            }
        }
        for i in 0..y.len() {
            for j in 0..y.len() {
                v += wy[i] * wy[j] * kernel_oracle(&y[i], &y[j], sigma2);
            }
        }
        total += v;
    }
    if active == 0 { 0.0 } else { total / active as f64 }
}

// ---- checks ----------------------------------------------------------------

fn estimators_match_oracles() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let mut r = rng(inst);
        let (n, m) = (r.random_range(2..=8), r.random_range(2..=8));
        let d = r.random_range(1..=4);
        let c = r.random_range(1..=3);
        let x = normal_matrix(&mut r, n, d);
        let y = normal_matrix(&mut r, m, d) + r.random_range(-1.0..1.0);
        let (xr, yr) = (rows(&x), rows(&y));
        let mut joint = xr.clone();
        joint.extend(yr.iter().cloned());
        let sigma2 = median_oracle(&joint);
        let cfg = KernelConfig::default();
        let (bx, by) = (EmbeddingBatch::new(x.clone())?, EmbeddingBatch::new(y.clone())?);
        for unbiased in [false, true] {
            let v = mmd2(&bx, &by, &cfg, unbiased)?.value;
            worst = worst.max((v - mmd_oracle(&xr, &yr, sigma2, unbiased)).abs());
        }
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let px: Vec<Vec<f64>> = labels.iter().map(|&l| (0..c).map(|k| f64::from(k == l)).collect()).collect();
        let py = softmax_rows(normal_matrix(&mut r, m, c).view());
        let pxm = Array2::from_shape_fn((n, c), |(i, k)| px[i][k]);
        let v = lmmd2(&bx, &class_weights(pxm.view())?, &by, &class_weights(py.view())?, &cfg)?.value;
        worst = worst.max((v - lmmd_oracle(&xr, &px, &yr, &rows(&py), sigma2)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 5.0, format!("max |estimator − oracle| = {worst:.2e} over 50 instances, {secs:.2} s"))
}

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for seed in 0..5 {
        let s = run_gradcheck_suite(&GradcheckOptions { seed, inject_fault: false })?;
        all &= s.passed;
        worst = s.components.iter().fold(worst, |w, c| w.max(c.max_rel_error));
    }
    let negative = run_gradcheck_suite(&GradcheckOptions { seed: 0, inject_fault: true })?;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        all && !negative.passed && secs < 30.0,
        format!("5 seeds × 6 components, max rel error {worst:.2e} (< 1e-4); fault injection detected: {}; {secs:.2} s", !negative.passed),
    )
}

fn objective_identities() -> Result<Outcome> {
    let specs = default_benchmark(0);
    let domain = |k: usize, seed| -> Result<LabeledDomain> {
        LabeledDomain::from_samples(&generate_balanced(&specs[k], 300, seed)?)
    };
    let (s, t) = (domain(0, 1)?, domain(4, 2)?);
    let cfg = TrainConfig { lambda: 0.0, ..TrainConfig::da(5) };
    let (enc, head) = cfg.init_models(8, 2)?;
    let a = train_da(&cfg, std::slice::from_ref(&s), &t.unlabeled().stripped(), enc.clone(), head.clone())?;
    let b = train_source_only(&cfg, &[s], &t.unlabeled().stripped(), enc, head)?;
    let bit_exact = a.history == b.history
        && a.encoder.flatten() == b.encoder.flatten()
        && a.head.flatten() == b.head.flatten();

    let mut r = rng(77);
    let mut head = ClassifierParams::zeros(3, 4)?;
    let flat: Vec<f64> = (0..head.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
    head.assign(&flat);
    let zs: Vec<Array2<f64>> = (0..4).map(|k| normal_matrix(&mut r, 6, 4) + 0.3 * k as f64).collect();
    let ys: Vec<Vec<usize>> = (0..4).map(|_| (0..6).map(|i| i % 3).collect()).collect();
    let kcfg = KernelConfig::default();
    let mut pairs_ok = true;
    let mut worst_identity: f64 = 0.0;
    for k in 2..=4 {
        let src: Vec<LabeledEmbeddings<'_>> =
            (0..k).map(|i| LabeledEmbeddings { z: zs[i].view(), labels: &ys[i] }).collect();
        for lambda in [0.0, 0.5, 1.5] {
            let out = dg_objective(&head, &src, lambda, &kcfg)?;
            pairs_ok &= pair_indices(k).len() == k * (k - 1) / 2 && out.breakdown.parts.len() == k * (k - 1) / 2;
            let b = &out.breakdown;
            worst_identity = worst_identity.max((b.total - (b.ce_term + lambda * b.lmmd_term)).abs());
        }
    }
    let tz = normal_matrix(&mut r, 6, 4);
    let tp = softmax_rows(head.forward(tz.view())?.view());
    for lambda in [0.0, 0.5, 1.5] {
        let out = da_objective(&head, LabeledEmbeddings { z: zs[0].view(), labels: &ys[0] }, tz.view(), tp.view(), lambda, &kcfg)?;
        let b = &out.breakdown;
        worst_identity = worst_identity.max((b.total - (b.ce_term + lambda * b.lmmd_term)).abs());
    }

    let order = [2usize, 0, 3, 1];
    let fwd: Vec<LabeledEmbeddings<'_>> = (0..4).map(|i| LabeledEmbeddings { z: zs[i].view(), labels: &ys[i] }).collect();
    let perm: Vec<LabeledEmbeddings<'_>> = order.iter().map(|&i| fwd[i]).collect();
    let (o1, o2) = (dg_objective(&head, &fwd, 1.5, &kcfg)?, dg_objective(&head, &perm, 1.5, &kcfg)?);
    let mut worst_order = (o1.breakdown.total - o2.breakdown.total).abs();
    for (p, &i) in order.iter().enumerate() {
        let d = (&o1.grad_sources[i] - &o2.grad_sources[p]).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        worst_order = worst_order.max(d);
    }
    for (g1, g2) in o1.grad_head.flatten().iter().zip(o2.grad_head.flatten()) {
        worst_order = worst_order.max((g1 - g2).abs());
    }
    outcome(
        bit_exact && pairs_ok && worst_identity <= 1e-12 && worst_order <= 1e-12,
        format!(
            "λ=0 bit-exact: {bit_exact}; pair counts K(K−1)/2: {pairs_ok}; total − (ce + λ·lmmd) ≤ {worst_identity:.1e}; source-order deviation {worst_order:.1e}"
        ),
    )
}

struct DaResults {
    per_pair: Vec<Vec<Paired>>,
    secs: f64,
}

fn run_da(variant: TargetVariant) -> Result<DaResults> {
    let specs = default_benchmark(0);
    let start = Instant::now();
    let per_seed_pairs = per_seed(SEEDS, |seed| {
        DA_PAIRS.iter().map(|&p| da_trial(&specs, p, seed, variant)).collect::<Result<Vec<_>>>()
    })?;
    let per_pair = (0..DA_PAIRS.len()).map(|p| per_seed_pairs.iter().map(|s| s[p]).collect()).collect();
    Ok(DaResults { per_pair, secs: start.elapsed().as_secs_f64() })
}

fn overall_margin(r: &DaResults) -> f64 {
    mean(r.per_pair.iter().flatten().map(Paired::margin))
}

fn da_efficacy(r: &DaResults) -> Result<Outcome> {
    let margins: Vec<f64> = r.per_pair.iter().map(|v| 100.0 * mean(v.iter().map(Paired::margin))).collect();
    let strong = margins.iter().filter(|&&m| m >= 5.0).count();
    let diffs: Vec<f64> = r.per_pair.iter().flatten().map(Paired::margin).collect();
    let w = wilcoxon_one_sided(&diffs)?;
    let listed: Vec<String> =
        DA_PAIRS.iter().zip(&margins).map(|((s, t), m)| format!("{s}→{t} {m:+.2}")).collect();
    outcome(
        strong >= 4 && w.p_value < 0.01 && r.secs < 300.0,
        format!("margins (points) {}; {strong}/5 ≥ 5; Wilcoxon p = {:.2e} over {} pairs; {:.1} s", listed.join(", "), w.p_value, diffs.len(), r.secs),
    )
}

fn dg_efficacy() -> Result<Outcome> {
    let specs = default_benchmark(0);
    let start = Instant::now();
    let trials = per_seed(SEEDS, |seed| dg_trial(&specs, &DG_SOURCES, &DG_UNSEEN, seed))?;
    let secs = start.elapsed().as_secs_f64();
    let margin = 100.0 * mean(trials.iter().map(Paired::margin));
    outcome(
        margin >= 2.0 && secs < 300.0,
        format!("sources {DG_SOURCES:?} → unseen {DG_UNSEEN:?}: margin {margin:+.2} points over {SEEDS} seeds; {secs:.1} s"),
    )
}

fn imbalance_robustness(r: &DaResults) -> Result<Outcome> {
    let margin = 100.0 * overall_margin(r);
    outcome(margin > 0.0, format!("{:.0}/{:.0} target: margin {margin:+.2} points over 5 pairs × {SEEDS} seeds", 100.0 * IMBALANCE_RATIO, 100.0 * (1.0 - IMBALANCE_RATIO)))
}

fn heldout_generalization(heldout: &DaResults, full: &DaResults) -> Result<Outcome> {
    let (h, f) = (overall_margin(heldout), overall_margin(full));
    let retained = h / f;
    outcome(
        f > 0.0 && retained >= 0.6,
        format!("held-out margin {:+.2} vs adaptation-set margin {:+.2} points: {:.0}% retained", 100.0 * h, 100.0 * f, 100.0 * retained),
    )
}

fn slide_level_transfer() -> Result<Outcome> {
    let specs = default_benchmark(0);
    let trials = per_seed(SEEDS, |seed| mil_trial(&specs, DA_PAIRS[0], seed))?;
    let wins = trials.iter().filter(|t| t.treatment > t.baseline).count();
    outcome(
        wins >= 8,
        format!("adapted-embedding bag classifier wins {wins}/{SEEDS} seeds (mean {:.3} vs {:.3})", mean(trials.iter().map(|t| t.treatment)), mean(trials.iter().map(|t| t.baseline))),
    )
}

fn alignment_analysis() -> Result<Outcome> {
    let specs = default_benchmark(0);
    let trials = per_seed(SEEDS, |seed| alignment_trial(&specs, DA_PAIRS[0], seed))?;
    let inertia = trials.iter().filter(|t| t.inertia_after < t.inertia_before).count();
    let ri = trials.iter().filter(|t| t.ri_after > t.ri_before).count();
    outcome(
        inertia >= 9 && ri >= 8,
        format!(
            "inertia ratio lower in {inertia}/{SEEDS} (mean {:.3} → {:.3}); robustness index higher in {ri}/{SEEDS} (mean {:.3} → {:.3})",
            mean(trials.iter().map(|t| t.inertia_before)),
            mean(trials.iter().map(|t| t.inertia_after)),
            mean(trials.iter().map(|t| t.ri_before)),
            mean(trials.iter().map(|t| t.ri_after)),
        ),
    )
}

fn unit3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (a, b) = (unit3(*a), unit3(*b));
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0).acos().to_degrees()
}

fn stain_mixture(seed: u64, scale: f64, side: usize) -> Result<RgbPatch> {
    let mut r = rng(1000 + seed);
    let conc: Vec<[f64; 2]> = (0..side * side)
        .map(|_| {
            let u: f64 = r.random();
            let (a, b) = (r.random_range(0.1..1.2), r.random_range(0.1..1.2));
            let c = if u < 0.3 { [a, 0.0] } else if u < 0.6 { [0.0, b] } else if u < 0.9 { [a, b] } else { [0.0, 0.0] };
            c.map(|x| x * scale)
        })
        .collect();
    mix_stains(&[unit3(HEMATOXYLIN), unit3(EOSIN)], &conc, side, side)
}

/// Every pixel carries both stains at moderate density, so normalized output
/// stays inside the 8-bit gamut.
fn tissue_patch(seed: u64, scale: f64) -> Result<RgbPatch> {
    let mut r = rng(2000 + seed);
    let conc: Vec<[f64; 2]> =
        (0..32 * 32).map(|_| [r.random_range(0.1..0.9) * scale, r.random_range(0.1..0.9) * scale]).collect();
    mix_stains(&[unit3(HEMATOXYLIN), unit3(EOSIN)], &conc, 32, 32)
}

fn max_channel_diff(a: &RgbPatch, b: &RgbPatch) -> u8 {
    a.pixels().iter().zip(b.pixels()).flat_map(|(p, q)| (0..3).map(move |k| p[k].abs_diff(q[k]))).max().unwrap_or(0)
}

fn stain_normalization() -> Result<Outcome> {
    let cfg = MacenkoConfig::default();
    let truth = [unit3(HEMATOXYLIN), unit3(EOSIN)];
    let mut errors = Vec::new();
    for seed in 0..20 {
        let fit = macenko_fit(&stain_mixture(seed, 1.0, 48)?, &cfg)?;
        errors.extend((0..2).map(|s| angle_deg(&fit.stains[s], &truth[s])));
    }
    let mean_angle = mean(errors.iter().copied());

    let mut stats_dev: f64 = 0.0;
    let mut reinhard_idem = 0u8;
    let mut macenko_idem = 0u8;
    let mut saturated = 0;
    for seed in 0..5 {
        let mut r = rng(500 + seed);
        let img = RgbPatch::new(16, 16, (0..256).map(|_| [r.random(), r.random(), r.random()]).collect())?;
        let reference = stain_mixture(seed, 0.8, 16)?;
        let stats = reinhard_fit(&reference)?;
        let unit: Vec<[f64; 3]> = img.pixels().iter().map(|p| p.map(to_unit)).collect();
        let out = reinhard_fit_unit(&reinhard_apply_unit(&unit, &stats)?)?;
        for k in 0..3 {
            stats_dev = stats_dev.max((out.mean[k] - stats.mean[k]).abs()).max((out.std[k] - stats.std[k]).abs());
        }
        let tissue_stats = reinhard_fit(&tissue_patch(seed, 0.8)?)?;
        let once = reinhard_apply(&tissue_patch(100 + seed, 1.2)?, &tissue_stats)?;
        saturated += once.pixels().iter().filter(|p| p.iter().any(|&v| v == 0 || v == 255)).count();
        reinhard_idem = reinhard_idem.max(max_channel_diff(&once, &reinhard_apply(&once, &tissue_stats)?));

        let src = stain_mixture(100 + seed, 1.3, 32)?;

        let mref = macenko_fit(&reference, &cfg)?;
        let once = macenko_apply(&src, &mref, &cfg)?;
        macenko_idem = macenko_idem.max(max_channel_diff(&once, &macenko_apply(&once, &mref, &cfg)?));
    }
    outcome(
        mean_angle < 2.0 && stats_dev <= 1e-9 && reinhard_idem <= 2 && macenko_idem <= 2 && saturated == 0,
        format!(
            "Macenko mean angular error {mean_angle:.3}° over 20 mixtures; Reinhard stats deviation {stats_dev:.1e}; idempotence max Δ Reinhard {reinhard_idem} ({saturated} saturated pixels), Macenko {macenko_idem}"
        ),
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Top-2 reconstruction error from a full SVD of the centered matrix.
fn svd_truncation_error(x: &Array2<f64>) -> f64 {
    let (n, d) = x.dim();
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let c = x - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| c[[i, j]]);
    let svd = m.svd(true, true);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[2..].iter().map(|v| v * v).sum()
}

fn metric_examples() -> Result<Outcome> {
    let mut failed: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            failed.push(name);
        }
    };
    let cm = ConfusionMatrix::new(vec![vec![30, 20], vec![10, 40]])?;
    let diag = ConfusionMatrix::new(vec![vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 2]])?;
    check("balanced accuracy diagonal", balanced_accuracy(&diag)? == 1.0);
    check("balanced accuracy 0.7", close(balanced_accuracy(&cm)?, 0.7, 1e-12));
    check("balanced accuracy empty class", matches!(
        balanced_accuracy(&ConfusionMatrix::new(vec![vec![3, 1], vec![0, 0]])?),
        Err(Error::UndefinedClass(1))
    ));
    let mut r = rng(11);
    let truth: Vec<usize> = (0..30000).map(|i| i % 3).collect();
    let pred: Vec<usize> = (0..30000).map(|_| r.random_range(0..3)).collect();
    check("uniform random ≈ 1/C", close(balanced_accuracy(&ConfusionMatrix::from_predictions(&truth, &pred, 3)?)?, 1.0 / 3.0, 0.01));
    check("macro F1 diagonal", macro_f1(&diag) == 1.0);
    check("macro F1 hand value", close(macro_f1(&cm), (2.0 / 3.0 + 8.0 / 11.0) / 2.0, 1e-12) && close(macro_f1(&cm), 0.6970, 5e-5));
    check("macro F1 never predicted", close(macro_f1(&ConfusionMatrix::new(vec![vec![4, 0], vec![6, 0]])?), (2.0 * 4.0 / 14.0) / 2.0, 1e-12));
    check("AUROC separated", auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])? == 1.0);
    check("AUROC ties", auroc(&[0.5; 6], &[0, 1, 0, 1, 0, 1])? == 0.5);
    check("AUROC hand value", close(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])?, 0.75, 1e-12));
    check("AUROC single class", auroc(&[0.1, 0.2], &[1, 1]).is_err());

    let blobs = |n: usize, domain_is_class: bool, seed: u64| -> Result<EmbeddingAudit> {
        let mut r = rng(seed);
        let z = normal_matrix(&mut r, n, 2) * 0.1;
        let mut z = z;
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for i in 0..n {
            z[[i, 0]] += 10.0 * classes[i] as f64;
        }
        let domains = if domain_is_class { classes.clone() } else { (0..n).map(|_| r.random_range(0..2)).collect() };
        EmbeddingAudit::new(z, classes, domains)
    };
    let by_class = blobs(2000, false, 3)?;
    check("RI class clusters ≈ 2", close(robustness_index(&by_class, 10)?.value, 2.0, 0.1));
    let swapped = EmbeddingAudit::new(
        by_class.embeddings().to_owned(),
        by_class.domain_labels().to_vec(),
        by_class.class_labels().to_vec(),
    )?;
    check("RI domain clusters ≈ 0.5", close(robustness_index(&swapped, 10)?.value, 0.5, 0.05));
    let same = blobs(200, true, 4)?;
    check("RI class == domain", robustness_index(&same, 10)?.value == 1.0);
    check("RI k ≥ n", robustness_index(&same, 200).is_err());
    check("inertia identical partitions", close(inertia_ratio(&same)?, 1.0, 1e-12));
    check("inertia tight classes", inertia_ratio(&by_class)? < 1.0);

    let ten: Vec<f64> = (1..=10).map(f64::from).collect();
    check("Wilcoxon exact 1/2^10", close(wilcoxon_one_sided(&ten)?.p_value, 1.0 / 1024.0, 1e-15));
    check("Wilcoxon symmetric", wilcoxon_one_sided(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0])?.p_value >= 0.5);
    check("Wilcoxon all zero", wilcoxon_one_sided(&[0.0; 8]).is_err());

    let flat = ndarray::array![[1.0, 2.0], [-1.0, 0.5], [0.0, -2.5], [0.0, 0.0]];
    let flat = &flat - &flat.mean_axis(Axis(0)).expect("rows");
    let p = pca_2d(flat.view())?;
    let mut dist_ok = true;
    for i in 0..4 {
        for j in 0..4 {
            let a = (&flat.row(i) - &flat.row(j)).mapv(|v| v * v).sum();
            let b = (&p.coords.row(i) - &p.coords.row(j)).mapv(|v| v * v).sum();
            dist_ok &= close(a, b, 1e-9);
        }
    }
    check("PCA of 2-D is a rotation", dist_ok);
    let rank1 = Array2::from_shape_fn((10, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j]);
    let pr = pca_2d(rank1.view())?;
    check("PCA rank one", pr.explained_variance[1] <= 1e-12 * pr.explained_variance[0]);
    let x = normal_matrix(&mut rng(12), 10, 5);
    let px = pca_2d(x.view())?;
    let recon = px.coords.dot(&px.components) + &px.mean;
    let err = (&x - &recon).mapv(|v| v * v).sum();
    check("PCA matches SVD truncation", close(err, svd_truncation_error(&x), 1e-9));
    check("PCA d < 2", pca_2d(Array2::<f64>::zeros((5, 1)).view()).is_err());
    let total = 26;
    outcome(failed.is_empty(), if failed.is_empty() { format!("{total} metric examples exact") } else { format!("failed: {}", failed.join(", ")) })
}

fn metrics_of(rec: &lmmd_align::harness::RunRecord) -> Vec<f64> {
    let m = rec.metrics.as_ref().expect("successful cell");
    vec![
        m.target.balanced_accuracy,
        m.target.macro_f1,
        m.target.auroc.unwrap_or(f64::NAN),
        m.source_balanced_accuracy,
        m.final_ce,
        m.final_lmmd,
    ]
}

fn reproducibility(root: &Path) -> Result<Outcome> {
    let data = root.join("data");
    gen_data(&DataConfig::default(), &data)?;
    let cfg = RunConfig {
        experiment_id: "repro".into(),
        mode: SweepMode::Da,
        data_dir: data.clone(),
        sources: vec![0, 2],
        targets: vec![4],
        arms: Arm::ALL.to_vec(),
        train: None,
        output_dir: root.join("first"),
        seeds: vec![0, 1],
        evaluation: Default::default(),
        macenko: Default::default(),
    };
    let first = run_sweep(&cfg, 8)?;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut dg_cfg = RunConfig {
        experiment_id: "repro-dg".into(),
        mode: SweepMode::Dg,
        sources: vec![0, 1, 2],
        targets: vec![5],
        arms: vec![Arm::Original, Arm::Lmmd],
        seeds: vec![3],
        ..cfg.clone()
    };
    dg_cfg.train = None;
    let dg = run_sweep(&dg_cfg, 4)?;
    let mut failed_cells = first.failed + dg.failed;
    let records: Vec<_> = first.records.iter().chain(&dg.records).cloned().collect();
    for (i, rec) in records.iter().enumerate() {
        if rec.metrics.is_none() {
            continue;
        }
        let echo = RunConfig { output_dir: root.join(format!("rerun-{i}")), ..rec.config.clone() };
        let again = run_sweep(&echo, 1)?;
        failed_cells += again.failed;
        let [rerun] = again.records.as_slice() else {
            return outcome(false, format!("echo of cell {i} planned {} cells", again.records.len()));
        };
        for (a, b) in metrics_of(rec).iter().zip(metrics_of(rerun)) {
            if !(a.is_nan() && b.is_nan()) {
                worst = worst.max((a - b).abs());
            }
        }
        compared += 1;
    }
    outcome(
        compared == records.len() && failed_cells == 0 && worst <= 1e-9,
        format!("{compared} records re-run from their echoed configs; max metric deviation {worst:.1e}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let results: BTreeMap<usize, (&str, Result<Outcome>)> = std::thread::scope(|s| {
        let root = tmp.path();
        let da = s.spawn(|| run_da(TargetVariant::Balanced));
        let imbalanced = s.spawn(|| run_da(TargetVariant::Imbalanced(IMBALANCE_RATIO)));
        let heldout = s.spawn(|| run_da(TargetVariant::Heldout));
        let dg = s.spawn(dg_efficacy);
        let mil = s.spawn(slide_level_transfer);
        let align = s.spawn(alignment_analysis);
        let repro = s.spawn(move || reproducibility(root));
        let mut out = BTreeMap::new();
        out.insert(1, ("estimators match brute-force oracles", estimators_match_oracles()));
        out.insert(2, ("analytic gradients match finite differences", gradient_suite()));
        out.insert(3, ("objective identities", objective_identities()));
        out.insert(10, ("stain normalization", stain_normalization()));
        out.insert(11, ("metric examples", metric_examples()));
        let da = da.join().expect("thread");
        let heldout = heldout.join().expect("thread");
        out.insert(4, ("adaptation beats CE-only fine-tuning", da.as_ref().map_err(clone_err).and_then(da_efficacy)));
        out.insert(5, ("multi-source generalization beats CE-only", dg.join().expect("thread")));
        out.insert(6, ("adaptation robust to target imbalance", imbalanced.join().expect("thread").and_then(|r| imbalance_robustness(&r))));
        let held = match (&heldout, &da) {
            (Ok(h), Ok(f)) => heldout_generalization(h, f),
            (Err(e), _) | (_, Err(e)) => Err(clone_err(e)),
        };
        out.insert(7, ("adaptation margin holds on held-out target samples", held));
        out.insert(8, ("bag-level transfer from adapted embeddings", mil.join().expect("thread")));
        out.insert(9, ("alignment analysis", align.join().expect("thread")));
        out.insert(12, ("sweep records reproduce from echoed configs", repro.join().expect("thread")));
        out
    });
    let mut failures = 0;
    for (id, (name, r)) in &results {
        match r {
            Ok(o) => {
                println!("[{}] {id:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
                failures += usize::from(!o.passed);
            }
            Err(e) => {
                println!("[FAIL] {id:>2} {name}: error: {e}");
                failures += 1;
            }
        }
    }
    println!("{} of {} checks passed in {:.1?}", results.len() - failures, results.len(), Duration::from_secs_f64(start.elapsed().as_secs_f64()));
    if failures > 0 {
        std::process::exit(1);
    }
}

fn clone_err(e: &Error) -> Error {
    Error::Numerical(e.to_string())
}
