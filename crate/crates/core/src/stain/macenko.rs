use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{od_transform, percentile, to_pixel, RgbPatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacenkoConfig {
    /// Pixels with optical-density norm at or below this are background.
    pub beta: f64,
    /// Angle percentile defining the extreme stain directions.
    pub alpha_pct: f64,
}

impl Default for MacenkoConfig {
    fn default() -> Self {
        Self { beta: 0.15, alpha_pct: 1.0 }
    }
}

/// Stain directions (unit optical-density vectors, hematoxylin first) and
/// per-stain 99th-percentile concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacenkoReference {
    pub stains: [[f64; 3]; 2],
    pub max_concentrations: [f64; 2],
}

const MIN_TISSUE_PIXELS: usize = 2;
/// Second-to-first eigenvalue ratio below which the optical densities are
/// treated as single-stain.
const RANK_TOLERANCE: f64 = 1e-3;

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(v: Vector3<f64>) -> [f64; 3] {
    let v = v / v.norm();
    [v[0], v[1], v[2]]
}

/// Least-squares concentrations of each optical-density row against the two
/// stain directions.
pub fn solve_concentrations(stains: &[[f64; 3]; 2], od: &[[f64; 3]]) -> Result<Vec<[f64; 2]>> {
    let (h, e) = (&stains[0], &stains[1]);
    let (g00, g01, g11) = (dot(h, h), dot(h, e), dot(e, e));
    let det = g00 * g11 - g01 * g01;
    if !(det.abs() > 1e-12) {
        return Err(Error::DegenerateStain("stain directions are parallel".into()));
    }
    Ok(od
        .iter()
        .map(|v| {
            let (bh, be) = (dot(h, v), dot(e, v));
            [(g11 * bh - g01 * be) / det, (g00 * be - g01 * bh) / det]
        })
        .collect())
}

fn max_concentrations(conc: &[[f64; 2]]) -> Result<[f64; 2]> {
    let m = [0, 1].map(|s| percentile(&conc.iter().map(|c| c[s]).collect::<Vec<_>>(), 99.0));
    if m.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateStain("a stain has no positive concentration".into()));
    }
    Ok(m)
}

pub fn macenko_fit(img: &RgbPatch, cfg: &MacenkoConfig) -> Result<MacenkoReference> {
    let od = od_transform(img);
    let tissue: Vec<[f64; 3]> = od.iter().filter(|v| dot(v, v).sqrt() > cfg.beta).copied().collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::TooFewTissuePixels { found: tissue.len(), needed: MIN_TISSUE_PIXELS });
    }
    let n = tissue.len() as f64;
    let mean = tissue.iter().fold(Vector3::zeros(), |acc, v| acc + Vector3::from(*v)) / n;
    let mut cov = Matrix3::zeros();
    for v in &tissue {
        let c = Vector3::from(*v) - mean;
        cov += c * c.transpose();
    }
    cov /= n - 1.0;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= RANK_TOLERANCE * l1 {
        return Err(Error::DegenerateStain("optical densities span fewer than two directions".into()));
    }
    let mut basis = [order[0], order[1]].map(|k| eig.eigenvectors.column(k).into_owned());
    for v in &mut basis {
        let proj_mean: f64 = tissue.iter().map(|t| Vector3::from(*t).dot(v)).sum::<f64>() / n;
        if proj_mean < 0.0 {
            *v = -*v;
        }
    }
    let angles: Vec<f64> = tissue
        .iter()
        .map(|t| {
            let t = Vector3::from(*t);
            t.dot(&basis[1]).atan2(t.dot(&basis[0]))
        })
        .collect();
    let direction = |phi: f64| unit(basis[0] * phi.cos() + basis[1] * phi.sin());
    let mut a = direction(percentile(&angles, cfg.alpha_pct));
    let mut b = direction(percentile(&angles, 100.0 - cfg.alpha_pct));
    for v in [&mut a, &mut b] {
        if v.iter().sum::<f64>() < 0.0 {
            *v = v.map(|x| -x);
        }
    }
    let stains = if a[0] >= b[0] { [a, b] } else { [b, a] };
    let conc = solve_concentrations(&stains, &od)?;
    Ok(MacenkoReference { stains, max_concentrations: max_concentrations(&conc)? })
}

/// Normalized optical densities before conversion back to pixels.
pub fn macenko_apply_od(img: &RgbPatch, reference: &MacenkoReference, cfg: &MacenkoConfig) -> Result<Vec<[f64; 3]>> {
    let own = macenko_fit(img, cfg)?;
    let conc = solve_concentrations(&own.stains, &od_transform(img))?;
    let scale = [0, 1].map(|s| reference.max_concentrations[s] / own.max_concentrations[s]);
    let [h, e] = reference.stains;
    Ok(conc
        .iter()
        .map(|c| {
            let (ch, ce) = (c[0] * scale[0], c[1] * scale[1]);
            [0, 1, 2].map(|k| h[k] * ch + e[k] * ce)
        })
        .collect())
}

pub fn macenko_apply(img: &RgbPatch, reference: &MacenkoReference, cfg: &MacenkoConfig) -> Result<RgbPatch> {
    let od = macenko_apply_od(img, reference, cfg)?;
    let pixels = od.iter().map(|v| v.map(|x| to_pixel(10f64.powf(-x)))).collect();
    RgbPatch::new(img.height(), img.width(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stain::{mix_stains, EOSIN, HEMATOXYLIN};
    use rand::Rng as _;

    fn normalized(v: [f64; 3]) -> [f64; 3] {
        let n = dot(&v, &v).sqrt();
        v.map(|x| x / n)
    }

    fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
        (dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()).clamp(-1.0, 1.0).acos().to_degrees()
    }

    fn synthetic(seed: u64, conc_scale: f64) -> RgbPatch {
        let stains = [normalized(HEMATOXYLIN), normalized(EOSIN)];
        let mut r = rng::seeded(seed);
        let conc: Vec<[f64; 2]> = (0..48 * 48)
            .map(|_| {
                let u: f64 = r.random();
                let (a, b) = (r.random_range(0.1..1.2), r.random_range(0.1..1.2));
                let c = if u < 0.3 { [a, 0.0] } else if u < 0.6 { [0.0, b] } else if u < 0.9 { [a, b] } else { [0.0, 0.0] };
                c.map(|x| x * conc_scale)
            })
            .collect();
        mix_stains(&stains, &conc, 48, 48).unwrap()
    }

    #[test]
    fn recovers_known_stains() {
        let truth = [normalized(HEMATOXYLIN), normalized(EOSIN)];
        for seed in 0..3 {
            let fit = macenko_fit(&synthetic(seed, 1.0), &MacenkoConfig::default()).unwrap();
            for (s, (got, want)) in fit.stains.iter().zip(&truth).enumerate() {
                let n = dot(got, got).sqrt();
                assert!((n - 1.0).abs() < 1e-12);
                assert!(angle_deg(got, want) < 2.0, "seed {seed} stain {s}");
            }
        }
    }

    #[test]
    fn background_only_is_rejected() {
        let white = RgbPatch::filled(10, 10, [255, 255, 255]).unwrap();
        assert!(matches!(
            macenko_fit(&white, &MacenkoConfig::default()),
            Err(Error::TooFewTissuePixels { found: 0, .. })
        ));
    }

    #[test]
    fn single_stain_is_degenerate() {
        let h = normalized(HEMATOXYLIN);
        let conc: Vec<[f64; 2]> = (0..400).map(|i| [0.2 + 0.004 * i as f64, 0.0]).collect();
        let img = mix_stains(&[h, normalized(EOSIN)], &conc, 20, 20).unwrap();
        assert!(matches!(macenko_fit(&img, &MacenkoConfig::default()), Err(Error::DegenerateStain(_))));
    }

    #[test]
    fn self_normalization_round_trip() {
        let cfg = MacenkoConfig::default();
        let img = synthetic(11, 1.0);
        let fit = macenko_fit(&img, &cfg).unwrap();
        let out = macenko_apply(&img, &fit, &cfg).unwrap();
        let od = od_transform(&img);
        for ((a, b), v) in img.pixels().iter().zip(out.pixels()).zip(&od) {
            if dot(v, v).sqrt() > cfg.beta {
                for c in 0..3 {
                    assert!((a[c] as i32 - b[c] as i32).abs() <= 2, "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn concentration_scales_are_matched() {
        let cfg = MacenkoConfig::default();
        let reference = macenko_fit(&synthetic(5, 1.0), &cfg).unwrap();
        for scale in [0.6, 1.4] {
            let od = macenko_apply_od(&synthetic(6, scale), &reference, &cfg).unwrap();
            let conc = solve_concentrations(&reference.stains, &od).unwrap();
            let max = max_concentrations(&conc).unwrap();
            for (got, want) in max.iter().zip(&reference.max_concentrations) {
                assert!((got - want).abs() < 1e-6);
            }
        }
    }
}
