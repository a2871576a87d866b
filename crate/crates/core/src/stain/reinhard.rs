use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{to_pixel, to_unit, RgbPatch};
use crate::error::{Error, Result};

/// Ruderman RGB → LMS cone-response matrix.
pub const LMS_FROM_RGB: [[f64; 3]; 3] = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and population standard deviation in lαβ space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinhardStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn lms_matrix() -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| LMS_FROM_RGB[i][j])
}

/// Unit-range RGB to lαβ: `log10(LMS)` followed by the decorrelating
/// rotation `l = (L+M+S)/√3`, `α = (L+M−2S)/√6`, `β = (L−M)/√2`.
pub fn unit_rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lms = lms_matrix() * Vector3::from(rgb);
    let [l, m, s] = [lms[0].log10(), lms[1].log10(), lms[2].log10()];
    [
        (l + m + s) / 3f64.sqrt(),
        (l + m - 2.0 * s) / 6f64.sqrt(),
        (l - m) / 2f64.sqrt(),
    ]
}

/// Inverse of [`unit_rgb_to_lab`]; the LMS → RGB step uses the exact
/// numerical inverse of [`LMS_FROM_RGB`].
pub fn lab_to_unit_rgb(lab: [f64; 3]) -> [f64; 3] {
    let [l, a, b] = lab;
    let (l, a, b) = (l / 3f64.sqrt(), a / 6f64.sqrt(), b / 2f64.sqrt());
    let lms = Vector3::new(10f64.powf(l + a + b), 10f64.powf(l + a - b), 10f64.powf(l - 2.0 * a));
    let inv = lms_matrix().try_inverse().expect("Ruderman matrix is invertible");
    let rgb = inv * lms;
    [rgb[0], rgb[1], rgb[2]]
}

/// Stats from unit-range RGB values (see [`super::to_unit`]).
pub fn reinhard_fit_unit(pixels: &[[f64; 3]]) -> Result<ReinhardStats> {
    if pixels.is_empty() {
        return Err(Error::invalid("cannot fit stats on zero pixels"));
    }
    let lab: Vec<[f64; 3]> = pixels.iter().map(|&p| unit_rgb_to_lab(p)).collect();
    let n = lab.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = lab.iter().map(|v| v[c]).sum::<f64>() / n;
        let var = lab.iter().map(|v| (v[c] - mean[c]).powi(2)).sum::<f64>() / n;
        std[c] = var.sqrt().max(STD_FLOOR);
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Reinhard statistics"));
    }
    Ok(ReinhardStats { mean, std })
}

pub fn reinhard_fit(img: &RgbPatch) -> Result<ReinhardStats> {
    reinhard_fit_unit(&unit_pixels(img))
}

fn unit_pixels(img: &RgbPatch) -> Vec<[f64; 3]> {
    img.pixels().iter().map(|px| px.map(to_unit)).collect()
}

/// Moves the channel statistics of `pixels` onto `reference`, returning
/// unrounded, unclamped unit-range RGB.
pub fn reinhard_apply_unit(pixels: &[[f64; 3]], reference: &ReinhardStats) -> Result<Vec<[f64; 3]>> {
    let own = reinhard_fit_unit(pixels)?;
    Ok(pixels
        .iter()
        .map(|&p| {
            let lab = unit_rgb_to_lab(p);
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = (lab[c] - own.mean[c]) * (reference.std[c] / own.std[c]) + reference.mean[c];
            }
            lab_to_unit_rgb(out)
        })
        .collect())
}

pub fn reinhard_apply(img: &RgbPatch, reference: &ReinhardStats) -> Result<RgbPatch> {
    let out = reinhard_apply_unit(&unit_pixels(img), reference)?;
    RgbPatch::new(img.height(), img.width(), out.into_iter().map(|p| p.map(to_pixel)).collect())
}
