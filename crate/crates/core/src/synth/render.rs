//! RGB rendering of feature vectors so color normalizers can act on
//! synthetic domains.
//!
//! An 8-dimensional sample becomes a 2 × 2 patch. Pixel `p` carries the
//! hematoxylin and eosin concentrations `0.45 + 0.1·x[2p]` and
//! `0.45 + 0.1·x[2p+1]` (clamped at zero), mixed through a per-domain tint
//! of the canonical stain directions. Decoding always assumes the canonical
//! directions, so an uncorrected tint shows up as a feature shift.

use crate::error::{Error, Result};
use crate::stain::{mix_stains, od_transform, solve_concentrations, RgbPatch, EOSIN, HEMATOXYLIN};

pub const PATCH_SIDE: usize = 2;
const FEATURES_PER_PATCH: usize = 2 * PATCH_SIDE * PATCH_SIDE;
const CONC_OFFSET: f64 = 0.45;
const CONC_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainRendering {
    pub stains: [[f64; 3]; 2],
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

impl StainRendering {
    pub fn canonical() -> Self {
        Self { stains: [normalized(HEMATOXYLIN), normalized(EOSIN)] }
    }

    /// Domain `k` scales the stain components by a tint growing with `k`;
    /// domain 0 is canonical.
    pub fn for_domain(k: usize) -> Self {
        let t = k as f64;
        let h = [HEMATOXYLIN[0] * (1.0 + 0.05 * t), HEMATOXYLIN[1] * (1.0 - 0.04 * t), HEMATOXYLIN[2] * (1.0 + 0.03 * t)];
        let e = [EOSIN[0] * (1.0 - 0.03 * t), EOSIN[1], EOSIN[2] * (1.0 + 0.06 * t)];
        Self { stains: [normalized(h), normalized(e)] }
    }
}

pub fn render_patch(features: &[f64], rendering: &StainRendering) -> Result<RgbPatch> {
    if features.len() != FEATURES_PER_PATCH {
        return Err(Error::DimMismatch { expected: FEATURES_PER_PATCH, got: features.len() });
    }
    let conc: Vec<[f64; 2]> = features
        .chunks_exact(2)
        .map(|c| [0, 1].map(|s| (CONC_OFFSET + CONC_SLOPE * c[s]).max(0.0)))
        .collect();
    mix_stains(&rendering.stains, &conc, PATCH_SIDE, PATCH_SIDE)
}

/// Recovers features from a patch under the canonical stain directions.
pub fn decode_patch(patch: &RgbPatch) -> Result<Vec<f64>> {
    if patch.height() != PATCH_SIDE || patch.width() != PATCH_SIDE {
        return Err(Error::invalid(format!("expected a {PATCH_SIDE} × {PATCH_SIDE} patch")));
    }
    let conc = solve_concentrations(&StainRendering::canonical().stains, &od_transform(patch))?;
    Ok(conc.iter().flat_map(|c| c.map(|v| (v - CONC_OFFSET) / CONC_SLOPE)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip_is_close() {
        let x = [0.3, -1.2, 2.0, 0.0, -3.5, 1.1, 0.7, -0.4];
        let back = decode_patch(&render_patch(&x, &StainRendering::canonical()).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 0.35, "{a} vs {b}");
        }
    }

    #[test]
    fn domain_zero_is_canonical() {
        assert_eq!(StainRendering::for_domain(0), StainRendering::canonical());
        assert_ne!(StainRendering::for_domain(3), StainRendering::canonical());
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(render_patch(&[0.0; 7], &StainRendering::canonical()).is_err());
    }
}
