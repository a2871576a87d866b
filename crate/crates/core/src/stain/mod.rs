//! Color normalization of 8-bit RGB patches.
//!
//! Intensities enter both normalizers through the transmittance convention
//! `t = (p + 1) / 256`, so `p = 255` is fully transmissive and no logarithm
//! ever sees zero. [`to_pixel`] is the exact inverse before rounding.

mod macenko;
mod reinhard;

pub use macenko::{
    macenko_apply, macenko_apply_od, macenko_fit, solve_concentrations, MacenkoConfig, MacenkoReference,
};
pub use reinhard::{
    lab_to_unit_rgb, reinhard_apply, reinhard_apply_unit, reinhard_fit, reinhard_fit_unit, unit_rgb_to_lab,
    ReinhardStats, LMS_FROM_RGB,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical hematoxylin optical-density direction (unnormalized).
pub const HEMATOXYLIN: [f64; 3] = [0.65, 0.70, 0.29];
/// Canonical eosin optical-density direction (unnormalized).
pub const EOSIN: [f64; 3] = [0.07, 0.99, 0.11];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbPatch {
    height: usize,
    width: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbPatch {
    /// Row-major pixels.
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("patch must be at least 1 × 1"));
        }
        if pixels.len() != height * width {
            return Err(Error::DimMismatch { expected: height * width, got: pixels.len() });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, color: [u8; 3]) -> Result<Self> {
        Self::new(height, width, vec![color; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    /// Tiles equally sized patches into a grid with `cols` columns; missing
    /// cells in the last row are white.
    pub fn mosaic(patches: &[RgbPatch], cols: usize) -> Result<Self> {
        let first = patches.first().ok_or_else(|| Error::invalid("mosaic of zero patches"))?;
        let (ph, pw) = (first.height, first.width);
        if cols == 0 || patches.iter().any(|p| p.height != ph || p.width != pw) {
            return Err(Error::invalid("mosaic patches must share one size and cols must be positive"));
        }
        let rows = patches.len().div_ceil(cols);
        let (h, w) = (rows * ph, cols * pw);
        let mut pixels = vec![[255u8; 3]; h * w];
        for (k, p) in patches.iter().enumerate() {
            let (r0, c0) = ((k / cols) * ph, (k % cols) * pw);
            for r in 0..ph {
                let dst = (r0 + r) * w + c0;
                pixels[dst..dst + pw].copy_from_slice(&p.pixels[r * pw..(r + 1) * pw]);
            }
        }
        Self::new(h, w, pixels)
    }

    /// Inverse of [`RgbPatch::mosaic`].
    pub fn split_mosaic(&self, patch_h: usize, patch_w: usize, count: usize) -> Result<Vec<RgbPatch>> {
        if patch_h == 0 || patch_w == 0 || !self.width.is_multiple_of(patch_w) || !self.height.is_multiple_of(patch_h) {
            return Err(Error::invalid("mosaic size is not a multiple of the patch size"));
        }
        let cols = self.width / patch_w;
        if count > cols * (self.height / patch_h) {
            return Err(Error::invalid("mosaic holds fewer patches than requested"));
        }
        (0..count)
            .map(|k| {
                let (r0, c0) = ((k / cols) * patch_h, (k % cols) * patch_w);
                let mut px = Vec::with_capacity(patch_h * patch_w);
                for r in 0..patch_h {
                    let start = (r0 + r) * self.width + c0;
                    px.extend_from_slice(&self.pixels[start..start + patch_w]);
                }
                RgbPatch::new(patch_h, patch_w, px)
            })
            .collect()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.pixels().map(|p| p.0).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::invalid("pixel buffer does not match dimensions"))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Transmittance in `(0, 1]` for an 8-bit value.
pub fn to_unit(p: u8) -> f64 {
    (p as f64 + 1.0) / 256.0
}

/// Rounds and clamps a transmittance back to an 8-bit value.
pub fn to_pixel(t: f64) -> u8 {
    (256.0 * t - 1.0).round().clamp(0.0, 255.0) as u8
}

/// Renders per-pixel stain concentrations through Beer–Lambert mixing with
/// the given optical-density directions.
pub fn mix_stains(stains: &[[f64; 3]; 2], conc: &[[f64; 2]], height: usize, width: usize) -> Result<RgbPatch> {
    let pixels = conc
        .iter()
        .map(|c| [0, 1, 2].map(|k| to_pixel(10f64.powf(-(stains[0][k] * c[0] + stains[1][k] * c[1])))))
        .collect();
    RgbPatch::new(height, width, pixels)
}

/// Per-pixel optical density `−log10((p + 1) / 256)`, row-major, `H·W × 3`.
pub fn od_transform(img: &RgbPatch) -> Vec<[f64; 3]> {
    img.pixels.iter().map(|px| px.map(|p| -to_unit(p).log10())).collect()
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 100.0) / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}
