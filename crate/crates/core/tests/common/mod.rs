//! Independent re-derivations used as test oracles. Nothing here calls into
//! the loss implementation it is checking.
#![allow(dead_code)]

use qrsr::{GridGeometry, PixelImage};
use rand::Rng;

/// Straightforward per-module loss written from the definitions.
pub struct ModuleOracle {
    pub s: usize,
    pub weights: Vec<f64>,
    pub block_start: usize,
    pub block_len: usize,
}

impl ModuleOracle {
    /// Only for σ ≥ 1 (module_px ≥ 6).
    pub fn new(s: usize) -> Self {
        let sigma = ((s - 1) / 5) as f64;
        assert!(sigma >= 1.0);
        let c = (s as f64 - 1.0) / 2.0;
        let mut weights = Vec::with_capacity(s * s);
        for i in 0..s {
            for j in 0..s {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                weights.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        let block_len = s.div_ceil(3);
        ModuleOracle {
            s,
            weights,
            block_start: (s - block_len) / 2,
            block_len,
        }
    }

    pub fn gray(px: &[f64]) -> f64 {
        if px.len() == 1 {
            px[0]
        } else {
            0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
        }
    }

    pub fn hinge(g: f64, y: f64) -> f64 {
        (1.0 - 2.0 * g).max(0.0) * y + (2.0 * g - 1.0).max(0.0) * (1.0 - y)
    }

    /// Module pixels as an s×s array of channel vectors.
    pub fn module_pixels(img: &PixelImage, grid: GridGeometry, row: usize, col: usize) -> Vec<Vec<f64>> {
        let (x0, y0) = grid.module_origin(row, col);
        let s = grid.module_px;
        (0..s * s)
            .map(|k| {
                (0..img.channels())
                    .map(|c| img.get(x0 + k % s, y0 + k / s, c))
                    .collect()
            })
            .collect()
    }

    pub fn center_light(&self, px: &[Vec<f64>]) -> bool {
        let mut sum = 0.0;
        for i in self.block_start..self.block_start + self.block_len {
            for j in self.block_start..self.block_start + self.block_len {
                sum += Self::gray(&px[i * self.s + j]);
            }
        }
        sum / (self.block_len * self.block_len) as f64 >= 0.5
    }

    pub fn weighted_error(&self, px: &[Vec<f64>], target: f64) -> f64 {
        px.iter()
            .zip(&self.weights)
            .map(|(p, w)| w * Self::hinge(Self::gray(p), target))
            .sum()
    }

    /// Central difference of the module's weighted error with respect to one
    /// channel of one pixel. The difference is taken term by term, so the
    /// untouched pixels cancel exactly instead of through rounding.
    pub fn finite_difference(&self, px: &[Vec<f64>], target: f64, pixel: usize, channel: usize, h: f64) -> f64 {
        let mut plus = px[pixel].clone();
        plus[channel] += h;
        let mut minus = px[pixel].clone();
        minus[channel] -= h;
        let mut diff = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            if k == pixel {
                diff += w * (Self::hinge(Self::gray(&plus), target) - Self::hinge(Self::gray(&minus), target));
            } else {
                diff += w * (Self::hinge(Self::gray(&px[k]), target) - Self::hinge(Self::gray(&px[k]), target));
            }
        }
        diff / (2.0 * h)
    }
}

/// Random RGB image on `grid` whose grayscale stays at least `margin` away
/// from ½ at every pixel (offending pixels are redrawn).
pub fn random_rgb_image<R: Rng>(rng: &mut R, grid: GridGeometry, margin: f64) -> PixelImage {
    let side = grid.image_side();
    let mut data = Vec::with_capacity(side * side * 3);
    for _ in 0..side * side {
        loop {
            let px = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            if (ModuleOracle::gray(&px) - 0.5).abs() >= margin {
                data.extend_from_slice(&px);
                break;
            }
        }
    }
    PixelImage::from_data(side, side, 3, data)
        .unwrap()
        .with_grid(grid)
        .unwrap()
}

/// |a − n| / max(|a|, |n|), with 0/0 taken as 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}
