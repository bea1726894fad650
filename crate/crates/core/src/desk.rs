//! Procedural stand-ins for stylized photographs, and the unscannable
//! code/photo blends used to exercise the repair pipeline.
//!
//! Each photo is a pure function of its seed: a two-colour gradient sky,
//! soft elliptical blobs, a low-frequency ripple and faint grain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::qr::{decode, encode, rasterize, CodeConfig};

/// Photo weight in a blend `α·photo + (1 − α)·code`.
pub const BLEND_ALPHA: f64 = 0.7;

struct Blob {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_rx2: f64,
    inv_ry2: f64,
    color: [f64; 3],
    opacity: f64,
}

/// A `side`×`side` RGB image determined by `seed`.
pub fn photo(seed: u64, side: usize) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = side as f64;
    let color = |rng: &mut ChaCha8Rng| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dir_y, dir_x) = angle.sin_cos();

    let blobs: Vec<Blob> = (0..rng.gen_range(5..12))
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let rx: f64 = rng.gen_range(0.05..0.35) * w;
            let ry: f64 = rng.gen_range(0.05..0.35) * w;
            Blob {
                cx: rng.gen_range(0.0..w),
                cy: rng.gen_range(0.0..w),
                cos: theta.cos(),
                sin: theta.sin(),
                inv_rx2: 1.0 / (rx * rx),
                inv_ry2: 1.0 / (ry * ry),
                color: color(&mut rng),
                opacity: rng.gen_range(0.5..0.95),
            }
        })
        .collect();

    let ripple_amp = rng.gen_range(0.03..0.12);
    let ripple_k = std::f64::consts::TAU / (rng.gen_range(0.08..0.4) * w);
    let ripple_phase: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()].map(|p: f64| p * std::f64::consts::TAU);
    let ripple_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (rip_y, rip_x) = f64::sin_cos(ripple_angle);
    let grain = rng.gen_range(0.0..0.04);

    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        let fy = y as f64 + 0.5;
        for x in 0..side {
            let fx = x as f64 + 0.5;
            let t = (((fx / w - 0.5) * dir_x + (fy / w - 0.5) * dir_y) + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for ((p, a), b) in px.iter_mut().zip(top).zip(bottom) {
                *p = a * (1.0 - t) + b * t;
            }
            for b in &blobs {
                let (dx, dy) = (fx - b.cx, fy - b.cy);
                let u = dx * b.cos + dy * b.sin;
                let v = -dx * b.sin + dy * b.cos;
                let a = b.opacity * (-(u * u * b.inv_rx2 + v * v * b.inv_ry2)).exp();
                for (p, col) in px.iter_mut().zip(b.color) {
                    *p = *p * (1.0 - a) + col * a;
                }
            }
            let phase = ripple_k * (fx * rip_x + fy * rip_y);
            let noise = grain * (rng.gen::<f64>() - 0.5);
            for c in 0..3 {
                let v = px[c] + ripple_amp * (phase + ripple_phase[c]).sin() + noise;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    PixelImage::from_data(side, side, 3, data).expect("values clamped")
}

/// `α·photo + (1 − α)·code`, carrying the code's grid.
pub fn blend_with_code(photo: &PixelImage, code: &PixelImage, alpha: f64) -> Result<PixelImage> {
    let grid = code
        .grid()
        .ok_or_else(|| Error::ExtentMismatch("code raster carries no grid".into()))?;
    photo.blend(code, alpha)?.with_grid(grid)
}

#[derive(Debug, Clone)]
pub struct DeskItem {
    pub seed: u64,
    pub photo: PixelImage,
    pub blend: PixelImage,
}

/// Whether an image fails to yield `payload` under the grid decoder.
pub fn unscannable(image: &PixelImage, payload: &[u8], cfg: &CodeConfig) -> bool {
    decode(image, cfg).map_or(true, |d| d.payload != payload)
}

/// The first `count` seeds (from 0 upward) whose blend with the code for
/// `payload` does not scan.
pub fn corpus(payload: &[u8], cfg: &CodeConfig, count: usize) -> Result<Vec<DeskItem>> {
    let raster = rasterize(&encode(payload, cfg)?, cfg);
    let mut items = Vec::with_capacity(count);
    let limit = 20 * count as u64 + 20;
    for seed in 0..limit {
        if items.len() == count {
            break;
        }
        let p = photo(seed, cfg.image_side());
        let blend = blend_with_code(&p, &raster, BLEND_ALPHA)?;
        if unscannable(&blend, payload, cfg) {
            items.push(DeskItem { seed, photo: p, blend });
        }
    }
    if items.len() < count {
        return Err(Error::InvalidConfig(format!(
            "only {} of {count} blends were unscannable within {limit} seeds",
            items.len()
        )));
    }
    Ok(items)
}

/// Blends of the same photos with the code at another configuration
/// (no scannability filter).
pub fn reblend(items: &[DeskItem], payload: &[u8], cfg: &CodeConfig) -> Result<Vec<PixelImage>> {
    let raster = rasterize(&encode(payload, cfg)?, cfg);
    items
        .iter()
        .map(|it| blend_with_code(&it.photo, &raster, BLEND_ALPHA))
        .collect()
}
