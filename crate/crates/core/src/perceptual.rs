//! Model-free perceptual distance: mean squared difference of a blurred
//! dyadic pyramid. Zero at identity, symmetric, and exactly differentiable.
//!
//! The blur uses zero padding with a symmetric kernel, so it is its own
//! adjoint; decimation keeps even-indexed samples and its adjoint scatters
//! back into a zero grid. Everything is linear in the difference x − r.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptualRegularizer {
    pub levels: usize,
    pub sigma: f64,
}

impl Default for PerceptualRegularizer {
    fn default() -> Self {
        PerceptualRegularizer { levels: 3, sigma: 1.0 }
    }
}

/// A planar multi-channel buffer (HWC interleaved).
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    ch: usize,
    v: Vec<f64>,
}

impl PerceptualRegularizer {
    fn taps(&self) -> Vec<f64> {
        let radius = (3.0 * self.sigma).ceil().max(0.0) as i64;
        let raw: Vec<f64> = (-radius..=radius)
            .map(|d| (-((d * d) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|t| t / total).collect()
    }

    fn check(x: &PixelImage, r: &PixelImage) -> Result<()> {
        if !x.same_extent(r) {
            return Err(Error::ExtentMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                x.width(),
                x.height(),
                x.channels(),
                r.width(),
                r.height(),
                r.channels()
            )));
        }
        Ok(())
    }

    /// Distance between an image and a reference.
    pub fn value(&self, x: &PixelImage, r: &PixelImage) -> Result<f64> {
        Self::check(x, r)?;
        Ok(self.run(x, r, false).0)
    }

    /// Distance and its gradient with respect to `x` (same layout as the data).
    pub fn value_and_gradient(&self, x: &PixelImage, r: &PixelImage) -> Result<(f64, Vec<f64>)> {
        Self::check(x, r)?;
        let (v, g) = self.run(x, r, true);
        Ok((v, g.expect("gradient requested")))
    }

    fn run(&self, x: &PixelImage, r: &PixelImage, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let taps = self.taps();
        let mut level = Plane {
            w: x.width(),
            h: x.height(),
            ch: x.channels(),
            v: x.data().iter().zip(r.data()).map(|(a, b)| a - b).collect(),
        };
        let mut blurred = Vec::with_capacity(self.levels);
        let mut value = 0.0;
        for l in 0..self.levels {
            let b = blur(&level, &taps);
            value += b.v.iter().map(|d| d * d).sum::<f64>() / b.v.len() as f64;
            if l + 1 < self.levels {
                level = decimate(&b);
            }
            blurred.push(b);
        }
        if !want_grad {
            return (value, None);
        }
        // Reverse sweep: grad wrt b_l = 2 b_l / n_l + decimateᵀ(grad wrt a_{l+1}).
        let mut upstream: Option<Plane> = None;
        for b in blurred.iter().rev() {
            let n = b.v.len() as f64;
            let mut g = Plane {
                w: b.w,
                h: b.h,
                ch: b.ch,
                v: b.v.iter().map(|d| 2.0 * d / n).collect(),
            };
            if let Some(up) = upstream.take() {
                upsample_add(&up, &mut g);
            }
            upstream = Some(blur(&g, &taps));
        }
        (value, upstream.map(|p| p.v))
    }
}

fn blur(p: &Plane, taps: &[f64]) -> Plane {
    let radius = (taps.len() / 2) as i64;
    let (w, h, ch) = (p.w, p.h, p.ch);
    let mut tmp = vec![0.0; p.v.len()];
    for y in 0..h {
        let row = y * w * ch;
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let xx = x as i64 + k as i64 - radius;
                    if xx >= 0 && (xx as usize) < w {
                        acc += t * p.v[row + xx as usize * ch + c];
                    }
                }
                tmp[row + x * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; p.v.len()];
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let yy = y as i64 + k as i64 - radius;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src = &tmp[yy as usize * w * ch..(yy as usize + 1) * w * ch];
            let dst = &mut out[y * w * ch..(y + 1) * w * ch];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    Plane { w, h, ch, v: out }
}

fn decimate(p: &Plane) -> Plane {
    let (w, h) = (p.w.div_ceil(2), p.h.div_ceil(2));
    let mut v = Vec::with_capacity(w * h * p.ch);
    for y in 0..h {
        for x in 0..w {
            let src = ((2 * y) * p.w + 2 * x) * p.ch;
            v.extend_from_slice(&p.v[src..src + p.ch]);
        }
    }
    Plane { w, h, ch: p.ch, v }
}

fn upsample_add(small: &Plane, big: &mut Plane) {
    for y in 0..small.h {
        for x in 0..small.w {
            let src = (y * small.w + x) * small.ch;
            let dst = ((2 * y) * big.w + 2 * x) * big.ch;
            for c in 0..small.ch {
                big.v[dst + c] += small.v[src + c];
            }
        }
    }
}
