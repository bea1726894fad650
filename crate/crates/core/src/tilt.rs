//! Camera-tilt simulation: the image plane rotated about its vertical centre
//! axis and viewed through a pinhole camera.
//!
//! Coordinates are continuous pixel coordinates with pixel (i, j) covering
//! [i, i+1) × [j, j+1), so its centre sits at (i + ½, j + ½).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;

/// A planar projective map in homogeneous coordinates, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    pub const IDENTITY: Homography = Homography([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography([1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.0;
        let w = h[6] * x + h[7] * y + h[8];
        ((h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Homography) -> Homography {
        let (a, b) = (&self.0, &first.0);
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = (0..3).map(|k| a[r * 3 + k] * b[k * 3 + c]).sum();
            }
        }
        Homography(out)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let h = &self.0;
        let cof = [
            h[4] * h[8] - h[5] * h[7],
            h[2] * h[7] - h[1] * h[8],
            h[1] * h[5] - h[2] * h[4],
            h[5] * h[6] - h[3] * h[8],
            h[0] * h[8] - h[2] * h[6],
            h[2] * h[3] - h[0] * h[5],
            h[3] * h[7] - h[4] * h[6],
            h[1] * h[6] - h[0] * h[7],
            h[0] * h[4] - h[1] * h[3],
        ];
        let det = h[0] * cof[0] + h[1] * cof[3] + h[2] * cof[6];
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::DegenerateProjection("singular homography".into()));
        }
        Ok(Homography(cof.map(|v| v / det)))
    }
}

/// Rotation out of the image plane about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiltSpec {
    pub degrees: f64,
    /// Focal length (and camera distance) in units of the image width.
    pub focal: f64,
}

impl TiltSpec {
    pub const DEFAULT_FOCAL: f64 = 1.2;

    pub fn new(degrees: f64) -> Self {
        TiltSpec {
            degrees,
            focal: Self::DEFAULT_FOCAL,
        }
    }
}

impl Default for TiltSpec {
    fn default() -> Self {
        TiltSpec::new(0.0)
    }
}

/// A warped image with its forward map (source → warped) and the inverse.
#[derive(Debug, Clone)]
pub struct Tilted {
    pub image: PixelImage,
    pub warp: Homography,
    pub unwarp: Homography,
}

/// Source → canvas homography and canvas size for a `side`-pixel square image.
pub fn tilt_homography(side: usize, spec: &TiltSpec) -> Result<(Homography, usize, usize)> {
    if !(spec.degrees.abs() < 90.0) {
        return Err(Error::DegenerateProjection(format!(
            "tilt of {}° leaves nothing visible",
            spec.degrees
        )));
    }
    if !(spec.focal > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "focal length {} must be positive",
            spec.focal
        )));
    }
    if spec.degrees == 0.0 {
        return Ok((Homography::IDENTITY, side, side));
    }
    let w = side as f64;
    let f = spec.focal * w;
    let (sin, cos) = spec.degrees.to_radians().sin_cos();
    let half = w / 2.0;
    if f - half * sin.abs() <= 0.0 {
        return Err(Error::DegenerateProjection(
            "image edge reaches the camera plane".into(),
        ));
    }
    let project = Homography([f * cos, 0.0, 0.0, 0.0, f, 0.0, sin, 0.0, f]);
    let centered = project.compose(&Homography::translation(-half, -half));

    let corners = [(0.0, 0.0), (w, 0.0), (0.0, w), (w, w)].map(|(x, y)| centered.apply(x, y));
    let min_u = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_u = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let max_v = corners.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
    let width = (max_u - min_u - 1e-9).ceil() as usize;
    let height = (2.0 * max_v - 1e-9).ceil() as usize;
    let warp = Homography::translation(-min_u, height as f64 / 2.0).compose(&centered);
    Ok((warp, width.max(1), height.max(1)))
}

/// Bilinear sample of channel `c` at a continuous point; outside is white.
#[inline]
pub fn sample_bilinear(values: &[f64], width: usize, height: usize, channels: usize, c: usize, x: f64, y: f64) -> f64 {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            1.0
        } else {
            values[(yi as usize * width + xi as usize) * channels + c]
        }
    };
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Warps a square image by the tilt. 0° returns the input unchanged.
pub fn simulate_tilt(image: &PixelImage, spec: &TiltSpec) -> Result<Tilted> {
    if image.width() != image.height() {
        return Err(Error::ExtentMismatch(format!(
            "tilt needs a square image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let (warp, width, height) = tilt_homography(image.width(), spec)?;
    let unwarp = warp.inverse()?;
    if spec.degrees == 0.0 {
        return Ok(Tilted {
            image: image.clone().without_grid(),
            warp,
            unwarp,
        });
    }
    let ch = image.channels();
    let mut data = Vec::with_capacity(width * height * ch);
    for v in 0..height {
        for u in 0..width {
            let (x, y) = unwarp.apply(u as f64 + 0.5, v as f64 + 0.5);
            for c in 0..ch {
                let s = sample_bilinear(image.data(), image.width(), image.height(), ch, c, x, y);
                data.push(s.clamp(0.0, 1.0));
            }
        }
    }
    Ok(Tilted {
        image: PixelImage::from_data(width, height, ch, data)?,
        warp,
        unwarp,
    })
}
