//! Scanning-robust loss: a module-level measure of how far an image is from
//! decoding to a target code, with an analytic gradient.
//!
//! Per pixel, a hinge error measures how far the grayscale value sits on the
//! wrong side of 1/2. Errors inside a module are pooled with a normalized
//! Gaussian kernel. A module only counts (and only receives gradient) while
//! the binarized mean of its central submodule disagrees with the target,
//! which is exactly the sampling rule the decoder uses.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{GridGeometry, PixelImage};
use crate::qr::ModuleMatrix;

/// Luma coefficients for R, G, B.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel luminance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub grid: Option<GridGeometry>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    // Same weights as LUMA, arranged so neutral pixels map to themselves exactly.
    b + LUMA[0] * (r - b) + LUMA[1] * (g - b)
}

/// Luma conversion; single-channel images pass through.
pub fn to_grayscale(image: &PixelImage) -> GrayImage {
    let values = if image.channels() == 1 {
        image.data().to_vec()
    } else {
        image.data().chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect()
    };
    GrayImage {
        width: image.width(),
        height: image.height(),
        values,
        grid: image.grid(),
    }
}

/// Normalized Gaussian weights over one s×s module, σ = ⌊(s−1)/5⌋, centered
/// at ((s−1)/2, (s−1)/2). When σ is 0 the weights collapse onto the pixel(s)
/// nearest the center.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    side: usize,
    sigma: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(side: usize) -> Self {
        assert!(side > 0, "empty module");
        let sigma = (side - 1) / 5;
        let center = (side as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..side * side)
            .map(|k| {
                let (i, j) = ((k / side) as f64, (k % side) as f64);
                let d2 = (i - center).powi(2) + (j - center).powi(2);
                if sigma == 0 {
                    if d2 <= 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-d2 / (2.0 * (sigma * sigma) as f64)).exp()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        GaussianKernel { side, sigma, weights }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    /// Weight at module-local (row, col).
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.side + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }
}

/// Uniform average over the central ⌈s/3⌉×⌈s/3⌉ block of a module. For even
/// leftovers the block starts at ⌊(s − ⌈s/3⌉)/2⌋.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentralFilter {
    side: usize,
    start: usize,
    len: usize,
}

impl CentralFilter {
    pub fn new(side: usize) -> Self {
        let len = side.div_ceil(3);
        CentralFilter {
            side,
            start: (side - len) / 2,
            len,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Module-local index range of the central block (same for rows and columns).
    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.span().contains(&i) && self.span().contains(&j) {
            1.0 / (self.len * self.len) as f64
        } else {
            0.0
        }
    }

    /// Mean of the central block of the module whose top-left pixel is (x0, y0).
    #[inline]
    pub fn mean_at(&self, values: &[f64], stride: usize, x0: usize, y0: usize) -> f64 {
        let mut sum = 0.0;
        for i in self.span() {
            let row = (y0 + i) * stride + x0;
            for j in self.span() {
                sum += values[row + j];
            }
        }
        sum / (self.len * self.len) as f64
    }

    /// Binarized central mean of an s×s module block: true (light) iff mean ≥ 1/2.
    pub fn binarize(&self, module: &[f64]) -> bool {
        assert_eq!(module.len(), self.side * self.side, "module block size");
        self.mean_at(module, self.side, 0, 0) >= 0.5
    }
}

/// Whether a module fails to sample as its target: 1 when the binarized
/// central mean differs from the target's center value.
pub fn phi(module: &[f64], target_light: bool, filter: &CentralFilter) -> bool {
    filter.binarize(module) != target_light
}

/// Hinge error of one grayscale value against a target value in {0, 1}.
#[inline]
pub fn pixel_error(gray: f64, target: f64) -> f64 {
    (1.0 - 2.0 * gray).max(0.0) * target + (2.0 * gray - 1.0).max(0.0) * (1.0 - target)
}

/// dE/dG with 0 chosen at the kink G = 1/2.
#[inline]
fn pixel_error_slope(gray: f64, target: f64) -> f64 {
    if gray < 0.5 {
        -2.0 * target
    } else if gray > 0.5 {
        2.0 * (1.0 - target)
    } else {
        0.0
    }
}

/// Per-pixel error over the code region (quiet zone excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    pub side: usize,
    pub values: Vec<f64>,
}

impl ErrorMatrix {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.side + x]
    }
}

fn grid_for(gray_grid: Option<GridGeometry>, target: &ModuleMatrix) -> Result<GridGeometry> {
    let grid = gray_grid.ok_or_else(|| Error::ExtentMismatch("image carries no module grid".into()))?;
    if grid.modules != target.side() {
        return Err(Error::ExtentMismatch(format!(
            "image grid has {} modules per side, target has {}",
            grid.modules,
            target.side()
        )));
    }
    Ok(grid)
}

pub fn error_matrix(gray: &GrayImage, target: &ModuleMatrix) -> Result<ErrorMatrix> {
    let grid = grid_for(gray.grid, target)?;
    let side = grid.modules * grid.module_px;
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side {
        let row = target_row(target, grid, y);
        for x in 0..side {
            let t = row[x / grid.module_px];
            values.push(pixel_error(gray.get(grid.quiet_px + x, grid.quiet_px + y), t));
        }
    }
    Ok(ErrorMatrix { side, values })
}

fn target_row(target: &ModuleMatrix, grid: GridGeometry, y: usize) -> Vec<f64> {
    let r = y / grid.module_px;
    (0..grid.modules).map(|c| target.value(r, c)).collect()
}

/// Kernel-weighted error of module (row, col).
pub fn module_weighted_error(e: &ErrorMatrix, kernel: &GaussianKernel, row: usize, col: usize) -> f64 {
    let s = kernel.side();
    let mut acc = 0.0;
    for i in 0..s {
        for j in 0..s {
            acc += kernel.weight(i, j) * e.at(col * s + j, row * s + i);
        }
    }
    acc
}

fn bool_as_int<S: Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleScore {
    pub row: usize,
    pub col: usize,
    #[serde(serialize_with = "bool_as_int")]
    pub phi: bool,
    pub weighted_error: f64,
}

/// Loss, error rate and per-module breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrlReport {
    pub loss: f64,
    pub error_rate: f64,
    pub mismatch_count: usize,
    pub per_module: Vec<ModuleScore>,
}

impl SrlReport {
    pub fn phi(&self) -> Vec<bool> {
        self.per_module.iter().map(|m| m.phi).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Loss evaluator bound to one grid geometry.
#[derive(Debug, Clone)]
pub struct Srl {
    grid: GridGeometry,
    kernel: GaussianKernel,
    filter: CentralFilter,
}

impl Srl {
    pub fn new(grid: GridGeometry) -> Self {
        Srl {
            grid,
            kernel: GaussianKernel::new(grid.module_px),
            filter: CentralFilter::new(grid.module_px),
        }
    }

    /// Evaluator for an image's own grid.
    pub fn for_image(image: &PixelImage, target: &ModuleMatrix) -> Result<Self> {
        Ok(Srl::new(grid_for(image.grid(), target)?))
    }

    pub fn grid(&self) -> GridGeometry {
        self.grid
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn filter(&self) -> &CentralFilter {
        &self.filter
    }

    fn check(&self, width: usize, height: usize, target: &ModuleMatrix) -> Result<()> {
        let side = self.grid.image_side();
        if width != side || height != side || target.side() != self.grid.modules {
            return Err(Error::ExtentMismatch(format!(
                "{width}x{height} image / {}-module target vs grid of {side}px, {} modules",
                target.side(),
                self.grid.modules
            )));
        }
        Ok(())
    }

    /// Binarized central means of every module, row-major (true = light).
    pub fn sample(&self, gray: &GrayImage) -> Vec<bool> {
        let m = self.grid.modules;
        (0..m * m)
            .map(|k| {
                let (x0, y0) = self.grid.module_origin(k / m, k % m);
                self.filter.mean_at(&gray.values, gray.width, x0, y0) >= 0.5
            })
            .collect()
    }

    pub fn phi(&self, gray: &GrayImage, target: &ModuleMatrix) -> Vec<bool> {
        self.sample(gray)
            .into_iter()
            .zip(target.cells())
            .map(|(sampled, &t)| sampled != t)
            .collect()
    }

    fn weighted_error(&self, gray: &GrayImage, target_value: f64, x0: usize, y0: usize) -> f64 {
        let s = self.grid.module_px;
        let mut acc = 0.0;
        for i in 0..s {
            let row = (y0 + i) * gray.width + x0;
            for j in 0..s {
                acc += self.kernel.weight(i, j) * pixel_error(gray.values[row + j], target_value);
            }
        }
        acc
    }

    fn report_gray(&self, gray: &GrayImage, target: &ModuleMatrix, phi: &[bool]) -> SrlReport {
        let m = self.grid.modules;
        let n = (m * m) as f64;
        let mut loss = 0.0;
        let mut mismatch_count = 0;
        let mut per_module = Vec::with_capacity(m * m);
        for (k, &gated) in phi.iter().enumerate().take(m * m) {
            let (row, col) = (k / m, k % m);
            let (x0, y0) = self.grid.module_origin(row, col);
            let weighted_error = self.weighted_error(gray, target.value(row, col), x0, y0);
            if gated {
                loss += weighted_error;
                mismatch_count += 1;
            }
            per_module.push(ModuleScore {
                row,
                col,
                phi: gated,
                weighted_error,
            });
        }
        SrlReport {
            loss: loss / n,
            error_rate: mismatch_count as f64 / n,
            mismatch_count,
            per_module,
        }
    }

    pub fn report(&self, image: &PixelImage, target: &ModuleMatrix) -> Result<SrlReport> {
        self.check(image.width(), image.height(), target)?;
        let gray = to_grayscale(image);
        let phi = self.phi(&gray, target);
        Ok(self.report_gray(&gray, target, &phi))
    }

    /// Loss with the module gates held fixed (the stop-gradient view).
    pub fn loss_with_phi(&self, image: &PixelImage, target: &ModuleMatrix, phi: &[bool]) -> Result<f64> {
        self.check(image.width(), image.height(), target)?;
        let gray = to_grayscale(image);
        let m = self.grid.modules;
        let mut loss = 0.0;
        for (k, _) in phi.iter().enumerate().filter(|(_, &p)| p) {
            let (x0, y0) = self.grid.module_origin(k / m, k % m);
            loss += self.weighted_error(&gray, target.value(k / m, k % m), x0, y0);
        }
        Ok(loss / (m * m) as f64)
    }

    /// Gradient with respect to every image sample, gates fixed to `phi`.
    pub fn gradient_with_phi(&self, image: &PixelImage, target: &ModuleMatrix, phi: &[bool]) -> Result<Vec<f64>> {
        self.check(image.width(), image.height(), target)?;
        let gray = to_grayscale(image);
        Ok(self.gradient_gray(&gray, image.channels(), target, phi))
    }

    fn gradient_gray(&self, gray: &GrayImage, channels: usize, target: &ModuleMatrix, phi: &[bool]) -> Vec<f64> {
        let m = self.grid.modules;
        let s = self.grid.module_px;
        let n = (m * m) as f64;
        let coeffs: &[f64] = if channels == 1 { &[1.0] } else { &LUMA };
        let mut grad = vec![0.0; gray.values.len() * channels];
        for (k, _) in phi.iter().enumerate().filter(|(_, &p)| p) {
            let t = target.value(k / m, k % m);
            let (x0, y0) = self.grid.module_origin(k / m, k % m);
            for i in 0..s {
                for j in 0..s {
                    let p = (y0 + i) * gray.width + x0 + j;
                    let dg = self.kernel.weight(i, j) * pixel_error_slope(gray.values[p], t) / n;
                    if dg != 0.0 {
                        for (c, &coef) in coeffs.iter().enumerate() {
                            grad[p * channels + c] = dg * coef;
                        }
                    }
                }
            }
        }
        grad
    }

    /// Report and gradient at the current gates.
    pub fn gradient(&self, image: &PixelImage, target: &ModuleMatrix) -> Result<(Vec<f64>, SrlReport)> {
        self.check(image.width(), image.height(), target)?;
        let gray = to_grayscale(image);
        let phi = self.phi(&gray, target);
        let grad = self.gradient_gray(&gray, image.channels(), target, &phi);
        Ok((grad, self.report_gray(&gray, target, &phi)))
    }

    /// L1 norm of the gradient restricted to each module, row-major.
    pub fn module_gradient_l1(&self, grad: &[f64], channels: usize) -> Vec<f64> {
        let m = self.grid.modules;
        let s = self.grid.module_px;
        let width = self.grid.image_side();
        (0..m * m)
            .map(|k| {
                let (x0, y0) = self.grid.module_origin(k / m, k % m);
                let mut acc = 0.0;
                for y in y0..y0 + s {
                    let start = (y * width + x0) * channels;
                    acc += grad[start..start + s * channels].iter().map(|g| g.abs()).sum::<f64>();
                }
                acc
            })
            .collect()
    }
}

/// Loss report of an image against a target code.
pub fn srl(image: &PixelImage, target: &ModuleMatrix) -> Result<SrlReport> {
    Srl::for_image(image, target)?.report(image, target)
}

/// Per-sample gradient of the loss (same layout as the image data).
pub fn srl_gradient(image: &PixelImage, target: &ModuleMatrix) -> Result<Vec<f64>> {
    Ok(Srl::for_image(image, target)?.gradient(image, target)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::{encode, rasterize, CodeConfig};

    fn cfg() -> CodeConfig {
        CodeConfig::default()
    }

    #[test]
    fn grayscale_coefficients() {
        let img = PixelImage::from_data(3, 1, 3, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.5, 0.5]).unwrap();
        let g = to_grayscale(&img);
        assert_eq!(g.values, vec![1.0, 0.299, 0.5]);
    }

    #[test]
    fn hinge_values() {
        assert_eq!(pixel_error(0.0, 1.0), 1.0);
        assert_eq!(pixel_error(1.0, 1.0), 0.0);
        assert_eq!(pixel_error(0.75, 0.0), 0.5);
        assert_eq!(pixel_error(0.5, 0.0), 0.0);
        assert_eq!(pixel_error(0.5, 1.0), 0.0);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for s in 3..=40 {
            let k = GaussianKernel::new(s);
            let total: f64 = k.weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "s={s}");
            for i in 0..s {
                for j in 0..s {
                    let w = k.weight(i, j);
                    assert_eq!(w, k.weight(j, i));
                    assert!((w - k.weight(s - 1 - i, j)).abs() < 1e-15);
                }
            }
        }
        assert_eq!(GaussianKernel::new(20).sigma(), 3);
    }

    #[test]
    fn kernel_center_weight_for_20px_modules() {
        // Normalizer summed independently over the 20x20 grid at σ = 3.
        let z: f64 = (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .map(|(i, j): (i32, i32)| {
                let (di, dj) = (i as f64 - 9.5, j as f64 - 9.5);
                (-(di * di + dj * dj) / 18.0).exp()
            })
            .sum();
        let expected = (-0.5f64 / 18.0).exp() / z;
        let k = GaussianKernel::new(20);
        assert!((k.weight(9, 9) - expected).abs() < 1e-15);
        assert!((k.weight(9, 9) - 0.017227380938029346).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sigma_collapses_to_center() {
        let k = GaussianKernel::new(5);
        assert_eq!(k.weight(2, 2), 1.0);
        let k = GaussianKernel::new(4);
        assert_eq!(k.weight(1, 1), 0.25);
        assert_eq!(k.weight(0, 0), 0.0);
    }

    #[test]
    fn central_filter_support() {
        let f = CentralFilter::new(20);
        assert_eq!(f.span(), 6..13);
        let count = (0..20)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .filter(|&(i, j)| f.weight(i, j) > 0.0)
            .count();
        assert_eq!(count, 49);
        assert_eq!(f.weight(6, 6), 1.0 / 49.0);
        // The mean is taken as sum / count, so a uniform block maps to itself.
        assert_eq!(f.mean_at(&[0.5; 400], 20, 0, 0), 0.5);
        assert_eq!(CentralFilter::new(3).span(), 1..2);
    }

    #[test]
    fn binarization_threshold_is_inclusive() {
        let f = CentralFilter::new(20);
        assert!(f.binarize(&[1.0; 400]));
        assert!(!f.binarize(&[0.0; 400]));
        assert!(f.binarize(&[0.5; 400]));
        assert!(!f.binarize(&[0.4999; 400]));
    }

    #[test]
    fn phi_ignores_peripheral_submodules() {
        let f = CentralFilter::new(20);
        let mut module = vec![0.0; 400];
        for i in f.span() {
            for j in f.span() {
                module[i * 20 + j] = 1.0;
            }
        }
        assert!(!phi(&module, true, &f));
        assert!(phi(&[0.0; 400], true, &f));
        assert!(!phi(&[1.0; 400], true, &f));
    }

    #[test]
    fn perfect_code_has_zero_loss() {
        let y = encode(b"Thanks reviewer!", &cfg()).unwrap();
        let r = srl(&rasterize(&y, &cfg()), &y).unwrap();
        assert_eq!((r.loss, r.error_rate, r.mismatch_count), (0.0, 0.0, 0));
    }

    #[test]
    fn inverted_raster_has_unit_loss() {
        let y = encode(b"Thanks reviewer!", &cfg()).unwrap();
        let r = srl(&rasterize(&y.inverted(), &cfg()), &y).unwrap();
        assert_eq!(r.error_rate, 1.0);
        assert!((r.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_inverted_error_rate() {
        let y = encode(b"abc", &cfg()).unwrap();
        let mut x = y.clone();
        let n = y.side() * y.side();
        for k in 0..n / 2 {
            x.flip(k / y.side(), k % y.side());
        }
        let r = srl(&rasterize(&x, &cfg()), &y).unwrap();
        assert_eq!(r.mismatch_count, n / 2);
    }

    #[test]
    fn error_matrix_matches_weighted_module_error() {
        let y = encode(b"abc", &cfg()).unwrap();
        let x = rasterize(&y.inverted(), &cfg());
        let gray = to_grayscale(&x);
        let e = error_matrix(&gray, &y).unwrap();
        assert_eq!(e.side, 580);
        let k = GaussianKernel::new(20);
        assert!((module_weighted_error(&e, &k, 3, 4) - 1.0).abs() < 1e-12);
        let clean = error_matrix(&to_grayscale(&rasterize(&y, &cfg())), &y).unwrap();
        assert_eq!(module_weighted_error(&clean, &k, 3, 4), 0.0);
    }

    #[test]
    fn gradient_is_gated_by_phi() {
        let c = cfg();
        let y = encode(b"abc", &c).unwrap();
        let mut x = y.clone();
        x.flip(10, 10);
        let img = rasterize(&x, &c).to_rgb();
        let s = Srl::for_image(&img, &y).unwrap();
        let (grad, report) = s.gradient(&img, &y).unwrap();
        let l1 = s.module_gradient_l1(&grad, 3);
        for (k, score) in report.per_module.iter().enumerate() {
            assert_eq!(score.phi, l1[k] > 0.0, "module {k}");
        }
    }

    #[test]
    fn dark_pixel_under_light_target_is_pushed_lighter() {
        let c = CodeConfig {
            version: 1,
            module_px: 5,
            quiet_px: 0,
            ..cfg()
        };
        let y = ModuleMatrix::new_light(21);
        let img = PixelImage::new(105, 105, 3, 0.25)
            .unwrap()
            .with_grid(c.geometry())
            .unwrap();
        let g = srl_gradient(&img, &y).unwrap();
        let center = (2 * 105 + 2) * 3;
        assert!(g[center] < 0.0 && g[center + 1] < 0.0 && g[center + 2] < 0.0);
    }

    #[test]
    fn report_json_shape() {
        let c = CodeConfig {
            version: 1,
            module_px: 3,
            quiet_px: 1,
            ..cfg()
        };
        let y = encode(b"", &c).unwrap();
        let json: serde_json::Value = serde_json::from_str(&srl(&rasterize(&y, &c), &y).unwrap().to_json()).unwrap();
        assert_eq!(json["mismatch_count"], 0);
        assert_eq!(json["per_module"].as_array().unwrap().len(), 441);
        assert_eq!(json["per_module"][0]["phi"], 0);
    }
}
