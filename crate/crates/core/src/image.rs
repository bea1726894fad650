//! Normalized rasters and their module-grid geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tilt::sample_bilinear;

/// Where the module grid sits inside a raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Modules per side (m).
    pub modules: usize,
    /// Pixels per module side (s).
    pub module_px: usize,
    /// Quiet-zone width in pixels.
    pub quiet_px: usize,
}

impl GridGeometry {
    pub fn image_side(&self) -> usize {
        self.modules * self.module_px + 2 * self.quiet_px
    }

    /// Top-left pixel (x, y) of module (row, col).
    #[inline]
    pub fn module_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            self.quiet_px + col * self.module_px,
            self.quiet_px + row * self.module_px,
        )
    }

    pub fn module_count(&self) -> usize {
        self.modules * self.modules
    }
}

/// A raster with 1 or 3 interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    grid: Option<GridGeometry>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, channels: usize, fill: f64) -> Result<Self> {
        Self::from_data(width, height, channels, vec![fill; width * height * channels])
    }

    /// Validates channel count, buffer length and value range.
    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ExtentMismatch(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ExtentMismatch(format!(
                "buffer of {} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(PixelImage {
            width,
            height,
            channels,
            data,
            grid: None,
        })
    }

    pub(crate) fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        grid: Option<GridGeometry>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        PixelImage {
            width,
            height,
            channels,
            data,
            grid,
        }
    }

    /// Attaches grid geometry; the raster must be exactly the grid's size.
    pub fn with_grid(mut self, grid: GridGeometry) -> Result<Self> {
        let side = grid.image_side();
        if self.width != side || self.height != side {
            return Err(Error::ExtentMismatch(format!(
                "{}x{} image cannot carry a grid of side {side}px",
                self.width, self.height
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn without_grid(mut self) -> Self {
        self.grid = None;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid(&self) -> Option<GridGeometry> {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the samples. Callers keep values in [0, 1].
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_extent(&self, other: &PixelImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Three-channel copy (grayscale replicated).
    pub fn to_rgb(&self) -> PixelImage {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        PixelImage::from_raw(self.width, self.height, 3, data, self.grid)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// `alpha·self + (1 − alpha)·other`, channel counts promoted to RGB if they differ.
    pub fn blend(&self, other: &PixelImage, alpha: f64) -> Result<PixelImage> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ExtentMismatch(format!(
                "blend of {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let (a, b) = if self.channels == other.channels {
            (self.clone(), other.clone())
        } else {
            (self.to_rgb(), other.to_rgb())
        };
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (alpha * x + (1.0 - alpha) * y).clamp(0.0, 1.0))
            .collect();
        Ok(PixelImage::from_raw(
            a.width,
            a.height,
            a.channels,
            data,
            a.grid.or(b.grid),
        ))
    }

    /// Bilinear resample to a new size (pixel-centre aligned, edges clamped).
    /// The grid is dropped.
    pub fn resized(&self, width: usize, height: usize) -> PixelImage {
        if width == self.width && height == self.height {
            return self.clone().without_grid();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height * self.channels);
        for v in 0..height {
            let y = ((v as f64 + 0.5) * sy).clamp(0.5, self.height as f64 - 0.5);
            for u in 0..width {
                let x = ((u as f64 + 0.5) * sx).clamp(0.5, self.width as f64 - 0.5);
                for c in 0..self.channels {
                    let s = sample_bilinear(&self.data, self.width, self.height, self.channels, c, x, y);
                    data.push(s.clamp(0.0, 1.0));
                }
            }
        }
        PixelImage::from_raw(width, height, self.channels, data, None)
    }

    /// Reads an 8-bit PNG; gray and gray+alpha stay single-channel, everything
    /// else becomes RGB. Values map linearly to [0, 1].
    pub fn load_png(path: impl AsRef<Path>) -> Result<PixelImage> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let gray = matches!(
            img.color(),
            image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16
        );
        let (channels, bytes) = if gray {
            (1, img.to_luma8().into_raw())
        } else {
            (3, img.to_rgb8().into_raw())
        };
        let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
        Ok(PixelImage::from_raw(width, height, channels, data, None))
    }

    /// 8-bit quantization used for PNG output.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(PixelImage::from_data(1, 1, 1, vec![1.5]).is_err());
        assert!(PixelImage::from_data(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(PixelImage::from_data(2, 1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn grid_requires_matching_extent() {
        let grid = GridGeometry {
            modules: 21,
            module_px: 4,
            quiet_px: 8,
        };
        assert!(PixelImage::new(100, 100, 1, 1.0).unwrap().with_grid(grid).is_ok());
        assert!(PixelImage::new(99, 100, 1, 1.0).unwrap().with_grid(grid).is_err());
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = PixelImage::from_data(2, 2, 3, data).unwrap();
        img.save_png(&path).unwrap();
        let back = PixelImage::load_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.to_bytes(), img.to_bytes());
    }
}
