//! Grid-sampling decoder. Module geometry is known (or supplied as a
//! homography); each module is read as the binarized mean of its central
//! submodule, the same rule the scannability loss uses.

use serde::Serialize;

use super::encode::{block_stream_positions, Layout};
use super::matrix::ModuleMatrix;
use super::tables::{self, EcLevel, RsBlockSpec};
use super::{format_word, mask_applies, rs, CodeConfig};
use crate::error::{Error, Result};
use crate::image::{GridGeometry, PixelImage};
use crate::srl::{luma, to_grayscale, CentralFilter};
use crate::tilt::{sample_bilinear, Homography};

/// Everything the decoder had to repair on the way to the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrectionReport {
    pub version: u8,
    pub ec_level: EcLevel,
    pub mask_id: u8,
    /// Corrected codewords per RS block.
    pub codeword_corrections: Vec<usize>,
    /// Format bits disagreeing with the accepted format word, both copies.
    pub format_bit_errors: usize,
    /// Finder/timing/alignment/dark-module cells read with the wrong colour.
    pub function_module_errors: usize,
    /// Remainder bits read as 1.
    pub remainder_bit_errors: usize,
}

impl CorrectionReport {
    pub fn codeword_total(&self) -> usize {
        self.codeword_corrections.iter().sum()
    }

    /// All repairs of any kind; 0 means every module was read as encoded.
    pub fn total(&self) -> usize {
        self.codeword_total() + self.format_bit_errors + self.function_module_errors + self.remainder_bit_errors
    }

    pub fn is_clean(&self) -> bool {
        self.total() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decoded {
    #[serde(serialize_with = "lossy_text")]
    pub payload: Vec<u8>,
    pub report: CorrectionReport,
}

fn lossy_text<S: serde::Serializer>(v: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(v))
}

fn version_for(modules: usize) -> Result<u8> {
    (tables::MIN_VERSION..=tables::MAX_VERSION)
        .find(|&v| tables::side(v) == modules)
        .ok_or_else(|| Error::InvalidConfig(format!("no supported version has {modules} modules per side")))
}

fn resolve_grid(image: &PixelImage, cfg: &CodeConfig) -> Result<GridGeometry> {
    if let Some(grid) = image.grid() {
        return Ok(grid);
    }
    let grid = cfg.geometry();
    if image.width() == grid.image_side() && image.height() == grid.image_side() {
        Ok(grid)
    } else {
        Err(Error::ExtentMismatch(format!(
            "{}x{} image has no grid and does not match the configured {}px symbol",
            image.width(),
            image.height(),
            grid.image_side()
        )))
    }
}

/// Binarized central means of every module (true = light), row-major.
pub fn sample_grid(image: &PixelImage, grid: GridGeometry) -> Result<Vec<bool>> {
    if image.width() != grid.image_side() || image.height() != grid.image_side() {
        return Err(Error::ExtentMismatch(format!(
            "{}x{} image vs {}px grid",
            image.width(),
            image.height(),
            grid.image_side()
        )));
    }
    let filter = CentralFilter::new(grid.module_px);
    let m = grid.modules;
    let count = filter.span().len().pow(2) as f64;
    Ok((0..m * m)
        .map(|k| {
            let (x0, y0) = grid.module_origin(k / m, k % m);
            let mut sum = 0.0;
            for i in filter.span() {
                for j in filter.span() {
                    sum += pixel_gray(image, x0 + j, y0 + i);
                }
            }
            sum / count >= 0.5
        })
        .collect())
}

#[inline]
fn pixel_gray(image: &PixelImage, x: usize, y: usize) -> f64 {
    if image.channels() == 1 {
        image.get(x, y, 0)
    } else {
        luma(image.get(x, y, 0), image.get(x, y, 1), image.get(x, y, 2))
    }
}

/// Samples a warped image: each central-submodule pixel centre of the
/// original grid is carried through `warp` and read bilinearly.
pub fn sample_warped(image: &PixelImage, grid: GridGeometry, warp: &Homography) -> Vec<bool> {
    let gray = to_grayscale(image);
    let filter = CentralFilter::new(grid.module_px);
    let m = grid.modules;
    let count = filter.span().len().pow(2) as f64;
    (0..m * m)
        .map(|k| {
            let (x0, y0) = grid.module_origin(k / m, k % m);
            let mut sum = 0.0;
            for i in filter.span() {
                for j in filter.span() {
                    let (u, v) = warp.apply((x0 + j) as f64 + 0.5, (y0 + i) as f64 + 0.5);
                    sum += sample_bilinear(&gray.values, gray.width, gray.height, 1, 0, u, v);
                }
            }
            sum / count >= 0.5
        })
        .collect()
}

/// Decodes an axis-aligned raster. The grid comes from the image, or from
/// `cfg` when the image carries none but has the configured size. Level and
/// mask are read from the symbol's format information.
pub fn decode(image: &PixelImage, cfg: &CodeConfig) -> Result<Decoded> {
    let grid = resolve_grid(image, cfg)?;
    let cells = sample_grid(image, grid)?;
    decode_cells(&cells, grid.modules)
}

/// Decodes an image warped away from the `cfg` geometry; `unwarp` maps
/// warped coordinates back to the original raster.
pub fn decode_warped(image: &PixelImage, cfg: &CodeConfig, unwarp: &Homography) -> Result<Decoded> {
    let warp = unwarp.inverse()?;
    let cells = sample_warped(image, cfg.geometry(), &warp);
    decode_cells(&cells, cfg.side())
}

/// Decodes a sampled module matrix.
pub fn decode_matrix(matrix: &ModuleMatrix) -> Result<Decoded> {
    decode_cells(matrix.cells(), matrix.side())
}

fn read_format(cells: &[bool], side: usize, layout: &Layout) -> Result<(EcLevel, u8, usize)> {
    let read = |positions: &[(usize, usize); 15]| -> u16 {
        positions
            .iter()
            .enumerate()
            .fold(0u16, |acc, (i, &(r, c))| acc | (u16::from(!cells[r * side + c]) << i))
    };
    let primary = read(&layout.format_primary);
    let secondary = read(&layout.format_secondary);
    let mut best: Option<(usize, usize, EcLevel, u8)> = None;
    for ec in EcLevel::ALL {
        for mask in 0..8u8 {
            let word = format_word(ec, mask);
            let dp = (word ^ primary).count_ones() as usize;
            let ds = (word ^ secondary).count_ones() as usize;
            let key = (dp.min(ds), dp + ds);
            if best.is_none_or(|b| key < (b.0, b.1)) {
                best = Some((key.0, key.1, ec, mask));
            }
        }
    }
    let (nearest, both, ec, mask) = best.expect("candidates exist");
    if nearest > 3 {
        return Err(Error::FormatInfoUnreadable);
    }
    Ok((ec, mask, both))
}

/// Decodes row-major module colours (true = light) of a `side`×`side` symbol.
pub fn decode_cells(cells: &[bool], side: usize) -> Result<Decoded> {
    if cells.len() != side * side {
        return Err(Error::ExtentMismatch(format!("{} cells for side {side}", cells.len())));
    }
    let version = version_for(side)?;
    let layout = Layout::new(version)?;
    let (ec_level, mask_id, format_bit_errors) = read_format(cells, side, &layout)?;

    let format_cells: Vec<usize> = layout
        .format_primary
        .iter()
        .chain(&layout.format_secondary)
        .map(|&(r, c)| r * side + c)
        .collect();
    let function_module_errors = (0..side * side)
        .filter(|&k| layout.base.function_mask()[k] && !format_cells.contains(&k))
        .filter(|&k| cells[k] != layout.base.cells()[k])
        .count();

    let spec = RsBlockSpec::new(version, ec_level)?;
    let bits: Vec<bool> = layout
        .placement
        .iter()
        .map(|&(r, c)| !cells[r * side + c] ^ mask_applies(mask_id, r, c))
        .collect();
    let stream: Vec<u8> = bits[..spec.total_codewords * 8]
        .chunks_exact(8)
        .map(|b| b.iter().fold(0u8, |acc, &bit| (acc << 1) | u8::from(bit)))
        .collect();
    let remainder_bit_errors = bits[spec.total_codewords * 8..].iter().filter(|&&b| b).count();

    let mut data = Vec::with_capacity(spec.data_codewords());
    let mut codeword_corrections = Vec::with_capacity(spec.block_count());
    for (block, (positions, &len)) in block_stream_positions(&spec)
        .iter()
        .zip(&spec.data_codewords_per_block)
        .enumerate()
    {
        let mut words: Vec<u8> = positions.iter().map(|&p| stream[p]).collect();
        let fixed =
            rs::rs_correct(&mut words, spec.ec_codewords_per_block).map_err(|_| Error::RsUncorrectable { block })?;
        codeword_corrections.push(fixed);
        data.extend_from_slice(&words[..len]);
    }

    Ok(Decoded {
        payload: parse_segments(&data)?,
        report: CorrectionReport {
            version,
            ec_level,
            mask_id,
            codeword_corrections,
            format_bit_errors,
            function_module_errors,
            remainder_bit_errors,
        },
    })
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn remaining(&self) -> usize {
        self.bytes.len() * 8 - self.pos
    }

    fn take(&mut self, width: usize) -> Option<u32> {
        if width > self.remaining() {
            return None;
        }
        let mut v = 0u32;
        for _ in 0..width {
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u32::from(bit);
            self.pos += 1;
        }
        Some(v)
    }
}

fn parse_segments(data: &[u8]) -> Result<Vec<u8>> {
    let mut reader = BitReader { bytes: data, pos: 0 };
    let mut payload = Vec::new();
    while reader.remaining() >= 4 {
        match reader.take(4).expect("checked") {
            0 => break,
            0b0100 => {
                let count = reader
                    .take(8)
                    .ok_or_else(|| Error::MalformedData("truncated character count".into()))?;
                for _ in 0..count {
                    let byte = reader
                        .take(8)
                        .ok_or_else(|| Error::MalformedData("byte segment runs past the data".into()))?;
                    payload.push(byte as u8);
                }
            }
            mode => return Err(Error::MalformedData(format!("unsupported mode indicator {mode:#06b}"))),
        }
    }
    Ok(payload)
}
