//! QR symbol substrate: encoding, module layout, Reed–Solomon coding and
//! grid-sampling decoding. Byte mode, versions 1–5.

pub mod decode;
pub mod encode;
pub mod gf256;
pub mod matrix;
pub mod rs;
pub mod tables;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GridGeometry;

pub use decode::{decode, decode_cells, decode_matrix, decode_warped, CorrectionReport, Decoded};
pub use encode::{classify_modules, encode, encode_codewords, rasterize};
pub use matrix::ModuleMatrix;
pub use tables::{EcLevel, RsBlockSpec};

/// Symbol and raster parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodeConfig {
    pub version: u8,
    pub ec_level: EcLevel,
    pub mask_id: u8,
    /// Pixels per module side.
    pub module_px: usize,
    /// Quiet-zone padding in pixels on every side.
    pub quiet_px: usize,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            version: 3,
            ec_level: EcLevel::M,
            mask_id: 4,
            module_px: 20,
            quiet_px: 80,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(tables::MIN_VERSION..=tables::MAX_VERSION).contains(&self.version) {
            return Err(Error::InvalidConfig(format!(
                "version {} unsupported (supported {}..={})",
                self.version,
                tables::MIN_VERSION,
                tables::MAX_VERSION
            )));
        }
        if self.mask_id > 7 {
            return Err(Error::InvalidConfig(format!(
                "mask {} out of range 0..=7",
                self.mask_id
            )));
        }
        if self.module_px < 3 {
            return Err(Error::InvalidConfig(format!(
                "module_px {} too small; the central submodule needs at least 3 pixels",
                self.module_px
            )));
        }
        Ok(())
    }

    /// Modules per side.
    pub fn side(&self) -> usize {
        tables::side(self.version)
    }

    /// Pixel side of the rasterized symbol including the quiet zone.
    pub fn image_side(&self) -> usize {
        self.side() * self.module_px + 2 * self.quiet_px
    }

    pub fn block_spec(&self) -> Result<RsBlockSpec> {
        RsBlockSpec::new(self.version, self.ec_level)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            modules: self.side(),
            module_px: self.module_px,
            quiet_px: self.quiet_px,
        }
    }

    pub fn with_ec(self, ec_level: EcLevel) -> Self {
        CodeConfig { ec_level, ..self }
    }
}

/// Whether data-mask pattern `mask_id` inverts the module at (row, col).
pub fn mask_applies(mask_id: u8, row: usize, col: usize) -> bool {
    let (x, y) = (col, row);
    match mask_id {
        0 => (x + y) % 2 == 0,
        1 => y % 2 == 0,
        2 => x % 3 == 0,
        3 => (x + y) % 3 == 0,
        4 => (x / 3 + y / 2) % 2 == 0,
        5 => x * y % 2 + x * y % 3 == 0,
        6 => (x * y % 2 + x * y % 3) % 2 == 0,
        7 => ((x + y) % 2 + x * y % 3) % 2 == 0,
        _ => unreachable!("mask id validated"),
    }
}

/// 15-bit format word (BCH protected, XOR-masked) for an EC level and mask.
pub fn format_word(ec: EcLevel, mask_id: u8) -> u16 {
    let data = (u16::from(ec.format_bits()) << 3) | u16::from(mask_id);
    let mut rem = data;
    for _ in 0..10 {
        rem = (rem << 1) ^ ((rem >> 9) * 0x537);
    }
    ((data << 10) | (rem & 0x3ff)) ^ 0x5412
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_is_an_involution() {
        for mask in 0..8u8 {
            for row in 0..29 {
                for col in 0..29 {
                    let v = row * 7 % 3 == 0;
                    let once = v ^ mask_applies(mask, row, col);
                    assert_eq!(once ^ mask_applies(mask, row, col), v);
                }
            }
        }
    }

    #[test]
    fn format_words_are_pairwise_far_apart() {
        let words: Vec<u16> = EcLevel::ALL
            .iter()
            .flat_map(|&ec| (0..8).map(move |m| format_word(ec, m)))
            .collect();
        for (i, a) in words.iter().enumerate() {
            for b in &words[i + 1..] {
                assert!((a ^ b).count_ones() >= 7);
            }
        }
        // Known value: level M, mask 4.
        assert_eq!(format_word(EcLevel::M, 4), 0b100010111111001);
    }

    #[test]
    fn config_validation() {
        assert!(CodeConfig::default().validate().is_ok());
        assert_eq!(CodeConfig::default().image_side(), 740);
        let bad = CodeConfig {
            module_px: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CodeConfig {
            mask_id: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
