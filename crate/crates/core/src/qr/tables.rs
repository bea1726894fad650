//! Version and error-correction tables for QR versions 1–5 (ISO/IEC 18004).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_VERSION: u8 = 1;
pub const MAX_VERSION: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EcLevel {
    L,
    M,
    Q,
    H,
}

impl EcLevel {
    pub const ALL: [EcLevel; 4] = [EcLevel::L, EcLevel::M, EcLevel::Q, EcLevel::H];

    fn ordinal(self) -> usize {
        match self {
            EcLevel::L => 0,
            EcLevel::M => 1,
            EcLevel::Q => 2,
            EcLevel::H => 3,
        }
    }

    /// Two-bit indicator carried in the format information.
    pub fn format_bits(self) -> u8 {
        match self {
            EcLevel::L => 0b01,
            EcLevel::M => 0b00,
            EcLevel::Q => 0b11,
            EcLevel::H => 0b10,
        }
    }

    pub fn from_format_bits(bits: u8) -> EcLevel {
        match bits & 0b11 {
            0b01 => EcLevel::L,
            0b00 => EcLevel::M,
            0b11 => EcLevel::Q,
            _ => EcLevel::H,
        }
    }

    /// Nominal fraction of codewords the level can restore (7/15/25/30 %).
    pub fn nominal_capacity(self) -> f64 {
        match self {
            EcLevel::L => 0.07,
            EcLevel::M => 0.15,
            EcLevel::Q => 0.25,
            EcLevel::H => 0.30,
        }
    }
}

impl std::fmt::Display for EcLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EcLevel::L => "L",
            EcLevel::M => "M",
            EcLevel::Q => "Q",
            EcLevel::H => "H",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EcLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L" => Ok(EcLevel::L),
            "M" => Ok(EcLevel::M),
            "Q" => Ok(EcLevel::Q),
            "H" => Ok(EcLevel::H),
            other => Err(Error::InvalidConfig(format!(
                "unknown error correction level {other:?}"
            ))),
        }
    }
}

// Indexed [ec ordinal][version - 1].
const ECC_CODEWORDS_PER_BLOCK: [[usize; 5]; 4] = [
    [7, 10, 15, 20, 26],
    [10, 16, 26, 18, 24],
    [13, 22, 18, 26, 18],
    [17, 28, 22, 16, 22],
];

const NUM_BLOCKS: [[usize; 5]; 4] = [[1, 1, 1, 1, 1], [1, 1, 1, 2, 2], [1, 1, 2, 2, 4], [1, 1, 2, 4, 4]];

fn check_version(version: u8) -> Result<()> {
    if (MIN_VERSION..=MAX_VERSION).contains(&version) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "version {version} unsupported (supported {MIN_VERSION}..={MAX_VERSION})"
        )))
    }
}

/// Module grid side for a version.
pub fn side(version: u8) -> usize {
    4 * version as usize + 17
}

/// Number of modules available for codewords and remainder bits.
pub fn raw_data_modules(version: u8) -> usize {
    let v = version as usize;
    let mut n = (16 * v + 128) * v + 64;
    if v >= 2 {
        let align = v / 7 + 2;
        n -= (25 * align - 10) * align - 55;
    }
    n
}

/// Centers of alignment patterns along one axis.
pub fn alignment_positions(version: u8) -> Vec<usize> {
    match version {
        1 => vec![],
        v => vec![6, side(v) - 7],
    }
}

/// Reed–Solomon block structure for a version and error-correction level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsBlockSpec {
    pub total_codewords: usize,
    pub ec_codewords_per_block: usize,
    /// Data codewords of each block, in interleaving order (short blocks first).
    pub data_codewords_per_block: Vec<usize>,
}

impl RsBlockSpec {
    pub fn new(version: u8, ec: EcLevel) -> Result<Self> {
        check_version(version)?;
        let total = raw_data_modules(version) / 8;
        let ec_len = ECC_CODEWORDS_PER_BLOCK[ec.ordinal()][version as usize - 1];
        let blocks = NUM_BLOCKS[ec.ordinal()][version as usize - 1];
        let short_len = total / blocks;
        let num_short = blocks - total % blocks;
        let data_codewords_per_block = (0..blocks)
            .map(|i| short_len - ec_len + usize::from(i >= num_short))
            .collect();
        Ok(RsBlockSpec {
            total_codewords: total,
            ec_codewords_per_block: ec_len,
            data_codewords_per_block,
        })
    }

    pub fn block_count(&self) -> usize {
        self.data_codewords_per_block.len()
    }

    pub fn data_codewords(&self) -> usize {
        self.data_codewords_per_block.iter().sum()
    }

    /// Codeword errors each block can correct.
    pub fn correctable_per_block(&self) -> usize {
        self.ec_codewords_per_block / 2
    }

    /// Largest byte-mode payload: 4-bit mode plus 8-bit count precede the data.
    pub fn byte_capacity(&self) -> usize {
        (self.data_codewords() * 8 - 12) / 8
    }
}
