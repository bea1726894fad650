//! Bend a QR code toward a picture without touching its payload.
//!
//! After the terminator, the remaining data codewords are padding that the
//! decoder never reads. Any choice of those bits yields a valid symbol for the
//! same payload; each bit flip moves one data module plus the EC modules its
//! codeword feeds. Because RS encoding is linear over GF(2), the set of
//! reachable symbols is `y ⊕ span(footprints)`, and choosing a good member is
//! linear algebra.

use bitvec::prelude::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{GridGeometry, PixelImage};
use crate::qr::encode::data_codewords;
use crate::qr::{encode_codewords, CodeConfig, ModuleMatrix};
use crate::srl::{to_grayscale, CentralFilter, GaussianKernel};

pub type Footprint = BitVec<u64, Lsb0>;

/// One free payload bit and the modules that flip with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisVector {
    /// Bit position in the data codeword stream, most significant bit first.
    pub bit: usize,
    /// Row-major set of modules toggled by flipping `bit`.
    pub footprint: Footprint,
}

#[derive(Debug, Clone)]
pub struct FreeBitBasis {
    /// Symbol with all padding at its standard value.
    pub base: ModuleMatrix,
    pub vectors: Vec<BasisVector>,
}

impl FreeBitBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `base` with the footprints of the chosen vectors XOR-ed in.
    pub fn apply(&self, chosen: &[usize]) -> ModuleMatrix {
        let side = self.base.side();
        let mut acc = Footprint::repeat(false, side * side);
        for &i in chosen {
            acc ^= self.vectors[i].footprint.as_bitslice();
        }
        apply_footprint(&self.base, &acc)
    }
}

fn apply_footprint(base: &ModuleMatrix, fp: &BitSlice<u64, Lsb0>) -> ModuleMatrix {
    let mut out = base.clone();
    let side = base.side();
    for k in fp.iter_ones() {
        out.flip(k / side, k % side);
    }
    out
}

/// Number of free bits a byte-mode payload of `len` bytes leaves: every bit of
/// the codewords after mode, count, data and terminator.
pub fn free_bit_count(len: usize, cfg: &CodeConfig) -> Result<usize> {
    let spec = cfg.block_spec()?;
    let occupied = (4 + 8 + 8 * len + 4).div_ceil(8);
    Ok(8 * spec.data_codewords().saturating_sub(occupied))
}

/// Footprint of every free bit, found by re-encoding with that bit flipped.
pub fn free_bit_basis(payload: &[u8], cfg: &CodeConfig) -> Result<FreeBitBasis> {
    let data = data_codewords(payload, cfg)?;
    let base = encode_codewords(&data, cfg)?;
    let free = free_bit_count(payload.len(), cfg)?;
    if free == 0 {
        return Err(Error::NoFreeBits);
    }
    let first = data.len() * 8 - free;
    let vectors = (first..data.len() * 8)
        .into_par_iter()
        .map(|bit| {
            let mut flipped = data.clone();
            flipped[bit / 8] ^= 0x80 >> (bit % 8);
            let m = encode_codewords(&flipped, cfg)?;
            let footprint: Footprint = m.cells().iter().zip(base.cells()).map(|(a, b)| a != b).collect();
            Ok(BasisVector { bit, footprint })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FreeBitBasis { base, vectors })
}

/// What each module should look like and how much that matters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetPattern {
    pub side: usize,
    /// Row-major, true = light.
    pub desired: Vec<bool>,
    /// Row-major, nonnegative.
    pub weight: Vec<f64>,
}

impl TargetPattern {
    /// Uniform-weight pattern that asks for exactly `m`.
    pub fn from_matrix(m: &ModuleMatrix) -> Self {
        TargetPattern {
            side: m.side(),
            desired: m.cells().to_vec(),
            weight: vec![1.0; m.side() * m.side()],
        }
    }

    /// Weighted agreement of `m` with the pattern over non-function modules.
    pub fn agreement(&self, m: &ModuleMatrix) -> f64 {
        (0..self.side * self.side)
            .filter(|&k| !m.function_mask()[k] && m.cells()[k] == self.desired[k])
            .map(|k| self.weight[k])
            .sum()
    }
}

/// Reads a reference image module by module: desired colour is the binarized
/// central mean; weight is the kernel-weighted contrast 2·|Σ w·(G − ½)|.
/// References that do not match the configured raster size are resampled.
pub fn desired_pattern(reference: &PixelImage, cfg: &CodeConfig) -> Result<TargetPattern> {
    cfg.validate()?;
    let grid: GridGeometry = cfg.geometry();
    let side_px = grid.image_side();
    let resampled;
    let image = match reference.grid() {
        Some(g) if g == grid => reference,
        _ if reference.width() == side_px && reference.height() == side_px => reference,
        _ => {
            resampled = reference.resized(side_px, side_px);
            &resampled
        }
    };
    let gray = to_grayscale(image);
    let kernel = GaussianKernel::new(grid.module_px);
    let filter = CentralFilter::new(grid.module_px);
    let m = grid.modules;
    let s = grid.module_px;
    let mut desired = Vec::with_capacity(m * m);
    let mut weight = Vec::with_capacity(m * m);
    for k in 0..m * m {
        let (x0, y0) = grid.module_origin(k / m, k % m);
        desired.push(filter.mean_at(&gray.values, gray.width, x0, y0) >= 0.5);
        let mut contrast = 0.0;
        for i in 0..s {
            for j in 0..s {
                contrast += kernel.weight(i, j) * (gray.get(x0 + j, y0 + i) - 0.5);
            }
        }
        weight.push((2.0 * contrast).abs());
    }
    Ok(TargetPattern {
        side: m,
        desired,
        weight,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    /// Weighted agreement of the plain symbol.
    pub before: f64,
    /// Weighted agreement of the transformed symbol.
    pub after: f64,
    /// Total weight over non-function modules (the best possible agreement).
    pub attainable: f64,
    pub free_bits: usize,
    pub modules_changed: usize,
    /// Set when the payload left no padding to work with; the plain symbol is returned.
    pub no_free_bits: bool,
}

/// Picks padding bits so the symbol resembles `pattern` as closely as the
/// free bits allow. The result always decodes to `payload` with no corrections.
pub fn transform(payload: &[u8], cfg: &CodeConfig, pattern: &TargetPattern) -> Result<(ModuleMatrix, MatchReport)> {
    let y = crate::qr::encode(payload, cfg)?;
    if pattern.side != y.side()
        || pattern.desired.len() != y.side() * y.side()
        || pattern.weight.len() != pattern.desired.len()
    {
        return Err(Error::ExtentMismatch(format!(
            "pattern of side {} for a {}-module symbol",
            pattern.side,
            y.side()
        )));
    }
    if pattern.weight.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidConfig("pattern weights must be nonnegative".into()));
    }
    let attainable = (0..y.side() * y.side())
        .filter(|&k| !y.function_mask()[k])
        .map(|k| pattern.weight[k])
        .sum();
    let before = pattern.agreement(&y);
    let basis = match free_bit_basis(payload, cfg) {
        Ok(b) => b,
        Err(Error::NoFreeBits) => {
            return Ok((
                y,
                MatchReport {
                    before,
                    after: before,
                    attainable,
                    free_bits: 0,
                    modules_changed: 0,
                    no_free_bits: true,
                },
            ))
        }
        Err(e) => return Err(e),
    };

    let chosen = solve(&basis, pattern);
    let candidate = apply_footprint(&basis.base, &chosen);
    let after = pattern.agreement(&candidate);
    let out = if after >= before { candidate } else { y };
    let report = MatchReport {
        before,
        after: after.max(before),
        attainable,
        free_bits: basis.len(),
        modules_changed: out.differing_cells(&basis.base).len(),
        no_free_bits: false,
    };
    Ok((out, report))
}

/// Gauss–Jordan elimination with pivots taken on modules in descending
/// weight order, exact matching on pivot modules, then greedy toggling of
/// pivot vectors while agreement strictly improves. Returns the combined
/// footprint to apply to the base symbol.
fn solve(basis: &FreeBitBasis, pattern: &TargetPattern) -> Footprint {
    let side = basis.base.side();
    let n = side * side;
    let mut order: Vec<usize> = (0..n).filter(|&k| !basis.base.function_mask()[k]).collect();
    order.sort_by(|&a, &b| pattern.weight[b].total_cmp(&pattern.weight[a]).then(a.cmp(&b)));

    let mut rows: Vec<Footprint> = basis.vectors.iter().map(|v| v.footprint.clone()).collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (module, row)
    let mut used = vec![false; rows.len()];
    for &module in &order {
        if pivots.len() == rows.len() {
            break;
        }
        let Some(p) = (0..rows.len()).find(|&r| !used[r] && rows[r][module]) else {
            continue;
        };
        used[p] = true;
        let pivot_row = rows[p].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != p && row[module] {
                *row ^= pivot_row.as_bitslice();
            }
        }
        pivots.push((module, p));
    }

    // Pivot rows are zero on every other pivot module, so each pivot module
    // can be matched independently.
    let mut acc = Footprint::repeat(false, n);
    for &(module, r) in &pivots {
        let current = basis.base.cells()[module] ^ acc[module];
        if current != pattern.desired[module] {
            acc ^= rows[r].as_bitslice();
        }
    }

    let mismatch_gain = |acc: &Footprint, row: &Footprint| -> f64 {
        row.iter_ones()
            .map(|k| {
                let matches = (basis.base.cells()[k] ^ acc[k]) == pattern.desired[k];
                if matches {
                    -pattern.weight[k]
                } else {
                    pattern.weight[k]
                }
            })
            .sum()
    };
    for _ in 0..64 {
        let mut improved = false;
        for &(_, r) in &pivots {
            if mismatch_gain(&acc, &rows[r]) > 1e-12 {
                acc ^= rows[r].as_bitslice();
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::{decode_matrix, encode, rasterize};

    const THANKS: &[u8] = b"Thanks reviewer!";

    #[test]
    fn free_bits_for_the_default_message() {
        let cfg = CodeConfig::default();
        assert_eq!(free_bit_count(THANKS.len(), &cfg).unwrap(), 8 * (44 - 18));
        let basis = free_bit_basis(THANKS, &cfg).unwrap();
        assert_eq!(basis.len(), 208);
    }

    #[test]
    fn saturated_payload_has_no_free_bits() {
        let cfg = CodeConfig::default();
        let full = vec![b'x'; 42];
        assert!(matches!(free_bit_basis(&full, &cfg), Err(Error::NoFreeBits)));
        let (m, report) = transform(&full, &cfg, &TargetPattern::from_matrix(&encode(&full, &cfg).unwrap())).unwrap();
        assert!(report.no_free_bits);
        assert_eq!(m, encode(&full, &cfg).unwrap());
        assert_eq!(free_bit_count(41, &cfg).unwrap(), 8);
    }

    #[test]
    fn footprints_avoid_function_modules() {
        let cfg = CodeConfig::default();
        let basis = free_bit_basis(b"abc", &cfg).unwrap();
        for v in &basis.vectors {
            assert!(v.footprint.iter_ones().all(|k| !basis.base.function_mask()[k]));
            assert!(v.footprint.count_ones() >= 1);
        }
    }

    #[test]
    fn identity_pattern_changes_nothing() {
        let cfg = CodeConfig::default();
        let y = encode(THANKS, &cfg).unwrap();
        let (out, report) = transform(THANKS, &cfg, &TargetPattern::from_matrix(&y)).unwrap();
        assert_eq!(out, y);
        assert_eq!(report.modules_changed, 0);
        assert_eq!(report.after, report.attainable);
    }

    #[test]
    fn single_weighted_module_is_matched() {
        let cfg = CodeConfig::default();
        let basis = free_bit_basis(THANKS, &cfg).unwrap();
        let y = &basis.base;
        let module = basis.vectors[17].footprint.first_one().unwrap();
        let mut pattern = TargetPattern::from_matrix(y);
        pattern.desired[module] = !pattern.desired[module];
        pattern.weight = vec![0.0; pattern.weight.len()];
        pattern.weight[module] = 1.0;
        let (out, _) = transform(THANKS, &cfg, &pattern).unwrap();
        assert_eq!(out.cells()[module], pattern.desired[module]);
        assert_eq!(decode_matrix(&out).unwrap().payload, THANKS);
    }

    #[test]
    fn desired_pattern_of_own_raster_is_identity() {
        let cfg = CodeConfig::default();
        let y = encode(THANKS, &cfg).unwrap();
        let p = desired_pattern(&rasterize(&y, &cfg), &cfg).unwrap();
        assert_eq!(p.desired, y.cells());
        assert!(p.weight.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn mid_gray_reference_asks_for_light_with_no_weight() {
        let cfg = CodeConfig::default();
        let gray = PixelImage::new(740, 740, 3, 0.5).unwrap();
        let p = desired_pattern(&gray, &cfg).unwrap();
        assert!(p.desired.iter().all(|&d| d));
        assert!(p.weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn checkerboard_reference_alternates() {
        let cfg = CodeConfig {
            version: 1,
            module_px: 6,
            quiet_px: 0,
            ..CodeConfig::default()
        };
        let side = 21 * 6;
        let data = (0..side * side)
            .map(|p| {
                if ((p % side) / 6 + (p / side) / 6) % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let img = PixelImage::from_data(side, side, 1, data).unwrap();
        let p = desired_pattern(&img, &cfg).unwrap();
        for k in 0..21 * 21 {
            assert_eq!(p.desired[k], (k / 21 + k % 21) % 2 == 0);
        }
    }

    #[test]
    fn resamples_mismatched_references() {
        let cfg = CodeConfig::default();
        let img = PixelImage::new(100, 100, 1, 0.0).unwrap();
        let p = desired_pattern(&img, &cfg).unwrap();
        assert!(p.desired.iter().all(|&d| !d));
    }
}
