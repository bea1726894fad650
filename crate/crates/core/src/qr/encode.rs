use super::matrix::ModuleMatrix;
use super::tables::{self, RsBlockSpec};
use super::{format_word, mask_applies, rs, CodeConfig};
use crate::error::{Error, Result};
use crate::image::PixelImage;

const MODE_BYTE: u32 = 0b0100;
const PAD_BYTES: [u8; 2] = [0xec, 0x11];

/// Version-determined module layout shared by the encoder and decoder.
#[derive(Debug, Clone)]
pub struct Layout {
    /// Function patterns drawn (format cells reserved as light).
    pub base: ModuleMatrix,
    /// Format-bit cells of the copy around the top-left finder, bit 0 first.
    pub format_primary: [(usize, usize); 15],
    /// Format-bit cells of the copy split between the other two finders.
    pub format_secondary: [(usize, usize); 15],
    /// Data/EC module cells in codeword bit order, remainder cells last.
    pub placement: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(version: u8) -> Result<Self> {
        if !(tables::MIN_VERSION..=tables::MAX_VERSION).contains(&version) {
            return Err(Error::InvalidConfig(format!("version {version} unsupported")));
        }
        let n = tables::side(version);
        let mut m = ModuleMatrix::new_light(n);

        for i in 0..n {
            m.set_function(6, i, i % 2 == 1);
            m.set_function(i, 6, i % 2 == 1);
        }
        for (cr, cc) in [(3, 3), (3, n - 4), (n - 4, 3)] {
            for dr in -4i64..=4 {
                for dc in -4i64..=4 {
                    let (r, c) = (cr as i64 + dr, cc as i64 + dc);
                    if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
                        continue;
                    }
                    let dist = dr.abs().max(dc.abs());
                    m.set_function(r as usize, c as usize, dist == 2 || dist == 4);
                }
            }
        }
        let align = tables::alignment_positions(version);
        for &ar in &align {
            for &ac in &align {
                let on_finder = (ar == 6 && ac == 6) || (ar == 6 && ac == n - 7) || (ar == n - 7 && ac == 6);
                if on_finder {
                    continue;
                }
                for dr in -2i64..=2 {
                    for dc in -2i64..=2 {
                        let dist = dr.abs().max(dc.abs());
                        m.set_function((ar as i64 + dr) as usize, (ac as i64 + dc) as usize, dist == 1);
                    }
                }
            }
        }

        let mut format_primary = [(0, 0); 15];
        let mut format_secondary = [(0, 0); 15];
        for (i, cell) in format_primary.iter_mut().enumerate() {
            *cell = match i {
                0..=5 => (i, 8),
                6 => (7, 8),
                7 => (8, 8),
                8 => (8, 7),
                _ => (8, 14 - i),
            };
        }
        for (i, cell) in format_secondary.iter_mut().enumerate() {
            *cell = if i < 8 { (8, n - 1 - i) } else { (n - 15 + i, 8) };
        }
        for &(r, c) in format_primary.iter().chain(&format_secondary) {
            m.set_function(r, c, true);
        }
        m.set_function(n - 8, 8, false);

        let mut placement = Vec::with_capacity(tables::raw_data_modules(version));
        let mut right = n as i64 - 1;
        while right >= 1 {
            if right == 6 {
                right = 5;
            }
            let upward = (right + 1) & 2 == 0;
            for vert in 0..n {
                for j in 0..2 {
                    let c = (right - j) as usize;
                    let r = if upward { n - 1 - vert } else { vert };
                    if !m.is_function(r, c) {
                        placement.push((r, c));
                    }
                }
            }
            right -= 2;
        }
        debug_assert_eq!(placement.len(), tables::raw_data_modules(version));

        Ok(Layout {
            base: m,
            format_primary,
            format_secondary,
            placement,
        })
    }

    /// Cells of codeword `index` in the interleaved stream, most significant bit first.
    pub fn codeword_cells(&self, index: usize) -> &[(usize, usize)] {
        &self.placement[8 * index..8 * index + 8]
    }
}

/// For each RS block, the positions of its codewords (data then EC) in the
/// interleaved codeword stream.
pub fn block_stream_positions(spec: &RsBlockSpec) -> Vec<Vec<usize>> {
    let blocks = spec.block_count();
    let ec = spec.ec_codewords_per_block;
    let max_data = spec.data_codewords_per_block.iter().copied().max().unwrap_or(0);
    let mut positions: Vec<Vec<usize>> = spec
        .data_codewords_per_block
        .iter()
        .map(|&d| Vec::with_capacity(d + ec))
        .collect();
    let mut next = 0;
    for i in 0..max_data {
        for (b, &d) in spec.data_codewords_per_block.iter().enumerate() {
            if i < d {
                positions[b].push(next);
                next += 1;
            }
        }
    }
    for _ in 0..ec {
        for block in positions.iter_mut().take(blocks) {
            block.push(next);
            next += 1;
        }
    }
    positions
}

/// Which cells are function modules for this configuration's version.
pub fn classify_modules(cfg: &CodeConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    Ok(Layout::new(cfg.version)?.base.function_mask().to_vec())
}

struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    fn push(&mut self, value: u32, width: usize) {
        for i in (0..width).rev() {
            if self.len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }
}

/// Data codewords for a byte-mode payload: mode, count, data, terminator,
/// zero bits to the byte boundary, then alternating 0xEC/0x11 padding.
pub fn data_codewords(payload: &[u8], cfg: &CodeConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let spec = cfg.block_spec()?;
    let capacity = spec.byte_capacity();
    if payload.len() > capacity {
        return Err(Error::CapacityExceeded {
            len: payload.len(),
            capacity,
        });
    }
    let capacity_bits = spec.data_codewords() * 8;
    let mut w = BitWriter {
        bytes: Vec::new(),
        len: 0,
    };
    w.push(MODE_BYTE, 4);
    w.push(payload.len() as u32, 8);
    for &b in payload {
        w.push(u32::from(b), 8);
    }
    let terminator = (capacity_bits - w.len).min(4);
    w.push(0, terminator);
    let mut bytes = w.bytes;
    for pad in PAD_BYTES.iter().cycle() {
        if bytes.len() >= spec.data_codewords() {
            break;
        }
        bytes.push(*pad);
    }
    Ok(bytes)
}

/// Number of leading data-stream bits fixed by the payload and terminator.
pub fn occupied_bits(payload_len: usize, cfg: &CodeConfig) -> Result<usize> {
    let spec = cfg.block_spec()?;
    let used = 12 + 8 * payload_len;
    Ok((used + 4).min(spec.data_codewords() * 8))
}

/// Appends EC codewords per block and interleaves into transmission order.
pub fn interleave(data: &[u8], spec: &RsBlockSpec) -> Vec<u8> {
    let positions = block_stream_positions(spec);
    let mut stream = vec![0u8; spec.total_codewords];
    let mut offset = 0;
    for (block, pos) in spec.data_codewords_per_block.iter().zip(&positions) {
        let chunk = &data[offset..offset + block];
        offset += block;
        let ec = rs::rs_encode(chunk, spec.ec_codewords_per_block);
        for (&p, &cw) in pos.iter().zip(chunk.iter().chain(&ec)) {
            stream[p] = cw;
        }
    }
    stream
}

/// Builds the symbol for a full set of data codewords (padding included).
pub fn encode_codewords(data: &[u8], cfg: &CodeConfig) -> Result<ModuleMatrix> {
    cfg.validate()?;
    let spec = cfg.block_spec()?;
    if data.len() != spec.data_codewords() {
        return Err(Error::InvalidConfig(format!(
            "expected {} data codewords, got {}",
            spec.data_codewords(),
            data.len()
        )));
    }
    let layout = Layout::new(cfg.version)?;
    let stream = interleave(data, &spec);
    let mut m = layout.base.clone();
    for (i, &(r, c)) in layout.placement.iter().enumerate() {
        let dark = i < stream.len() * 8 && (stream[i / 8] >> (7 - i % 8)) & 1 == 1;
        m.set_light(r, c, !dark ^ mask_applies(cfg.mask_id, r, c));
    }
    let format = format_word(cfg.ec_level, cfg.mask_id);
    for i in 0..15 {
        let dark = (format >> i) & 1 == 1;
        let (r, c) = layout.format_primary[i];
        m.set_light(r, c, !dark);
        let (r, c) = layout.format_secondary[i];
        m.set_light(r, c, !dark);
    }
    Ok(m)
}

/// Encodes a byte-mode payload with the configured version, level and mask.
pub fn encode(payload: &[u8], cfg: &CodeConfig) -> Result<ModuleMatrix> {
    let data = data_codewords(payload, cfg)?;
    encode_codewords(&data, cfg)
}

/// Renders modules as s×s blocks (light 1.0, dark 0.0) inside a light quiet zone.
pub fn rasterize(matrix: &ModuleMatrix, cfg: &CodeConfig) -> PixelImage {
    let s = cfg.module_px;
    let q = cfg.quiet_px;
    let n = matrix.side();
    let side = n * s + 2 * q;
    let mut data = vec![1.0; side * side];
    for r in 0..n {
        for c in 0..n {
            if matrix.is_light(r, c) {
                continue;
            }
            for y in q + r * s..q + (r + 1) * s {
                data[y * side + q + c * s..y * side + q + (c + 1) * s].fill(0.0);
            }
        }
    }
    let geometry = crate::image::GridGeometry {
        modules: n,
        module_px: s,
        quiet_px: q,
    };
    PixelImage::from_raw(side, side, 1, data, Some(geometry))
}
