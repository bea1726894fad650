//! Reed–Solomon coding over GF(256) as used by QR symbols: generator roots
//! α^0 … α^(n-1), codewords stored highest-degree coefficient first.

use super::gf256;

/// Correction failed: more errors than the block can locate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Uncorrectable;

impl std::fmt::Display for Uncorrectable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("too many codeword errors to correct")
    }
}

impl std::error::Error for Uncorrectable {}

/// Monic generator polynomial Π (x − α^i), i in 0..degree, highest degree first.
pub fn generator(degree: usize) -> Vec<u8> {
    let mut g = vec![1u8];
    for i in 0..degree {
        let root = gf256::exp(i);
        let mut next = vec![0u8; g.len() + 1];
        for (j, &c) in g.iter().enumerate() {
            next[j] ^= c;
            next[j + 1] ^= gf256::mul(c, root);
        }
        g = next;
    }
    g
}

/// Computes `ec_len` error-correction codewords for a data block.
pub fn rs_encode(data: &[u8], ec_len: usize) -> Vec<u8> {
    let g = generator(ec_len);
    let mut rem = vec![0u8; ec_len];
    for &d in data {
        let factor = d ^ rem[0];
        rem.rotate_left(1);
        rem[ec_len - 1] = 0;
        if factor != 0 {
            for (r, &gc) in rem.iter_mut().zip(&g[1..]) {
                *r ^= gf256::mul(gc, factor);
            }
        }
    }
    rem
}

fn syndromes(block: &[u8], ec_len: usize) -> Vec<u8> {
    (0..ec_len)
        .map(|i| {
            let x = gf256::exp(i);
            block.iter().fold(0u8, |acc, &c| gf256::mul(acc, x) ^ c)
        })
        .collect()
}

/// Berlekamp–Massey; returns the error locator, lowest degree first.
fn error_locator(synd: &[u8]) -> Vec<u8> {
    let mut c = vec![1u8];
    let mut b = vec![1u8];
    let mut len = 0usize;
    let mut shift = 1usize;
    let mut last_disc = 1u8;
    for n in 0..synd.len() {
        let mut d = synd[n];
        for i in 1..=len.min(c.len() - 1) {
            d ^= gf256::mul(c[i], synd[n - i]);
        }
        if d == 0 {
            shift += 1;
            continue;
        }
        let coef = gf256::div(d, last_disc);
        let mut updated = c.clone();
        if updated.len() < b.len() + shift {
            updated.resize(b.len() + shift, 0);
        }
        for (i, &bc) in b.iter().enumerate() {
            updated[i + shift] ^= gf256::mul(coef, bc);
        }
        if 2 * len <= n {
            b = c;
            len = n + 1 - len;
            last_disc = d;
            shift = 1;
        } else {
            shift += 1;
        }
        c = updated;
    }
    c.truncate(len + 1);
    c
}

/// Corrects a received block in place and returns the number of corrected
/// codewords. Fails rather than guessing when the error pattern cannot be
/// located consistently.
pub fn rs_correct(block: &mut [u8], ec_len: usize) -> Result<usize, Uncorrectable> {
    if ec_len == 0 || ec_len > block.len() || block.len() > 255 {
        return Err(Uncorrectable);
    }
    let synd = syndromes(block, ec_len);
    if synd.iter().all(|&s| s == 0) {
        return Ok(0);
    }
    let locator = error_locator(&synd);
    let degree = locator.len() - 1;
    if degree == 0 || degree > ec_len / 2 {
        return Err(Uncorrectable);
    }

    // Ω(x) = S(x)·Λ(x) mod x^ec_len
    let mut omega = vec![0u8; ec_len];
    for (i, &s) in synd.iter().enumerate() {
        for (j, &l) in locator.iter().enumerate() {
            if i + j < ec_len {
                omega[i + j] ^= gf256::mul(s, l);
            }
        }
    }
    // Formal derivative: only odd powers survive in characteristic 2.
    let derivative: Vec<u8> = locator
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| if i % 2 == 1 { c } else { 0 })
        .collect();

    let n = block.len();
    let mut fixes = Vec::with_capacity(degree);
    for pos in 0..n {
        let power = n - 1 - pos;
        let x_inv = gf256::exp(255 - power % 255);
        if gf256::eval_low_first(&locator, x_inv) != 0 {
            continue;
        }
        let denom = gf256::eval_low_first(&derivative, x_inv);
        if denom == 0 {
            return Err(Uncorrectable);
        }
        let x = gf256::exp(power);
        let magnitude = gf256::mul(x, gf256::div(gf256::eval_low_first(&omega, x_inv), denom));
        fixes.push((pos, magnitude));
    }
    if fixes.len() != degree {
        return Err(Uncorrectable);
    }
    for &(pos, mag) in &fixes {
        block[pos] ^= mag;
    }
    if syndromes(block, ec_len).iter().any(|&s| s != 0) {
        for &(pos, mag) in &fixes {
            block[pos] ^= mag;
        }
        return Err(Uncorrectable);
    }
    Ok(fixes.iter().filter(|&&(_, m)| m != 0).count())
}
