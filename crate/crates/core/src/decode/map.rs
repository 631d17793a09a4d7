//! Maximum-likelihood (MAP for uniform codewords) block decoders.

use crate::construct::rm_generator;
use crate::error::{Error, Result};
use crate::gf2::BitMatrix;

/// Codebook row maximising `⟨l, 1 - 2c⟩`; the lowest row index wins ties.
pub fn map_decode(l: &[f64], codebook: &BitMatrix) -> Result<Vec<u8>> {
    if codebook.cols() != l.len() {
        return Err(Error::DimensionMismatch(format!(
            "codebook rows have length {}, LLR vector {}",
            codebook.cols(),
            l.len()
        )));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for t in 0..codebook.rows() {
        let score: f64 = l
            .iter()
            .enumerate()
            .map(|(j, &v)| if codebook.get(t, j) { -v } else { v })
            .sum();
        if score > best.0 {
            best = (score, t);
        }
    }
    Ok(codebook.row_bits(best.1))
}

/// In-place unnormalised Walsh-Hadamard transform:
/// `x[a] ← Σ_z x[z] (-1)^{popcount(a & z)}`.
pub fn walsh_hadamard(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*a, *b);
                *a = u + v;
                *b = u - v;
            }
        }
        h *= 2;
    }
}

/// Evaluates the affine function `z ↦ a·z ⊕ b` on `F_2^m` as a bit vector.
pub(crate) fn affine_codeword(a: u32, b: bool, len: usize) -> Vec<u8> {
    (0..len as u32)
        .map(|z| ((a & z).count_ones() as u8 & 1) ^ b as u8)
        .collect()
}

/// Index of the largest `|H[a]|` (lowest `a` on ties) and whether the
/// complemented codeword is chosen (`H[a] < 0`).
fn fht_argmax(h: &[f64]) -> (usize, f64) {
    let mut best = (0, h[0]);
    for (a, &v) in h.iter().enumerate().skip(1) {
        if v.abs() > best.1.abs() {
            best = (a, v);
        }
    }
    best
}

/// MAP decoding of the full first-order code `RM(m', 1)` of length `|l|`
/// through one Walsh-Hadamard transform. The codeword is `z ↦ a·z ⊕ b` for
/// the coordinate `a` of largest magnitude, with `b = 1` when that
/// coordinate is negative. An all-zero input returns the all-zero codeword.
pub fn fht_decode(l: &[f64]) -> Result<Vec<u8>> {
    if !l.len().is_power_of_two() || l.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "FHT decoding needs a power-of-two length, got {}",
            l.len()
        )));
    }
    let mut h = l.to_vec();
    walsh_hadamard(&mut h);
    let (a, v) = fht_argmax(&h);
    Ok(affine_codeword(a as u32, v < 0.0, l.len()))
}

/// [`fht_decode`] for a code given by its generator, which must span exactly
/// `RM(m', 1)`.
pub fn fht_decode_code(l: &[f64], generator: &BitMatrix) -> Result<Vec<u8>> {
    let len = generator.cols();
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::DimensionMismatch(format!(
            "code length {len} is not a power of two"
        )));
    }
    let m = len.trailing_zeros() as usize;
    let rm1 = rm_generator(m, 1)?;
    let rank = generator.rank();
    if rank != m + 1 || generator.vstack(&rm1)?.rank() != m + 1 {
        return Err(Error::InvalidParameter(format!(
            "code is not the full first-order RM({m},1) code; use MAP decoding"
        )));
    }
    if l.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "LLR length {} does not match code length {len}",
            l.len()
        )));
    }
    fht_decode(l)
}

/// Exact MAP decoder for a linear code of length `2^m`.
///
/// Codes containing `RM(m, 1)` are decoded by running one Walsh-Hadamard
/// transform per coset of `RM(m, 1)` in the code; anything else falls back
/// to scoring the full codebook.
#[derive(Debug, Clone)]
pub struct MapDecoder {
    len: usize,
    mode: MapMode,
}

#[derive(Debug, Clone)]
enum MapMode {
    /// BPSK images of the coset representatives.
    CosetFht(Vec<Vec<f64>>, Vec<Vec<u8>>),
    Codebook(BitMatrix),
}

/// Largest code dimension decoded by brute force.
const MAX_CODEBOOK_DIM: usize = 20;

impl MapDecoder {
    pub fn new(generator: &BitMatrix) -> Result<Self> {
        let len = generator.cols();
        let k = generator.rank();
        if len.is_power_of_two() && len >= 2 {
            let m = len.trailing_zeros() as usize;
            let rm1 = rm_generator(m, 1)?;
            if generator.vstack(&rm1)?.rank() == k {
                // Rows that extend RM(m,1) to the full code.
                let mut basis = rm1.clone();
                let mut extra = Vec::new();
                for i in 0..generator.rows() {
                    let row = generator.select_rows(&[i])?;
                    let stacked = basis.vstack(&row)?;
                    if stacked.rank() > basis.rank() {
                        basis = stacked;
                        extra.push(generator.row_bits(i));
                    }
                }
                if extra.len() > MAX_CODEBOOK_DIM {
                    return Err(Error::InvalidParameter(format!(
                        "{} cosets of RM({m},1) are too many to enumerate",
                        extra.len()
                    )));
                }
                let reps: Vec<Vec<u8>> = (0u32..1 << extra.len())
                    .map(|mask| {
                        let mut c = vec![0u8; len];
                        for (i, row) in extra.iter().enumerate() {
                            if (mask >> i) & 1 == 1 {
                                c.iter_mut().zip(row).for_each(|(x, y)| *x ^= y);
                            }
                        }
                        c
                    })
                    .collect();
                let signs = reps
                    .iter()
                    .map(|c| c.iter().map(|&b| 1.0 - 2.0 * b as f64).collect())
                    .collect();
                return Ok(MapDecoder {
                    len,
                    mode: MapMode::CosetFht(signs, reps),
                });
            }
        }
        if k > MAX_CODEBOOK_DIM {
            return Err(Error::InvalidParameter(format!(
                "code dimension {k} is too large for exhaustive MAP decoding"
            )));
        }
        let basis_rows: Vec<usize> = {
            let mut rows = Vec::new();
            let mut acc: Option<BitMatrix> = None;
            for i in 0..generator.rows() {
                let row = generator.select_rows(&[i])?;
                let next = match &acc {
                    None => row,
                    Some(a) => a.vstack(&row)?,
                };
                if next.rank() > acc.as_ref().map_or(0, BitMatrix::rank) {
                    rows.push(i);
                    acc = Some(next);
                }
            }
            rows
        };
        let basis = generator.select_rows(&basis_rows)?;
        let codebook = BitMatrix::from_fn(1 << k, len, |t, j| {
            (0..k).fold(false, |acc, i| acc ^ ((t >> i) & 1 == 1 && basis.get(i, j)))
        });
        Ok(MapDecoder {
            len,
            mode: MapMode::Codebook(codebook),
        })
    }

    pub fn decode(&self, l: &[f64]) -> Result<Vec<u8>> {
        if l.len() != self.len {
            return Err(Error::DimensionMismatch(format!(
                "LLR length {} does not match code length {}",
                l.len(),
                self.len
            )));
        }
        match &self.mode {
            MapMode::Codebook(cb) => map_decode(l, cb),
            MapMode::CosetFht(signs, reps) => {
                let mut best = (f64::NEG_INFINITY, 0usize, 0usize, false);
                let mut h = vec![0.0; self.len];
                for (e, s) in signs.iter().enumerate() {
                    h.iter_mut()
                        .zip(l.iter().zip(s))
                        .for_each(|(x, (a, b))| *x = a * b);
                    walsh_hadamard(&mut h);
                    let (a, v) = fht_argmax(&h);
                    if v.abs() > best.0 {
                        best = (v.abs(), e, a, v < 0.0);
                    }
                }
                let (_, e, a, b) = best;
                let mut c = affine_codeword(a as u32, b, self.len);
                c.iter_mut().zip(&reps[e]).for_each(|(x, y)| *x ^= y);
                Ok(c)
            }
        }
    }
}
