//! Aggregation of projected decisions back onto the full-length LLR vector.
//!
//! For a 1-D subspace `{0, z_q}` with highest set bit `h`, the coset of `z`
//! is `{z, z ⊕ z_q}`; its index is the smaller member with bit `h` removed.
//! These helpers work from that closed form instead of coset tables.

use crate::error::{Error, Result};
use crate::llr::boxplus;
use crate::project::Subspace1D;

#[inline]
fn high_bit(q: u32) -> u32 {
    31 - q.leading_zeros()
}

/// Index of the coset `{z, z ⊕ q}`.
#[inline]
pub fn coset_index(z: usize, q: u32) -> usize {
    let h = high_bit(q);
    let rep = if (z >> h) & 1 == 1 { z ^ q as usize } else { z };
    (rep & ((1 << h) - 1)) | ((rep >> (h + 1)) << h)
}

/// Members of coset `t`, smaller first.
#[inline]
pub fn coset_pair(t: usize, q: u32) -> (usize, usize) {
    let h = high_bit(q);
    let low = t & ((1 << h) - 1);
    let z0 = ((t >> h) << (h + 1)) | low;
    (z0, z0 ^ q as usize)
}

/// Projected LLRs onto the cosets of `{0, q}`, written into `out`.
#[inline]
pub(crate) fn project_into(l: &[f64], q: u32, out: &mut [f64]) {
    for (t, o) in out.iter_mut().enumerate() {
        let (a, b) = coset_pair(t, q);
        *o = boxplus(l[a], l[b]);
    }
}

/// `acc(z) += w (1 - 2 ŷ[z + B]) l(z ⊕ q)`.
#[inline]
pub(crate) fn accumulate_hard(l: &[f64], q: u32, y: &[u8], w: f64, acc: &mut [f64]) {
    for (t, &bit) in y.iter().enumerate() {
        let (a, b) = coset_pair(t, q);
        let s = if bit == 0 { w } else { -w };
        acc[a] += s * l[b];
        acc[b] += s * l[a];
    }
}

/// `acc(z) += w tanh(l̂[z + B] / 2) l(z ⊕ q)`.
#[inline]
pub(crate) fn accumulate_soft(l: &[f64], q: u32, lhat: &[f64], w: f64, acc: &mut [f64]) {
    for (t, &v) in lhat.iter().enumerate() {
        let (a, b) = coset_pair(t, q);
        let s = w * (0.5 * v).tanh();
        acc[a] += s * l[b];
        acc[b] += s * l[a];
    }
}

/// `acc(z) += w (l̂[z + B] ⊞ l(z ⊕ q))`.
#[inline]
pub(crate) fn accumulate_logsum(l: &[f64], q: u32, lhat: &[f64], w: f64, acc: &mut [f64]) {
    for (t, &v) in lhat.iter().enumerate() {
        let (a, b) = coset_pair(t, q);
        acc[a] += w * boxplus(v, l[b]);
        acc[b] += w * boxplus(v, l[a]);
    }
}

fn check<T>(l: &[f64], decisions: &[(Subspace1D, Vec<T>)], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = l.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::DimensionMismatch(format!("LLR length {n} is not a power of two")));
    }
    if decisions.is_empty() {
        return Err(Error::InvalidParameter("aggregation needs at least one decision".into()));
    }
    for (q, d) in decisions {
        if q.value() as usize >= n {
            return Err(Error::InvalidParameter(format!("subspace {} outside F_2^m", q.value())));
        }
        if d.len() != n / 2 {
            return Err(Error::DimensionMismatch(format!(
                "projected decision has length {}, expected {}",
                d.len(),
                n / 2
            )));
        }
    }
    match weights {
        None => Ok(vec![1.0 / decisions.len() as f64; decisions.len()]),
        Some(w) if w.len() == decisions.len() => Ok(w.to_vec()),
        Some(w) => Err(Error::DimensionMismatch(format!(
            "{} weights for {} decisions",
            w.len(),
            decisions.len()
        ))),
    }
}

/// Hard aggregation: the average over subspaces of `(1 - 2 ŷ_q[z + B_q])
/// l(z ⊕ z_q)`.
pub fn hard_aggregate(l: &[f64], decisions: &[(Subspace1D, Vec<u8>)]) -> Result<Vec<f64>> {
    weighted_hard_aggregate(l, decisions, None)
}

pub fn weighted_hard_aggregate(
    l: &[f64],
    decisions: &[(Subspace1D, Vec<u8>)],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let w = check(l, decisions, weights)?;
    let mut acc = vec![0.0; l.len()];
    for ((q, y), &wq) in decisions.iter().zip(&w) {
        accumulate_hard(l, q.value(), y, wq, &mut acc);
    }
    Ok(acc)
}

/// Soft aggregation: the average over subspaces of
/// `tanh(l̂_q[z + B_q] / 2) l(z ⊕ z_q)`.
pub fn soft_aggregate(l: &[f64], decisions: &[(Subspace1D, Vec<f64>)]) -> Result<Vec<f64>> {
    weighted_soft_aggregate(l, decisions, None)
}

pub fn weighted_soft_aggregate(
    l: &[f64],
    decisions: &[(Subspace1D, Vec<f64>)],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let w = check(l, decisions, weights)?;
    let mut acc = vec![0.0; l.len()];
    for ((q, lhat), &wq) in decisions.iter().zip(&w) {
        accumulate_soft(l, q.value(), lhat, wq, &mut acc);
    }
    Ok(acc)
}

/// Log-sum aggregation: the average over subspaces of the exact LLR of the
/// XOR, `l̂_q[z + B_q] ⊞ l(z ⊕ z_q)`.
pub fn logsum_aggregate(l: &[f64], decisions: &[(Subspace1D, Vec<f64>)]) -> Result<Vec<f64>> {
    weighted_logsum_aggregate(l, decisions, None)
}

pub fn weighted_logsum_aggregate(
    l: &[f64],
    decisions: &[(Subspace1D, Vec<f64>)],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let w = check(l, decisions, weights)?;
    let mut acc = vec![0.0; l.len()];
    for ((q, lhat), &wq) in decisions.iter().zip(&w) {
        accumulate_logsum(l, q.value(), lhat, wq, &mut acc);
    }
    Ok(acc)
}
