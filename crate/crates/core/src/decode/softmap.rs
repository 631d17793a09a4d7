//! Leaf decoders: hard MAP over a stored codebook and the max-log soft-MAP
//! rule that turns codeword scores into per-coordinate LLRs.

use super::map::walsh_hadamard;
use crate::error::{Error, Result};
use crate::gf2::BitMatrix;
use crate::project::LeafCode;

/// Codeword scores `l̃_t = Σ_j l(j) (1 - 2 C_tj)` for every codeword of the
/// leaf, written into `scores` (length `2^R`). `work` is scratch of length
/// `|l|`.
pub(crate) fn leaf_scores(leaf: &LeafCode, l: &[f64], work: &mut Vec<f64>, scores: &mut Vec<f64>) {
    let size = leaf.size();
    scores.clear();
    match leaf.affine() {
        Some(forms) => {
            work.clear();
            work.extend_from_slice(l);
            walsh_hadamard(work);
            scores.extend(forms.iter().map(|&(a, b)| {
                let v = work[a as usize];
                if b {
                    -v
                } else {
                    v
                }
            }));
        }
        None => {
            let n = l.len();
            let signs = leaf.signs();
            scores.extend((0..size).map(|t| {
                signs[t * n..(t + 1) * n]
                    .iter()
                    .zip(l)
                    .map(|(s, v)| s * v)
                    .sum::<f64>()
            }));
        }
    }
}

/// Adjoint of [`leaf_scores`]: accumulates `Σ_t g_t (1 - 2 C_tj)` into
/// `grad_l`.
pub(crate) fn leaf_scores_backward(leaf: &LeafCode, g_scores: &[f64], work: &mut Vec<f64>, grad_l: &mut [f64]) {
    let n = grad_l.len();
    match leaf.affine() {
        Some(forms) => {
            work.clear();
            work.resize(n, 0.0);
            for (&(a, b), &g) in forms.iter().zip(g_scores) {
                work[a as usize] += if b { -g } else { g };
            }
            walsh_hadamard(work);
            grad_l.iter_mut().zip(work.iter()).for_each(|(o, v)| *o += v);
        }
        None => {
            let signs = leaf.signs();
            for (t, &g) in g_scores.iter().enumerate() {
                for (o, s) in grad_l.iter_mut().zip(&signs[t * n..(t + 1) * n]) {
                    *o += g * s;
                }
            }
        }
    }
}

/// Index of the best-scoring codeword, lowest index on ties.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (t, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = t;
        }
    }
    best
}

/// Hard MAP decision of a leaf, written as bits into `out`.
pub(crate) fn leaf_map_into(leaf: &LeafCode, l: &[f64], work: &mut Vec<f64>, scores: &mut Vec<f64>, out: &mut [u8]) {
    leaf_scores(leaf, l, work, scores);
    let t = argmax(scores);
    match leaf.affine() {
        Some(forms) => {
            let (a, b) = forms[t];
            for (z, o) in out.iter_mut().enumerate() {
                *o = ((a & z as u32).count_ones() as u8 & 1) ^ b as u8;
            }
        }
        None => {
            let cb = leaf.codebook();
            for (j, o) in out.iter_mut().enumerate() {
                *o = cb.get(t, j) as u8;
            }
        }
    }
}

/// What the backward pass of [`soft_map`] needs from the forward pass.
#[derive(Debug, Clone, Default)]
pub struct SoftMapTrace {
    /// Per basis position: best codeword with that information bit 0 and 1.
    pub(crate) best: Vec<(usize, usize)>,
    /// Per output coordinate: the basis position attaining the minimum
    /// magnitude and the product of the other signs (`None` when every
    /// contributing LLR is zero).
    pub(crate) column: Vec<Option<(u16, f64)>>,
}

/// Soft-MAP on a leaf from precomputed codeword scores. `l_inf` is scratch.
pub(crate) fn soft_map_from_scores(
    leaf: &LeafCode,
    scores: &[f64],
    l_inf: &mut Vec<f64>,
    out: &mut [f64],
    mut trace: Option<&mut SoftMapTrace>,
) {
    let r = leaf.rank();
    l_inf.clear();
    if let Some(t) = trace.as_deref_mut() {
        t.best.clear();
        t.column.clear();
    }
    for b in 0..r {
        let bit = r - 1 - b;
        let (mut best0, mut best1) = ((f64::NEG_INFINITY, 0), (f64::NEG_INFINITY, 0));
        for (t, &s) in scores.iter().enumerate() {
            if (t >> bit) & 1 == 0 {
                if s > best0.0 {
                    best0 = (s, t);
                }
            } else if s > best1.0 {
                best1 = (s, t);
            }
        }
        debug_assert!(best0.0.is_finite() && best1.0.is_finite());
        l_inf.push(best0.0 - best1.0);
        if let Some(t) = trace.as_deref_mut() {
            t.best.push((best0.1, best1.1));
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        let mut sign = 1.0;
        let mut min = (f64::INFINITY, u16::MAX);
        for &b in leaf.column_support(j) {
            let v = l_inf[b as usize];
            if v == 0.0 {
                continue;
            }
            if v < 0.0 {
                sign = -sign;
            }
            if v.abs() < min.0 {
                min = (v.abs(), b);
            }
        }
        if min.1 == u16::MAX {
            *o = 0.0;
            if let Some(t) = trace.as_deref_mut() {
                t.column.push(None);
            }
        } else {
            *o = sign * min.0;
            if let Some(t) = trace.as_deref_mut() {
                // Sign of the other factors, so that out = others · l_inf[b*].
                let own = l_inf[min.1 as usize].signum();
                t.column.push(Some((min.1, sign * own)));
            }
        }
    }
}

/// Adjoint of [`soft_map_from_scores`]: gradient w.r.t. the codeword scores.
pub(crate) fn soft_map_backward(trace: &SoftMapTrace, g_out: &[f64], g_inf: &mut Vec<f64>, g_scores: &mut [f64]) {
    g_inf.clear();
    g_inf.resize(trace.best.len(), 0.0);
    for (col, &g) in trace.column.iter().zip(g_out) {
        if let Some((b, others)) = col {
            g_inf[*b as usize] += g * others;
        }
    }
    g_scores.iter_mut().for_each(|v| *v = 0.0);
    for (&(t0, t1), &g) in trace.best.iter().zip(g_inf.iter()) {
        g_scores[t0] += g;
        g_scores[t1] -= g;
    }
}

/// Soft-MAP output LLRs of a leaf code for input LLRs `l_p`.
pub fn soft_map(l_p: &[f64], leaf: &LeafCode) -> Result<Vec<f64>> {
    if l_p.len() != leaf.len() {
        return Err(Error::DimensionMismatch(format!(
            "LLR length {} does not match leaf length {}",
            l_p.len(),
            leaf.len()
        )));
    }
    let (mut work, mut scores, mut l_inf) = (Vec::new(), Vec::new(), Vec::new());
    let mut out = vec![0.0; l_p.len()];
    leaf_scores(leaf, l_p, &mut work, &mut scores);
    soft_map_from_scores(leaf, &scores, &mut l_inf, &mut out, None);
    Ok(out)
}

/// Soft-MAP written directly from the matrices: scores from the codebook,
/// information-bit LLRs from the columns of `U`, and min-sum recombination
/// through `G_p`. Columns of `U` that are all zero are frozen.
pub fn soft_map_matrices(
    l_p: &[f64],
    g_p: &BitMatrix,
    codebook: &BitMatrix,
    u: &BitMatrix,
) -> Result<Vec<f64>> {
    if codebook.cols() != l_p.len() || g_p.cols() != l_p.len() {
        return Err(Error::DimensionMismatch("soft-MAP inputs disagree in length".into()));
    }
    if u.rows() != codebook.rows() || u.cols() != g_p.rows() {
        return Err(Error::DimensionMismatch("U does not match the codebook and G_p".into()));
    }
    let scores: Vec<f64> = (0..codebook.rows())
        .map(|t| {
            l_p.iter()
                .enumerate()
                .map(|(j, &v)| if codebook.get(t, j) { -v } else { v })
                .sum()
        })
        .collect();
    let l_inf: Vec<f64> = (0..u.cols())
        .map(|i| {
            let frozen = (0..u.rows()).all(|t| !u.get(t, i));
            if frozen {
                return 0.0;
            }
            let best = |bit: bool| {
                (0..u.rows())
                    .filter(|&t| u.get(t, i) == bit)
                    .map(|t| scores[t])
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            best(false) - best(true)
        })
        .collect();
    Ok((0..l_p.len())
        .map(|j| {
            let active: Vec<f64> = (0..g_p.rows())
                .filter(|&i| g_p.get(i, j) && l_inf[i] != 0.0)
                .map(|i| l_inf[i])
                .collect();
            if active.is_empty() {
                return 0.0;
            }
            let sign: f64 = active.iter().map(|v| v.signum()).product();
            sign * active.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::subcode_generator;
    use crate::project::build_projection_tree;
    use crate::prune::plan_minrank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repetition_leaf_example() {
        let leaf = LeafCode::new(BitMatrix::from_rows(&[[1u8, 1, 1, 1]]).unwrap()).unwrap();
        let (mut work, mut scores) = (Vec::new(), Vec::new());
        leaf_scores(&leaf, &[2.0; 4], &mut work, &mut scores);
        assert_eq!(scores, vec![8.0, -8.0]);
        assert_eq!(soft_map(&[2.0; 4], &leaf).unwrap(), vec![16.0; 4]);
    }

    #[test]
    fn min_sum_combination_by_hand() {
        // Two basis rows both covering column 0; l_inf = (2, -3).
        let g = BitMatrix::from_rows(&[[1u8, 1], [1, 0]]).unwrap();
        let leaf = LeafCode::new(g).unwrap();
        // Scores for u = 00, 01, 10, 11 (MSB is the first basis row).
        let scores = [0.0, 3.0, -2.0, 1.0];
        let mut out = vec![0.0; 2];
        soft_map_from_scores(&leaf, &scores, &mut Vec::new(), &mut out, None);
        // l_inf(row0) = max(0,3) - max(-2,1) = 2; l_inf(row1) = max(0,-2) - max(3,1) = -3.
        assert_eq!(out, vec![-2.0, 2.0]);
    }

    #[test]
    fn fast_and_matrix_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = subcode_generator(6, 2, 14, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        for leaf in tree.leaves().iter().take(20) {
            leaf.slot.with(|code| {
                for _ in 0..20 {
                    let l: Vec<f64> = (0..32).map(|_| rng.gen_range(-4.0..4.0)).collect();
                    let fast = soft_map(&l, code).unwrap();
                    let slow = soft_map_matrices(&l, code.generator(), code.codebook(), code.u()).unwrap();
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() < 1e-9);
                    }
                }
            });
        }
    }

    #[test]
    fn generic_scores_match_affine_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = BitMatrix::from_rows(&[[1u8, 1, 1, 1, 1, 1, 1, 1], [0, 1, 0, 1, 0, 1, 0, 1], [0, 0, 1, 1, 0, 0, 1, 1]]).unwrap();
        let leaf = LeafCode::new(g).unwrap();
        assert!(leaf.affine().is_some());
        let l: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (mut w, mut s) = (Vec::new(), Vec::new());
        leaf_scores(&leaf, &l, &mut w, &mut s);
        for (t, &score) in s.iter().enumerate() {
            let direct: f64 = (0..8).map(|j| l[j] * leaf.signs()[t * 8 + j]).sum();
            assert!((score - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_soft_map_recovers_every_leaf_codeword() {
        let spec = subcode_generator(6, 2, 14, &[0, 1, 2, 3, 5, 7, 8]).unwrap();
        let plan = plan_minrank(&spec, 15).unwrap();
        let tree = build_projection_tree(&spec, Some(&plan)).unwrap();
        for leaf in tree.leaves() {
            leaf.slot.with(|code| {
                for t in 0..code.size() {
                    let l: Vec<f64> = code.codebook().row_bits(t).iter().map(|&b| 20.0 * (1.0 - 2.0 * b as f64)).collect();
                    let out = soft_map(&l, code).unwrap();
                    for (o, &b) in out.iter().zip(&code.codebook().row_bits(t)) {
                        // Coordinates the leaf code fixes to zero carry no information.
                        if *o != 0.0 {
                            assert_eq!(*o < 0.0, b == 1);
                        }
                    }
                }
            });
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = subcode_generator(5, 2, 9, &[0, 4, 7]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        let leaf = tree.leaves()[3].slot.with(|c| c.clone());
        let l: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g_out: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |l: &[f64]| -> f64 {
            soft_map(l, &leaf).unwrap().iter().zip(&g_out).map(|(a, b)| a * b).sum()
        };
        let (mut work, mut scores, mut l_inf) = (Vec::new(), Vec::new(), Vec::new());
        let mut out = vec![0.0; 16];
        let mut trace = SoftMapTrace::default();
        leaf_scores(&leaf, &l, &mut work, &mut scores);
        soft_map_from_scores(&leaf, &scores, &mut l_inf, &mut out, Some(&mut trace));
        let mut g_scores = vec![0.0; scores.len()];
        soft_map_backward(&trace, &g_out, &mut Vec::new(), &mut g_scores);
        let mut grad = vec![0.0; 16];
        leaf_scores_backward(&leaf, &g_scores, &mut work, &mut grad);
        let h = 1e-6;
        for j in 0..16 {
            let mut lp = l.clone();
            lp[j] += h;
            let mut lm = l.clone();
            lm[j] -= h;
            let fd = (f(&lp) - f(&lm)) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-5, "{j}: {fd} vs {}", grad[j]);
        }
    }
}
