//! Differentiable top-`k` selection by entropy-regularised optimal transport.
//!
//! The `Q` scores are transported onto two target points, `0` (dropped) and
//! `1` (kept), with uniform source mass `1/Q` and target masses
//! `((Q - Q0)/Q, Q0/Q)` under squared-distance cost. The kept share of each
//! score's mass, scaled by `Q`, is its smoothed selection indicator `γ_i`.

use crate::error::{Error, Result};
use crate::llr::sigmoid;

/// Sinkhorn stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Largest accepted violation of the target marginal, relative to `Q0`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            tolerance: 1e-9,
            max_iterations: 500,
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Smoothed indicator of the `q0` largest scores: `γ ∈ [0,1]^Q` with
/// `Σγ = q0` up to the Sinkhorn tolerance.
pub fn soft_topk(s: &[f64], q0: usize, epsilon: f64) -> Result<Vec<f64>> {
    soft_topk_with(s, q0, epsilon, SinkhornConfig::default())
}

pub fn soft_topk_with(s: &[f64], q0: usize, epsilon: f64, cfg: SinkhornConfig) -> Result<Vec<f64>> {
    let q = s.len();
    if q0 == 0 || q0 >= q {
        return Err(Error::InvalidParameter(format!(
            "top-k size {q0} must satisfy 0 < Q0 < Q = {q}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(pos) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let qf = q as f64;
    let log_mu = -(qf.ln());
    let log_nu = [((q - q0) as f64 / qf).ln(), (q0 as f64 / qf).ln()];
    let cost = |i: usize, j: usize| {
        let d = s[i] - j as f64;
        d * d / epsilon
    };
    // Potentials scaled by 1/ε.
    let mut f = vec![0.0; q];
    let mut g = [0.0f64; 2];
    let row_update = |f: &mut [f64], g: &[f64; 2]| {
        for (i, fi) in f.iter_mut().enumerate() {
            *fi = log_mu - log_sum_exp(g[0] - cost(i, 0), g[1] - cost(i, 1));
        }
    };
    row_update(&mut f, &g);
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = (0..q)
                .map(|i| f[i] - cost(i, j))
                .fold(f64::NEG_INFINITY, log_sum_exp);
            *gj = log_nu[j] - lse;
        }
        row_update(&mut f, &g);
        // Row marginals are exact after a row update; check the kept column.
        let kept: f64 = (0..q).map(|i| (f[i] + g[1] - cost(i, 1)).exp()).sum::<f64>() * qf;
        if (kept - q0 as f64).abs() <= cfg.tolerance * q0 as f64 {
            converged = true;
            break;
        }
    }
    if !converged {
        // Saturated plans converge slowly; finish on the single free dual
        // variable, which has the same fixed point.
        let a: Vec<f64> = s.iter().map(|&v| (2.0 * v - 1.0) / epsilon).collect();
        let c = solve_shift(&a, q0 as f64);
        return Ok(a.iter().map(|&ai| sigmoid(ai + c)).collect());
    }
    Ok((0..q)
        .map(|i| (qf * (f[i] + g[1] - cost(i, 1)).exp()).clamp(0.0, 1.0))
        .collect())
}

/// Shift `c` with `Σ σ(a_i + c) = target`, by bisection.
fn solve_shift(a: &[f64], target: f64) -> f64 {
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amin = a.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (-amax - 60.0, -amin + 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if a.iter().map(|&ai| sigmoid(ai + mid)).sum::<f64>() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gradient w.r.t. the scores of `Σ_i g_γ[i] γ_i`, by implicit
/// differentiation of the converged transport plan. At the fixed point
/// `γ_i = σ((2 s_i - 1)/ε + c)` with `c` set by `Σγ = Q0`.
pub fn soft_topk_backward(gamma: &[f64], g_gamma: &[f64], epsilon: f64) -> Vec<f64> {
    let d: Vec<f64> = gamma.iter().map(|&v| v * (1.0 - v)).collect();
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return vec![0.0; gamma.len()];
    }
    let mean = d.iter().zip(g_gamma).map(|(a, b)| a * b).sum::<f64>() / total;
    d.iter()
        .zip(g_gamma)
        .map(|(&di, &gi)| 2.0 / epsilon * di * (gi - mean))
        .collect()
}

/// Simplex weights `w = γ / Σγ` (equal to `γ / Q0` at convergence).
pub fn weights_from_gamma(gamma: &[f64]) -> Vec<f64> {
    let total: f64 = gamma.iter().sum();
    gamma.iter().map(|v| v / total).collect()
}

/// Gradient w.r.t. `γ` from a gradient w.r.t. `w = γ / Σγ`.
pub fn weights_backward(gamma: &[f64], g_w: &[f64]) -> Vec<f64> {
    let total: f64 = gamma.iter().sum();
    let dot: f64 = gamma.iter().zip(g_w).map(|(a, b)| a * b).sum::<f64>() / total;
    g_w.iter().map(|g| (g - dot) / total).collect()
}

/// Closed form of the converged indicator for a given shift `c`; used to
/// cross-check the Sinkhorn solution.
pub fn fixed_point_gamma(s: &[f64], epsilon: f64, c: f64) -> Vec<f64> {
    s.iter().map(|&v| sigmoid((2.0 * v - 1.0) / epsilon + c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_scores_give_hard_indicator() {
        let mut s = vec![-10.0; 12];
        for v in s.iter_mut().take(4) {
            *v = 10.0;
        }
        let g = soft_topk(&s, 4, 0.1).unwrap();
        for (i, v) in g.iter().enumerate() {
            let want = if i < 4 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-3);
        }
    }

    #[test]
    fn equal_scores_share_evenly() {
        let g = soft_topk(&[0.3; 63], 15, 0.1).unwrap();
        for v in &g {
            assert!((v - 15.0 / 63.0).abs() < 1e-12);
        }
        let w = weights_from_gamma(&g);
        for v in &w {
            assert!((v - 1.0 / 63.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(soft_topk(&[0.0; 5], 5, 0.1).is_err());
        assert!(soft_topk(&[0.0; 5], 0, 0.1).is_err());
        assert!(soft_topk(&[0.0; 5], 2, 0.0).is_err());
    }

    #[test]
    fn matches_sigmoid_fixed_point() {
        let s: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 * 0.05).collect();
        let g = soft_topk(&s, 6, 0.2).unwrap();
        // Recover the shift from one coordinate and compare the rest.
        let i0 = 3;
        let c = (g[i0] / (1.0 - g[i0])).ln() - (2.0 * s[i0] - 1.0) / 0.2;
        let fp = fixed_point_gamma(&s, 0.2, c);
        for (a, b) in g.iter().zip(&fp) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let s: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let gg: Vec<f64> = (0..10).map(|i| (i as f64 * 1.3).cos()).collect();
        let eps = 0.3;
        let f = |s: &[f64]| -> f64 {
            soft_topk(s, 4, eps).unwrap().iter().zip(&gg).map(|(a, b)| a * b).sum()
        };
        let gamma = soft_topk(&s, 4, eps).unwrap();
        let grad = soft_topk_backward(&gamma, &gg, eps);
        let h = 1e-5;
        for i in 0..10 {
            let mut p = s.clone();
            p[i] += h;
            let mut m = s.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn pinned_coordinate_has_no_gradient() {
        let mut s = vec![0.0; 10];
        s[0] = -50.0;
        let gamma = soft_topk(&s, 3, 0.1).unwrap();
        let grad = soft_topk_backward(&gamma, &[1.0, 0.3, -0.2, 0.0, 0.5, 0.1, 0.2, 0.3, 0.4, 0.5], 0.1);
        assert!(grad[0].abs() < 1e-6);
    }

    #[test]
    fn saturated_scores_still_meet_the_mass() {
        let s = [-1.093, -1.783, 0.0, 0.0, 0.0, 0.0, -1.266, -1.510];
        let g = soft_topk(&s, 4, 0.05).unwrap();
        assert!((g.iter().sum::<f64>() - 4.0).abs() < 1e-9);
        for (v, want) in g.iter().zip([0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]) {
            assert!((v - want).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn mass_and_simplex(
            s in proptest::collection::vec(-2.0f64..2.0, 8..40),
            frac in 0.05f64..0.95,
            eps in prop_oneof![Just(0.05), Just(0.1), Just(0.5), Just(1.0)],
        ) {
            let q0 = ((s.len() as f64 * frac) as usize).clamp(1, s.len() - 1);
            let g = soft_topk(&s, q0, eps).unwrap();
            prop_assert!((g.iter().sum::<f64>() - q0 as f64).abs() < 1e-6);
            prop_assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
            let w = weights_from_gamma(&g);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
