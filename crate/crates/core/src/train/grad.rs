//! Weighted soft-subRPA forward pass with a recorded trace, the binary
//! cross-entropy loss, and the reverse pass giving gradients w.r.t. the
//! per-node aggregation weights.

use crate::decode::aggregate::{accumulate_logsum, accumulate_soft, coset_pair, project_into};
use crate::decode::softmap::{
    leaf_scores, leaf_scores_backward, soft_map_backward, soft_map_from_scores, SoftMapTrace,
};
use crate::decode::{Aggregation, RpaConfig};
use crate::llr::{boxplus, boxplus_grad, sigmoid, softplus};
use crate::project::{ProjectionTree, TreeNode};

/// Mean over positions of the cross-entropy between `sigmoid(-l̃)` (the
/// probability of a one) and the transmitted bits.
pub fn bce_loss(final_llr: &[f64], codeword: &[u8]) -> f64 {
    assert_eq!(final_llr.len(), codeword.len());
    final_llr
        .iter()
        .zip(codeword)
        .map(|(&l, &c)| if c == 0 { softplus(-l) } else { softplus(l) })
        .sum::<f64>()
        / final_llr.len() as f64
}

/// Gradient of [`bce_loss`] w.r.t. the LLRs, scaled by `scale`.
pub fn bce_loss_grad(final_llr: &[f64], codeword: &[u8], scale: f64) -> Vec<f64> {
    let k = scale / final_llr.len() as f64;
    final_llr
        .iter()
        .zip(codeword)
        .map(|(&l, &c)| if c == 0 { -k * sigmoid(-l) } else { k * sigmoid(l) })
        .collect()
}

/// Aggregation weights per inner node id; `None` means the plain mean.
pub(crate) type NodeWeights = [Option<Vec<f64>>];

pub(crate) enum Trace {
    Leaf(SoftMapTrace),
    Inner(Vec<IterTrace>),
}

pub(crate) struct IterTrace {
    input: Vec<f64>,
    children: Vec<(Vec<f64>, Trace)>,
}

pub(crate) struct Model<'a> {
    pub tree: &'a ProjectionTree,
    pub aggregation: Aggregation,
    pub config: &'a RpaConfig,
    pub weights: &'a NodeWeights,
}

impl Model<'_> {
    /// Forward pass without early exit. Returns the final LLRs and, when
    /// `record` is set, the trace for [`Model::backward`].
    pub fn forward(&self, l: &[f64], record: bool) -> (Vec<f64>, Option<Trace>) {
        self.forward_node(&self.tree.root, l, 0, record)
    }

    fn forward_node(&self, node: &TreeNode, l: &[f64], depth: usize, record: bool) -> (Vec<f64>, Option<Trace>) {
        match node {
            TreeNode::Leaf(leaf) => leaf.slot.with(|code| {
                let (mut work, mut scores, mut l_inf) = (Vec::new(), Vec::new(), Vec::new());
                let mut out = vec![0.0; l.len()];
                leaf_scores(code, l, &mut work, &mut scores);
                let mut trace = SoftMapTrace::default();
                soft_map_from_scores(code, &scores, &mut l_inf, &mut out, record.then_some(&mut trace));
                (out, record.then_some(Trace::Leaf(trace)))
            }),
            TreeNode::Inner(inner) => {
                let uniform = 1.0 / inner.children.len() as f64;
                let weights = self.weights.get(inner.id).and_then(|w| w.as_deref());
                let mut cur = l.to_vec();
                let mut iters = Vec::new();
                let mut projected = vec![0.0; l.len() / 2];
                for _ in 0..self.config.iterations_at(depth) {
                    let mut acc = vec![0.0; l.len()];
                    let mut children = Vec::new();
                    for (ci, branch) in inner.children.iter().enumerate() {
                        let q = branch.subspace.value();
                        project_into(&cur, q, &mut projected);
                        let w = weights.map_or(uniform, |w| w[ci]);
                        let (lhat, trace) = self.forward_node(&branch.node, &projected, depth + 1, record);
                        match self.aggregation {
                            Aggregation::Soft => accumulate_soft(&cur, q, &lhat, w, &mut acc),
                            Aggregation::LogSum => accumulate_logsum(&cur, q, &lhat, w, &mut acc),
                        }
                        if let Some(t) = trace {
                            children.push((lhat, t));
                        }
                    }
                    let input = std::mem::replace(&mut cur, acc);
                    if record {
                        iters.push(IterTrace { input, children });
                    }
                }
                (cur, record.then_some(Trace::Inner(iters)))
            }
        }
    }

    /// Reverse pass: gradient w.r.t. the root input, accumulating weight
    /// gradients into `g_w` (indexed like the weights).
    pub fn backward(&self, trace: &Trace, g_out: &[f64], g_w: &mut [Vec<f64>]) -> Vec<f64> {
        self.backward_node(&self.tree.root, trace, g_out, g_w)
    }

    fn backward_node(&self, node: &TreeNode, trace: &Trace, g_out: &[f64], g_w: &mut [Vec<f64>]) -> Vec<f64> {
        match (node, trace) {
            (TreeNode::Leaf(leaf), Trace::Leaf(sm)) => leaf.slot.with(|code| {
                let mut g_scores = vec![0.0; code.size()];
                soft_map_backward(sm, g_out, &mut Vec::new(), &mut g_scores);
                let mut g_l = vec![0.0; g_out.len()];
                leaf_scores_backward(code, &g_scores, &mut Vec::new(), &mut g_l);
                g_l
            }),
            (TreeNode::Inner(inner), Trace::Inner(iters)) => {
                let uniform = 1.0 / inner.children.len() as f64;
                let weights = self.weights.get(inner.id).and_then(|w| w.as_deref());
                let n = g_out.len();
                let mut g = g_out.to_vec();
                for it in iters.iter().rev() {
                    let cur = &it.input;
                    let mut g_cur = vec![0.0; n];
                    let mut g_lhat = vec![0.0; n / 2];
                    for (ci, (branch, (lhat, child))) in inner.children.iter().zip(&it.children).enumerate() {
                        let q = branch.subspace.value();
                        let w = weights.map_or(uniform, |w| w[ci]);
                        let mut gw = 0.0;
                        for (t, &v) in lhat.iter().enumerate() {
                            let (a, b) = coset_pair(t, q);
                            match self.aggregation {
                                Aggregation::Soft => {
                                    let th = (0.5 * v).tanh();
                                    let s = g[a] * cur[b] + g[b] * cur[a];
                                    gw += th * s;
                                    g_cur[b] += g[a] * w * th;
                                    g_cur[a] += g[b] * w * th;
                                    g_lhat[t] = w * 0.5 * (1.0 - th * th) * s;
                                }
                                Aggregation::LogSum => {
                                    gw += g[a] * boxplus(v, cur[b]) + g[b] * boxplus(v, cur[a]);
                                    let (dv_a, dc_b) = boxplus_grad(v, cur[b]);
                                    let (dv_b, dc_a) = boxplus_grad(v, cur[a]);
                                    g_lhat[t] = w * (g[a] * dv_a + g[b] * dv_b);
                                    g_cur[b] += w * g[a] * dc_b;
                                    g_cur[a] += w * g[b] * dc_a;
                                }
                            }
                        }
                        if let Some(slot) = g_w.get_mut(inner.id) {
                            if !slot.is_empty() {
                                slot[ci] += gw;
                            }
                        }
                        let g_proj = self.backward_node(&branch.node, child, &g_lhat, g_w);
                        for (t, &gp) in g_proj.iter().enumerate() {
                            let (a, b) = coset_pair(t, q);
                            let (da, db) = boxplus_grad(cur[a], cur[b]);
                            g_cur[a] += gp * da;
                            g_cur[b] += gp * db;
                        }
                    }
                    g = g_cur;
                }
                g
            }
            _ => unreachable!("trace does not match the tree"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::subcode_generator;
    use crate::decode::{rpa_decode, RpaKind, TreeWeights};
    use crate::project::build_projection_tree;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_examples() {
        assert!(bce_loss(&[50.0], &[0]) < 1e-20);
        assert!(bce_loss(&[-50.0], &[1]) < 1e-20);
        assert!((bce_loss(&[0.0], &[0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.0], &[1]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_two_step_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let l: Vec<f64> = (0..16).map(|_| rng.gen_range(-15.0..15.0)).collect();
            let c: Vec<u8> = (0..16).map(|_| rng.gen_range(0..2)).collect();
            let oracle: f64 = l
                .iter()
                .zip(&c)
                .map(|(&v, &b)| {
                    let p1 = 1.0 / (1.0 + v.exp());
                    if b == 1 {
                        -p1.ln()
                    } else {
                        -(1.0 - p1).ln()
                    }
                })
                .sum::<f64>()
                / 16.0;
            assert!((bce_loss(&l, &c) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_grad_matches_finite_difference() {
        let l = [1.5, -0.3, 4.0];
        let c = [0u8, 0, 1];
        let g = bce_loss_grad(&l, &c, 1.0);
        for i in 0..3 {
            let h = 1e-6;
            let mut p = l;
            p[i] += h;
            let mut m = l;
            m[i] -= h;
            let fd = (bce_loss(&p, &c) - bce_loss(&m, &c)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_matches_decoder() {
        let spec = subcode_generator(5, 2, 9, &[1, 2, 8]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w: Vec<f64> = (0..31).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let weights = vec![Some(w.clone())];
        let config = RpaConfig { early_exit: false, ..RpaConfig::default() };
        let tw = TreeWeights::from_ids(&tree, weights.clone()).unwrap();
        for agg in [Aggregation::Soft, Aggregation::LogSum] {
            let model = Model { tree: &tree, aggregation: agg, config: &config, weights: &weights };
            for _ in 0..10 {
                let l: Vec<f64> = (0..32).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let (out, _) = model.forward(&l, false);
                let dec = rpa_decode(&l, &tree, RpaKind::Soft(agg), &config, Some(&tw)).unwrap();
                assert_eq!(out, dec.final_llr);
            }
        }
    }

    #[test]
    fn reverse_pass_matches_finite_difference_in_weights_and_input() {
        let spec = subcode_generator(4, 2, 8, &[0, 2, 5]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = RpaConfig { early_exit: false, ..RpaConfig::default() };
        let c: Vec<u8> = spec.encode(&(0..8).map(|_| rng.gen_range(0..2)).collect::<Vec<_>>()).unwrap();
        let l: Vec<f64> = c.iter().map(|&b| (1.0 - 2.0 * b as f64) * 1.2 + rng.gen_range(-1.5..1.5)).collect();
        let w0: Vec<f64> = (0..15).map(|_| rng.gen_range(0.2..1.0)).collect();
        for agg in [Aggregation::Soft, Aggregation::LogSum] {
            let loss = |w: &[f64], l: &[f64]| {
                let weights = vec![Some(w.to_vec())];
                let model = Model { tree: &tree, aggregation: agg, config: &config, weights: &weights };
                bce_loss(&model.forward(l, false).0, &c)
            };
            let weights = vec![Some(w0.clone())];
            let model = Model { tree: &tree, aggregation: agg, config: &config, weights: &weights };
            let (out, trace) = model.forward(&l, true);
            let mut g_w = vec![vec![0.0; 15]];
            let g_l = model.backward(&trace.unwrap(), &bce_loss_grad(&out, &c, 1.0), &mut g_w);
            let h = 1e-6;
            for i in 0..15 {
                let mut p = w0.clone();
                p[i] += h;
                let mut m = w0.clone();
                m[i] -= h;
                let fd = (loss(&p, &l) - loss(&m, &l)) / (2.0 * h);
                assert!((fd - g_w[0][i]).abs() < 1e-6 * (1.0 + fd.abs()), "w{i}: {fd} vs {}", g_w[0][i]);
            }
            for j in 0..16 {
                let mut p = l.clone();
                p[j] += h;
                let mut m = l.clone();
                m[j] -= h;
                let fd = (loss(&w0, &p) - loss(&w0, &m)) / (2.0 * h);
                assert!((fd - g_l[j]).abs() < 1e-6 * (1.0 + fd.abs()), "l{j}: {fd} vs {}", g_l[j]);
            }
        }
    }
}
