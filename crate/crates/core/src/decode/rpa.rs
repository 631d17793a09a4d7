//! Recursive projection-aggregation decoders over a [`ProjectionTree`].

use std::collections::HashMap;

use super::aggregate::{accumulate_hard, accumulate_logsum, accumulate_soft, project_into};
use super::softmap::{leaf_map_into, leaf_scores, soft_map_from_scores};
use super::DecodeResult;
use crate::error::{Error, Result};
use crate::llr::{bpsk, hard};
use crate::project::{ProjectionTree, TreeNode};

/// How soft decisions are folded back in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Soft,
    LogSum,
}

/// Hard (subRPA) or soft (soft-subRPA) recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpaKind {
    Hard,
    Soft(Aggregation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpaConfig {
    /// Outer iterations at the root.
    pub n_max: usize,
    /// Iterations at depths `1, 2, …` below the root; missing depths use 1.
    pub inner_iterations: Vec<usize>,
    /// Stop iterating once the hard decisions stop changing.
    pub early_exit: bool,
}

impl Default for RpaConfig {
    fn default() -> Self {
        RpaConfig {
            n_max: 3,
            inner_iterations: Vec::new(),
            early_exit: true,
        }
    }
}

impl RpaConfig {
    pub fn with_n_max(n_max: usize) -> Self {
        RpaConfig {
            n_max,
            ..Self::default()
        }
    }

    pub(crate) fn iterations_at(&self, depth: usize) -> usize {
        if depth == 0 {
            self.n_max
        } else {
            self.inner_iterations.get(depth - 1).copied().unwrap_or(1)
        }
    }
}

/// Per-inner-node aggregation weights, indexed by node id, in the order of
/// the node's children. Nodes without weights use the plain mean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeWeights {
    nodes: Vec<Option<Vec<f64>>>,
}

/// Largest deviation from the simplex accepted for a weight vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

impl TreeWeights {
    /// Weights keyed by node path and subspace integer. Every listed node
    /// must exist in the tree and list a weight for each of its children.
    pub fn from_paths(tree: &ProjectionTree, weights: &HashMap<Vec<u32>, Vec<(u32, f64)>>) -> Result<Self> {
        let mut nodes = vec![None; tree.inner_count()];
        let mut found = 0;
        for node in tree.inner_nodes() {
            let Some(list) = weights.get(&node.path) else { continue };
            found += 1;
            let by_q: HashMap<u32, f64> = list.iter().copied().collect();
            let w = node
                .children
                .iter()
                .map(|b| {
                    by_q.get(&b.subspace.value()).copied().ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "no weight for subspace {} at node {}",
                            b.subspace.value(),
                            crate::prune::format_path(&node.path)
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            nodes[node.id] = Some(w);
        }
        if found != weights.len() {
            return Err(Error::InvalidParameter(
                "weights reference nodes that are not in the tree".into(),
            ));
        }
        let out = TreeWeights { nodes };
        out.validate(tree)?;
        Ok(out)
    }

    /// Weights given directly by node id.
    pub fn from_ids(tree: &ProjectionTree, nodes: Vec<Option<Vec<f64>>>) -> Result<Self> {
        let out = TreeWeights { nodes };
        out.validate(tree)?;
        Ok(out)
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.nodes.get(id).and_then(|w| w.as_deref())
    }

    fn validate(&self, tree: &ProjectionTree) -> Result<()> {
        if self.nodes.len() != tree.inner_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight slots for {} inner nodes",
                self.nodes.len(),
                tree.inner_count()
            )));
        }
        for node in tree.inner_nodes() {
            if let Some(w) = &self.nodes[node.id] {
                if w.len() != node.children.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "node {} has {} children but {} weights",
                        crate::prune::format_path(&node.path),
                        node.children.len(),
                        w.len()
                    )));
                }
                let sum: f64 = w.iter().sum();
                if w.iter().any(|&v| !(-SIMPLEX_TOLERANCE..=1.0 + SIMPLEX_TOLERANCE).contains(&v))
                    || (sum - 1.0).abs() > SIMPLEX_TOLERANCE
                {
                    return Err(Error::InvalidParameter(format!(
                        "weights at node {} are not on the simplex (sum {sum})",
                        crate::prune::format_path(&node.path)
                    )));
                }
            }
        }
        Ok(())
    }
}

enum NodeOut {
    Bits(Vec<u8>),
    Llr(Vec<f64>),
}

struct Ctx<'a> {
    kind: RpaKind,
    config: &'a RpaConfig,
    weights: Option<&'a TreeWeights>,
    leaf_calls: u64,
    root_iterations: usize,
    work: Vec<f64>,
    scores: Vec<f64>,
    l_inf: Vec<f64>,
}

fn decode_node(node: &TreeNode, l: &[f64], depth: usize, ctx: &mut Ctx) -> NodeOut {
    match node {
        TreeNode::Leaf(leaf) => {
            ctx.leaf_calls += 1;
            leaf.slot.with(|code| match ctx.kind {
                RpaKind::Hard => {
                    let mut out = vec![0u8; l.len()];
                    leaf_map_into(code, l, &mut ctx.work, &mut ctx.scores, &mut out);
                    NodeOut::Bits(out)
                }
                RpaKind::Soft(_) => {
                    let mut out = vec![0.0; l.len()];
                    leaf_scores(code, l, &mut ctx.work, &mut ctx.scores);
                    soft_map_from_scores(code, &ctx.scores, &mut ctx.l_inf, &mut out, None);
                    NodeOut::Llr(out)
                }
            })
        }
        TreeNode::Inner(inner) => {
            let iterations = ctx.config.iterations_at(depth);
            let q_count = inner.children.len();
            let uniform = 1.0 / q_count as f64;
            let weights = ctx.weights.and_then(|w| w.get(inner.id)).map(<[f64]>::to_vec);
            let mut cur = l.to_vec();
            let mut prev: Vec<u8> = cur.iter().map(|&v| hard(v)).collect();
            let mut projected = vec![0.0; l.len() / 2];
            let mut used = 0;
            for _ in 0..iterations {
                let mut acc = vec![0.0; l.len()];
                for (ci, branch) in inner.children.iter().enumerate() {
                    let q = branch.subspace.value();
                    project_into(&cur, q, &mut projected);
                    let w = weights.as_ref().map_or(uniform, |w| w[ci]);
                    match (decode_node(&branch.node, &projected, depth + 1, ctx), ctx.kind) {
                        (NodeOut::Bits(y), _) => accumulate_hard(&cur, q, &y, w, &mut acc),
                        (NodeOut::Llr(lhat), RpaKind::Soft(Aggregation::LogSum)) => {
                            accumulate_logsum(&cur, q, &lhat, w, &mut acc)
                        }
                        (NodeOut::Llr(lhat), _) => accumulate_soft(&cur, q, &lhat, w, &mut acc),
                    }
                }
                cur = acc;
                used += 1;
                if ctx.config.early_exit && iterations > 1 {
                    let now: Vec<u8> = cur.iter().map(|&v| hard(v)).collect();
                    if now == prev {
                        break;
                    }
                    prev = now;
                }
            }
            if depth == 0 {
                ctx.root_iterations = used;
            }
            match ctx.kind {
                RpaKind::Hard if depth > 0 => NodeOut::Bits(cur.iter().map(|&v| hard(v)).collect()),
                _ => NodeOut::Llr(cur),
            }
        }
    }
}

/// Runs the recursive decoder on channel LLRs `l`.
pub fn rpa_decode(
    l: &[f64],
    tree: &ProjectionTree,
    kind: RpaKind,
    config: &RpaConfig,
    weights: Option<&TreeWeights>,
) -> Result<DecodeResult> {
    if l.len() != tree.n() {
        return Err(Error::DimensionMismatch(format!(
            "LLR length {} does not match code length {}",
            l.len(),
            tree.n()
        )));
    }
    if let Some(pos) = l.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    if config.n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let mut ctx = Ctx {
        kind,
        config,
        weights,
        leaf_calls: 0,
        root_iterations: 1,
        work: Vec::new(),
        scores: Vec::new(),
        l_inf: Vec::new(),
    };
    let final_llr = match decode_node(&tree.root, l, 0, &mut ctx) {
        NodeOut::Llr(v) => v,
        NodeOut::Bits(bits) => bits.iter().map(|&b| bpsk(b)).collect(),
    };
    let codeword = final_llr.iter().map(|&v| hard(v)).collect();
    Ok(DecodeResult {
        codeword,
        final_llr,
        iterations_used: ctx.root_iterations,
        leaf_map_calls: ctx.leaf_calls,
        info_bits: None,
    })
}

/// subRPA: hard MAP at the leaves and hard aggregation, `n_max` outer
/// iterations with early exit.
pub fn subrpa_decode(l: &[f64], tree: &ProjectionTree, n_max: usize) -> Result<DecodeResult> {
    rpa_decode(l, tree, RpaKind::Hard, &RpaConfig::with_n_max(n_max), None)
}

/// soft-subRPA: soft-MAP at the leaves and soft (or log-sum) aggregation,
/// optionally weighted per node.
pub fn soft_subrpa_decode(
    l: &[f64],
    tree: &ProjectionTree,
    n_max: usize,
    aggregation: Aggregation,
    weights: Option<&TreeWeights>,
) -> Result<DecodeResult> {
    rpa_decode(
        l,
        tree,
        RpaKind::Soft(aggregation),
        &RpaConfig::with_n_max(n_max),
        weights,
    )
}
