//! Learning per-node projection weights for weighted soft-subRPA.
//!
//! Each inner node of the full projection tree carries an unconstrained
//! score per subspace. Scores become simplex weights through the smoothed
//! top-`Q0` indicator and a normalisation, so plain Adam steps on the scores
//! always give valid weights.

pub mod adam;
pub mod grad;
pub mod soft_topk;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;

pub use adam::Adam;
pub use grad::{bce_loss, bce_loss_grad};
pub use soft_topk::{
    soft_topk, soft_topk_backward, soft_topk_with, weights_backward, weights_from_gamma,
    SinkhornConfig,
};

use crate::construct::CodeSpec;
use crate::decode::{Aggregation, Decoder, RpaConfig, RpaKind, TreeWeights};
use crate::error::{Error, Result};
use crate::prune::{format_path, parse_path};
use crate::project::{build_projection_tree, ProjectionTree};
use crate::sim::{
    awgn_llr_from_noise, find_bler_crossing, snr_to_sigma, standard_normal, trial_rng, SnrMetric,
};
use grad::Model;

/// Trainable scores of one inner node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub path: Vec<u32>,
    /// Subspace integers of the node's children, in tree order.
    pub subspaces: Vec<u32>,
    pub scores: Vec<f64>,
}

impl NodeScores {
    pub fn gamma(&self, q0: usize, epsilon: f64, sinkhorn: SinkhornConfig) -> Result<Vec<f64>> {
        soft_topk_with(&self.scores, q0, epsilon, sinkhorn)
    }

    /// Simplex weights derived from the scores.
    pub fn weights(&self, q0: usize, epsilon: f64) -> Result<Vec<f64>> {
        Ok(weights_from_gamma(&self.gamma(q0, epsilon, SinkhornConfig::default())?))
    }
}

/// Scores for every inner node plus the smoothing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub q0: usize,
    pub epsilon: f64,
    nodes: Vec<NodeScores>,
    /// Free-form `key=value` metadata written to the weight file.
    pub meta: BTreeMap<String, String>,
}

impl WeightState {
    /// All-zero scores (uniform weights) on every inner node of `tree`.
    pub fn uniform(tree: &ProjectionTree, q0: usize, epsilon: f64) -> Result<Self> {
        let nodes: Vec<NodeScores> = tree
            .inner_nodes()
            .iter()
            .map(|n| NodeScores {
                path: n.path.clone(),
                subspaces: n.children.iter().map(|b| b.subspace.value()).collect(),
                scores: vec![0.0; n.children.len()],
            })
            .collect();
        if nodes.is_empty() {
            return Err(Error::InvalidParameter(
                "code has no projection layer to train (order r <= 1)".into(),
            ));
        }
        for n in &nodes {
            if q0 == 0 || q0 >= n.subspaces.len() {
                return Err(Error::InvalidParameter(format!(
                    "Q0 = {q0} must be below the {} subspaces of node {}",
                    n.subspaces.len(),
                    format_path(&n.path)
                )));
            }
        }
        Ok(WeightState {
            q0,
            epsilon,
            nodes,
            meta: BTreeMap::new(),
        })
    }

    pub fn nodes(&self) -> &[NodeScores] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [NodeScores] {
        &mut self.nodes
    }

    /// Weights laid out by the node ids of `tree`.
    pub fn node_weights(&self, tree: &ProjectionTree, sinkhorn: SinkhornConfig) -> Result<Vec<Option<Vec<f64>>>> {
        let mut out = vec![None; tree.inner_count()];
        let by_path: BTreeMap<&Vec<u32>, &NodeScores> = self.nodes.iter().map(|n| (&n.path, n)).collect();
        for node in tree.inner_nodes() {
            if let Some(ns) = by_path.get(&node.path) {
                let kids: Vec<u32> = node.children.iter().map(|b| b.subspace.value()).collect();
                if kids != ns.subspaces {
                    return Err(Error::DimensionMismatch(format!(
                        "weights for node {} do not match the tree's subspaces",
                        format_path(&node.path)
                    )));
                }
                out[node.id] = Some(weights_from_gamma(&ns.gamma(self.q0, self.epsilon, sinkhorn)?));
            }
        }
        Ok(out)
    }

    pub fn tree_weights(&self, tree: &ProjectionTree) -> Result<TreeWeights> {
        TreeWeights::from_ids(tree, self.node_weights(tree, SinkhornConfig::default())?)
    }

    /// Weight file: `meta key=value` lines, then per node a `node /path`
    /// header followed by `subspace score weight` lines.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "meta q0={}", self.q0)?;
        writeln!(w, "meta epsilon={}", self.epsilon)?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k}={v}")?;
        }
        for n in &self.nodes {
            let weights = n.weights(self.q0, self.epsilon)?;
            writeln!(w, "node {}", format_path(&n.path))?;
            for ((q, s), wt) in n.subspaces.iter().zip(&n.scores).zip(&weights) {
                writeln!(w, "{q} {s:.17e} {wt:.17e}")?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut nodes: Vec<NodeScores> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            if let Some(rest) = text.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::parse(i + 1, "meta lines must be `meta key=value`"))?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
            } else if let Some(rest) = text.strip_prefix("node") {
                let path = parse_path(rest.trim()).map_err(|e| Error::parse(i + 1, e))?;
                nodes.push(NodeScores {
                    path,
                    subspaces: Vec::new(),
                    scores: Vec::new(),
                });
            } else {
                let node = nodes
                    .last_mut()
                    .ok_or_else(|| Error::parse(i + 1, "weight line before any `node` header"))?;
                let fields: Vec<&str> = text.split_whitespace().collect();
                if fields.len() < 2 {
                    return Err(Error::parse(i + 1, "expected `subspace score [weight]`"));
                }
                let q = fields[0]
                    .parse::<u32>()
                    .map_err(|_| Error::parse(i + 1, format!("bad subspace {:?}", fields[0])))?;
                let s = fields[1]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("bad score {:?}", fields[1])))?;
                node.subspaces.push(q);
                node.scores.push(s);
            }
        }
        let q0 = meta
            .remove("q0")
            .ok_or_else(|| Error::parse(1, "missing `meta q0=`"))?
            .parse::<usize>()
            .map_err(|_| Error::parse(1, "bad q0"))?;
        let epsilon = meta
            .remove("epsilon")
            .ok_or_else(|| Error::parse(1, "missing `meta epsilon=`"))?
            .parse::<f64>()
            .map_err(|_| Error::parse(1, "bad epsilon"))?;
        if nodes.is_empty() {
            return Err(Error::parse(1, "weight file lists no nodes"));
        }
        Ok(WeightState {
            q0,
            epsilon,
            nodes,
            meta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    /// Reverse-mode differentiation of the forward pass.
    Reverse,
    /// Central differences per score coordinate.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub snr_db: f64,
    pub metric: SnrMetric,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub iterations: usize,
    /// Smoothing strength of the top-`Q0` relaxation.
    pub epsilon: f64,
    pub q0: usize,
    pub seed: u64,
    pub n_max: usize,
    pub aggregation: Aggregation,
    pub gradient: GradientMode,
    pub sinkhorn: SinkhornConfig,
    /// Abort when the loss stays above `divergence_factor` times the initial
    /// loss for `divergence_patience` consecutive iterations.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            snr_db: 3.0,
            metric: SnrMetric::Snr,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            iterations: 2000,
            epsilon: 0.1,
            q0: 15,
            seed: 1,
            n_max: 3,
            aggregation: Aggregation::Soft,
            gradient: GradientMode::Reverse,
            sinkhorn: SinkhornConfig::default(),
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.n_max == 0 {
            return Err(Error::InvalidParameter(
                "batch size, iterations and n_max must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("epsilon and learning rate must be positive".into()));
        }
        Ok(())
    }

}

/// Transmitted codewords and their channel LLRs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub codewords: Vec<Vec<u8>>,
    pub llrs: Vec<Vec<f64>>,
}

impl Batch {
    /// `size` random codewords over AWGN with noise `sigma`; codeword `b` of
    /// batch `index` uses trial stream `index * size + b` of `seed`.
    pub fn sample(spec: &CodeSpec, sigma: f64, size: usize, index: u64, seed: u64) -> Result<Self> {
        let mut codewords = Vec::with_capacity(size);
        let mut llrs = Vec::with_capacity(size);
        for b in 0..size as u64 {
            let mut rng = trial_rng(seed, index * size as u64 + b);
            let u: Vec<u8> = (0..spec.k).map(|_| rng.gen_range(0..2)).collect();
            let c = spec.encode(&u)?;
            let noise = standard_normal(spec.n, &mut rng);
            llrs.push(awgn_llr_from_noise(&c, &noise, sigma));
            codewords.push(c);
        }
        Ok(Batch { codewords, llrs })
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }
}

/// Decoder schedule used during training: no early exit, so every sample
/// runs the same number of iterations and stays differentiable.
fn training_rpa_config(n_max: usize) -> RpaConfig {
    RpaConfig {
        n_max,
        inner_iterations: Vec::new(),
        early_exit: false,
    }
}

/// Mean loss of weighted soft-subRPA over a batch.
pub fn batch_loss(
    tree: &ProjectionTree,
    weights: &[Option<Vec<f64>>],
    batch: &Batch,
    aggregation: Aggregation,
    n_max: usize,
) -> f64 {
    let config = training_rpa_config(n_max);
    let model = Model {
        tree,
        aggregation,
        config: &config,
        weights,
    };
    batch
        .llrs
        .par_iter()
        .zip(&batch.codewords)
        .map(|(l, c)| bce_loss(&model.forward(l, false).0, c))
        .sum::<f64>()
        / batch.len() as f64
}

/// Mean batch loss and its gradient w.r.t. the weights of each node id
/// (empty vectors for nodes without weights).
pub fn batch_loss_and_weight_grad(
    tree: &ProjectionTree,
    weights: &[Option<Vec<f64>>],
    batch: &Batch,
    aggregation: Aggregation,
    n_max: usize,
) -> (f64, Vec<Vec<f64>>) {
    let config = training_rpa_config(n_max);
    let model = Model {
        tree,
        aggregation,
        config: &config,
        weights,
    };
    let empty: Vec<Vec<f64>> = weights
        .iter()
        .map(|w| w.as_ref().map_or(Vec::new(), |w| vec![0.0; w.len()]))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let (loss, grads) = batch
        .llrs
        .par_iter()
        .zip(&batch.codewords)
        .map(|(l, c)| {
            let (out, trace) = model.forward(l, true);
            let mut g_w = empty.clone();
            model.backward(&trace.expect("trace recorded"), &bce_loss_grad(&out, c, scale), &mut g_w);
            (bce_loss(&out, c) * scale, g_w)
        })
        .reduce(
            || (0.0, empty.clone()),
            |(la, mut ga), (lb, gb)| {
                for (x, y) in ga.iter_mut().zip(gb) {
                    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                }
                (la + lb, ga)
            },
        );
    (loss, grads)
}

/// Loss and gradient w.r.t. every node's scores (in `state.nodes()` order).
pub fn score_gradient(
    tree: &ProjectionTree,
    state: &WeightState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let id_of: BTreeMap<&Vec<u32>, usize> = tree.inner_nodes().iter().map(|n| (&n.path, n.id)).collect();
    match config.gradient {
        GradientMode::Reverse => {
            let weights = state.node_weights(tree, config.sinkhorn)?;
            let (loss, g_w) = batch_loss_and_weight_grad(tree, &weights, batch, config.aggregation, config.n_max);
            let grads = state
                .nodes()
                .iter()
                .map(|ns| {
                    let gamma = ns.gamma(state.q0, state.epsilon, config.sinkhorn)?;
                    let id = id_of[&ns.path];
                    let g_gamma = weights_backward(&gamma, &g_w[id]);
                    Ok(soft_topk_backward(&gamma, &g_gamma, state.epsilon))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((loss, grads))
        }
        GradientMode::FiniteDifference { step } => {
            let eval = |s: &WeightState| -> Result<f64> {
                let w = s.node_weights(tree, config.sinkhorn)?;
                Ok(batch_loss(tree, &w, batch, config.aggregation, config.n_max))
            };
            let loss = eval(state)?;
            let mut grads = Vec::with_capacity(state.nodes().len());
            for (ni, ns) in state.nodes().iter().enumerate() {
                let mut g = vec![0.0; ns.scores.len()];
                for (i, gi) in g.iter_mut().enumerate() {
                    let mut plus = state.clone();
                    plus.nodes[ni].scores[i] += step;
                    let mut minus = state.clone();
                    minus.nodes[ni].scores[i] -= step;
                    *gi = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
                }
                grads.push(g);
            }
            Ok((loss, grads))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: WeightState,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

/// Trains weights on the full projection tree of `spec`.
pub fn train(spec: &CodeSpec, config: &TrainConfig) -> Result<TrainOutput> {
    let tree = build_projection_tree(spec, None)?;
    train_on_tree(spec, &tree, config, None)
}

/// Trains starting from `init` (uniform weights when `None`), calling
/// `progress(iteration, loss)` if given.
pub fn train_on_tree(
    spec: &CodeSpec,
    tree: &ProjectionTree,
    config: &TrainConfig,
    init: Option<WeightState>,
) -> Result<TrainOutput> {
    train_with_progress(spec, tree, config, init, &mut |_, _| {})
}

pub fn train_with_progress(
    spec: &CodeSpec,
    tree: &ProjectionTree,
    config: &TrainConfig,
    init: Option<WeightState>,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutput> {
    config.validate()?;
    let mut state = match init {
        Some(s) => s,
        None => WeightState::uniform(tree, config.q0, config.epsilon)?,
    };
    let sigma = snr_to_sigma(config.metric, config.snr_db, spec.n, spec.k);
    let sizes: Vec<usize> = state.nodes().iter().map(|n| n.scores.len()).collect();
    let mut opt = Adam::new(
        sizes.iter().sum(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut losses = Vec::with_capacity(config.iterations);
    let mut above = 0usize;
    for it in 0..config.iterations {
        let batch = Batch::sample(spec, sigma, config.batch_size, it as u64, config.seed)?;
        let (loss, grads) = score_gradient(tree, &state, &batch, config)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at iteration {it}")));
        }
        losses.push(loss);
        progress(it, loss);
        if loss > config.divergence_factor * losses[0] {
            above += 1;
            if above >= config.divergence_patience {
                return Err(Error::Diverged(format!(
                    "loss {loss:.4e} stayed above {}x the initial {:.4e} for {above} iterations",
                    config.divergence_factor, losses[0]
                )));
            }
        } else {
            above = 0;
        }
        let mut flat: Vec<f64> = state.nodes().iter().flat_map(|n| n.scores.iter().copied()).collect();
        let flat_grad: Vec<f64> = grads.into_iter().flatten().collect();
        opt.step(&mut flat, &flat_grad);
        let mut offset = 0;
        for n in state.nodes_mut() {
            let len = n.scores.len();
            n.scores.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }
    state.meta.insert("seed".into(), config.seed.to_string());
    state.meta.insert("snr_db".into(), config.snr_db.to_string());
    state.meta.insert("metric".into(), config.metric.to_string());
    state.meta.insert("batch_size".into(), config.batch_size.to_string());
    state.meta.insert("iterations".into(), config.iterations.to_string());
    state.meta.insert("learning_rate".into(), config.learning_rate.to_string());
    Ok(TrainOutput { state, losses })
}

/// SNR (dB, `metric`) at which full-projection soft-subRPA reaches
/// `target_bler`, plus `offset_db`. Searched by bisection over `[lo, hi]`
/// with a fixed set of `trials` trials.
#[allow(clippy::too_many_arguments)]
pub fn pick_training_snr(
    spec: &CodeSpec,
    target_bler: f64,
    offset_db: f64,
    metric: SnrMetric,
    lo_db: f64,
    hi_db: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    let tree = build_projection_tree(spec, None)?;
    let decoder = Decoder::Rpa {
        tree,
        kind: RpaKind::Soft(Aggregation::Soft),
        config: RpaConfig::default(),
        weights: None,
    };
    let crossing = find_bler_crossing(spec, &decoder, target_bler, lo_db, hi_db, metric, trials, seed, 0.02)?;
    Ok(crossing + offset_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::subcode_generator;
    use crate::prune::plan_from_weights;

    fn small() -> (CodeSpec, ProjectionTree) {
        let spec = subcode_generator(4, 2, 8, &[0, 2, 5]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        (spec, tree)
    }

    #[test]
    fn uniform_state_gives_uniform_weights() {
        let (_, tree) = small();
        let state = WeightState::uniform(&tree, 5, 0.1).unwrap();
        let w = state.node_weights(&tree, SinkhornConfig::default()).unwrap();
        for v in w[0].as_ref().unwrap() {
            assert!((v - 1.0 / 15.0).abs() < 1e-15);
        }
        assert!(WeightState::uniform(&tree, 15, 0.1).is_err());
    }

    #[test]
    fn weight_file_round_trip() {
        let (_, tree) = small();
        let mut state = WeightState::uniform(&tree, 5, 0.1).unwrap();
        state.nodes_mut()[0].scores[3] = 0.7;
        state.meta.insert("seed".into(), "4".into());
        let mut buf = Vec::new();
        state.write_to(&mut buf).unwrap();
        let back = WeightState::read_from(&buf[..]).unwrap();
        assert_eq!(back, state);
        assert!(WeightState::read_from("node /\n1 0.0\n".as_bytes()).is_err());
    }

    #[test]
    fn symmetric_code_gives_symmetric_gradient() {
        // RM(4,2) itself: every projection is the full RM(3,1), so swapping
        // subspaces by a coordinate permutation leaves the problem unchanged.
        let spec = subcode_generator(4, 2, 11, &(0..6).collect::<Vec<_>>()).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        let state = WeightState::uniform(&tree, 5, 0.2).unwrap();
        let config = TrainConfig { q0: 5, epsilon: 0.2, ..TrainConfig::default() };
        // All-zero codeword with identical LLRs everywhere is invariant under
        // every permutation of F_2^4 fixing 0.
        let batch = Batch { codewords: vec![vec![0; 16]], llrs: vec![vec![0.8; 16]] };
        let (_, g) = score_gradient(&tree, &state, &batch, &config).unwrap();
        for v in &g[0] {
            assert!((v - g[0][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_mode_matches_finite_differences() {
        let (spec, tree) = small();
        let mut state = WeightState::uniform(&tree, 5, 0.2).unwrap();
        for (i, s) in state.nodes_mut()[0].scores.iter_mut().enumerate() {
            *s = 0.1 * (i as f64 * 0.9).sin();
        }
        let sigma = snr_to_sigma(SnrMetric::Snr, 1.0, 16, 8);
        let batch = Batch::sample(&spec, sigma, 8, 0, 5).unwrap();
        let rev = TrainConfig { q0: 5, epsilon: 0.2, ..TrainConfig::default() };
        let fd = TrainConfig { gradient: GradientMode::FiniteDifference { step: 1e-3 }, ..rev.clone() };
        let (l1, g1) = score_gradient(&tree, &state, &batch, &rev).unwrap();
        let (l2, g2) = score_gradient(&tree, &state, &batch, &fd).unwrap();
        assert_eq!(l1, l2);
        let norm: f64 = g2[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = g1[0].iter().zip(&g2[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * norm, "{diff} vs {norm}");
    }

    #[test]
    fn short_training_reduces_loss_and_keeps_simplex() {
        let (spec, tree) = small();
        let config = TrainConfig {
            q0: 5,
            epsilon: 0.2,
            batch_size: 32,
            iterations: 50,
            learning_rate: 0.05,
            snr_db: 0.0,
            ..TrainConfig::default()
        };
        let out = train_on_tree(&spec, &tree, &config, None).unwrap();
        let first: f64 = out.losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = out.losses[40..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "{first} -> {last}");
        let w = out.state.node_weights(&tree, SinkhornConfig::default()).unwrap();
        let w = w[0].as_ref().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        let plan = plan_from_weights(&out.state, 5).unwrap();
        assert_eq!(plan.get(&[]).unwrap().len(), 5);
    }

    #[test]
    fn finite_difference_training_is_deterministic() {
        let (spec, tree) = small();
        let config = TrainConfig {
            q0: 5,
            epsilon: 0.2,
            batch_size: 4,
            iterations: 3,
            gradient: GradientMode::FiniteDifference { step: 1e-3 },
            ..TrainConfig::default()
        };
        let a = train_on_tree(&spec, &tree, &config, None).unwrap();
        let b = train_on_tree(&spec, &tree, &config, None).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.losses, b.losses);
    }
}
