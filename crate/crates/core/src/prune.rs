//! Projection selection: which 1-D subspaces each tree node keeps.
//!
//! A node is addressed by the path of subspace integers leading to it from
//! the root; the root is the empty path, written `/`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::construct::CodeSpec;
use crate::error::{Error, Result};
use crate::gf2::BitMatrix;
use crate::project::{project_generator, CosetTable, Subspace1D};
use crate::train::WeightState;

/// Selected subspaces per tree node. Nodes without an entry keep every
/// subspace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PruningPlan {
    nodes: BTreeMap<Vec<u32>, Vec<u32>>,
}

impl PruningPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Plan that only restricts the root.
    pub fn root_only(selection: Vec<u32>) -> Result<Self> {
        let mut plan = Self::new();
        plan.insert(Vec::new(), selection)?;
        Ok(plan)
    }

    /// Sets the selection at `path`; entries are stored ascending.
    pub fn insert(&mut self, path: Vec<u32>, mut selection: Vec<u32>) -> Result<()> {
        if selection.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "node {} selects no subspaces",
                format_path(&path)
            )));
        }
        selection.sort_unstable();
        if selection.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "node {} selects a subspace twice",
                format_path(&path)
            )));
        }
        if selection.contains(&0) {
            return Err(Error::InvalidParameter("subspace 0 is not a valid subspace".into()));
        }
        self.nodes.insert(path, selection);
        Ok(())
    }

    pub fn get(&self, path: &[u32]) -> Option<&[u32]> {
        self.nodes.get(path).map(Vec::as_slice)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&Vec<u32>, &Vec<u32>)> {
        self.nodes.iter()
    }

    /// Fraction of the node's subspaces kept, for a node on `F_2^m`.
    pub fn beta(&self, path: &[u32], m: usize) -> f64 {
        let q = ((1u64 << m) - 1) as f64;
        self.get(path).map_or(1.0, |s| s.len() as f64 / q)
    }

    /// Line format: `node /a/b` headers, then one subspace integer per line.
    /// `#` starts a comment.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (path, sel) in &self.nodes {
            writeln!(w, "node {}", format_path(path))?;
            for q in sel {
                writeln!(w, "{q}")?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut plan = Self::new();
        let mut current: Option<(usize, Vec<u32>, Vec<u32>)> = None;
        let flush = |cur: Option<(usize, Vec<u32>, Vec<u32>)>, plan: &mut Self| -> Result<()> {
            if let Some((line, path, sel)) = cur {
                plan.insert(path, sel)
                    .map_err(|e| Error::parse(line, e.to_string()))?;
            }
            Ok(())
        };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let text = line.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            if let Some(rest) = text.strip_prefix("node") {
                flush(current.take(), &mut plan)?;
                let path = parse_path(rest.trim()).map_err(|e| Error::parse(i + 1, e))?;
                current = Some((i + 1, path, Vec::new()));
            } else {
                let q: u32 = text
                    .parse()
                    .map_err(|_| Error::parse(i + 1, format!("expected a subspace integer, got {text:?}")))?;
                match current.as_mut() {
                    Some((_, _, sel)) => sel.push(q),
                    // A bare list with no header applies to the root.
                    None => current = Some((i + 1, Vec::new(), vec![q])),
                }
            }
        }
        flush(current, &mut plan)?;
        Ok(plan)
    }
}

pub fn format_path(path: &[u32]) -> String {
    if path.is_empty() {
        "/".to_string()
    } else {
        path.iter().map(|q| format!("/{q}")).collect()
    }
}

pub fn parse_path(text: &str) -> std::result::Result<Vec<u32>, String> {
    if !text.starts_with('/') {
        return Err(format!("node path {text:?} must start with '/'"));
    }
    text.split('/')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<u32>().map_err(|_| format!("bad path component {p:?}")))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RankOrder {
    Smallest,
    Largest,
}

/// Walks the projection tree, calling `choose(path, m, ranks)` at every inner
/// node with the ranks of the projected generators of all its subspaces, and
/// recursing only into the chosen ones.
fn plan_by_walk(
    spec: &CodeSpec,
    choose: &mut dyn FnMut(&[u32], usize, &[(u32, usize)]) -> Result<Vec<u32>>,
) -> Result<PruningPlan> {
    fn walk(
        g: &BitMatrix,
        m: usize,
        depth: usize,
        path: Vec<u32>,
        plan: &mut PruningPlan,
        choose: &mut dyn FnMut(&[u32], usize, &[(u32, usize)]) -> Result<Vec<u32>>,
    ) -> Result<()> {
        if depth == 0 {
            return Ok(());
        }
        let mut projected = Vec::with_capacity((1 << m) - 1);
        for q in Subspace1D::all(m) {
            let gp = project_generator(g, &CosetTable::one_dim(m, q)?)?;
            projected.push((q.value(), gp));
        }
        let ranks: Vec<(u32, usize)> = projected.iter().map(|(q, gp)| (*q, gp.rank())).collect();
        let selection = choose(&path, m, &ranks)?;
        plan.insert(path.clone(), selection.clone())?;
        for q in selection {
            let gp = &projected[q as usize - 1].1;
            let mut child = path.clone();
            child.push(q);
            walk(gp, m - 1, depth - 1, child, plan, choose)?;
        }
        Ok(())
    }
    let mut plan = PruningPlan::new();
    walk(
        spec.generator(),
        spec.m,
        spec.r.saturating_sub(1),
        Vec::new(),
        &mut plan,
        choose,
    )?;
    Ok(plan)
}

fn check_p(p: usize, q: usize, path: &[u32]) -> Result<()> {
    if p == 0 || p > q {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {p} of {q} subspaces at node {}",
            format_path(path)
        )));
    }
    Ok(())
}

fn plan_by_rank(spec: &CodeSpec, p: usize, order: RankOrder) -> Result<PruningPlan> {
    plan_by_walk(spec, &mut |path, _m, ranks| {
        check_p(p, ranks.len(), path)?;
        let mut sorted = ranks.to_vec();
        match order {
            RankOrder::Smallest => sorted.sort_by_key(|&(q, r)| (r, q)),
            RankOrder::Largest => sorted.sort_by_key(|&(q, r)| (std::cmp::Reverse(r), q)),
        }
        Ok(sorted.iter().take(p).map(|&(q, _)| q).collect())
    })
}

/// Keeps, at every node, the `p` subspaces with the smallest projected rank
/// (ties: smaller subspace integer first).
pub fn plan_minrank(spec: &CodeSpec, p: usize) -> Result<PruningPlan> {
    plan_by_rank(spec, p, RankOrder::Smallest)
}

/// Keeps the `p` subspaces with the largest projected rank.
pub fn plan_maxrank(spec: &CodeSpec, p: usize) -> Result<PruningPlan> {
    plan_by_rank(spec, p, RankOrder::Largest)
}

/// Keeps `p` subspaces drawn uniformly without replacement at every node.
pub fn plan_random(spec: &CodeSpec, p: usize, seed: u64) -> Result<PruningPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan_by_walk(spec, &mut |path, _m, ranks| {
        check_p(p, ranks.len(), path)?;
        Ok(sample(&mut rng, ranks.len(), p)
            .into_iter()
            .map(|i| ranks[i].0)
            .collect())
    })
}

/// Keeps the `p` largest weights at every trained node (ties: smaller
/// subspace integer first).
pub fn plan_from_weights(weights: &WeightState, p: usize) -> Result<PruningPlan> {
    let mut plan = PruningPlan::new();
    for node in weights.nodes() {
        check_p(p, node.subspaces.len(), &node.path)?;
        let w = node.weights(weights.q0, weights.epsilon)?;
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| {
            w[b].partial_cmp(&w[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(node.subspaces[a].cmp(&node.subspaces[b]))
        });
        plan.insert(
            node.path.clone(),
            order.iter().take(p).map(|&i| node.subspaces[i]).collect(),
        )?;
    }
    Ok(plan)
}

/// A selection strategy as written on the command line:
/// `full`, `minrank:P`, `maxrank:P`, `random:P:SEED`, `weights:FILE:P` or
/// `plan:FILE`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PruneStrategy {
    Full,
    MinRank(usize),
    MaxRank(usize),
    Random { p: usize, seed: u64 },
    Weights { file: String, p: usize },
    PlanFile(String),
}

impl PruneStrategy {
    pub fn build(&self, spec: &CodeSpec) -> Result<Option<PruningPlan>> {
        Ok(match self {
            PruneStrategy::Full => None,
            PruneStrategy::MinRank(p) => Some(plan_minrank(spec, *p)?),
            PruneStrategy::MaxRank(p) => Some(plan_maxrank(spec, *p)?),
            PruneStrategy::Random { p, seed } => Some(plan_random(spec, *p, *seed)?),
            PruneStrategy::Weights { file, p } => {
                let state = WeightState::read_from(std::io::BufReader::new(
                    std::fs::File::open(file)?,
                ))?;
                Some(plan_from_weights(&state, *p)?)
            }
            PruneStrategy::PlanFile(file) => Some(PruningPlan::read_from(
                std::io::BufReader::new(std::fs::File::open(file)?),
            )?),
        })
    }
}

impl FromStr for PruneStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<usize>().map_err(|_| format!("bad count {t:?} in {s:?}"));
        match parts.as_slice() {
            ["full"] => Ok(PruneStrategy::Full),
            ["minrank", p] => Ok(PruneStrategy::MinRank(num(p)?)),
            ["maxrank", p] => Ok(PruneStrategy::MaxRank(num(p)?)),
            ["random", p, seed] => Ok(PruneStrategy::Random {
                p: num(p)?,
                seed: seed.parse().map_err(|_| format!("bad seed {seed:?}"))?,
            }),
            ["weights", file, p] => Ok(PruneStrategy::Weights {
                file: file.to_string(),
                p: num(p)?,
            }),
            ["plan", file] => Ok(PruneStrategy::PlanFile(file.to_string())),
            _ => Err(format!(
                "unknown pruning strategy {s:?}; expected full, minrank:P, maxrank:P, random:P:SEED, weights:FILE:P or plan:FILE"
            )),
        }
    }
}

impl fmt::Display for PruneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneStrategy::Full => write!(f, "full"),
            PruneStrategy::MinRank(p) => write!(f, "minrank:{p}"),
            PruneStrategy::MaxRank(p) => write!(f, "maxrank:{p}"),
            PruneStrategy::Random { p, seed } => write!(f, "random:{p}:{seed}"),
            PruneStrategy::Weights { file, p } => write!(f, "weights:{file}:{p}"),
            PruneStrategy::PlanFile(file) => write!(f, "plan:{file}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{complexity_metric_l, subcode_generator};
    use crate::project::leaf_ranks;
    use itertools::Itertools;
    use proptest::prelude::*;

    fn ranks_of(spec: &CodeSpec, plan: &PruningPlan) -> Vec<usize> {
        let mut r: Vec<usize> = leaf_ranks(spec.generator(), spec.m, spec.r, Some(plan))
            .unwrap()
            .iter()
            .map(|l| l.rank)
            .collect();
        r.sort_unstable();
        r
    }

    #[test]
    fn full_p_is_identity() {
        let spec = subcode_generator(4, 2, 8, &[0, 2, 5]).unwrap();
        let all: Vec<u32> = (1..16).collect();
        for plan in [
            plan_minrank(&spec, 15).unwrap(),
            plan_maxrank(&spec, 15).unwrap(),
            plan_random(&spec, 15, 1).unwrap(),
            plan_random(&spec, 15, 2).unwrap(),
        ] {
            assert_eq!(plan.get(&[]).unwrap(), all.as_slice());
        }
        assert!(plan_minrank(&spec, 16).is_err());
        assert!(plan_minrank(&spec, 0).is_err());
    }

    #[test]
    fn random_plan_is_reproducible() {
        let spec = subcode_generator(5, 2, 9, &[0, 2, 5]).unwrap();
        assert_eq!(plan_random(&spec, 7, 9).unwrap(), plan_random(&spec, 7, 9).unwrap());
        assert_ne!(plan_random(&spec, 7, 9).unwrap(), plan_random(&spec, 7, 10).unwrap());
    }

    #[test]
    fn random_plan_coverage_is_uniform() {
        let spec = subcode_generator(4, 2, 8, &[0, 2, 5]).unwrap();
        let (p, q, seeds) = (5usize, 15usize, 1000usize);
        let mut counts = vec![0usize; q + 1];
        for seed in 0..seeds {
            for &s in plan_random(&spec, p, seed as u64).unwrap().get(&[]).unwrap() {
                counts[s as usize] += 1;
            }
        }
        let mean = seeds as f64 * p as f64 / q as f64;
        let sd = (seeds as f64 * (p as f64 / q as f64) * (1.0 - p as f64 / q as f64)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - mean).abs() <= 3.5 * sd, "{c} vs {mean}");
        }
    }

    #[test]
    fn minrank_minimises_subset_sum_exhaustively() {
        let spec = subcode_generator(4, 2, 7, &[1, 4]).unwrap();
        for p in 1..=4 {
            let plan = plan_minrank(&spec, p).unwrap();
            let best = complexity_metric_l(&spec, Some(&plan)).unwrap();
            for subset in (1u32..16).combinations(p) {
                let other = PruningPlan::root_only(subset).unwrap();
                assert!(best <= complexity_metric_l(&spec, Some(&other)).unwrap());
            }
        }
    }

    #[test]
    fn deeper_plans_cover_every_kept_node() {
        let spec = subcode_generator(5, 3, 20, &[0, 3, 6, 9]).unwrap();
        let plan = plan_minrank(&spec, 4).unwrap();
        assert_eq!(plan.nodes().count(), 5);
        assert_eq!(ranks_of(&spec, &plan).len(), 16);
    }

    #[test]
    fn plan_file_round_trip() {
        let spec = subcode_generator(5, 3, 20, &[0, 3, 6, 9]).unwrap();
        let plan = plan_maxrank(&spec, 3).unwrap();
        let mut buf = Vec::new();
        plan.write_to(&mut buf).unwrap();
        assert_eq!(PruningPlan::read_from(&buf[..]).unwrap(), plan);

        let bare = "# root only\n3\n1\n7\n";
        assert_eq!(PruningPlan::read_from(bare.as_bytes()).unwrap().get(&[]).unwrap(), &[1, 3, 7]);
        assert!(matches!(
            PruningPlan::read_from("node /\n3\n3\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            PruningPlan::read_from("node /\nx\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn strategy_parsing() {
        for s in ["full", "minrank:15", "maxrank:3", "random:15:42", "weights:w.txt:7", "plan:p.txt"] {
            assert_eq!(s.parse::<PruneStrategy>().unwrap().to_string(), s);
        }
        assert!("minrank".parse::<PruneStrategy>().is_err());
        assert!("random:3".parse::<PruneStrategy>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn minrank_never_costs_more_than_maxrank(
            sel in proptest::sample::subsequence((0..10usize).collect::<Vec<_>>(), 1..10),
            p in 1usize..31,
        ) {
            let spec = subcode_generator(5, 2, 6 + sel.len(), &sel).unwrap();
            let lo = complexity_metric_l(&spec, Some(&plan_minrank(&spec, p).unwrap())).unwrap();
            let hi = complexity_metric_l(&spec, Some(&plan_maxrank(&spec, p).unwrap())).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn weight_plans_ignore_monotone_score_transforms(
            scores in proptest::collection::vec(-1.0f64..1.0, 15),
            p in 1usize..15,
        ) {
            let spec = subcode_generator(4, 2, 8, &[0, 2, 5]).unwrap();
            let tree = crate::project::build_projection_tree(&spec, None).unwrap();
            let mut a = WeightState::uniform(&tree, 5, 0.1).unwrap();
            a.nodes_mut()[0].scores = scores.clone();
            let mut b = a.clone();
            b.nodes_mut()[0].scores = scores.iter().map(|s| 0.5 * s + 0.2 * s.powi(3) + 1.0).collect();
            let mut sorted = scores.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            // Skip near-ties at the cut, where the selection is not well defined.
            prop_assume!(sorted[p - 1] - sorted[p] > 1e-3);
            let (pa, pb) = (plan_from_weights(&a, p).unwrap(), plan_from_weights(&b, p).unwrap());
            prop_assert_eq!(pa.get(&[]), pb.get(&[]));
        }
    }
}
