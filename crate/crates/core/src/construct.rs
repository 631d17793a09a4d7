//! Reed-Muller codes, RM subcodes and the encoder search over the extra
//! rows.
//!
//! Every generator is built from rows of `P = [[1,0],[1,1]]^{⊗m}`. Row `i` of
//! `P` has a one in column `j` exactly when the bits of `j` are a subset of
//! the bits of `i`, so its weight is `2^{popcount(i)}`.

use std::io::{BufRead, Write};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gf2::{rank_u128, BitMatrix};
use crate::project::{leaf_ranks, CosetTable, Subspace1D};
use crate::prune::PruningPlan;

/// Default cap on the number of selections scored exhaustively.
pub const DEFAULT_SEARCH_GUARD: u128 = 1_000_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `Σ_{i<r} C(m,i)`, the dimension of `RM(m, r-1)`.
pub fn k_lower(m: usize, r: usize) -> usize {
    (0..r).map(|i| binomial(m, i) as usize).sum()
}

/// `Σ_{i≤r} C(m,i)`, the dimension of `RM(m, r)`.
pub fn k_upper(m: usize, r: usize) -> usize {
    k_lower(m, r + 1)
}

fn p_row(m: usize, i: usize) -> Vec<u8> {
    (0..1usize << m).map(|j| (j & !i == 0) as u8).collect()
}

/// Indices of `P` rows of weight `2^{m-r}`, ascending. Position in this list
/// is the candidate index used by selections.
pub fn candidate_rows(m: usize, r: usize) -> Vec<usize> {
    (0..1usize << m)
        .filter(|i| i.count_ones() as usize == m - r)
        .collect()
}

fn check_order(m: usize, r: usize) -> Result<()> {
    if m == 0 || m > 16 {
        return Err(Error::InvalidParameter(format!("m = {m} not in 1..=16")));
    }
    if r > m {
        return Err(Error::InvalidParameter(format!("order r = {r} exceeds m = {m}")));
    }
    Ok(())
}

/// Generator of `RM(m, r)`: the rows of `P` with weight at least `2^{m-r}`,
/// by decreasing weight and then ascending row index.
pub fn rm_generator(m: usize, r: usize) -> Result<BitMatrix> {
    check_order(m, r)?;
    let mut idx: Vec<usize> = (0..1usize << m)
        .filter(|i| i.count_ones() as usize >= m - r)
        .collect();
    idx.sort_by_key(|&i| (std::cmp::Reverse(i.count_ones()), i));
    let rows: Vec<Vec<u8>> = idx.iter().map(|&i| p_row(m, i)).collect();
    BitMatrix::from_rows(&rows)
}

/// An RM subcode: `RM(m, r-1)` plus `k - k_l` of the weight-`2^{m-r}` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpec {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub k: usize,
    generator: BitMatrix,
    /// Candidate indices of the extra rows, ascending.
    pub selected_rows: Vec<usize>,
}

impl CodeSpec {
    pub fn generator(&self) -> &BitMatrix {
        &self.generator
    }

    pub fn k_l(&self) -> usize {
        k_lower(self.m, self.r)
    }

    pub fn k_u(&self) -> usize {
        k_upper(self.m, self.r)
    }

    pub fn encode(&self, u: &[u8]) -> Result<Vec<u8>> {
        self.generator.encode(u)
    }

    /// Writes the `m r k` header and one row of `0`/`1` characters per line.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.m, self.r, self.k)?;
        write!(w, "{}", self.generator)
    }

    /// Reads a generator file. Rows must be in the layout produced by
    /// [`subcode_generator`]: the `RM(m, r-1)` rows first, then the extra
    /// rows in ascending candidate order.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut content = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = content
            .next()
            .ok_or_else(|| Error::parse(1, "empty generator file"))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(hline + 1, format!("bad header: {e}")))?;
        let [m, order, k] = nums[..] else {
            return Err(Error::parse(hline + 1, "header must be `m r k`"));
        };
        check_order(m, order).map_err(|e| Error::parse(hline + 1, e.to_string()))?;
        let body: Vec<(usize, &String)> = content.collect();
        if body.len() != k {
            return Err(Error::parse(
                hline + 1,
                format!("header declares k = {k} but {} rows follow", body.len()),
            ));
        }
        let mut rows = Vec::with_capacity(k);
        for (line, text) in &body {
            let row = BitMatrix::parse_rows([text.as_str()])
                .map_err(|e| Error::parse(line + 1, e.to_string()))?;
            if row.cols() != 1 << m {
                return Err(Error::parse(
                    line + 1,
                    format!("row has {} entries, expected {}", row.cols(), 1 << m),
                ));
            }
            rows.push(row.row_bits(0));
        }
        let k_l = k_lower(m, order);
        if k <= k_l || k > k_upper(m, order) {
            return Err(Error::parse(hline + 1, format!("k = {k} outside ({k_l}, k_u]")));
        }
        if k_l > 0 {
            let base = rm_generator(m, order - 1)?;
            for (i, row) in rows.iter().take(k_l).enumerate() {
                if *row != base.row_bits(i) {
                    return Err(Error::parse(
                        body[i].0 + 1,
                        format!("row {i} is not row {i} of the RM(m, r-1) generator"),
                    ));
                }
            }
        }
        let cands = candidate_rows(m, order);
        let mut selection = Vec::with_capacity(k - k_l);
        for (i, row) in rows.iter().enumerate().skip(k_l) {
            let pos = cands
                .iter()
                .position(|&c| p_row(m, c) == *row)
                .ok_or_else(|| {
                    Error::parse(body[i].0 + 1, "row is not a weight-2^{m-r} row of P")
                })?;
            selection.push(pos);
        }
        if selection.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parse(
                body[k_l].0 + 1,
                "extra rows must be distinct and in ascending candidate order",
            ));
        }
        subcode_generator(m, order, k, &selection)
    }
}

/// Stacks the `RM(m, r-1)` generator with the selected candidate rows.
pub fn subcode_generator(m: usize, r: usize, k: usize, selection: &[usize]) -> Result<CodeSpec> {
    check_order(m, r)?;
    let k_l = k_lower(m, r);
    let k_u = k_upper(m, r);
    if k <= k_l || k > k_u {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must satisfy {k_l} < k <= {k_u}"
        )));
    }
    if selection.len() != k - k_l {
        return Err(Error::InvalidParameter(format!(
            "selection has {} rows, expected k - k_l = {}",
            selection.len(),
            k - k_l
        )));
    }
    let cands = candidate_rows(m, r);
    let mut sel = selection.to_vec();
    sel.sort_unstable();
    if sel.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("selection repeats a row".into()));
    }
    if let Some(&bad) = sel.iter().find(|&&s| s >= cands.len()) {
        return Err(Error::InvalidParameter(format!(
            "selection index {bad} out of range 0..{}",
            cands.len()
        )));
    }
    let mut rows: Vec<Vec<u8>> = if r == 0 {
        Vec::new()
    } else {
        let base = rm_generator(m, r - 1)?;
        (0..base.rows()).map(|i| base.row_bits(i)).collect()
    };
    rows.extend(sel.iter().map(|&s| p_row(m, cands[s])));
    Ok(CodeSpec {
        m,
        r,
        n: 1 << m,
        k,
        generator: BitMatrix::from_rows(&rows)?,
        selected_rows: sel,
    })
}

/// `L = Σ_t 2^{R_t}` over the bottom-layer projected codes reached through
/// `plan` (all subspaces when `None`).
pub fn complexity_metric_l(spec: &CodeSpec, plan: Option<&PruningPlan>) -> Result<u64> {
    Ok(leaf_ranks(spec.generator(), spec.m, spec.r, plan)?
        .iter()
        .map(|lr| 1u64 << lr.rank)
        .sum())
}

/// What [`encoder_search`] optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    MinL,
    MaxL,
    /// Minimise the sum of the `Q0` smallest leaf terms `2^{R_t}`.
    MinLOnSubspaces(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub selection: Vec<usize>,
    pub l_full: u64,
    /// Sum of the `Q0` smallest terms, for [`Objective::MinLOnSubspaces`].
    pub l_subset: Option<u64>,
}

impl Candidate {
    fn score(&self) -> u64 {
        self.l_subset.unwrap_or(self.l_full)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderSearchResult {
    pub objective: Objective,
    /// Scored selections, in lexicographic order for exhaustive search.
    pub candidates: Vec<Candidate>,
    /// Index of the optimum of the objective (first in lexicographic order on
    /// ties).
    pub best: usize,
    pub argmin: usize,
    pub argmax: usize,
}

impl EncoderSearchResult {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.best]
    }

    /// Distinct objective scores, descending.
    pub fn distinct_scores_desc(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.candidates.iter().map(Candidate::score).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s.dedup();
        s
    }
}

/// Per-leaf data for fast scoring: each candidate row projected down to the
/// leaf and reduced against the projected `RM(m, r-1)` rows.
struct LeafTable {
    base_rank: usize,
    reduced: Vec<u128>,
}

struct Scorer {
    leaves: Vec<LeafTable>,
}

impl Scorer {
    fn new(m: usize, r: usize) -> Result<Self> {
        check_order(m, r)?;
        let depth = r.saturating_sub(1);
        if m - depth > 7 {
            return Err(Error::InvalidParameter(format!(
                "encoder search supports leaf lengths up to 128, got 2^{}",
                m - depth
            )));
        }
        let base: Vec<Vec<u8>> = if r == 0 {
            Vec::new()
        } else {
            let g = rm_generator(m, r - 1)?;
            (0..g.rows()).map(|i| g.row_bits(i)).collect()
        };
        let extra: Vec<Vec<u8>> = candidate_rows(m, r).iter().map(|&c| p_row(m, c)).collect();

        let tables: Vec<Vec<CosetTable>> = (0..=m)
            .map(|mm| {
                if mm == 0 || mm + depth <= m {
                    Vec::new()
                } else {
                    Subspace1D::all(mm)
                        .map(|q| CosetTable::one_dim(mm, q))
                        .collect::<Result<Vec<_>>>()
                        .unwrap_or_default()
                }
            })
            .collect();

        let mut rows: Vec<Vec<u8>> = base.clone();
        rows.extend(extra);
        let mut leaves = Vec::new();
        collect_leaves(&rows, m, depth, &tables, &mut |proj: &[Vec<u8>]| {
            let packed: Vec<u128> = proj.iter().map(|v| pack(v)).collect();
            let (b, e) = packed.split_at(base.len());
            let echelon = echelon_u128(b);
            leaves.push(LeafTable {
                base_rank: echelon.iter().filter(|v| **v != 0).count(),
                reduced: e.iter().map(|&v| reduce_u128(&echelon, v)).collect(),
            });
        });
        Ok(Scorer { leaves })
    }

    fn terms(&self, selection: &[usize]) -> Vec<u64> {
        self.leaves
            .iter()
            .map(|leaf| {
                let extra = rank_u128(selection.iter().map(|&s| leaf.reduced[s]));
                1u64 << (leaf.base_rank + extra)
            })
            .collect()
    }

    fn candidate(&self, selection: Vec<usize>, objective: Objective) -> Candidate {
        let mut terms = self.terms(&selection);
        let l_full = terms.iter().sum();
        let l_subset = match objective {
            Objective::MinLOnSubspaces(q0) => {
                terms.sort_unstable();
                Some(terms.iter().take(q0).sum())
            }
            _ => None,
        };
        Candidate {
            selection,
            l_full,
            l_subset,
        }
    }
}

fn collect_leaves(
    rows: &[Vec<u8>],
    m: usize,
    depth: usize,
    tables: &[Vec<CosetTable>],
    f: &mut impl FnMut(&[Vec<u8>]),
) {
    if depth == 0 {
        f(rows);
        return;
    }
    for t in &tables[m] {
        let proj: Vec<Vec<u8>> = rows
            .iter()
            .map(|row| {
                (0..t.len())
                    .map(|c| t.coset(c).iter().fold(0, |a, &z| a ^ row[z as usize]))
                    .collect()
            })
            .collect();
        collect_leaves(&proj, m - 1, depth - 1, tables, f);
    }
}

fn pack(bits: &[u8]) -> u128 {
    bits.iter()
        .enumerate()
        .fold(0u128, |acc, (i, &b)| acc | ((b as u128) << i))
}

/// Basis indexed by leading bit (zero where no basis vector leads).
fn echelon_u128(rows: &[u128]) -> Vec<u128> {
    let mut basis = vec![0u128; 128];
    for &row in rows {
        let v = reduce_u128(&basis, row);
        if v != 0 {
            basis[127 - v.leading_zeros() as usize] = v;
        }
    }
    basis
}

/// Fully reduced representative of `v` modulo the span of `basis`.
fn reduce_u128(basis: &[u128], mut v: u128) -> u128 {
    for bit in (0..128).rev() {
        if (v >> bit) & 1 == 1 && basis[bit] != 0 {
            v ^= basis[bit];
        }
    }
    v
}

fn pick_extrema(cands: &[Candidate], objective: Objective) -> (usize, usize, usize) {
    let mut argmin = 0;
    let mut argmax = 0;
    for (i, c) in cands.iter().enumerate() {
        if c.score() < cands[argmin].score() {
            argmin = i;
        }
        if c.score() > cands[argmax].score() {
            argmax = i;
        }
    }
    let best = match objective {
        Objective::MaxL => argmax,
        _ => argmin,
    };
    (best, argmin, argmax)
}

/// Scores every selection of `k - k_l` candidate rows.
pub fn encoder_search(
    m: usize,
    r: usize,
    k: usize,
    objective: Objective,
    guard: u128,
) -> Result<EncoderSearchResult> {
    check_order(m, r)?;
    let (k_l, k_u) = (k_lower(m, r), k_upper(m, r));
    if k <= k_l || k > k_u {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must satisfy {k_l} < k <= {k_u}"
        )));
    }
    let count = binomial(k_u - k_l, k - k_l);
    if count > guard {
        return Err(Error::SearchGuard { count, guard });
    }
    let scorer = Scorer::new(m, r)?;
    let selections: Vec<Vec<usize>> = (0..k_u - k_l).combinations(k - k_l).collect();
    let candidates: Vec<Candidate> = selections
        .into_par_iter()
        .map(|s| scorer.candidate(s, objective))
        .collect();
    let (best, argmin, argmax) = pick_extrema(&candidates, objective);
    Ok(EncoderSearchResult {
        objective,
        candidates,
        best,
        argmin,
        argmax,
    })
}

/// Random-restart local search for designs too large to enumerate. Each
/// restart starts from a uniform random selection and applies improving
/// single-row swaps until none is left; the local optima are returned.
pub fn encoder_search_sampled(
    m: usize,
    r: usize,
    k: usize,
    objective: Objective,
    restarts: usize,
    seed: u64,
) -> Result<EncoderSearchResult> {
    check_order(m, r)?;
    let (k_l, k_u) = (k_lower(m, r), k_upper(m, r));
    if k <= k_l || k > k_u {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must satisfy {k_l} < k <= {k_u}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be positive".into()));
    }
    let scorer = Scorer::new(m, r)?;
    let width = k_u - k_l;
    let take = k - k_l;
    let better = |a: u64, b: u64| match objective {
        Objective::MaxL => a > b,
        _ => a < b,
    };
    let mut candidates: Vec<Candidate> = (0..restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            let mut pool: Vec<usize> = (0..width).collect();
            pool.shuffle(&mut rng);
            let mut sel: Vec<usize> = pool[..take].to_vec();
            sel.sort_unstable();
            let mut cur = scorer.candidate(sel, objective);
            loop {
                let mut improved = false;
                let outside: Vec<usize> =
                    (0..width).filter(|c| !cur.selection.contains(c)).collect();
                let start = rng.gen_range(0..take);
                'moves: for off in 0..take {
                    let pos = (start + off) % take;
                    for &add in &outside {
                        let mut next = cur.selection.clone();
                        next[pos] = add;
                        next.sort_unstable();
                        let cand = scorer.candidate(next, objective);
                        if better(cand.score(), cur.score()) {
                            cur = cand;
                            improved = true;
                            break 'moves;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            cur
        })
        .collect();
    candidates.sort_by(|a, b| a.selection.cmp(&b.selection));
    candidates.dedup_by(|a, b| a.selection == b.selection);
    let (best, argmin, argmax) = pick_extrema(&candidates, objective);
    Ok(EncoderSearchResult {
        objective,
        candidates,
        best,
        argmin,
        argmax,
    })
}
