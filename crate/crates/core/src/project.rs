//! Projections onto cosets of subspaces of `F_2^m`, projected generator
//! matrices, and the precomputed projection tree used by the recursive
//! decoders.
//!
//! Points `z ∈ F_2^m` are the integers `0..2^m`; a 1-D subspace `{0, z_q}` is
//! identified with the integer `z_q ∈ [1, 2^m)`. Cosets are listed in
//! ascending order of their smallest member. For a 1-D subspace the coset
//! index is a linear bijection `F_2^m / B → F_2^{m-1}`, so a projected vector
//! is again indexed by points of a smaller space and the recursion can project
//! it further.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gf2::{de2bi, BitMatrix};
use crate::llr::{boxplus, bpsk};
use crate::prune::PruningPlan;

/// Nonzero vector spanning a 1-D subspace of `F_2^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subspace1D(u32);

impl Subspace1D {
    pub fn new(m: usize, z: u32) -> Result<Self> {
        if z == 0 || (z as u64) >= (1u64 << m) {
            return Err(Error::InvalidParameter(format!(
                "subspace {z} is not a nonzero vector of F_2^{m}"
            )));
        }
        Ok(Subspace1D(z))
    }

    pub fn value(self) -> u32 {
        self.0
    }

    /// All `2^m - 1` one-dimensional subspaces in ascending order.
    pub fn all(m: usize) -> impl Iterator<Item = Subspace1D> {
        (1..(1u32 << m)).map(Subspace1D)
    }
}

/// Cosets of a subspace `B` of `F_2^m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CosetTable {
    m: usize,
    dim: usize,
    /// Coset members, `2^dim` per coset, each block sorted ascending.
    members: Vec<u32>,
    coset_of: Vec<u32>,
}

impl CosetTable {
    /// Cosets of the span of `basis`, which must be linearly independent.
    pub fn new(m: usize, basis: &[u32]) -> Result<Self> {
        if m == 0 || m > 24 {
            return Err(Error::InvalidParameter(format!("m = {m} not in 1..=24")));
        }
        let n = 1usize << m;
        if basis.iter().any(|&b| b as usize >= n) {
            return Err(Error::InvalidParameter("basis vector outside F_2^m".into()));
        }
        let rows: Vec<u128> = basis.iter().map(|&b| b as u128).collect();
        if crate::gf2::rank_u128(rows) != basis.len() || basis.len() > m {
            return Err(Error::InvalidParameter(
                "subspace basis is not linearly independent".into(),
            ));
        }
        let dim = basis.len();
        let span: Vec<u32> = (0u32..(1 << dim))
            .map(|mask| {
                basis
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (mask >> i) & 1 == 1)
                    .fold(0, |acc, (_, &b)| acc ^ b)
            })
            .collect();
        let mut coset_of = vec![u32::MAX; n];
        let mut members = Vec::with_capacity(n);
        let mut count = 0u32;
        for z in 0..n as u32 {
            if coset_of[z as usize] != u32::MAX {
                continue;
            }
            let mut block: Vec<u32> = span.iter().map(|&s| z ^ s).collect();
            block.sort_unstable();
            for &p in &block {
                coset_of[p as usize] = count;
            }
            members.extend(block);
            count += 1;
        }
        Ok(CosetTable {
            m,
            dim,
            members,
            coset_of,
        })
    }

    pub fn one_dim(m: usize, q: Subspace1D) -> Result<Self> {
        Self::new(m, &[q.value()])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of cosets, `2^{m - dim}`.
    pub fn len(&self) -> usize {
        1 << (self.m - self.dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coset(&self, t: usize) -> &[u32] {
        let size = 1 << self.dim;
        &self.members[t * size..(t + 1) * size]
    }

    pub fn coset_of(&self, z: usize) -> usize {
        self.coset_of[z] as usize
    }
}

/// XOR of `y` over each coset.
pub fn project_binary(y: &[u8], cosets: &CosetTable) -> Result<Vec<u8>> {
    check_len(y.len(), cosets)?;
    Ok((0..cosets.len())
        .map(|t| cosets.coset(t).iter().fold(0, |acc, &z| acc ^ (y[z as usize] & 1)))
        .collect())
}

/// Projected LLRs onto the cosets of a 1-D subspace.
pub fn project_llr_1d(l: &[f64], cosets: &CosetTable) -> Result<Vec<f64>> {
    if cosets.dim() != 1 {
        return Err(Error::InvalidParameter(format!(
            "expected a 1-D coset table, got dimension {}",
            cosets.dim()
        )));
    }
    check_len(l.len(), cosets)?;
    if let Some(pos) = l.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let mut out = vec![0.0; cosets.len()];
    project_llr_pairs(l, &cosets.members, &mut out);
    Ok(out)
}

/// Unchecked 1-D projection over a flat list of coset pairs.
#[inline]
pub(crate) fn project_llr_pairs(l: &[f64], pairs: &[u32], out: &mut [f64]) {
    for (o, p) in out.iter_mut().zip(pairs.chunks_exact(2)) {
        *o = boxplus(l[p[0] as usize], l[p[1] as usize]);
    }
}

/// Projected LLRs onto the cosets of an `s`-dimensional subspace, combining
/// the two halves of each sorted coset recursively.
pub fn project_llr_sdim(l: &[f64], cosets: &CosetTable) -> Result<Vec<f64>> {
    check_len(l.len(), cosets)?;
    fn combine(l: &[f64], members: &[u32]) -> f64 {
        match members.len() {
            1 => l[members[0] as usize],
            len => {
                let (a, b) = members.split_at(len / 2);
                boxplus(combine(l, a), combine(l, b))
            }
        }
    }
    Ok((0..cosets.len())
        .map(|t| combine(l, cosets.coset(t)))
        .collect())
}

/// Merges (XORs) the columns of `g` within each coset.
pub fn project_generator(g: &BitMatrix, cosets: &CosetTable) -> Result<BitMatrix> {
    check_len(g.cols(), cosets)?;
    let mut out = BitMatrix::zeros(g.rows(), cosets.len());
    for t in 0..cosets.len() {
        for i in 0..g.rows() {
            let bit = cosets
                .coset(t)
                .iter()
                .fold(false, |acc, &z| acc ^ g.get(i, z as usize));
            if bit {
                out.set(i, t, true);
            }
        }
    }
    Ok(out)
}

fn check_len(len: usize, cosets: &CosetTable) -> Result<()> {
    if len != 1 << cosets.m() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {len} does not live on F_2^{}",
            cosets.m()
        )));
    }
    Ok(())
}

/// Largest leaf rank for which a codebook is materialised.
pub const MAX_LEAF_RANK: usize = 20;

/// A bottom-layer projected code with everything the (soft-)MAP leaf
/// decoders need: `G_p`, its rank, the basis row indices, `U`, the codebook
/// `U·G_p`, and decoding tables derived from them.
#[derive(Debug, Clone)]
pub struct LeafCode {
    generator: BitMatrix,
    rank: usize,
    basis_rows: Vec<usize>,
    u: BitMatrix,
    codebook: BitMatrix,
    /// Codebook in BPSK form, row-major `2^R × n'`.
    signs: Vec<f64>,
    /// `(a, b)` per codeword when every codeword is the affine function
    /// `z ↦ a·z ⊕ b`; lets the correlations come out of one Walsh-Hadamard
    /// transform.
    affine: Option<Vec<(u32, bool)>>,
    /// Per output column: positions (into `basis_rows`) of basis rows with a
    /// one in that column.
    column_support: Vec<Vec<u16>>,
}

impl LeafCode {
    /// Runs the U/codebook finder on a projected generator: scan rows in
    /// order, keep the first `R` independent ones, fill their `U` columns with
    /// all `R`-bit patterns (most significant bit in the first basis column)
    /// and multiply out.
    pub fn new(generator: BitMatrix) -> Result<Self> {
        let rank = generator.rank();
        if rank > MAX_LEAF_RANK {
            return Err(Error::InvalidParameter(format!(
                "projected code has rank {rank}; codebooks are limited to rank {MAX_LEAF_RANK}"
            )));
        }
        let k = generator.rows();
        let n_leaf = generator.cols();

        let mut basis_rows = Vec::with_capacity(rank);
        let mut echelon: Vec<Vec<u64>> = Vec::with_capacity(rank);
        let mut i = 0;
        while i < k && basis_rows.len() < rank {
            let mut v = generator.row_words(i).to_vec();
            for b in &echelon {
                let lead = leading_bit(b);
                if bit_of(&v, lead) {
                    for (x, y) in v.iter_mut().zip(b) {
                        *x ^= y;
                    }
                }
            }
            if v.iter().any(|&w| w != 0) {
                echelon.push(v);
                basis_rows.push(i);
            }
            i += 1;
        }

        let size = 1usize << rank;
        let mut u = BitMatrix::zeros(size, k);
        if rank > 0 {
            let patterns = de2bi(0, size as u64 - 1, rank)?;
            for t in 0..size {
                for (c, &row) in basis_rows.iter().enumerate() {
                    if patterns.get(t, c) {
                        u.set(t, row, true);
                    }
                }
            }
        }
        let codebook = u.matmul(&generator)?;

        let signs = (0..size)
            .flat_map(|t| (0..n_leaf).map(move |j| (t, j)))
            .map(|(t, j)| bpsk(codebook.get(t, j) as u8))
            .collect();

        let affine = if n_leaf.is_power_of_two() {
            (0..size)
                .map(|t| affine_form(&codebook, t))
                .collect::<Option<Vec<_>>>()
        } else {
            None
        };

        let column_support = (0..n_leaf)
            .map(|j| {
                basis_rows
                    .iter()
                    .enumerate()
                    .filter(|(_, &row)| generator.get(row, j))
                    .map(|(pos, _)| pos as u16)
                    .collect()
            })
            .collect();

        Ok(LeafCode {
            generator,
            rank,
            basis_rows,
            u,
            codebook,
            signs,
            affine,
            column_support,
        })
    }

    pub fn generator(&self) -> &BitMatrix {
        &self.generator
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Indices of the rows of `G_p` that carry information bits.
    pub fn basis_rows(&self) -> &[usize] {
        &self.basis_rows
    }

    pub fn u(&self) -> &BitMatrix {
        &self.u
    }

    pub fn codebook(&self) -> &BitMatrix {
        &self.codebook
    }

    pub fn len(&self) -> usize {
        self.generator.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn size(&self) -> usize {
        1 << self.rank
    }

    pub(crate) fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub(crate) fn affine(&self) -> Option<&[(u32, bool)]> {
        self.affine.as_deref()
    }

    pub(crate) fn column_support(&self, j: usize) -> &[u16] {
        &self.column_support[j]
    }
}

/// `(U, codebook)` for a projected generator.
pub fn build_u_and_codebook(g_p: &BitMatrix) -> Result<(BitMatrix, BitMatrix)> {
    let leaf = LeafCode::new(g_p.clone())?;
    Ok((leaf.u, leaf.codebook))
}

fn leading_bit(words: &[u64]) -> usize {
    for (w, &v) in words.iter().enumerate().rev() {
        if v != 0 {
            return w * 64 + 63 - v.leading_zeros() as usize;
        }
    }
    unreachable!("echelon rows are nonzero")
}

#[inline]
fn bit_of(words: &[u64], bit: usize) -> bool {
    (words[bit / 64] >> (bit % 64)) & 1 == 1
}

fn affine_form(codebook: &BitMatrix, t: usize) -> Option<(u32, bool)> {
    let n = codebook.cols();
    let m = n.trailing_zeros() as usize;
    let b = codebook.get(t, 0);
    let mut a = 0u32;
    for bit in 0..m {
        if codebook.get(t, 1 << bit) != b {
            a |= 1 << bit;
        }
    }
    let ok = (0..n).all(|z| codebook.get(t, z) == (b ^ ((a & z as u32).count_ones() & 1 == 1)));
    ok.then_some((a, b))
}

/// How leaf codebooks are held by a [`ProjectionTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeafStorage {
    /// Precompute and keep `U`, codebook and decoding tables.
    #[default]
    Cached,
    /// Keep only the projected generator; rebuild the leaf on every use.
    OnTheFly,
}

#[derive(Debug, Clone)]
pub enum LeafSlot {
    Cached(LeafCode),
    OnTheFly(BitMatrix),
}

impl LeafSlot {
    pub fn generator(&self) -> &BitMatrix {
        match self {
            LeafSlot::Cached(leaf) => leaf.generator(),
            LeafSlot::OnTheFly(g) => g,
        }
    }

    /// Runs `f` on the leaf code, building it first if it is not cached.
    pub fn with<T>(&self, f: impl FnOnce(&LeafCode) -> T) -> T {
        match self {
            LeafSlot::Cached(leaf) => f(leaf),
            LeafSlot::OnTheFly(g) => {
                f(&LeafCode::new(g.clone()).expect("leaf rank was validated at build time"))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Leaf {
    pub path: Vec<u32>,
    pub rank: usize,
    pub slot: LeafSlot,
}

/// Projection onto a 1-D subspace and the subtree decoding the projected code.
#[derive(Debug, Clone)]
pub struct Branch {
    pub subspace: Subspace1D,
    pub cosets: CosetTable,
    pub node: TreeNode,
}

#[derive(Debug, Clone)]
pub struct InnerNode {
    /// Preorder index among inner nodes.
    pub id: usize,
    pub path: Vec<u32>,
    /// `log2` of the code length at this node.
    pub m: usize,
    pub generator: BitMatrix,
    pub children: Vec<Branch>,
}

#[derive(Debug, Clone)]
pub enum TreeNode {
    Leaf(Leaf),
    Inner(InnerNode),
}

impl TreeNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Inner(node) => node.children.iter().map(|b| b.node.leaf_count()).sum(),
        }
    }

    pub fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a Leaf)) {
        match self {
            TreeNode::Leaf(leaf) => f(leaf),
            TreeNode::Inner(node) => node.children.iter().for_each(|b| b.node.visit_leaves(f)),
        }
    }

    pub fn visit_inner<'a>(&'a self, f: &mut impl FnMut(&'a InnerNode)) {
        if let TreeNode::Inner(node) = self {
            f(node);
            node.children.iter().for_each(|b| b.node.visit_inner(f));
        }
    }

    fn assign_ids(&mut self, next: &mut usize) {
        if let TreeNode::Inner(node) = self {
            node.id = *next;
            *next += 1;
            for b in &mut node.children {
                b.node.assign_ids(next);
            }
        }
    }
}

/// Precomputed recursive projection structure for one code.
///
/// For order `r ≥ 2` there are `r - 1` layers of 1-D projections and the
/// leaves are subcodes of first-order RM codes of length `n / 2^{r-1}`. For
/// `r ≤ 1` the tree is a single leaf holding the whole code.
#[derive(Debug, Clone)]
pub struct ProjectionTree {
    pub m: usize,
    pub r: usize,
    pub k: usize,
    pub root: TreeNode,
    inner_count: usize,
}

impl ProjectionTree {
    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn inner_count(&self) -> usize {
        self.inner_count
    }

    pub fn n(&self) -> usize {
        1 << self.m
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        self.root.visit_leaves(&mut |l| out.push(l));
        out
    }

    pub fn inner_nodes(&self) -> Vec<&InnerNode> {
        let mut out = Vec::new();
        self.root.visit_inner(&mut |n| out.push(n));
        out
    }

    /// `Σ_t 2^{R_t}` over the leaves.
    pub fn complexity(&self) -> u64 {
        self.leaves().iter().map(|l| 1u64 << l.rank).sum()
    }
}

/// Builds the projection tree for `spec`, following `plan` where it lists a
/// node and using every subspace elsewhere.
pub fn build_projection_tree(
    spec: &crate::construct::CodeSpec,
    plan: Option<&PruningPlan>,
) -> Result<ProjectionTree> {
    build_projection_tree_with(spec.generator(), spec.m, spec.r, plan, LeafStorage::Cached)
}

pub fn build_projection_tree_with(
    generator: &BitMatrix,
    m: usize,
    r: usize,
    plan: Option<&PruningPlan>,
    storage: LeafStorage,
) -> Result<ProjectionTree> {
    if generator.cols() != 1 << m {
        return Err(Error::DimensionMismatch(format!(
            "generator has {} columns, expected 2^{m}",
            generator.cols()
        )));
    }
    let depth = r.saturating_sub(1);
    let mut root = build_node(generator, m, depth, Vec::new(), plan, storage)?;
    let mut count = 0;
    root.assign_ids(&mut count);
    Ok(ProjectionTree {
        m,
        r,
        k: generator.rows(),
        root,
        inner_count: count,
    })
}

fn make_leaf(g: &BitMatrix, path: Vec<u32>, storage: LeafStorage) -> Result<Leaf> {
    let (rank, slot) = match storage {
        LeafStorage::Cached => {
            let leaf = LeafCode::new(g.clone())?;
            (leaf.rank(), LeafSlot::Cached(leaf))
        }
        LeafStorage::OnTheFly => {
            let rank = g.rank();
            if rank > MAX_LEAF_RANK {
                return Err(Error::InvalidParameter(format!(
                    "projected code has rank {rank}; codebooks are limited to rank {MAX_LEAF_RANK}"
                )));
            }
            (rank, LeafSlot::OnTheFly(g.clone()))
        }
    };
    Ok(Leaf { path, rank, slot })
}

/// Subspaces used at the node `path` of a code on `F_2^m`.
pub(crate) fn node_subspaces(
    m: usize,
    path: &[u32],
    plan: Option<&PruningPlan>,
) -> Result<Vec<Subspace1D>> {
    match plan.and_then(|p| p.get(path)) {
        None => Ok(Subspace1D::all(m).collect()),
        Some(sel) => sel
            .iter()
            .map(|&z| {
                Subspace1D::new(m, z).map_err(|_| {
                    Error::InvalidParameter(format!(
                        "plan lists subspace {z} at node {}, valid range is 1..={}",
                        crate::prune::format_path(path),
                        (1u32 << m) - 1
                    ))
                })
            })
            .collect(),
    }
}

fn build_node(
    g: &BitMatrix,
    m: usize,
    depth: usize,
    path: Vec<u32>,
    plan: Option<&PruningPlan>,
    storage: LeafStorage,
) -> Result<TreeNode> {
    if depth == 0 {
        return make_leaf(g, path, storage).map(TreeNode::Leaf);
    }
    let subspaces = node_subspaces(m, &path, plan)?;
    let children = subspaces
        .par_iter()
        .map(|&q| {
            let cosets = CosetTable::one_dim(m, q)?;
            let g_p = project_generator(g, &cosets)?;
            let mut child_path = path.clone();
            child_path.push(q.value());
            let node = build_node(&g_p, m - 1, depth - 1, child_path, plan, storage)?;
            Ok(Branch {
                subspace: q,
                cosets,
                node,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeNode::Inner(InnerNode {
        id: 0,
        path,
        m,
        generator: g.clone(),
        children,
    }))
}

/// Rank of a bottom-layer projected generator, with its node path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafRank {
    pub path: Vec<u32>,
    pub rank: usize,
}

/// Leaf ranks of the projection tree without building codebooks.
pub fn leaf_ranks(
    generator: &BitMatrix,
    m: usize,
    r: usize,
    plan: Option<&PruningPlan>,
) -> Result<Vec<LeafRank>> {
    fn walk(
        g: &BitMatrix,
        m: usize,
        depth: usize,
        path: Vec<u32>,
        plan: Option<&PruningPlan>,
        out: &mut Vec<LeafRank>,
    ) -> Result<()> {
        if depth == 0 {
            out.push(LeafRank {
                path,
                rank: g.rank(),
            });
            return Ok(());
        }
        for q in node_subspaces(m, &path, plan)? {
            let g_p = project_generator(g, &CosetTable::one_dim(m, q)?)?;
            let mut child = path.clone();
            child.push(q.value());
            walk(&g_p, m - 1, depth - 1, child, plan, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(generator, m, r.saturating_sub(1), Vec::new(), plan, &mut out)?;
    Ok(out)
}

/// Bit counts of the stored leaf matrices, next to the analytic bound
/// evaluated at the tree's pruning factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub codebook_bits: u64,
    pub generator_bits: u64,
    pub u_bits: u64,
    pub total_bits: u64,
    /// Fraction of subspaces kept per layer.
    pub beta: f64,
    pub bound_codebook_bits: f64,
    pub bound_generator_bits: f64,
    pub bound_u_bits: f64,
    pub bound_total_bits: f64,
}

pub fn memory_report(tree: &ProjectionTree) -> MemoryReport {
    let n_leaf = (tree.n() >> tree.r.saturating_sub(1)) as u64;
    let k = tree.k as u64;
    let (mut codebook_bits, mut generator_bits, mut u_bits) = (0u64, 0u64, 0u64);
    for leaf in tree.leaves() {
        let words = 1u64 << leaf.rank;
        codebook_bits += words * n_leaf;
        generator_bits += k * n_leaf;
        u_bits += words * k;
    }
    let layers = tree.r.saturating_sub(1) as i32;
    let n = tree.n() as f64;
    let full: f64 = (1..=layers).map(|i| n / 2f64.powi(i - 1) - 1.0).product();
    let beta = if layers == 0 {
        1.0
    } else {
        (tree.leaf_count() as f64 / full).powf(1.0 / layers as f64)
    };
    let r = tree.r as i32;
    let scale = beta.powi(layers);
    let bound_codebook_bits = scale * n.powi(r + 1) / 2f64.powi(2 * r - 3);
    let bound_generator_bits = k as f64 * scale * n.powi(r) / 2f64.powi(r - 1);
    let bound_u_bits = k as f64 * scale * n.powi(r) / 2f64.powi(r - 2);
    MemoryReport {
        codebook_bits,
        generator_bits,
        u_bits,
        total_bits: codebook_bits + generator_bits + u_bits,
        beta,
        bound_codebook_bits,
        bound_generator_bits,
        bound_u_bits,
        bound_total_bits: bound_codebook_bits + bound_generator_bits + bound_u_bits,
    }
}

/// Writes `subspace_id,rank,two_pow_rank` rows and a `#` summary line.
pub fn write_rank_report(
    ranks: &[LeafRank],
    memory: Option<&MemoryReport>,
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(w, "subspace_id,rank,two_pow_rank")?;
    let mut total = 0u64;
    for lr in ranks {
        let id = lr
            .path
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join("/");
        writeln!(w, "{},{},{}", id, lr.rank, 1u64 << lr.rank)?;
        total += 1u64 << lr.rank;
    }
    write!(w, "# leaves={} L={}", ranks.len(), total)?;
    if let Some(mem) = memory {
        write!(
            w,
            " codebook_bits={} generator_bits={} u_bits={} total_bits={} beta={:.6} bound_codebook_bits={:.1} bound_total_bits={:.1}",
            mem.codebook_bits,
            mem.generator_bits,
            mem.u_bits,
            mem.total_bits,
            mem.beta,
            mem.bound_codebook_bits,
            mem.bound_total_bits
        )?;
    }
    writeln!(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{rm_generator, subcode_generator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn codebook_set(g: &BitMatrix) -> HashSet<Vec<u8>> {
        (0u32..(1 << g.rows()))
            .map(|mask| {
                let u: Vec<u8> = (0..g.rows()).map(|i| ((mask >> i) & 1) as u8).collect();
                g.encode(&u).unwrap()
            })
            .collect()
    }

    #[test]
    fn coset_table_partitions_space() {
        let t = CosetTable::new(5, &[3, 12]).unwrap();
        assert_eq!(t.len(), 8);
        let mut seen = HashSet::new();
        for c in 0..t.len() {
            let block = t.coset(c);
            assert!(block.windows(2).all(|w| w[0] < w[1]));
            for &z in block {
                assert!(seen.insert(z));
                assert_eq!(t.coset_of(z as usize), c);
                // Same coset iff difference in the subspace.
                assert!([0, 3, 12, 15].contains(&(z ^ block[0])));
            }
        }
        assert_eq!(seen.len(), 32);
        let mins: Vec<u32> = (0..t.len()).map(|c| t.coset(c)[0]).collect();
        assert!(mins.windows(2).all(|w| w[0] < w[1]));
        assert!(CosetTable::new(3, &[5, 5]).is_err());
    }

    #[test]
    fn project_binary_examples() {
        let t = CosetTable::one_dim(2, Subspace1D::new(2, 1).unwrap()).unwrap();
        assert_eq!(project_binary(&[0, 0, 0, 0], &t).unwrap(), vec![0, 0]);
        assert_eq!(project_binary(&[1, 0, 1, 1], &t).unwrap(), vec![1, 0]);
    }

    #[test]
    fn projections_of_rm32_land_in_rm21() {
        let g = rm_generator(3, 2).unwrap();
        let target = codebook_set(&rm_generator(2, 1).unwrap());
        for c in codebook_set(&g) {
            for q in Subspace1D::all(3) {
                let t = CosetTable::one_dim(3, q).unwrap();
                assert!(target.contains(&project_binary(&c, &t).unwrap()));
            }
        }
    }

    #[test]
    fn project_llr_1d_examples() {
        let t = CosetTable::one_dim(1, Subspace1D::new(1, 1).unwrap()).unwrap();
        assert_eq!(project_llr_1d(&[0.0, 0.0], &t).unwrap(), vec![0.0]);
        let v = project_llr_1d(&[5.0, 5.0], &t).unwrap()[0];
        let direct = ((10f64).exp() + 1.0).ln() - (2.0 * 5f64.exp()).ln();
        assert!((v - direct).abs() < 1e-12);
        assert!((v - 4.30685).abs() < 1e-4);
        let flipped = project_llr_1d(&[-5.0, 5.0], &t).unwrap()[0];
        assert_eq!(flipped, -v);
        assert!(matches!(
            project_llr_1d(&[f64::NAN, 1.0], &t),
            Err(Error::NonFinite(0))
        ));
    }

    /// Parity LLR of the XOR of all coset members, by enumerating patterns.
    fn parity_llr_oracle(l: &[f64]) -> f64 {
        let p1: Vec<f64> = l.iter().map(|&x| 1.0 / (1.0 + x.exp())).collect();
        let (mut even, mut odd) = (0.0, 0.0);
        for pattern in 0u32..(1 << l.len()) {
            let prob: f64 = (0..l.len())
                .map(|i| if (pattern >> i) & 1 == 1 { p1[i] } else { 1.0 - p1[i] })
                .product();
            if pattern.count_ones() % 2 == 0 {
                even += prob;
            } else {
                odd += prob;
            }
        }
        (even / odd).ln()
    }

    #[test]
    fn project_llr_sdim_matches_parity_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = CosetTable::new(4, &[1, 6]).unwrap();
        for _ in 0..50 {
            let l: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let got = project_llr_sdim(&l, &t).unwrap();
            for (c, &g) in got.iter().enumerate() {
                let members: Vec<f64> = t.coset(c).iter().map(|&z| l[z as usize]).collect();
                assert!((g - parity_llr_oracle(&members)).abs() < 1e-9);
            }
        }
        assert_eq!(project_llr_sdim(&[0.0; 16], &t).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn projecting_all_ones_row_cancels() {
        let g = rm_generator(4, 0).unwrap();
        for q in Subspace1D::all(4) {
            let t = CosetTable::one_dim(4, q).unwrap();
            assert!(project_generator(&g, &t).unwrap().is_zero());
        }
    }

    #[test]
    fn rm62_projections_have_rank_six() {
        let g = rm_generator(6, 2).unwrap();
        for q in Subspace1D::all(6) {
            let t = CosetTable::one_dim(6, q).unwrap();
            assert_eq!(project_generator(&g, &t).unwrap().rank(), 6);
        }
    }

    #[test]
    fn u_and_codebook_small_cases() {
        let g = BitMatrix::from_rows(&[[1u8, 1, 1, 1]]).unwrap();
        let (u, c) = build_u_and_codebook(&g).unwrap();
        assert_eq!(u, BitMatrix::from_rows(&[[0u8], [1]]).unwrap());
        assert_eq!(c, BitMatrix::from_rows(&[[0u8, 0, 0, 0], [1, 1, 1, 1]]).unwrap());

        let g = BitMatrix::from_rows(&[[1u8, 1, 0, 0], [1, 1, 0, 0], [0, 1, 0, 1]]).unwrap();
        let leaf = LeafCode::new(g).unwrap();
        assert_eq!(leaf.rank(), 2);
        assert_eq!(leaf.basis_rows(), &[0, 2]);
        assert!((0..4).all(|t| !leaf.u().get(t, 1)));
        // MSB of the row index sits in the first basis column.
        assert_eq!(leaf.u().row_bits(2), vec![1, 0, 0]);
    }

    #[test]
    fn rank_zero_leaf() {
        let leaf = LeafCode::new(BitMatrix::zeros(3, 8)).unwrap();
        assert_eq!(leaf.rank(), 0);
        assert_eq!(leaf.size(), 1);
        assert!(leaf.codebook().is_zero());
    }

    #[test]
    fn leaf_codebooks_are_distinct_and_in_rowspace() {
        let spec = subcode_generator(6, 2, 14, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        assert_eq!(tree.leaf_count(), 63);
        for leaf in tree.leaves() {
            leaf.slot.with(|code| {
                let mut seen = HashSet::new();
                let basis = code.generator().select_rows(code.basis_rows());
                for t in 0..code.size() {
                    let row = code.codebook().row_bits(t);
                    assert!(seen.insert(row.clone()));
                    if let Ok(basis) = &basis {
                        assert!(basis.solve(&row).unwrap().is_some());
                    }
                }
                assert_eq!(seen.len(), 1 << code.rank());
                assert!(code.affine().is_some());
            });
        }
    }

    #[test]
    fn on_the_fly_leaves_match_cached() {
        let spec = subcode_generator(5, 2, 9, &[1, 4, 7]).unwrap();
        let a = build_projection_tree(&spec, None).unwrap();
        let b = build_projection_tree_with(spec.generator(), 5, 2, None, LeafStorage::OnTheFly)
            .unwrap();
        for (x, y) in a.leaves().iter().zip(b.leaves()) {
            assert_eq!(x.rank, y.rank);
            let cx = x.slot.with(|c| c.codebook().clone());
            let cy = y.slot.with(|c| c.codebook().clone());
            assert_eq!(cx, cy);
        }
    }

    #[test]
    fn deeper_tree_shape() {
        let spec = subcode_generator(5, 3, 20, &[0, 2, 4, 6]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        assert_eq!(tree.leaf_count(), 31 * 15);
        assert_eq!(tree.inner_count(), 32);
        for leaf in tree.leaves() {
            assert_eq!(leaf.path.len(), 2);
            assert!(leaf.rank <= 5 - 3 + 2);
            leaf.slot.with(|c| assert_eq!(c.len(), 8));
        }
        let ranks = leaf_ranks(spec.generator(), 5, 3, None).unwrap();
        assert_eq!(ranks.len(), 465);
        assert!(ranks.iter().zip(tree.leaves()).all(|(a, b)| a.rank == b.rank && a.path == b.path));
    }

    #[test]
    fn memory_report_parts_add_up() {
        let spec = subcode_generator(6, 2, 14, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        let tree = build_projection_tree(&spec, None).unwrap();
        let rep = memory_report(&tree);
        assert_eq!(rep.total_bits, rep.codebook_bits + rep.generator_bits + rep.u_bits);
        assert!((rep.beta - 1.0).abs() < 1e-12);
        let mut csv = Vec::new();
        write_rank_report(&leaf_ranks(spec.generator(), 6, 2, None).unwrap(), Some(&rep), &mut csv)
            .unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(text.lines().last().unwrap().starts_with("# leaves=63 L="));
    }

    proptest! {
        #[test]
        fn boxplus_projection_matches_atanh_product(a in -8.0f64..8.0, b in -8.0f64..8.0) {
            let t = CosetTable::one_dim(1, Subspace1D::new(1, 1).unwrap()).unwrap();
            let got = project_llr_1d(&[a, b], &t).unwrap()[0];
            let reference = 2.0 * ((a / 2.0).tanh() * (b / 2.0).tanh()).atanh();
            prop_assert!((got - reference).abs() < 1e-9);
        }

        #[test]
        fn bsc_projection_signs_agree(bits in proptest::collection::vec(0u8..2, 16), q in 1u32..16, c in 0.5f64..4.0) {
            let t = CosetTable::one_dim(4, Subspace1D::new(4, q).unwrap()).unwrap();
            let l: Vec<f64> = bits.iter().map(|&b| c * bpsk(b)).collect();
            let soft = project_llr_1d(&l, &t).unwrap();
            let hard = project_binary(&bits, &t).unwrap();
            for (s, h) in soft.iter().zip(hard) {
                prop_assert_eq!(s.signum(), bpsk(h));
            }
        }
    }
}
