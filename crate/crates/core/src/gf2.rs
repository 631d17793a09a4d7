//! Dense linear algebra over GF(2).
//!
//! Rows are packed into `u64` words, least-significant bit first within a
//! word, so that row additions are plain word XORs. Everything else in the
//! crate (generators, projected generators, `U` matrices, codebooks) is a
//! [`BitMatrix`].

use std::fmt;

use crate::error::{Error, Result};

const WORD: usize = 64;

#[inline]
fn words_for(cols: usize) -> usize {
    cols.div_ceil(WORD)
}

/// Dense row-major binary matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    /// All-zero `rows × cols` matrix.
    ///
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "BitMatrix needs at least one row and column");
        let stride = words_for(cols);
        BitMatrix {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from rows of 0/1 bytes. Any nonzero byte counts as one.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidParameter("matrix needs at least one row".into()))?;
        let cols = first.as_ref().len();
        if cols == 0 {
            return Err(Error::InvalidParameter("matrix needs at least one column".into()));
        }
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (j, &b) in row.iter().enumerate() {
                if b != 0 {
                    m.set(i, j, true);
                }
            }
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if f(i, j) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.rows && j < self.cols);
        (self.data[i * self.stride + j / WORD] >> (j % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        debug_assert!(i < self.rows && j < self.cols);
        let w = &mut self.data[i * self.stride + j / WORD];
        let mask = 1u64 << (j % WORD);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    /// Packed words of row `i`. Bits past `cols` are always zero.
    #[inline]
    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    pub fn row_bits(&self, i: usize) -> Vec<u8> {
        (0..self.cols).map(|j| self.get(i, j) as u8).collect()
    }

    pub fn row_weight(&self, i: usize) -> usize {
        self.row_words(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `row[dst] ^= row[src]`.
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            self.data[dst * self.stride..(dst + 1) * self.stride].fill(0);
            return;
        }
        for w in 0..self.stride {
            let v = self.data[src * self.stride + w];
            self.data[dst * self.stride + w] ^= v;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::InvalidParameter("row selection is empty".into()));
        }
        let mut out = Self::zeros(idx.len(), self.cols);
        for (dst, &src) in idx.iter().enumerate() {
            if src >= self.rows {
                return Err(Error::InvalidParameter(format!(
                    "row {src} out of range for {} rows",
                    self.rows
                )));
            }
            out.data[dst * self.stride..(dst + 1) * self.stride]
                .copy_from_slice(self.row_words(src));
        }
        Ok(out)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &BitMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(BitMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            stride: self.stride,
            data,
        })
    }

    pub fn kronecker(&self, other: &BitMatrix) -> Self {
        Self::from_fn(self.rows * other.rows, self.cols * other.cols, |i, j| {
            self.get(i / other.rows, j / other.cols) && other.get(i % other.rows, j % other.cols)
        })
    }

    /// Rank over GF(2). The input is left untouched.
    pub fn rank(&self) -> usize {
        let mut work = self.clone();
        work.row_reduce()
    }

    /// In-place forward elimination; returns the rank. Rows are permuted so
    /// the first `rank` rows form an echelon basis.
    fn row_reduce(&mut self) -> usize {
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let Some(pivot) = (rank..self.rows).find(|&r| self.get(r, col)) else {
                continue;
            };
            self.swap_rows(pivot, rank);
            for r in 0..self.rows {
                if r != rank && self.get(r, col) {
                    self.xor_row_into(rank, r);
                }
            }
            rank += 1;
        }
        rank
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for w in 0..self.stride {
            self.data.swap(a * self.stride + w, b * self.stride + w);
        }
    }

    /// `(self · other) mod 2`.
    pub fn matmul(&self, other: &BitMatrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for t in 0..self.cols {
                if self.get(i, t) {
                    for w in 0..out.stride {
                        out.data[i * out.stride + w] ^= other.data[t * other.stride + w];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Row vector `u · self` for a 0/1 vector `u` of length `rows`.
    pub fn encode(&self, u: &[u8]) -> Result<Vec<u8>> {
        if u.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "message has {} bits, generator has {} rows",
                u.len(),
                self.rows
            )));
        }
        let mut acc = vec![0u64; self.stride];
        for (i, &b) in u.iter().enumerate() {
            if b != 0 {
                for (a, w) in acc.iter_mut().zip(self.row_words(i)) {
                    *a ^= w;
                }
            }
        }
        Ok(unpack(&acc, self.cols))
    }

    /// Solves `u · self = target` for `u`.
    ///
    /// `self` must have full row rank. Returns `Ok(None)` when `target` is not
    /// in the row space.
    pub fn solve(&self, target: &[u8]) -> Result<Option<Vec<u8>>> {
        if target.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "target has {} bits, basis has {} columns",
                target.len(),
                self.cols
            )));
        }
        let k = self.rows;
        // Augment each row with the identity so combinations are tracked.
        let mut aug = BitMatrix::zeros(k, self.cols + k);
        for i in 0..k {
            for j in 0..self.cols {
                if self.get(i, j) {
                    aug.set(i, j, true);
                }
            }
            aug.set(i, self.cols + i, true);
        }
        let mut pivots = Vec::with_capacity(k);
        let mut rank = 0;
        for col in 0..self.cols {
            if rank == k {
                break;
            }
            let Some(p) = (rank..k).find(|&r| aug.get(r, col)) else {
                continue;
            };
            aug.swap_rows(p, rank);
            for r in 0..k {
                if r != rank && aug.get(r, col) {
                    aug.xor_row_into(rank, r);
                }
            }
            pivots.push(col);
            rank += 1;
        }
        if rank < k {
            return Err(Error::RankDeficient { rank, rows: k });
        }
        let mut residual = target.iter().map(|&b| b != 0).collect::<Vec<_>>();
        let mut u = vec![0u8; k];
        for (r, &col) in pivots.iter().enumerate() {
            if residual[col] {
                for (j, res) in residual.iter_mut().enumerate() {
                    if aug.get(r, j) {
                        *res ^= true;
                    }
                }
                for (i, ui) in u.iter_mut().enumerate() {
                    if aug.get(r, self.cols + i) {
                        *ui ^= 1;
                    }
                }
            }
        }
        if residual.iter().any(|&b| b) {
            return Ok(None);
        }
        Ok(Some(u))
    }

    /// Parses rows of `0`/`1` characters.
    pub fn parse_rows<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in lines.into_iter().enumerate() {
            let row = line
                .trim()
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => Err(Error::parse(i + 1, format!("unexpected character {other:?}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {}", self.row_string(i))?;
        }
        write!(f, "]")
    }
}

impl fmt::Display for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            writeln!(f, "{}", self.row_string(i))?;
        }
        Ok(())
    }
}

impl BitMatrix {
    fn row_string(&self, i: usize) -> String {
        (0..self.cols)
            .map(|j| if self.get(i, j) { '1' } else { '0' })
            .collect()
    }
}

fn unpack(words: &[u64], cols: usize) -> Vec<u8> {
    (0..cols)
        .map(|j| ((words[j / WORD] >> (j % WORD)) & 1) as u8)
        .collect()
}

/// `base^{⊗m}`. By convention `m = 0` gives the 1×1 identity.
pub fn kronecker_power(base: &BitMatrix, m: usize) -> Result<BitMatrix> {
    if base.rows() != 2 || base.cols() != 2 {
        return Err(Error::InvalidParameter(format!(
            "Kronecker base must be 2x2, got {}x{}",
            base.rows(),
            base.cols()
        )));
    }
    let mut out = BitMatrix::identity(1);
    for _ in 0..m {
        out = out.kronecker(base);
    }
    Ok(out)
}

/// Rows are the `width`-bit binary expansions of `lo..=hi`, most significant
/// bit in column 0.
pub fn de2bi(lo: u64, hi: u64, width: usize) -> Result<BitMatrix> {
    if width == 0 || width > 63 {
        return Err(Error::InvalidParameter(format!("width {width} not in 1..=63")));
    }
    if lo > hi || hi >= 1u64 << width {
        return Err(Error::InvalidParameter(format!(
            "range {lo}..={hi} does not fit in {width} bits"
        )));
    }
    let rows = (hi - lo + 1) as usize;
    Ok(BitMatrix::from_fn(rows, width, |t, c| {
        ((lo + t as u64) >> (width - 1 - c)) & 1 == 1
    }))
}

/// Rank of a set of row vectors stored as packed `u128`s. Used on hot paths
/// where rows are at most 128 bits wide.
pub(crate) fn rank_u128(rows: impl IntoIterator<Item = u128>) -> usize {
    let mut basis: Vec<u128> = Vec::new();
    for mut v in rows {
        for &b in &basis {
            v = v.min(v ^ b);
        }
        if v != 0 {
            basis.push(v);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    basis.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f2() -> BitMatrix {
        BitMatrix::from_rows(&[[1u8, 0], [1, 1]]).unwrap()
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> BitMatrix {
        BitMatrix::from_fn(rows, cols, |_, _| rng.gen())
    }

    #[test]
    fn kronecker_power_small_cases() {
        assert_eq!(kronecker_power(&f2(), 1).unwrap(), f2());
        let expected =
            BitMatrix::from_rows(&[[1u8, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]])
                .unwrap();
        assert_eq!(kronecker_power(&f2(), 2).unwrap(), expected);
        assert_eq!(kronecker_power(&f2(), 0).unwrap(), BitMatrix::identity(1));
    }

    #[test]
    fn kronecker_row_weights_follow_popcount() {
        let p = kronecker_power(&f2(), 3).unwrap();
        for i in 0..8 {
            assert_eq!(p.row_weight(i), 1 << (i as u32).count_ones());
        }
    }

    #[test]
    fn kronecker_power_is_full_rank() {
        for m in 0..=6 {
            assert_eq!(kronecker_power(&f2(), m).unwrap().rank(), 1 << m);
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(BitMatrix::identity(4).rank(), 4);
        assert_eq!(BitMatrix::zeros(3, 5).rank(), 0);
        // RM(4,1): all-one row plus the four coordinate functions.
        let g = BitMatrix::from_fn(5, 16, |i, z| i == 0 || (z >> (i - 1)) & 1 == 1);
        assert_eq!(g.rank(), 5);
        // Brute force: no nonempty combination of the 5 rows vanishes.
        for mask in 1u32..32 {
            let u: Vec<u8> = (0..5).map(|i| ((mask >> i) & 1) as u8).collect();
            assert!(g.encode(&u).unwrap().iter().any(|&b| b == 1));
        }
    }

    #[test]
    fn rank_does_not_mutate_input() {
        let a = BitMatrix::from_rows(&[[1u8, 1, 0], [1, 1, 0], [0, 1, 1]]).unwrap();
        let before = a.clone();
        assert_eq!(a.rank(), 2);
        assert_eq!(a, before);
    }

    #[test]
    fn matmul_examples() {
        let a = BitMatrix::from_rows(&[[1u8, 1]]).unwrap();
        let b = BitMatrix::from_rows(&[[1u8], [1]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), BitMatrix::zeros(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 5, 70);
        assert_eq!(x.matmul(&BitMatrix::identity(70)).unwrap(), x);
        assert!(matches!(a.matmul(&a), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn de2bi_examples() {
        let d = de2bi(0, 3, 2).unwrap();
        assert_eq!(d, BitMatrix::from_rows(&[[0u8, 0], [0, 1], [1, 0], [1, 1]]).unwrap());
        assert_eq!(de2bi(5, 5, 3).unwrap().row_bits(0), vec![1, 0, 1]);
        let all = de2bi(0, 15, 4).unwrap();
        for a in 0..16 {
            for b in (a + 1)..16 {
                assert_ne!(all.row_bits(a), all.row_bits(b));
            }
        }
        assert!(de2bi(0, 4, 2).is_err());
    }

    #[test]
    fn solve_examples() {
        let id = BitMatrix::identity(6);
        let t = vec![1, 0, 1, 1, 0, 0];
        assert_eq!(id.solve(&t).unwrap(), Some(t.clone()));
        let g = BitMatrix::from_fn(5, 16, |i, z| i == 0 || (z >> (i - 1)) & 1 == 1);
        assert_eq!(g.solve(&[0; 16]).unwrap(), Some(vec![0; 5]));
        let mut bad = vec![0u8; 16];
        bad[3] = 1;
        assert_eq!(g.solve(&bad).unwrap(), None);
        let dep = BitMatrix::from_rows(&[[1u8, 1], [1, 1]]).unwrap();
        assert!(matches!(dep.solve(&[1, 1]), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn solve_round_trip_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut done = 0;
        while done < 20 {
            let b = random_matrix(&mut rng, 12, 12);
            if b.rank() < 12 {
                continue;
            }
            let u0: Vec<u8> = (0..12).map(|_| rng.gen_range(0..2)).collect();
            let target = b.encode(&u0).unwrap();
            assert_eq!(b.solve(&target).unwrap(), Some(u0));
            done += 1;
        }
    }

    #[test]
    fn rank_u128_matches_matrix_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rows: Vec<u128> = (0..10).map(|_| rng.gen::<u128>() & 0xffff).collect();
            let m = BitMatrix::from_fn(10, 16, |i, j| (rows[i] >> j) & 1 == 1);
            assert_eq!(rank_u128(rows), m.rank());
        }
    }

    fn arb_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = BitMatrix> {
        (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
            proptest::collection::vec(any::<bool>(), r * c)
                .prop_map(move |bits| BitMatrix::from_fn(r, c, |i, j| bits[i * c + j]))
        })
    }

    proptest! {
        #[test]
        fn rank_equals_transpose_rank(a in arb_matrix(12, 80)) {
            prop_assert_eq!(a.rank(), a.transpose().rank());
            prop_assert!(a.rank() <= a.rows().min(a.cols()));
        }

        #[test]
        fn matmul_is_associative(seed in any::<u64>(), p in 1usize..8, q in 1usize..70, r in 1usize..8, s in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, p, q);
            let b = random_matrix(&mut rng, q, r);
            let c = random_matrix(&mut rng, r, s);
            prop_assert_eq!(
                a.matmul(&b).unwrap().matmul(&c).unwrap(),
                a.matmul(&b.matmul(&c).unwrap()).unwrap()
            );
        }

        #[test]
        fn de2bi_enumerates_all_vectors(w in 1usize..10) {
            let d = de2bi(0, (1u64 << w) - 1, w).unwrap();
            let mut seen = std::collections::HashSet::new();
            for t in 0..d.rows() {
                prop_assert!(seen.insert(d.row_bits(t)));
            }
            prop_assert_eq!(seen.len(), 1 << w);
        }
    }
}
