//! Square nonnegative matrices in dense or compressed-row storage, and the
//! row-stochastic newtype built on top of them.
//!
//! Dense and sparse storage run the same arithmetic in the same order: every
//! row is accumulated over its nonzero entries by ascending column index. The
//! two representations therefore produce identical values for identical
//! inputs, which the tests rely on.

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tolerance used when a caller hands us a matrix and claims it is row-stochastic.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Storage {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// Row-major `n * n` values.
    Dense(Vec<f64>),
    /// Compressed rows; column indices strictly increasing within a row, no stored zeros.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

/// An `n x n` matrix whose entries are all finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonnegMatrix {
    n: usize,
    repr: Repr,
}

/// Borrowed view of one matrix row.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse {
        indices: &'a [usize],
        values: &'a [f64],
    },
}

pub enum RowIter<'a> {
    Dense(std::iter::Enumerate<std::slice::Iter<'a, f64>>),
    Sparse(std::iter::Zip<std::slice::Iter<'a, usize>, std::slice::Iter<'a, f64>>),
}

impl Iterator for RowIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            RowIter::Dense(it) => it.find(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)),
            RowIter::Sparse(it) => it.next().map(|(j, v)| (*j, *v)),
        }
    }
}

impl<'a> Row<'a> {
    /// Nonzero entries as `(column, value)` in ascending column order.
    pub fn iter(&self) -> RowIter<'a> {
        match *self {
            Row::Dense(d) => RowIter::Dense(d.iter().enumerate()),
            Row::Sparse { indices, values } => RowIter::Sparse(indices.iter().zip(values.iter())),
        }
    }

    pub fn get(&self, j: usize) -> f64 {
        match *self {
            Row::Dense(d) => d[j],
            Row::Sparse { indices, values } => {
                indices.binary_search(&j).map(|p| values[p]).unwrap_or(0.0)
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.iter().map(|(_, v)| v).sum()
    }

    pub fn nnz(&self) -> usize {
        match *self {
            Row::Dense(d) => d.iter().filter(|v| **v != 0.0).count(),
            Row::Sparse { indices, .. } => indices.len(),
        }
    }

    /// Column of the largest entry; ties go to the lowest column. `None` for an all-zero row.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, v) in self.iter() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((j, v)),
            }
        }
        best.map(|(j, _)| j)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }
}

type SparseRow = (Vec<usize>, Vec<f64>);

fn check_entry(i: usize, j: usize, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidInput(format!(
            "entry ({i}, {j}) = {v} is negative or non-finite"
        )));
    }
    Ok(())
}

impl NonnegMatrix {
    /// Builds a dense matrix from row-major values.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::dims(format!("{} values", n * n), data.len()));
        }
        for (idx, &v) in data.iter().enumerate() {
            check_entry(idx / n.max(1), idx % n.max(1), v)?;
        }
        Ok(Self {
            n,
            repr: Repr::Dense(data),
        })
    }

    /// Builds a dense matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::dims(
                    format!("row {i} of length {n}"),
                    format!("length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_dense(n, data)
    }

    /// Builds a sparse matrix from per-row `(column, value)` lists. Entries may be
    /// unsorted; explicit zeros are dropped; duplicate columns are rejected.
    pub fn from_sparse_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::dims(format!("{n} rows"), rows.len()));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if j >= n {
                    return Err(Error::dims(format!("column < {n}"), j));
                }
                if last == Some(j) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate column {j} in row {i}"
                    )));
                }
                last = Some(j);
                check_entry(i, j, v)?;
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n,
            repr: Repr::Sparse {
                indptr,
                indices,
                values,
            },
        })
    }

    fn from_sparse_parts(n: usize, rows: Vec<SparseRow>) -> Self {
        let nnz = rows.iter().map(|(c, _)| c.len()).sum();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (c, v) in rows {
            indices.extend(c);
            values.extend(v);
            indptr.push(indices.len());
        }
        Self {
            n,
            repr: Repr::Sparse {
                indptr,
                indices,
                values,
            },
        }
    }

    pub fn identity(n: usize, storage: Storage) -> Self {
        match storage {
            Storage::Dense => {
                let mut data = vec![0.0; n * n];
                for i in 0..n {
                    data[i * n + i] = 1.0;
                }
                Self {
                    n,
                    repr: Repr::Dense(data),
                }
            }
            Storage::Sparse => Self {
                n,
                repr: Repr::Sparse {
                    indptr: (0..=n).collect(),
                    indices: (0..n).collect(),
                    values: vec![1.0; n],
                },
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn storage(&self) -> Storage {
        match self.repr {
            Repr::Dense(_) => Storage::Dense,
            Repr::Sparse { .. } => Storage::Sparse,
        }
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.repr {
            Repr::Dense(d) => Row::Dense(&d[i * self.n..(i + 1) * self.n]),
            Repr::Sparse {
                indptr,
                indices,
                values,
            } => {
                let (s, e) = (indptr[i], indptr[i + 1]);
                Row::Sparse {
                    indices: &indices[s..e],
                    values: &values[s..e],
                }
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).get(j)
    }

    /// Number of nonzero entries (stored entries for sparse, nonzero values for dense).
    pub fn nnz(&self) -> usize {
        match &self.repr {
            Repr::Dense(d) => d.iter().filter(|v| **v != 0.0).count(),
            Repr::Sparse { indices, .. } => indices.len(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).sum()).collect()
    }

    pub fn to_dense_vec(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(d) => d.clone(),
            Repr::Sparse { .. } => {
                let mut out = vec![0.0; self.n * self.n];
                for i in 0..self.n {
                    for (j, v) in self.row(i).iter() {
                        out[i * self.n + j] = v;
                    }
                }
                out
            }
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_dense(self.n)).collect()
    }

    pub fn to_storage(&self, storage: Storage) -> Self {
        if storage == self.storage() {
            return self.clone();
        }
        match storage {
            Storage::Dense => Self {
                n: self.n,
                repr: Repr::Dense(self.to_dense_vec()),
            },
            Storage::Sparse => {
                let rows = (0..self.n).map(|i| self.row(i).iter().unzip()).collect();
                Self::from_sparse_parts(self.n, rows)
            }
        }
    }

    /// Applies `f` to every entry, keeping zeros of the sparse pattern implicit.
    /// `f(0) == 0` is required for the two storages to agree.
    fn map_values(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        match &self.repr {
            Repr::Dense(d) => Self {
                n: self.n,
                repr: Repr::Dense(d.par_iter().map(|&v| f(v)).collect()),
            },
            Repr::Sparse { .. } => {
                let rows = (0..self.n)
                    .into_par_iter()
                    .map(|i| {
                        let mut cols = Vec::new();
                        let mut vals = Vec::new();
                        for (j, v) in self.row(i).iter() {
                            let w = f(v);
                            if w != 0.0 {
                                cols.push(j);
                                vals.push(w);
                            }
                        }
                        (cols, vals)
                    })
                    .collect();
                Self::from_sparse_parts(self.n, rows)
            }
        }
    }

    /// Entrywise `v^r`. `r = 1` is the identity.
    pub fn inflate(&self, r: f64) -> Result<Self> {
        if !r.is_finite() || r < 1.0 {
            return Err(Error::out_of_range("inflation_r", r, "finite and >= 1"));
        }
        if r == 1.0 {
            return Ok(self.clone());
        }
        Ok(self.map_values(|v| v.powf(r)))
    }

    /// Zeroes every entry strictly below `tau`; entries `>= tau` are untouched.
    pub fn prune(&self, tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::out_of_range("prune_tau", tau, "finite and >= 0"));
        }
        Ok(self.map_values(|v| if v < tau { 0.0 } else { v }))
    }

    /// Divides each row by its sum. All-zero rows become identity rows.
    pub fn row_normalize(&self) -> StochasticMatrix {
        let n = self.n;
        let m = match &self.repr {
            Repr::Dense(d) => {
                let mut out = d.clone();
                out.par_chunks_mut(n.max(1))
                    .enumerate()
                    .for_each(|(i, row)| {
                        let s: f64 = row.iter().sum();
                        if s > 0.0 {
                            row.iter_mut().for_each(|v| *v /= s);
                        } else {
                            row[i] = 1.0;
                        }
                    });
                Self {
                    n,
                    repr: Repr::Dense(out),
                }
            }
            Repr::Sparse { .. } => {
                let rows = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let row = self.row(i);
                        let s = row.sum();
                        if s > 0.0 {
                            let (cols, vals): (Vec<usize>, Vec<f64>) =
                                row.iter().map(|(j, v)| (j, v / s)).unzip();
                            // Division can underflow a denormal entry to zero.
                            if vals.iter().all(|v| *v != 0.0) {
                                (cols, vals)
                            } else {
                                cols.into_iter()
                                    .zip(vals)
                                    .filter(|(_, v)| *v != 0.0)
                                    .unzip()
                            }
                        } else {
                            (vec![i], vec![1.0])
                        }
                    })
                    .collect();
                Self::from_sparse_parts(n, rows)
            }
        };
        StochasticMatrix(m)
    }

    /// Matrix product `self * other`. Dense times dense stays dense; anything
    /// involving sparse storage produces a sparse result. With `cap`, each sparse
    /// output row keeps only its `cap` largest entries (ties to the lower column).
    pub fn matmul(&self, other: &NonnegMatrix, cap: Option<usize>) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::dims(
                format!("{0}x{0}", self.n),
                format!("{0}x{0}", other.n),
            ));
        }
        let n = self.n;
        if let (Repr::Dense(a), Repr::Dense(b), None) = (&self.repr, &other.repr, cap) {
            let mut out = vec![0.0; n * n];
            out.par_chunks_mut(n.max(1))
                .enumerate()
                .for_each(|(i, orow)| {
                    for (k, &aik) in a[i * n..(i + 1) * n].iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let brow = &b[k * n..(k + 1) * n];
                        for (o, &bkj) in orow.iter_mut().zip(brow) {
                            *o += aik * bkj;
                        }
                    }
                });
            return Ok(Self {
                n,
                repr: Repr::Dense(out),
            });
        }

        let rows: Vec<SparseRow> = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0.0f64; n], vec![false; n], Vec::<usize>::new()),
                |(acc, seen, touched), i| {
                    for (k, aik) in self.row(i).iter() {
                        for (j, bkj) in other.row(k).iter() {
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            acc[j] += aik * bkj;
                        }
                    }
                    touched.sort_unstable();
                    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(touched.len());
                    for &j in touched.iter() {
                        if acc[j] != 0.0 {
                            entries.push((j, acc[j]));
                        }
                        acc[j] = 0.0;
                        seen[j] = false;
                    }
                    touched.clear();
                    if let Some(cap) = cap {
                        keep_largest(&mut entries, cap);
                    }
                    entries.into_iter().unzip()
                },
            )
            .collect();
        Ok(Self::from_sparse_parts(n, rows))
    }

    /// Keeps at most `cap` largest entries per row (sparse result).
    pub fn keep_top_k(&self, cap: usize) -> Self {
        let rows = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut entries: Vec<(usize, f64)> = self.row(i).iter().collect();
                keep_largest(&mut entries, cap);
                entries.into_iter().unzip()
            })
            .collect();
        Self::from_sparse_parts(self.n, rows)
    }

    /// `alpha * self + (1 - alpha) * other`, entrywise.
    pub(crate) fn convex_combination(&self, other: &NonnegMatrix, alpha: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::dims(
                format!("{0}x{0}", self.n),
                format!("{0}x{0}", other.n),
            ));
        }
        let beta = 1.0 - alpha;
        if let (Repr::Dense(a), Repr::Dense(b)) = (&self.repr, &other.repr) {
            let data = a
                .par_iter()
                .zip(b.par_iter())
                .map(|(x, y)| alpha * x + beta * y)
                .collect();
            return Ok(Self {
                n: self.n,
                repr: Repr::Dense(data),
            });
        }
        let rows = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                merge_rows(self.row(i), other.row(i), |j, x, y| {
                    let v = alpha * x + beta * y;
                    if v != 0.0 {
                        cols.push(j);
                        vals.push(v);
                    }
                });
                (cols, vals)
            })
            .collect();
        Ok(Self::from_sparse_parts(self.n, rows))
    }

    /// Largest absolute entrywise difference over the union of both sparsity patterns.
    pub fn max_abs_diff(&self, other: &NonnegMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::dims(
                format!("{0}x{0}", self.n),
                format!("{0}x{0}", other.n),
            ));
        }
        let d = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut m = 0.0f64;
                merge_rows(self.row(i), other.row(i), |_, x, y| {
                    m = m.max((x - y).abs())
                });
                m
            })
            .reduce(|| 0.0, f64::max);
        Ok(d)
    }

    /// Relabels nodes: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            rows[perm[i]] = self.row(i).iter().map(|(j, v)| (perm[j], v)).collect();
        }
        let sparse = Self::from_sparse_rows(self.n, rows)?;
        Ok(sparse.to_storage(self.storage()))
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::dims(
            format!("permutation of length {n}"),
            perm.len(),
        ));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
    }
    Ok(())
}

/// Visits every column present in either row, in ascending order, with both values.
fn merge_rows(a: Row<'_>, b: Row<'_>, mut f: impl FnMut(usize, f64, f64)) {
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        match (ia.peek().copied(), ib.peek().copied()) {
            (Some((ja, x)), Some((jb, y))) => {
                if ja == jb {
                    f(ja, x, y);
                    ia.next();
                    ib.next();
                } else if ja < jb {
                    f(ja, x, 0.0);
                    ia.next();
                } else {
                    f(jb, 0.0, y);
                    ib.next();
                }
            }
            (Some((ja, x)), None) => {
                f(ja, x, 0.0);
                ia.next();
            }
            (None, Some((jb, y))) => {
                f(jb, 0.0, y);
                ib.next();
            }
            (None, None) => break,
        }
    }
}

/// Retains the `cap` largest entries (ties to the lower column), sorted by column.
fn keep_largest(entries: &mut Vec<(usize, f64)>, cap: usize) {
    if entries.len() <= cap {
        return;
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(cap);
    entries.sort_unstable_by_key(|&(j, _)| j);
}

/// A nonnegative square matrix whose rows each sum to one.
///
/// Values are only produced by normalization, by products of stochastic
/// matrices, by convex combinations of them, or by an explicit checked
/// conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix(NonnegMatrix);

impl Deref for StochasticMatrix {
    type Target = NonnegMatrix;

    fn deref(&self) -> &NonnegMatrix {
        &self.0
    }
}

impl StochasticMatrix {
    pub fn identity(n: usize, storage: Storage) -> Self {
        Self(NonnegMatrix::identity(n, storage))
    }

    /// Accepts `m` if every row sums to one within `tol`.
    pub fn try_from_matrix(m: NonnegMatrix, tol: f64) -> Result<Self> {
        for (i, s) in m.row_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidInput(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self(m))
    }

    /// Convenience for tests and fixtures: dense rows that must already be stochastic.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::try_from_matrix(NonnegMatrix::from_rows(rows)?, ROW_SUM_TOL)
    }

    pub fn matrix(&self) -> &NonnegMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> NonnegMatrix {
        self.0
    }

    pub fn to_storage(&self, storage: Storage) -> Self {
        Self(self.0.to_storage(storage))
    }

    /// Product of two stochastic matrices, which is again stochastic up to rounding.
    pub fn matmul(&self, other: &StochasticMatrix) -> Result<Self> {
        Ok(Self(self.0.matmul(&other.0, None)?))
    }

    /// `self^l` for `l >= 1` by repeated multiplication on the right.
    pub fn power(&self, l: u32) -> Result<Self> {
        if l == 0 {
            return Err(Error::out_of_range("expansion_l", l, ">= 1"));
        }
        let mut acc = self.clone();
        for _ in 1..l {
            acc = acc.matmul(self)?;
        }
        Ok(acc)
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `self * q` where `q` is a row-major `n x k` block.
    pub fn mul_dense(&self, q: &[f64], k: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if q.len() != n * k {
            return Err(Error::dims(format!("{n}x{k} block"), q.len()));
        }
        let mut out = vec![0.0; n * k];
        out.par_chunks_mut(k.max(1))
            .enumerate()
            .for_each(|(i, orow)| {
                for (j, s) in self.row(i).iter() {
                    for (o, &qv) in orow.iter_mut().zip(&q[j * k..(j + 1) * k]) {
                        *o += s * qv;
                    }
                }
            });
        Ok(out)
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Ok(Self(self.0.permuted(perm)?))
    }
}
