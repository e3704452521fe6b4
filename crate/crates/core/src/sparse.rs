//! Compressed sparse row storage for symmetric, loop-free adjacency matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Square sparse matrix in CSR layout.
///
/// Instances built through the public constructors are structurally
/// symmetric, have no diagonal entries and keep column indices strictly
/// increasing inside each row. [`CsrMatrix::validate`] re-checks all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// An `n`×`n` matrix with no entries.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Unweighted adjacency from an undirected edge list.
    ///
    /// Each pair is inserted in both directions, duplicates collapse to a
    /// single entry of weight 1.0 and self-loops are dropped.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidParam(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![1.0; col_idx.len()];
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Sparsifies a dense matrix, keeping every non-zero off-diagonal entry.
    ///
    /// The caller is responsible for symmetry; use [`CsrMatrix::validate`]
    /// when the input is not trusted.
    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let (rows, cols) = dense.dim();
        if rows != cols {
            return Err(Error::shape(format!("{rows}x{cols} is not square")));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let v = dense[[i, j]];
                if i != j && v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n: rows,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Number of stored neighbours of node `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Weighted degree (row sum) of node `i`.
    pub fn degree(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterator over `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// Undirected edges `(u, v)` with `u < v`.
    pub fn upper_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.triplets().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i, j))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.triplets() {
            out[[i, j]] = v;
        }
        out
    }

    /// Checks every structural invariant of the type.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.row_ptr.len() != self.n + 1 || self.row_ptr[0] != 0 {
            return bad("row_ptr must have n+1 entries starting at 0".into());
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr is not non-decreasing".into());
        }
        if self.row_ptr[self.n] != self.col_idx.len() || self.col_idx.len() != self.values.len() {
            return bad("row_ptr[n], col_idx and values disagree in length".into());
        }
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {i} columns not strictly increasing"));
            }
            for (&j, &v) in cols.iter().zip(vals) {
                if j >= self.n {
                    return bad(format!("column {j} out of range in row {i}"));
                }
                if j == i {
                    return bad(format!("diagonal entry at {i}"));
                }
                if self.get(j, i) != v {
                    return bad(format!("entry ({i}, {j}) has no symmetric partner"));
                }
            }
        }
        Ok(())
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for (i, j, v) in self.triplets() {
            rows[perm[i]].push((perm[j], v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in row.iter() {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Keeps entries whose endpoints both satisfy `keep`, rescaling the
    /// retained values with `scale(i, j, value)`.
    pub(crate) fn filter_map(&self, keep: impl Fn(usize) -> bool, scale: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        row_ptr.push(0);
        for i in 0..self.n {
            if keep(i) {
                let (cols, vals) = self.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    if keep(j) {
                        col_idx.push(j);
                        values.push(scale(i, j, v));
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (rows, d) = x.dim();
        if rows != self.n {
            return Err(Error::shape(format!(
                "cannot multiply {n}x{n} sparse matrix with {rows}x{d} dense",
                n = self.n
            )));
        }
        let mut out = Array2::zeros((self.n, d));
        for (i, mut out_row) in out.outer_iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &x.row(j));
            }
        }
        Ok(out)
    }
}
