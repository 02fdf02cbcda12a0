use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Row-compressed sparse code matrix (`N x c`). Column indices within a row
/// are strictly increasing and stored values are nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeMatrix {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl CodeMatrix {
    pub fn empty(n_cols: usize) -> Self {
        Self {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends one row given as `(column, value)` pairs in increasing column order.
    /// Zero values are dropped.
    pub fn push_row<I: IntoIterator<Item = (usize, f32)>>(&mut self, entries: I) {
        let mut last: Option<usize> = None;
        for (col, value) in entries {
            debug_assert!(col < self.n_cols);
            debug_assert!(last.is_none_or(|l| l < col), "columns must increase");
            last = Some(col);
            if value != 0.0 {
                self.indices.push(col as u32);
                self.values.push(value);
            }
        }
        self.indptr.push(self.indices.len());
    }

    pub fn from_dense(dense: ArrayView2<f32>) -> Self {
        let mut out = Self::empty(dense.ncols());
        for row in dense.rows() {
            out.push_row(row.iter().enumerate().map(|(j, &v)| (j, v)));
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f32> {
        let mut out = Array2::zeros((self.n_rows(), self.n_cols));
        for n in 0..self.n_rows() {
            let (idx, vals) = self.row(n);
            for (&j, &v) in idx.iter().zip(vals) {
                out[[n, j as usize]] = v;
            }
        }
        out
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, n: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.indptr[n], self.indptr[n + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, n: usize, col: usize) -> f32 {
        let (idx, vals) = self.row(n);
        match idx.binary_search(&(col as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::empty(self.n_cols);
        for &n in rows {
            let (idx, vals) = self.row(n);
            out.push_row(idx.iter().zip(vals).map(|(&j, &v)| (j as usize, v)));
        }
        out
    }

    /// Keeps only the listed columns, renumbered in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n_cols];
        for (new, &old) in cols.iter().enumerate() {
            map[old] = new;
        }
        let mut out = Self::empty(cols.len());
        let mut buf = Vec::new();
        for n in 0..self.n_rows() {
            let (idx, vals) = self.row(n);
            buf.clear();
            buf.extend(
                idx.iter()
                    .zip(vals)
                    .filter(|(&j, _)| map[j as usize] != usize::MAX)
                    .map(|(&j, &v)| (map[j as usize], v)),
            );
            buf.sort_unstable_by_key(|e| e.0);
            out.push_row(buf.iter().copied());
        }
        out
    }

    /// Number of rows in which each column is nonzero.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for &j in &self.indices {
            counts[j as usize] += 1;
        }
        counts
    }

    pub fn scaled(&self, factor: f32) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn check_cols(&self, expected: usize) -> Result<()> {
        if self.n_cols != expected {
            return Err(Error::Dimension(format!(
                "codes have {} columns, expected {expected}",
                self.n_cols
            )));
        }
        Ok(())
    }
}
