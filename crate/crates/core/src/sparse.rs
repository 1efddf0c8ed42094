//! Compressed sparse row storage for symmetric operators.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric sparse `n × n` matrix in CSR form with sorted, unique columns
/// per row. Both triangles are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds from raw CSR arrays, checking shape and column ordering.
    /// Numeric symmetry is not checked here; see [`symmetry_defect`].
    ///
    /// [`symmetry_defect`]: SparseSymMatrix::symmetry_defect
    pub fn from_csr(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[0] != 0 || row_ptr[n] != cols.len() || cols.len() != vals.len() {
            return Err(Error::Shape("malformed CSR arrays".into()));
        }
        for r in 0..n {
            let (a, b) = (row_ptr[r], row_ptr[r + 1]);
            if a > b {
                return Err(Error::Shape(format!("row {r} has negative length")));
            }
            let row = &cols[a..b];
            if row.iter().any(|&c| c >= n) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape(format!("row {r} columns unsorted or out of range")));
            }
        }
        Ok(SparseSymMatrix { n, row_ptr, cols, vals })
    }

    /// Builds from per-row `(column, value)` lists; duplicates are summed in
    /// the order given.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if c >= n {
                    return Err(Error::Shape(format!("column {c} out of range for n={n}")));
                }
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseSymMatrix { n, row_ptr, cols, vals })
    }

    pub fn identity(n: usize) -> Self {
        SparseSymMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        SparseSymMatrix {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Largest `|A(p,q) − A(q,p)|`, counting absent mirrored entries as 0.
    pub fn symmetry_defect(&self) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| (v - self.get(c, r)).abs())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// `y = A x`. Each row is reduced serially in column order, so the result
    /// does not depend on the thread count.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_iter_mut().with_min_len(1024).enumerate().for_each(|(r, out)| {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *out = acc;
        });
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Returns a copy with `extra[i]` added to each diagonal entry, inserting
    /// diagonal entries where absent.
    pub fn add_diagonal(&self, extra: &[f64]) -> Result<Self> {
        if extra.len() != self.n {
            return Err(Error::Shape(format!(
                "diagonal of length {} for n={}",
                extra.len(),
                self.n
            )));
        }
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.nnz() + self.n);
        let mut vals = Vec::with_capacity(self.nnz() + self.n);
        row_ptr.push(0);
        for r in 0..self.n {
            let (rc, rv) = self.row(r);
            let mut placed = extra[r] == 0.0;
            for (&c, &v) in rc.iter().zip(rv) {
                if !placed && c > r {
                    cols.push(r);
                    vals.push(extra[r]);
                    placed = true;
                }
                if c == r {
                    cols.push(c);
                    vals.push(v + extra[r]);
                    placed = true;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            if !placed {
                cols.push(r);
                vals.push(extra[r]);
            }
            row_ptr.push(cols.len());
        }
        Ok(SparseSymMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Dense row-major copy; intended for small test and oracle sizes.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }

    /// Raw CSR arrays `(row_ptr, cols, vals)`.
    pub fn parts(&self) -> (&[usize], &[usize], &[f64]) {
        (&self.row_ptr, &self.cols, &self.vals)
    }
}
