use rayon::prelude::*;

/// Rows above which matrix-vector products run data-parallel.
const PARALLEL_ROWS: usize = 16_384;

/// Square compressed-sparse-row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given per-row column sets.
    pub fn from_pattern(mut rows: Vec<Vec<u32>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            values: vec![0.0; col_idx.len()],
            col_idx,
        }
    }

    /// Build from `(row, col, value)` triplets, summing duplicates in input order.
    pub fn from_triplets(n: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(r, c, _) in triplets {
            rows[r as usize].push(c);
        }
        let mut m = CsrMatrix::from_pattern(rows);
        for &(r, c, v) in triplets {
            m.add(r, c, v);
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn find(&self, r: u32, c: u32) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[r as usize], self.row_ptr[r as usize + 1]);
        self.col_idx[lo..hi].binary_search(&c).ok().map(|i| lo + i)
    }

    /// Add to an entry already in the pattern.
    pub fn add(&mut self, r: u32, c: u32, v: f64) {
        let i = self.find(r, c).expect("entry outside sparsity pattern");
        self.values[i] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r as u32, c as u32).map_or(0.0, |i| self.values[i])
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[lo..hi].iter().zip(&self.values[lo..hi]).map(|(c, v)| (*c as usize, *v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        let mut s = 0.0;
        for i in lo..hi {
            s += self.values[i] * x[self.col_idx[i] as usize];
        }
        s
    }

    /// `y = A x`.
    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        if self.n >= PARALLEL_ROWS {
            y.par_iter_mut().enumerate().for_each(|(r, yr)| *yr = self.row_dot(r, x));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = self.row_dot(r, x);
            }
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    /// Row-major dense copy, for small tests and oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }
}
