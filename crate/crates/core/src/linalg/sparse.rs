use nalgebra::{DMatrix, DVector};

/// Coordinate-format accumulator. Duplicate entries are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        CscMatrix::from_triplets(self.nrows, self.ncols, &self.entries)
    }
}

/// Compressed sparse column matrix with sorted, unique row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CscMatrix {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0; ncols + 1];
        let mut rowind = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.colptr[c]..self.colptr[c + 1]).map(move |p| (self.rowind[p], c, self.values[p]))
        })
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowind[p]] += self.values[p] * xc;
            }
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.ncols, |c, _| {
            (self.colptr[c]..self.colptr[c + 1])
                .map(|p| self.values[p] * x[self.rowind[p]])
                .sum()
        })
    }

    /// Scale rows by `d_r` and columns by `d_c`: `diag(d_r) A diag(d_c)`.
    pub fn scale(&mut self, row_scale: &DVector<f64>, col_scale: &DVector<f64>) {
        for c in 0..self.ncols {
            for p in self.colptr[c]..self.colptr[c + 1] {
                self.values[p] *= row_scale[self.rowind[p]] * col_scale[c];
            }
        }
    }

    /// Infinity norm of each column.
    pub fn col_norms_inf(&self) -> DVector<f64> {
        DVector::from_fn(self.ncols, |c, _| {
            self.values[self.colptr[c]..self.colptr[c + 1]]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
    }

    /// Infinity norm of each row.
    pub fn row_norms_inf(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        for (r, _, v) in self.iter() {
            out[r] = f64::max(out[r], v.abs());
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    pub fn from_dense(d: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..d.ncols() {
            for r in 0..d.nrows() {
                if d[(r, c)] != 0.0 {
                    entries.push((r, c, d[(r, c)]));
                }
            }
        }
        CscMatrix::from_triplets(d.nrows(), d.ncols(), &entries)
    }
}
