//! Compressed sparse row matrices built from coordinate triplets.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sorts triplets row-major and sums duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::Dimension(format!(
                "entry ({r}, {c}) outside {nrows}x{ncols}"
            )));
        }
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |i| (r, self.indices[i], self.values[i]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        match row.binary_search(&c) {
            Ok(i) => self.values[self.indptr[r] + i],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.ncols
            )));
        }
        Ok((0..self.nrows)
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .map(|i| self.values[i] * x[self.indices[i]])
                    .sum()
            })
            .collect())
    }

    /// `x = A^T y`
    pub fn mul_transpose_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows {
            return Err(Error::Dimension(format!(
                "vector of length {} against {} rows",
                y.len(),
                self.nrows
            )));
        }
        let mut x = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for i in self.indptr[r]..self.indptr[r + 1] {
                x[self.indices[i]] += self.values[i] * yr;
            }
        }
        Ok(x)
    }

    /// Columns that hold at least one stored entry.
    pub fn column_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.ncols];
        for &c in &self.indices {
            mask[c] = true;
        }
        mask
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.ncols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            s[c] += v;
        }
        s
    }

    /// `self + sign * other`
    pub fn add_scaled(&self, other: &SparseMatrix, sign: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension("sparse shapes differ".into()));
        }
        let trip = self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, sign * v)));
        Self::from_triplets(self.nrows, self.ncols, trip.collect())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.mul_vec(&[1.0, 0.0, 2.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn out_of_range_entry_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        let m = SparseMatrix::zeros(2, 2);
        assert!(m.mul_vec(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn transpose_is_adjoint(
            entries in prop::collection::vec((0usize..7, 0usize..5, -3.0f64..3.0), 0..30),
            x in prop::collection::vec(-5.0f64..5.0, 5),
            y in prop::collection::vec(-5.0f64..5.0, 7),
        ) {
            let m = SparseMatrix::from_triplets(7, 5, entries).unwrap();
            let ax = m.mul_vec(&x).unwrap();
            let aty = m.mul_transpose_vec(&y).unwrap();
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
