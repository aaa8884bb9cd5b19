//! Compressed-sparse-row matrices and the sparse × dense product.

use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Work (nnz × dense columns) above which `spmm` splits rows across threads.
const PARALLEL_SPMM_WORK: usize = 1 << 22;

/// CSR matrix. Column indices are strictly increasing within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds a canonical CSR matrix from `(row, col, value)` triplets.
    /// Duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &entries {
            if i >= rows {
                return Err(Error::Index {
                    index: i,
                    bound: rows,
                    context: "sparse row".into(),
                });
            }
            if j >= cols {
                return Err(Error::Index {
                    index: j,
                    bound: cols,
                    context: "sparse column".into(),
                });
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry present") += v;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        })
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(Error::Structural(format!(
                "row_offsets must have length {} and start at 0",
                rows + 1
            )));
        }
        if row_offsets[rows] != col_indices.len() || col_indices.len() != values.len() {
            return Err(Error::Structural(
                "row_offsets[rows], col_indices and values disagree in length".into(),
            ));
        }
        for i in 0..rows {
            if row_offsets[i] > row_offsets[i + 1] {
                return Err(Error::Structural(format!(
                    "row_offsets decreases at row {i}"
                )));
            }
            let row = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structural(format!(
                    "column indices of row {i} are not strictly increasing"
                )));
            }
            if let Some(&j) = row.last() {
                if j >= cols {
                    return Err(Error::Index {
                        index: j,
                        bound: cols,
                        context: format!("column of row {i}"),
                    });
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the symmetric flag has been set by a verified construction.
    pub fn is_flagged_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Value at (i, j), zero when the entry is not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let slot = next[j];
                col_indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets: counts,
            col_indices,
            values,
            symmetric: self.symmetric,
        }
    }

    /// Exact transpose comparison (structure and values).
    pub fn check_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        t.row_offsets == self.row_offsets
            && t.col_indices == self.col_indices
            && t.values == self.values
    }

    /// Sets the symmetric flag after verifying it by transpose comparison.
    pub fn into_symmetric(mut self) -> Result<Self> {
        if !self.check_symmetric() {
            return Err(Error::Structural("matrix is not symmetric".into()));
        }
        self.symmetric = true;
        Ok(self)
    }

    pub(crate) fn mark_symmetric_unchecked(mut self) -> Self {
        self.symmetric = true;
        self
    }

    /// Returns `I - self` for a square operator.
    pub fn identity_minus(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::dim(
                "identity_minus",
                format!("{}x{} is not square", self.rows, self.cols),
            ));
        }
        let trip = self
            .triplets()
            .map(|(i, j, v)| (i, j, -v))
            .chain((0..self.rows).map(|i| (i, i, 1.0)));
        let mut out = Self::from_triplets(self.rows, self.cols, trip)?;
        out.symmetric = self.symmetric;
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            d.set(i, j, v);
        }
        d
    }

    /// Sparse × dense product. Each output row is accumulated independently in
    /// stored column order, so the result does not depend on thread count.
    pub fn spmm(&self, dense: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != dense.rows() {
            return Err(Error::dim(
                "spmm",
                format!(
                    "{}x{} · {}x{}",
                    self.rows,
                    self.cols,
                    dense.rows(),
                    dense.cols()
                ),
            ));
        }
        let width = dense.cols();
        let mut out = DenseMatrix::zeros(self.rows, width);
        if width == 0 {
            return Ok(out);
        }
        let fill_row = |i: usize, dst: &mut [f64]| {
            for (j, v) in self.row(i) {
                for (d, s) in dst.iter_mut().zip(dense.row(j)) {
                    *d += v * s;
                }
            }
        };
        if self.nnz().saturating_mul(width) >= PARALLEL_SPMM_WORK {
            out.data_mut()
                .par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, dst)| fill_row(i, dst));
        } else {
            out.data_mut()
                .chunks_mut(width)
                .enumerate()
                .for_each(|(i, dst)| fill_row(i, dst));
        }
        Ok(out)
    }

    /// Sparse matrix × vector.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::dim(
                "spmv",
                format!("{}x{} · {}", self.rows, self.cols, x.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_canonicalised_and_summed() {
        let m = SparseOperator::from_triplets(
            2,
            3,
            [(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (1, 0, 3.0)],
        )
        .unwrap();
        assert_eq!(m.row_offsets(), &[0, 1, 3]);
        assert_eq!(m.col_indices(), &[1, 0, 2]);
        assert_eq!(m.values(), &[2.0, 3.0, 1.5]);
    }

    #[test]
    fn from_csr_rejects_unsorted_rows() {
        let err = SparseOperator::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn identity_spmm_is_identity() {
        let m = DenseMatrix::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64);
        assert_eq!(SparseOperator::identity(3).spmm(&m).unwrap(), m);
    }

    #[test]
    fn spmm_shape_mismatch() {
        let m = DenseMatrix::zeros(2, 2);
        assert!(SparseOperator::identity(3).spmm(&m).is_err());
    }

    #[test]
    fn transpose_of_non_square() {
        let m = SparseOperator::from_triplets(2, 3, [(0, 2, 1.0), (1, 0, 2.0)]).unwrap();
        let t = m.transpose();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.get(2, 0), 1.0);
        assert_eq!(t.get(0, 1), 2.0);
        assert_eq!(t.transpose(), m);
    }
}
