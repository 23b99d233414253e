//! Row-major dense and CSR sparse storage behind one accessor contract.

use serde::{Deserialize, Serialize};

/// Matrices with a fill ratio below this are stored sparse.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "dense matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row (column, value) lists; columns must be sorted
    /// and zeros are dropped.
    pub fn from_row_entries(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in &rows {
            for &(c, v) in r {
                debug_assert!(c < cols);
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Matrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl Matrix {
    /// Stores `dense` sparse when its density is under the threshold.
    pub fn auto(dense: DenseMatrix) -> Self {
        let total = dense.rows * dense.cols;
        let nnz = dense.data.iter().filter(|v| **v != 0.0).count();
        if total > 0 && (nnz as f64) / (total as f64) < SPARSE_DENSITY_THRESHOLD {
            let rows = dense
                .rows_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(c, v)| (c, *v))
                        .collect()
                })
                .collect();
            Matrix::Sparse(CsrMatrix::from_row_entries(dense.cols, rows))
        } else {
            Matrix::Dense(dense)
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.rows,
            Matrix::Sparse(m) => m.rows,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.cols,
            Matrix::Sparse(m) => m.cols,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Matrix::Sparse(_))
    }

    pub fn density(&self) -> f64 {
        let total = (self.nrows() * self.ncols()) as f64;
        if total == 0.0 {
            return 0.0;
        }
        let nnz = match self {
            Matrix::Dense(m) => m.data.iter().filter(|v| **v != 0.0).count(),
            Matrix::Sparse(m) => m.nnz(),
        };
        nnz as f64 / total
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Matrix::Dense(m) => m.data[i * m.cols + j],
            Matrix::Sparse(m) => {
                let span = m.indptr[i]..m.indptr[i + 1];
                match m.indices[span.clone()].binary_search(&j) {
                    Ok(pos) => m.values[span.start + pos],
                    Err(_) => 0.0,
                }
            }
        }
    }

    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        self.write_row(i, &mut out);
        out
    }

    pub fn write_row(&self, i: usize, out: &mut [f64]) {
        match self {
            Matrix::Dense(m) => out.copy_from_slice(m.row(i)),
            Matrix::Sparse(m) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (c, v) in m.row_entries(i) {
                    out[c] = v;
                }
            }
        }
    }

    /// Calls `f(column, value)` for every stored entry of row `i`.
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Matrix::Dense(m) => m.row(i).iter().enumerate().for_each(|(c, v)| f(c, *v)),
            Matrix::Sparse(m) => m.row_entries(i).for_each(|(c, v)| f(c, v)),
        }
    }

    pub fn row_dot(&self, i: usize, j: usize) -> f64 {
        match self {
            Matrix::Dense(m) => m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum(),
            Matrix::Sparse(m) => {
                let (mut a, mut b) = (m.row_entries(i).peekable(), m.row_entries(j).peekable());
                let mut acc = 0.0;
                while let (Some(&(ca, va)), Some(&(cb, vb))) = (a.peek(), b.peek()) {
                    match ca.cmp(&cb) {
                        std::cmp::Ordering::Less => {
                            a.next();
                        }
                        std::cmp::Ordering::Greater => {
                            b.next();
                        }
                        std::cmp::Ordering::Equal => {
                            acc += va * vb;
                            a.next();
                            b.next();
                        }
                    }
                }
                acc
            }
        }
    }

    pub fn row_sq_norm(&self, i: usize) -> f64 {
        match self {
            Matrix::Dense(m) => m.row(i).iter().map(|v| v * v).sum(),
            Matrix::Sparse(m) => m.row_entries(i).map(|(_, v)| v * v).sum(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Matrix::Dense(m) => m.clone(),
            Matrix::Sparse(_) => {
                let mut out = DenseMatrix::zeros(self.nrows(), self.ncols());
                for i in 0..self.nrows() {
                    self.write_row(i, out.row_mut(i));
                }
                out
            }
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        match self {
            Matrix::Dense(m) => {
                let mut data = Vec::with_capacity(indices.len() * m.cols);
                for &i in indices {
                    data.extend_from_slice(m.row(i));
                }
                Matrix::Dense(DenseMatrix::new(indices.len(), m.cols, data))
            }
            Matrix::Sparse(m) => Matrix::Sparse(CsrMatrix::from_row_entries(
                m.cols,
                indices.iter().map(|&i| m.row_entries(i).collect()).collect(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_and_dense_accessors_agree() {
        let dense = DenseMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 2.0, 0.0],
            vec![3.0, 0.0, 0.0, 0.0, 0.0],
        ]);
        let sparse = Matrix::auto(dense.clone());
        assert!(sparse.is_sparse());
        let dense = Matrix::Dense(dense);
        for i in 0..3 {
            assert_eq!(sparse.row_dense(i), dense.row_dense(i));
            assert_eq!(sparse.row_sq_norm(i), dense.row_sq_norm(i));
            for j in 0..3 {
                assert_eq!(sparse.row_dot(i, j), dense.row_dot(i, j));
            }
            for j in 0..5 {
                assert_eq!(sparse.get(i, j), dense.get(i, j));
            }
        }
        assert_eq!(sparse.select_rows(&[2, 0]).row_dense(0), vec![3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_stays_dense_above_threshold() {
        let m = Matrix::auto(DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        assert!(!m.is_sparse());
        assert_eq!(m.density(), 0.5);
    }
}
