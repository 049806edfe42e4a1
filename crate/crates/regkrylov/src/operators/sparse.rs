use nalgebra::{DMatrix, DVector};

use super::OpKernel;

/// Compressed sparse row backend.
pub struct CsrOp {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrOp {
    /// Builds CSR storage from unsorted triplets. Duplicate entries are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            assert!(i < rows, "row index {i} out of bounds");
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; triplets.len()];
        let mut values = vec![0.0; triplets.len()];
        let mut fill = row_ptr.clone();
        for &(i, j, v) in triplets {
            assert!(j < cols, "column index {j} out of bounds");
            col_idx[fill[i]] = j;
            values[fill[i]] = v;
            fill[i] += 1;
        }
        // sort each row by column and merge duplicates
        let mut out = Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::with_capacity(triplets.len()),
            values: Vec::with_capacity(triplets.len()),
        };
        for i in 0..rows {
            let lo = row_ptr[i];
            let hi = row_ptr[i + 1];
            let mut entries: Vec<(usize, f64)> = (lo..hi).map(|p| (col_idx[p], values[p])).collect();
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                if let Some(last) = out.col_idx.last() {
                    if *last == j && out.col_idx.len() > out.row_ptr[i] {
                        *out.values.last_mut().unwrap() += v;
                        continue;
                    }
                }
                out.col_idx.push(j);
                out.values.push(v);
            }
            out.row_ptr[i + 1] = out.col_idx.len();
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries as (row, col, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            a[(i, j)] += v;
        }
        a
    }
}

impl OpKernel for CsrOp {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn matvec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for i in 0..self.rows {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * v[self.col_idx[p]];
            }
            out[i] = acc;
        }
        out
    }

    fn rmatvec(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.cols);
        for i in 0..self.rows {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[p]] += self.values[p] * ui;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_construction_merges_duplicates() {
        let csr = CsrOp::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 5.0)]);
        assert_eq!(csr.nnz(), 2);
        let d = csr.to_dense();
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 1)], 5.0);
    }

    #[test]
    fn csr_matches_dense_assembly() {
        let triplets = [(0usize, 1usize, 2.0), (1, 0, -1.0), (2, 1, 4.0)];
        let csr = CsrOp::from_triplets(3, 2, &triplets);
        let dense = csr.to_dense();
        let v = DVector::from_row_slice(&[1.5, -2.0]);
        assert_eq!(csr.matvec(&v), &dense * &v);
        let u = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(csr.rmatvec(&u), dense.tr_mul(&u));
    }
}
