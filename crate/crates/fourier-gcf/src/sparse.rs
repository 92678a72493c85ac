//! Compressed sparse row matrices.
//!
//! Used for the normalized user-item adjacency operators. `row_ptr` has
//! `rows + 1` entries and is nondecreasing; column indices are strictly
//! increasing within each row, so entry lookup and transposition are
//! deterministic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets.
    ///
    /// Triplets are sorted internally; duplicate (row, col) pairs are a
    /// contract error rather than being summed, because the adjacency
    /// construction upstream already deduplicates edges.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= rows || c >= cols {
                return Err(Error::contract(format!(
                    "triplet ({r}, {c}) out of bounds for {rows}x{cols} matrix"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::contract(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = triplets.iter().map(|&(_, c, _)| c).collect();
        let values = triplets.iter().map(|&(_, _, v)| v).collect();
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Stored (column, value) pairs of row `r`, in increasing column order.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    /// All stored entries as (row, col, value), row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row_entries(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// y = self * x for dense x, written with one pass over the stored
    /// entries. Accumulation order is row-major, so results are reproducible.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        x.require_rank(2, "sparse matmul operand")?;
        if x.rows() != self.cols {
            return Err(Error::shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(vec![self.rows, d]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = x.row(c);
                let dst = &mut out.values_mut()[r * d..(r + 1) * d];
                for k in 0..d {
                    dst[k] += v * src[k];
                }
            }
        }
        Ok(out)
    }

    /// y = self^T * x without materializing the transpose.
    pub fn transpose_matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        x.require_rank(2, "sparse transpose matmul operand")?;
        if x.rows() != self.rows {
            return Err(Error::shape(format!(
                "sparse^T {}x{} times dense {}x{}",
                self.cols,
                self.rows,
                x.rows(),
                x.cols()
            )));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(vec![self.cols, d]);
        for r in 0..self.rows {
            let src = x.row(r);
            for (c, v) in self.row_entries(r) {
                let dst = &mut out.values_mut()[c * d..(c + 1) * d];
                for k in 0..d {
                    dst[k] += v * src[k];
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(vec![self.rows, self.cols]);
        for (r, c, v) in self.entries() {
            out.values_mut()[r * self.cols + c] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_bounds_and_duplicates() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn off_diagonal_halves_swap_rows() {
        // [[0, 0.5], [0.5, 0]] * [[2], [4]] = [[2], [1]]
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let x = Tensor::matrix(2, 1, vec![2.0, 4.0]).unwrap();
        let y = a.matmul_dense(&x).unwrap();
        assert_eq!(y.values(), &[2.0, 1.0]);
    }

    #[test]
    fn matmul_agrees_with_dense_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let (r, c, d) = (
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..4),
            );
            let mut trips = Vec::new();
            for i in 0..r {
                for j in 0..c {
                    if rng.random_bool(0.4) {
                        trips.push((i, j, rng.random_range(-1.0..1.0)));
                    }
                }
            }
            let a = SparseMatrix::from_triplets(r, c, trips).unwrap();
            let x = Tensor::matrix(
                c,
                d,
                (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let fast = a.matmul_dense(&x).unwrap();
            let dense = a.to_dense();
            for i in 0..r {
                for k in 0..d {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += dense.values()[i * c + j] * x.values()[j * d + k];
                    }
                    assert!((acc - fast.values()[i * d + k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transpose_matmul_matches_explicit_transpose() {
        let a =
            SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)])
                .unwrap();
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = a.transpose_matmul_dense(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.values(), &[1.0, 2.0, -3.0, -4.0, 2.0, 4.0]);
    }
}
