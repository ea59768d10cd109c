use crate::error::{NewtError, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;

/// Dense row-major matrix. Rows index batch elements throughout the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

/// Work threshold (in multiply-adds) below which kernels stay serial.
/// Parallel kernels assign each output row to exactly one task with a
/// fixed-order inner sum, so results are bitwise identical for any
/// thread count.
const PAR_FLOP_THRESHOLD: usize = 1 << 17;

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NewtError::dim(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NewtError::dim("ragged rows".to_string()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn row_vector(data: Vec<S>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }
    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(S) -> S + Sync) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(NewtError::dim("add_assign shape mismatch".to_string()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: S) {
        for x in &mut self.data {
            *x *= k;
        }
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(parts: &[&Matrix<S>]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(NewtError::dim("concat_cols row mismatch".to_string()));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for m in parts {
                dst[off..off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        Ok(out)
    }

    /// Splits columns into consecutive blocks of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Matrix<S>>> {
        if widths.iter().sum::<usize>() != self.cols {
            return Err(NewtError::dim("split_cols width mismatch".to_string()));
        }
        let mut out: Vec<Matrix<S>> = widths
            .iter()
            .map(|&w| Matrix::zeros(self.rows, w))
            .collect();
        for r in 0..self.rows {
            let src = self.row(r);
            let mut off = 0;
            for (m, &w) in out.iter_mut().zip(widths) {
                m.row_mut(r).copy_from_slice(&src[off..off + w]);
                off += w;
            }
        }
        Ok(out)
    }

    /// Repeats a single row `n` times.
    pub fn repeat_row(row: &[S], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Matrix {
            rows: n,
            cols: row.len(),
            data,
        }
    }

    /// y = x . w  (x: [n,k], w: [k,m]).
    pub fn matmul(&self, w: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != w.rows {
            return Err(NewtError::dim(format!(
                "matmul: [{}x{}] . [{}x{}]",
                self.rows, self.cols, w.rows, w.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, w.cols);
        let mut out = Matrix::zeros(n, m);
        let work = n * k * m;
        let body = |r: usize, dst: &mut [S]| {
            let xrow = self.row(r);
            for (kk, &xv) in xrow.iter().enumerate() {
                let wrow = w.row(kk);
                for (d, &wv) in dst.iter_mut().zip(wrow) {
                    *d += xv * wv;
                }
            }
        };
        if work >= PAR_FLOP_THRESHOLD {
            out.data
                .par_chunks_mut(m)
                .enumerate()
                .for_each(|(r, dst)| body(r, dst));
        } else {
            for r in 0..n {
                body(r, &mut out.data[r * m..(r + 1) * m]);
            }
        }
        Ok(out)
    }

    /// Materialized transpose.
    pub fn transposed(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            let src = self.row(r);
            for (c, &v) in src.iter().enumerate() {
                out.data[c * self.rows + r] = v;
            }
        }
        out
    }

    /// dx = dy . w^T  (dy: [n,m], w: [k,m]) -> [n,k]. Transposes w once
    /// so the multiply runs on the vectorized accumulation kernel; the
    /// summation order over m matches the naive dot product.
    pub fn matmul_transpose_rhs(&self, w: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != w.cols {
            return Err(NewtError::dim(format!(
                "matmul_transpose_rhs: [{}x{}] . [{}x{}]^T",
                self.rows, self.cols, w.rows, w.cols
            )));
        }
        self.matmul(&w.transposed())
    }

    /// dw += x^T . dy  (x: [n,k], dy: [n,m], dw: [k,m]), accumulated as a
    /// sum of per-row outer products so every access is contiguous. Each
    /// dw element is still a fixed-order sum over the batch, so results
    /// are bitwise identical for any chunking.
    pub fn accumulate_transpose_lhs_matmul(x: &Matrix<S>, dy: &Matrix<S>, dw: &mut Matrix<S>) -> Result<()> {
        if x.rows != dy.rows || dw.rows != x.cols || dw.cols != dy.cols {
            return Err(NewtError::dim("grad accumulate shape mismatch".to_string()));
        }
        let (n, k, m) = (x.rows, x.cols, dy.cols);
        let work = n * k * m;
        // chunk over dw row ranges; each chunk scans the batch once
        let body = |kk_lo: usize, dst: &mut [S]| {
            let rows = dst.len() / m;
            for r in 0..n {
                let xr = &x.row(r)[kk_lo..kk_lo + rows];
                let dyr = dy.row(r);
                for (kk_rel, &xv) in xr.iter().enumerate() {
                    let out = &mut dst[kk_rel * m..(kk_rel + 1) * m];
                    for (d, &g) in out.iter_mut().zip(dyr) {
                        *d += xv * g;
                    }
                }
            }
        };
        if work >= PAR_FLOP_THRESHOLD && k >= 8 {
            let threads = rayon::current_num_threads().max(1);
            let rows_per_chunk = k.div_ceil(threads).max(1);
            dw.data
                .par_chunks_mut(rows_per_chunk * m)
                .enumerate()
                .for_each(|(chunk_idx, dst)| body(chunk_idx * rows_per_chunk, dst));
        } else {
            body(0, &mut dw.data);
        }
        Ok(())
    }
}
