//! Row-major dense matrix of `f64` with the handful of kernels the network needs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Multiplication counter threaded through the kernels.
///
/// The no-op implementation compiles away; the counting one backs the
/// instrumented forward pass used to check the analytic cost model.
pub trait MulCounter {
    fn add(&mut self, n: u64);
}

impl MulCounter for () {
    #[inline(always)]
    fn add(&mut self, _n: u64) {}
}

impl MulCounter for u64 {
    #[inline(always)]
    fn add(&mut self, n: u64) {
        *self += n;
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err("matrix data length", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err(alloc::format!("row {i} width"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out[r, o] = bias[o] + sum_i x[r, i] * w[o, i]` with `w` row-major `out x in`.
pub(crate) fn affine<C: MulCounter>(
    x: &Matrix,
    w: &[f64],
    bias: &[f64],
    out_dim: usize,
    counter: &mut C,
) -> Matrix {
    let in_dim = x.cols;
    let mut out = Matrix::zeros(x.rows, out_dim);
    if out_dim == 0 {
        return out;
    }
    // w transposed to `in x out` so the row update runs across outputs; every
    // output still sums bias, then inputs in ascending order
    let mut wt = vec![0.0; in_dim * out_dim];
    for o in 0..out_dim {
        for i in 0..in_dim {
            wt[i * out_dim + o] = w[o * in_dim + i];
        }
    }
    for r in 0..x.rows {
        let xr = x.row(r);
        let or = &mut out.data[r * out_dim..(r + 1) * out_dim];
        or.copy_from_slice(&bias[..out_dim]);
        for (&xi, wr) in xr.iter().zip(wt.chunks_exact(out_dim)) {
            for (acc, &wv) in or.iter_mut().zip(wr) {
                *acc += xi * wv;
            }
        }
        counter.add((in_dim * out_dim) as u64);
    }
    out
}

/// `dw[o, i] += sum_r delta[r, o] * x[r, i]`, `db[o] += sum_r delta[r, o]`.
pub(crate) fn accumulate_weight_grad(delta: &Matrix, x: &Matrix, dw: &mut [f64], db: &mut [f64]) {
    let in_dim = x.cols;
    for (o, (row, bo)) in dw.chunks_exact_mut(in_dim).zip(db.iter_mut()).enumerate() {
        for r in 0..delta.rows {
            let d = delta.data[r * delta.cols + o];
            if d == 0.0 {
                continue;
            }
            *bo += d;
            for (g, &xi) in row.iter_mut().zip(x.row(r)) {
                *g += d * xi;
            }
        }
    }
}

/// `out[r, i] = sum_o delta[r, o] * w[o, i]`.
pub(crate) fn backprop_input(delta: &Matrix, w: &[f64], in_dim: usize) -> Matrix {
    let mut out = Matrix::zeros(delta.rows, in_dim);
    for (r0, block) in out.data.chunks_mut(4 * in_dim.max(1)).enumerate() {
        let r0 = r0 * 4;
        for (o, wr) in w.chunks_exact(in_dim.max(1)).enumerate().take(delta.cols) {
            for (j, or) in block.chunks_exact_mut(in_dim.max(1)).enumerate() {
                let d = delta.data[(r0 + j) * delta.cols + o];
                if d == 0.0 {
                    continue;
                }
                for (acc, &wi) in or.iter_mut().zip(wr) {
                    *acc += d * wi;
                }
            }
        }
    }
    out
}
