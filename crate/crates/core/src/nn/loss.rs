use crate::error::{shape_err, Result};
use crate::matrix::Matrix;

/// Root mean squared error over every element of the two matrices.
pub fn rmse_loss(outputs: &Matrix, targets: &Matrix) -> Result<f64> {
    if outputs.rows() != targets.rows() {
        return Err(shape_err("rmse rows", outputs.rows(), targets.rows()));
    }
    if outputs.cols() != targets.cols() {
        return Err(shape_err("rmse columns", outputs.cols(), targets.cols()));
    }
    let n = outputs.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = outputs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(libm::sqrt(sq / n as f64))
}

/// Per-row RMSE, the reconstruction score of each instance.
pub fn row_rmse(outputs: &Matrix, targets: &Matrix) -> Result<alloc::vec::Vec<f64>> {
    if outputs.rows() != targets.rows() {
        return Err(shape_err("rmse rows", outputs.rows(), targets.rows()));
    }
    if outputs.cols() != targets.cols() {
        return Err(shape_err("rmse columns", outputs.cols(), targets.cols()));
    }
    let d = outputs.cols().max(1) as f64;
    Ok((0..outputs.rows())
        .map(|r| {
            let sq: f64 = outputs
                .row(r)
                .iter()
                .zip(targets.row(r))
                .map(|(o, t)| (o - t) * (o - t))
                .sum();
            libm::sqrt(sq / d)
        })
        .collect())
}
