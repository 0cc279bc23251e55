//! Small dense linear-algebra kernels.
//!
//! Vectors are plain `f64` slices. Factorizations and solves are delegated to
//! `nalgebra`; the extreme-eigenvalue estimates use power iteration so the
//! tolerance and iteration cap are explicit.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Relative tolerance for power iteration.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITER: usize = 10_000;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(a: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= a;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::domain(format!(
                    "row {i} has length {} but {cols} columns were expected",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::domain(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
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

    pub fn scale_in_place(&mut self, a: f64) {
        scale(a, &mut self.data);
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out = Aᵀ y`
    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), out);
            }
        }
    }

    /// `AᵀA` as an nalgebra matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for (j, &rj) in r.iter().enumerate() {
                if rj == 0.0 {
                    continue;
                }
                for (k, &rk) in r.iter().enumerate() {
                    g[(j, k)] += rj * rk;
                }
            }
        }
        g
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

fn start_vector(dim: usize) -> Vec<f64> {
    let mut rng = stream(0x706f_7765_72, Purpose::Check, &[dim as u64]);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm_sq(&v).sqrt();
    scale(1.0 / n, &mut v);
    v
}

/// Largest eigenvalue of a symmetric positive semidefinite operator.
///
/// `op(v, out)` must write `M v` into `out`. Converges when the Rayleigh
/// quotient changes by less than [`POWER_TOL`] relatively and the residual
/// `‖Mv − ρv‖` is below `√POWER_TOL · ρ`.
pub fn power_iteration<F>(dim: usize, what: &'static str, mut op: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Ok(0.0);
    }
    let mut v = start_vector(dim);
    let mut w = vec![0.0; dim];
    op(&v, &mut w);
    let mut rho = dot(&v, &w);
    for _ in 0..POWER_MAX_ITER {
        let wn = norm_sq(&w).sqrt();
        if wn == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        op(&v, &mut w);
        let next = dot(&v, &w);
        let resid = w.iter().zip(&v).map(|(wi, vi)| (wi - next * vi).powi(2)).sum::<f64>().sqrt();
        let scale = next.abs().max(f64::MIN_POSITIVE);
        if (next - rho).abs() <= POWER_TOL * scale && resid <= POWER_TOL.sqrt() * scale {
            return Ok(next);
        }
        rho = next;
    }
    Err(Error::NoConvergence { what, iterations: POWER_MAX_ITER })
}

/// Largest eigenvalue of `AᵀA`, without forming the product.
pub fn lambda_max_gram(a: &Matrix) -> Result<f64> {
    let mut tmp = vec![0.0; a.rows()];
    power_iteration(a.cols(), "power iteration on AᵀA", |v, out| {
        a.mul_vec(v, &mut tmp);
        a.mul_t_vec(&tmp, out);
    })
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn lambda_max_sym(m: &DMatrix<f64>) -> Result<f64> {
    power_iteration(m.nrows(), "power iteration", |v, out| {
        let y = m * DVector::from_column_slice(v);
        out.copy_from_slice(y.as_slice());
    })
}

/// Smallest eigenvalue of a symmetric positive definite matrix, by inverse
/// power iteration on a Cholesky factorization. `None` if the matrix is not
/// positive definite.
pub fn lambda_min_spd(m: &DMatrix<f64>) -> Result<Option<f64>> {
    let Some(chol) = m.clone().cholesky() else {
        return Ok(None);
    };
    let inv_max = power_iteration(m.nrows(), "inverse power iteration", |v, out| {
        let y = chol.solve(&DVector::from_column_slice(v));
        out.copy_from_slice(y.as_slice());
    })?;
    if inv_max > 0.0 && inv_max.is_finite() {
        Ok(Some(1.0 / inv_max))
    } else {
        Ok(None)
    }
}
