//! ARD squared-exponential covariance and its gradient with respect to the
//! first input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    /// Isotropic parameters: one lengthscale shared by `dim` inputs.
    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self { signal_variance, lengthscales: vec![lengthscale; dim], noise_variance }
    }

    /// Benchmark defaults on the unit box: unit variance, lengthscale 0.2,
    /// noise 1e-6.
    pub fn benchmark_default(dim: usize) -> Self {
        Self::isotropic(dim, 1.0, 0.2, 1e-6)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidArgument("signal_variance must be positive".into()));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument("noise_variance must be non-negative".into()));
        }
        Ok(())
    }

    fn check_dim(&self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != b.len() || a.len() != self.lengthscales.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel over {} dims applied to {}- and {}-vectors",
                self.lengthscales.len(),
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }
}

#[inline]
fn scaled_sq_dist(x: &[f64], x2: &[f64], ls: &[f64]) -> f64 {
    x.iter()
        .zip(x2)
        .zip(ls)
        .map(|((a, b), l)| {
            let r = (a - b) / l;
            r * r
        })
        .sum()
}

#[inline]
pub(crate) fn kern_unchecked(x: &[f64], x2: &[f64], params: &KernelParams) -> f64 {
    params.signal_variance * (-0.5 * scaled_sq_dist(x, x2, &params.lengthscales)).exp()
}

/// Writes ∂k(x, x2)/∂x into `out` and returns k(x, x2).
#[inline]
pub(crate) fn grad_x_kern_into(x: &[f64], x2: &[f64], params: &KernelParams, out: &mut [f64]) -> f64 {
    let k = kern_unchecked(x, x2, params);
    for (((o, a), b), l) in out.iter_mut().zip(x).zip(x2).zip(&params.lengthscales) {
        *o = -k * (a - b) / (l * l);
    }
    k
}

pub fn kern(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    params.check_dim(x, x2)?;
    Ok(kern_unchecked(x, x2, params))
}

pub fn grad_x_kern(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    params.check_dim(x, x2)?;
    let mut g = vec![0.0; x.len()];
    grad_x_kern_into(x, x2, params, &mut g);
    Ok(g)
}

/// Kernel matrix between the rows of `a` and the rows of `b`, without noise.
pub fn cross_cov(a: &Matrix, b: &Matrix, params: &KernelParams) -> Result<Matrix> {
    if a.cols() != params.dim() || b.cols() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cross covariance of {}- and {}-column inputs under a {}-dim kernel",
            a.cols(),
            b.cols(),
            params.dim()
        )));
    }
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| kern_unchecked(a.row(i), b.row(j), params)))
}

/// Covariance of noisy observations at the rows of `a`: `K(a, a) + noise·I`.
/// The result is exactly symmetric.
pub fn cov(a: &Matrix, params: &KernelParams) -> Result<Matrix> {
    let mut k = cross_cov(a, a, params)?;
    let n = a.rows();
    for i in 0..n {
        for j in 0..i {
            k[(j, i)] = k[(i, j)];
        }
        k[(i, i)] = params.signal_variance + params.noise_variance;
    }
    Ok(k)
}
