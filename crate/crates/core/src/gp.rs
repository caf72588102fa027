//! Zero-mean Gaussian-process posterior over a pool of query locations and
//! its exact Jacobians with respect to those locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, grad_x_kern_into, kern_unchecked, KernelParams};
use crate::linalg::{self, cholesky, dot, JitterPolicy, Matrix};

pub type Bounds = Vec<(f64, f64)>;

pub fn unit_bounds(dim: usize) -> Bounds {
    vec![(0.0, 1.0); dim]
}

pub(crate) fn check_inside(x: &Matrix, bounds: &[(f64, f64)]) -> Result<()> {
    if x.cols() != bounds.len() {
        return Err(Error::DimensionMismatch(format!("{}-column inputs against {} bounds", x.cols(), bounds.len())));
    }
    for i in 0..x.rows() {
        for (k, (&v, &(lo, hi))) in x.row(i).iter().zip(bounds).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::InvalidArgument(format!("row {i} coordinate {k} = {v} outside [{lo}, {hi}]")));
            }
        }
    }
    Ok(())
}

/// Observed inputs and outputs inside a box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Matrix,
    outputs: Vec<f64>,
    bounds: Bounds,
}

impl Dataset {
    pub fn empty(bounds: Bounds) -> Self {
        let d = bounds.len();
        Self { inputs: Matrix::zeros(0, d), outputs: Vec::new(), bounds }
    }

    pub fn new(inputs: Matrix, outputs: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if inputs.rows() != outputs.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs with {} outputs", inputs.rows(), outputs.len())));
        }
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite output".into()));
        }
        check_inside(&inputs, &bounds)?;
        Ok(Self { inputs, outputs, bounds })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn best_output(&self) -> Option<f64> {
        self.outputs.iter().copied().reduce(f64::max)
    }

    /// Appends a batch of observations.
    pub fn extend(&mut self, x: &Matrix, y: &[f64]) -> Result<()> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch("batch inputs vs outputs".into()));
        }
        check_inside(x, &self.bounds)?;
        let mut data = std::mem::replace(&mut self.inputs, Matrix::zeros(0, 0)).into_vec();
        data.extend_from_slice(x.as_slice());
        self.inputs = Matrix::from_vec(self.outputs.len() + y.len(), self.bounds.len(), data)?;
        self.outputs.extend_from_slice(y);
        Ok(())
    }
}

/// Gaussian belief N(mu, sigma) over the outcomes of a pool, with the
/// Cholesky factor of `sigma + jitter_used·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian {
    pub mu: Vec<f64>,
    pub sigma: Matrix,
    pub chol: Matrix,
    pub jitter_used: f64,
}

impl PosteriorGaussian {
    /// Builds a belief directly from moments.
    pub fn from_moments(mu: Vec<f64>, sigma: Matrix, policy: &JitterPolicy) -> Result<Self> {
        if sigma.shape() != (mu.len(), mu.len()) {
            return Err(Error::DimensionMismatch("mean and covariance sizes".into()));
        }
        let ch = cholesky(&sigma, policy)?;
        Ok(Self { mu, sigma, chol: ch.factor, jitter_used: ch.jitter_used })
    }

    pub fn q(&self) -> usize {
        self.mu.len()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.q()).map(|i| self.sigma[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Derivatives of the posterior moments with respect to the pool.
///
/// Column `j·d + k` holds derivatives with respect to coordinate `k` of pool
/// row `j`; row `i·q + l` of `dsigma` holds ∂Σ_il.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorJacobians {
    pub dmu: Matrix,
    pub dsigma: Matrix,
}

impl PosteriorJacobians {
    /// ∂Σ with respect to a single pool coordinate, as a q×q matrix.
    pub fn dsigma_for(&self, q: usize, column: usize) -> Matrix {
        Matrix::from_fn(q, q, |i, l| self.dsigma[(i * q + l, column)])
    }
}

/// A GP conditioned on a fixed dataset. The factor of the data covariance is
/// computed once at construction and shared read-only by every query.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: Dataset,
    params: KernelParams,
    policy: JitterPolicy,
    data_chol: Option<Matrix>,
    weights: Vec<f64>,
}

impl GpModel {
    pub fn new(data: Dataset, params: KernelParams, policy: JitterPolicy) -> Result<Self> {
        params.validate()?;
        if params.dim() != data.dim() {
            return Err(Error::DimensionMismatch(format!("{}-dim kernel for {}-dim data", params.dim(), data.dim())));
        }
        let (data_chol, weights) = if data.is_empty() {
            (None, Vec::new())
        } else {
            let k = kernel::cov(&data.inputs, &params)?;
            let l = cholesky(&k, &policy)?.factor;
            let w = linalg::cho_solve_vec(&l, &data.outputs)?;
            (Some(l), w)
        };
        Ok(Self { data, params, policy, data_chol, weights })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn policy(&self) -> &JitterPolicy {
        &self.policy
    }

    fn check_pool(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.data.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}-column pool for a {}-dim model",
                x.cols(),
                self.data.dim()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("empty pool".into()));
        }
        Ok(())
    }

    /// Posterior mean only, for a batch of points.
    pub fn mean(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_pool(x)?;
        Ok((0..x.rows())
            .map(|i| {
                self.data_rows().zip(&self.weights).map(|(d, w)| kern_unchecked(x.row(i), d, &self.params) * w).sum()
            })
            .collect())
    }

    fn data_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.data.len()).map(move |m| self.data.inputs.row(m))
    }

    /// Returns the moments and `K⁻¹·K(data, X)` (n×q) when data is present.
    fn moments(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix, Option<Matrix>)> {
        self.check_pool(x)?;
        let q = x.rows();
        let mut sigma = kernel::cov(x, &self.params)?;
        let Some(l) = &self.data_chol else {
            return Ok((vec![0.0; q], sigma, None));
        };
        let k_nx = kernel::cross_cov(&self.data.inputs, x, &self.params)?;
        let mu = (0..q).map(|i| dot(&k_nx.column(i), &self.weights)).collect();
        let w = linalg::tri_solve_lower(l, &k_nx)?;
        let wt = w.transpose();
        for i in 0..q {
            for j in 0..=i {
                let v = sigma[(i, j)] - dot(wt.row(i), wt.row(j));
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        let v = linalg::tri_solve_lower_transpose(l, &w)?;
        Ok((mu, sigma, Some(v)))
    }

    pub fn posterior(&self, x: &Matrix) -> Result<PosteriorGaussian> {
        let (mu, sigma, _) = self.moments(x)?;
        PosteriorGaussian::from_moments(mu, sigma, &self.policy)
    }

    pub fn posterior_with_jacobians(&self, x: &Matrix) -> Result<(PosteriorGaussian, PosteriorJacobians)> {
        let (mu, sigma, v) = self.moments(x)?;
        let jac = self.jacobians_from(x, v.as_ref());
        Ok((PosteriorGaussian::from_moments(mu, sigma, &self.policy)?, jac))
    }

    pub fn posterior_jacobians(&self, x: &Matrix) -> Result<PosteriorJacobians> {
        let (_, _, v) = self.moments(x)?;
        Ok(self.jacobians_from(x, v.as_ref()))
    }

    fn jacobians_from(&self, x: &Matrix, v: Option<&Matrix>) -> PosteriorJacobians {
        let (q, d) = x.shape();
        let n = self.data.len();
        let qd = q * d;
        let mut dmu = Matrix::zeros(q, qd);
        let mut dsigma = Matrix::zeros(q * q, qd);
        let mut g = vec![0.0; d];

        // Prior part: only off-diagonal entries depend on the pool.
        for i in 0..q {
            for l in 0..q {
                if i == l {
                    continue;
                }
                grad_x_kern_into(x.row(i), x.row(l), &self.params, &mut g);
                for k in 0..d {
                    dsigma[(i * q + l, i * d + k)] += g[k];
                    dsigma[(l * q + i, i * d + k)] += g[k];
                }
            }
        }

        if let Some(v) = v {
            // cross[j][k][l] = Σ_m ∂k(x_j, d_m)/∂x_jk · (K⁻¹ k_l)_m
            let mut cross = vec![0.0; q * d * q];
            for j in 0..q {
                for (m, dm) in self.data_rows().enumerate() {
                    grad_x_kern_into(x.row(j), dm, &self.params, &mut g);
                    let wm = self.weights[m];
                    let vrow = v.row(m);
                    for k in 0..d {
                        let gk = g[k];
                        if gk == 0.0 {
                            continue;
                        }
                        dmu[(j, j * d + k)] += gk * wm;
                        let base = (j * d + k) * q;
                        for l in 0..q {
                            cross[base + l] += gk * vrow[l];
                        }
                    }
                }
            }
            debug_assert_eq!(n, v.rows());
            for j in 0..q {
                for k in 0..d {
                    let col = j * d + k;
                    let base = col * q;
                    for l in 0..q {
                        let c = cross[base + l];
                        if l == j {
                            dsigma[(j * q + j, col)] -= 2.0 * c;
                        } else {
                            dsigma[(j * q + l, col)] -= c;
                            dsigma[(l * q + j, col)] -= c;
                        }
                    }
                }
            }
        }
        PosteriorJacobians { dmu, dsigma }
    }
}

/// Conditions a fresh model on `data` and returns the posterior over `x`.
pub fn posterior(
    data: &Dataset,
    x: &Matrix,
    params: &KernelParams,
    policy: &JitterPolicy,
) -> Result<PosteriorGaussian> {
    GpModel::new(data.clone(), params.clone(), *policy)?.posterior(x)
}

pub fn posterior_jacobians(data: &Dataset, x: &Matrix, params: &KernelParams) -> Result<PosteriorJacobians> {
    GpModel::new(data.clone(), params.clone(), JitterPolicy::default())?.posterior_jacobians(x)
}
