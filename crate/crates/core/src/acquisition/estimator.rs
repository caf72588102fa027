//! Monte Carlo acquisition values and their pathwise gradients.
//!
//! With base samples `z_k` and `y_k = mu + L·z_k`, the value estimate is the
//! sample mean of the integrand. Its gradient with respect to the pool `X`
//! is assembled per pool coordinate as
//!
//! ```text
//! dH/dX_jk = mean_k[ dh/dmu ]·dmu/dX_jk + < mean_k[ dh/dL ], dL/dX_jk >
//! ```
//!
//! where `dL/dX_jk` is the Cholesky pushforward of `dSigma/dX_jk`. Because
//! the same `z_k` block is used throughout, the result is the exact gradient
//! of the fixed-sample objective wherever that objective is differentiable.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::integrand::{argmax, sigmoid, softmax_into, ucb_scale, Family};
use super::pool::{canonical_permutation, Pool};
use super::samples::BaseSampleBlock;
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel, PosteriorGaussian, PosteriorJacobians};
use crate::kernel::KernelParams;
use crate::linalg::{cholesky_pushforward, JitterPolicy, Matrix};
use crate::par::{tree_reduce, Parallelism};

/// Acquisition family plus its parameters and Monte Carlo sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub family: Family,
    /// Improvement threshold (EI, PI).
    pub alpha: f64,
    /// Confidence parameter (UCB).
    pub beta: f64,
    /// Relaxation temperature (PI, ES_INNER).
    pub tau: f64,
    pub n_samples: usize,
}

impl AcquisitionSpec {
    pub fn new(family: Family) -> Self {
        Self { family, alpha: 0.0, beta: 3f64.sqrt(), tau: 0.01, n_samples: 128 }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        if !(self.beta > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidArgument("beta and tau must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Value, gradient with respect to the pool (q×d), and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct AcqGradient {
    pub value: f64,
    pub grad: Matrix,
    pub std_error: f64,
}

/// Row `k` is `mu + L·z_k`.
pub fn reparam_outcomes(post: &PosteriorGaussian, z: &BaseSampleBlock) -> Result<Matrix> {
    let q = post.q();
    if z.q() != q {
        return Err(Error::DimensionMismatch(format!("{}-column samples for a {q}-point pool", z.q())));
    }
    let mut out = Matrix::zeros(z.n(), q);
    for k in 0..z.n() {
        let zr = z.row(k);
        let row = out.row_mut(k);
        for (i, v) in row.iter_mut().enumerate() {
            *v = post.mu[i] + (0..=i).map(|j| post.chol[(i, j)] * zr[j]).sum::<f64>();
        }
    }
    Ok(out)
}

const STACK_Q: usize = 16;

#[inline]
fn with_buf<R>(q: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if q <= STACK_Q {
        let mut buf = [0.0; STACK_Q];
        f(&mut buf[..q])
    } else {
        f(&mut vec![0.0; q])
    }
}

#[inline]
fn lower_matvec(l: &Matrix, z: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = l.row(i);
        *o = (0..=i).map(|j| row[j] * z[j]).sum();
    }
}

struct Ctx<'a> {
    spec: &'a AcquisitionSpec,
    post: &'a PosteriorGaussian,
    ucb_s: f64,
}

/// Integrand value for one sample of a max-type family, with the pool index
/// the subgradient flows through and its slope.
///
/// For EI/PI/SR, dh/dy = slope·e_top. For UCB, dh/dmu = e_top and
/// dh/dL[top, :] = slope·z.
#[derive(Clone, Copy)]
struct ScalarSample {
    h: f64,
    top: usize,
    slope: f64,
}

impl Ctx<'_> {
    fn new<'a>(spec: &'a AcquisitionSpec, post: &'a PosteriorGaussian) -> Ctx<'a> {
        Ctx { spec, post, ucb_s: ucb_scale(spec.beta) }
    }

    #[inline]
    fn scalar_sample(&self, z: &[f64], w: &mut [f64]) -> ScalarSample {
        lower_matvec(&self.post.chol, z, w);
        let mu = &self.post.mu;
        if self.spec.family == Family::Ucb {
            let mut top = 0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..w.len() {
                let v = mu[i] + self.ucb_s * w[i].abs();
                if v > best {
                    best = v;
                    top = i;
                }
            }
            let sign = if w[top] > 0.0 {
                1.0
            } else if w[top] < 0.0 {
                -1.0
            } else {
                0.0
            };
            return ScalarSample { h: best, top, slope: self.ucb_s * sign };
        }
        for (wi, m) in w.iter_mut().zip(mu) {
            *wi += m;
        }
        let (top, m) = argmax(w);
        match self.spec.family {
            Family::Ei => {
                let u = m - self.spec.alpha;
                if u > 0.0 {
                    ScalarSample { h: u, top, slope: 1.0 }
                } else {
                    ScalarSample { h: 0.0, top, slope: 0.0 }
                }
            }
            Family::Pi => {
                let p = sigmoid((m - self.spec.alpha) / self.spec.tau);
                ScalarSample { h: p, top, slope: p * (1.0 - p) / self.spec.tau }
            }
            Family::Sr => ScalarSample { h: m, top, slope: 1.0 },
            Family::Ucb | Family::EsInner => unreachable!("handled separately"),
        }
    }

    /// Softmax of `(mu + L·z)/tau` written into `s`; `w` is scratch.
    #[inline]
    fn softmax_sample(&self, z: &[f64], w: &mut [f64], s: &mut [f64]) {
        lower_matvec(&self.post.chol, z, w);
        for (wi, m) in w.iter_mut().zip(&self.post.mu) {
            *wi += m;
        }
        softmax_into(w, self.spec.tau, s);
    }
}

fn check_inputs(spec: &AcquisitionSpec, post: &PosteriorGaussian, z: &BaseSampleBlock) -> Result<()> {
    spec.validate()?;
    if z.q() != post.q() {
        return Err(Error::DimensionMismatch(format!("{}-column samples for a {}-point pool", z.q(), post.q())));
    }
    if z.n() != spec.n_samples {
        return Err(Error::DimensionMismatch(format!("{} sample rows but n_samples = {}", z.n(), spec.n_samples)));
    }
    Ok(())
}

fn finish(sum: f64, sumsq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let std_error = if n > 1 {
        let var = ((sumsq - sum * mean) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Estimate { value: mean, std_error }
}

fn add_into(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Entropy of `pbar` and the gradient weights `c_i = -(ln pbar_i + 1)`.
fn entropy_and_weights(pbar: &[f64]) -> (f64, Vec<f64>) {
    let mut h = 0.0;
    let c = pbar
        .iter()
        .map(|&p| {
            let p = p.max(f64::MIN_POSITIVE);
            h -= p * p.ln();
            -(p.ln() + 1.0)
        })
        .collect();
    (h, c)
}

fn mean_pmax(par: Parallelism, ctx: &Ctx, z: &BaseSampleBlock) -> Vec<f64> {
    let q = ctx.post.q();
    let n = z.n();
    let sum = tree_reduce(
        par,
        n,
        |k| {
            let mut s = vec![0.0; q];
            with_buf(q, |w| ctx.softmax_sample(z.row(k), w, &mut s));
            s
        },
        add_into,
    )
    .expect("n_samples >= 1");
    sum.into_iter().map(|v| v / n as f64).collect()
}

pub fn estimate(spec: &AcquisitionSpec, post: &PosteriorGaussian, z: &BaseSampleBlock) -> Result<Estimate> {
    estimate_with(Parallelism::default(), spec, post, z)
}

pub fn estimate_with(
    par: Parallelism,
    spec: &AcquisitionSpec,
    post: &PosteriorGaussian,
    z: &BaseSampleBlock,
) -> Result<Estimate> {
    check_inputs(spec, post, z)?;
    let ctx = Ctx::new(spec, post);
    let q = post.q();
    let n = z.n();
    if spec.family == Family::EsInner {
        let pbar = mean_pmax(par, &ctx, z);
        let (entropy, c) = entropy_and_weights(&pbar);
        // Standard error of the linearization sum_i c_i·s_ki.
        let (sum, sumsq) = tree_reduce(
            par,
            n,
            |k| {
                with_buf(q, |w| {
                    with_buf(q, |s| {
                        ctx.softmax_sample(z.row(k), w, s);
                        let l: f64 = s.iter().zip(&c).map(|(a, b)| a * b).sum();
                        (l, l * l)
                    })
                })
            },
            |a, b| (a.0 + b.0, a.1 + b.1),
        )
        .expect("n_samples >= 1");
        let se = finish(sum, sumsq, n).std_error;
        return Ok(Estimate { value: entropy, std_error: se });
    }
    let (sum, sumsq) = tree_reduce(
        par,
        n,
        |k| {
            let h = with_buf(q, |w| ctx.scalar_sample(z.row(k), w).h);
            (h, h * h)
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )
    .expect("n_samples >= 1");
    Ok(finish(sum, sumsq, n))
}

/// Per-sample branch of the max-type integrands: the argmax index plus, for
/// EI, whether the improvement is positive and, for UCB, the sign of
/// `(L·z)_top`. The fixed-sample estimate is smooth wherever this is locally
/// constant. ES_INNER has no branches and yields all zeros.
pub fn branch_signature(
    spec: &AcquisitionSpec,
    post: &PosteriorGaussian,
    z: &BaseSampleBlock,
) -> Result<Vec<(usize, i8)>> {
    check_inputs(spec, post, z)?;
    if spec.family == Family::EsInner {
        return Ok(vec![(0, 0); z.n()]);
    }
    let ctx = Ctx::new(spec, post);
    let q = post.q();
    Ok((0..z.n())
        .map(|k| {
            let smp = with_buf(q, |w| ctx.scalar_sample(z.row(k), w));
            let flag = match spec.family {
                Family::Ei => (smp.slope > 0.0) as i8,
                Family::Ucb => smp.slope.signum() as i8 * (smp.slope != 0.0) as i8,
                _ => 0,
            };
            (smp.top, flag)
        })
        .collect())
}

/// Sample means of dh/dmu (q) and dh/dL (q×q, row-major) plus the estimate.
fn sensitivities(
    par: Parallelism,
    spec: &AcquisitionSpec,
    post: &PosteriorGaussian,
    z: &BaseSampleBlock,
) -> Result<(Estimate, Vec<f64>, Vec<f64>)> {
    check_inputs(spec, post, z)?;
    let ctx = Ctx::new(spec, post);
    let q = post.q();
    let n = z.n();
    // Accumulator layout: [h, h², dh/dmu (q), dh/dL (q·q)].
    let len = 2 + q + q * q;
    let (value, acc) = if spec.family == Family::EsInner {
        let pbar = mean_pmax(par, &ctx, z);
        let (entropy, c) = entropy_and_weights(&pbar);
        let acc = tree_reduce(
            par,
            n,
            |k| {
                let zr = z.row(k);
                let mut acc = vec![0.0; len];
                with_buf(q, |w| {
                    with_buf(q, |s| {
                        ctx.softmax_sample(zr, w, s);
                        let l: f64 = s.iter().zip(&c).map(|(a, b)| a * b).sum();
                        acc[0] = l;
                        acc[1] = l * l;
                        for j in 0..q {
                            // d(sum_i c_i s_i)/dy_j = s_j (c_j - l) / tau
                            let g = s[j] * (c[j] - l) / spec.tau;
                            acc[2 + j] = g;
                            let row = 2 + q + j * q;
                            for b in 0..=j {
                                acc[row + b] = g * zr[b];
                            }
                        }
                    })
                });
                acc
            },
            add_into,
        )
        .expect("n_samples >= 1");
        (Some(entropy), acc)
    } else {
        let is_ucb = spec.family == Family::Ucb;
        let acc = tree_reduce(
            par,
            n,
            |k| {
                let zr = z.row(k);
                let smp = with_buf(q, |w| ctx.scalar_sample(zr, w));
                let mut acc = vec![0.0; len];
                acc[0] = smp.h;
                acc[1] = smp.h * smp.h;
                acc[2 + smp.top] = if is_ucb { 1.0 } else { smp.slope };
                if smp.slope != 0.0 {
                    let row = 2 + q + smp.top * q;
                    for b in 0..=smp.top {
                        acc[row + b] = smp.slope * zr[b];
                    }
                }
                acc
            },
            add_into,
        )
        .expect("n_samples >= 1");
        (None, acc)
    };
    let nf = n as f64;
    let mut est = finish(acc[0], acc[1], n);
    if let Some(v) = value {
        est.value = v;
    }
    let gmu = acc[2..2 + q].iter().map(|v| v / nf).collect();
    let gl = acc[2 + q..].iter().map(|v| v / nf).collect();
    Ok((est, gmu, gl))
}

/// Gradient of the fixed-sample estimate given the posterior and its
/// Jacobians; `d` is the input dimension of the pool.
pub fn gradient_from_posterior(
    par: Parallelism,
    spec: &AcquisitionSpec,
    post: &PosteriorGaussian,
    jac: &PosteriorJacobians,
    z: &BaseSampleBlock,
    d: usize,
) -> Result<AcqGradient> {
    let q = post.q();
    if jac.dmu.shape() != (q, q * d) || jac.dsigma.shape() != (q * q, q * d) {
        return Err(Error::DimensionMismatch("posterior Jacobians".into()));
    }
    let (est, gmu, gl) = sensitivities(par, spec, post, z)?;
    let mut grad = Matrix::zeros(q, d);
    let gl_active = gl.iter().any(|&v| v != 0.0);
    for col in 0..q * d {
        let mut g: f64 = (0..q).map(|i| gmu[i] * jac.dmu[(i, col)]).sum();
        if gl_active {
            let dl = cholesky_pushforward(&post.chol, &jac.dsigma_for(q, col))?;
            for a in 0..q {
                for b in 0..=a {
                    g += gl[a * q + b] * dl[(a, b)];
                }
            }
        }
        grad.as_mut_slice()[col] = g;
    }
    Ok(AcqGradient { value: est.value, grad, std_error: est.std_error })
}

/// Pathwise gradient for a pool, conditioning a fresh model on `data`.
pub fn estimate_gradient(
    spec: &AcquisitionSpec,
    data: &Dataset,
    pool: &Pool,
    z: &BaseSampleBlock,
    params: &KernelParams,
) -> Result<AcqGradient> {
    let model = GpModel::new(data.clone(), params.clone(), JitterPolicy::default())?;
    Acquisition::new(&model, *spec).estimate_gradient(pool.points(), z)
}

/// How the pool rows are ordered before the Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrdering {
    /// Rows are used as given; the estimate is continuous in the pool.
    #[default]
    AsGiven,
    /// Rows are sorted lexicographically and the sample columns are carried
    /// along, so the estimate is exactly invariant to reordering the pool
    /// together with the sample columns.
    Canonical,
}

/// An acquisition function bound to a fitted model.
#[derive(Debug, Clone, Copy)]
pub struct Acquisition<'m> {
    model: &'m GpModel,
    pub spec: AcquisitionSpec,
    pub ordering: PoolOrdering,
    pub par: Parallelism,
}

impl<'m> Acquisition<'m> {
    pub fn new(model: &'m GpModel, spec: AcquisitionSpec) -> Self {
        Self { model, spec, ordering: PoolOrdering::AsGiven, par: Parallelism::default() }
    }

    pub fn with_ordering(mut self, ordering: PoolOrdering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn with_parallelism(mut self, par: Parallelism) -> Self {
        self.par = par;
        self
    }

    pub fn model(&self) -> &GpModel {
        self.model
    }

    fn arrange<'z>(
        &self,
        x: &Matrix,
        z: &'z BaseSampleBlock,
    ) -> (Option<Vec<usize>>, Matrix, Cow<'z, BaseSampleBlock>) {
        match self.ordering {
            PoolOrdering::AsGiven => (None, x.clone(), Cow::Borrowed(z)),
            PoolOrdering::Canonical => {
                let perm = canonical_permutation(x);
                let xs = x.permute_rows(&perm);
                let zs = z.permute_columns(&perm);
                (Some(perm), xs, Cow::Owned(zs))
            }
        }
    }

    pub fn estimate(&self, x: &Matrix, z: &BaseSampleBlock) -> Result<Estimate> {
        let (_, xs, zs) = self.arrange(x, z);
        let post = self.model.posterior(&xs)?;
        estimate_with(self.par, &self.spec, &post, &zs)
    }

    pub fn branch_signature(&self, x: &Matrix, z: &BaseSampleBlock) -> Result<Vec<(usize, i8)>> {
        let (_, xs, zs) = self.arrange(x, z);
        let post = self.model.posterior(&xs)?;
        branch_signature(&self.spec, &post, &zs)
    }

    pub fn estimate_gradient(&self, x: &Matrix, z: &BaseSampleBlock) -> Result<AcqGradient> {
        let (perm, xs, zs) = self.arrange(x, z);
        let (post, jac) = self.model.posterior_with_jacobians(&xs)?;
        let mut out = gradient_from_posterior(self.par, &self.spec, &post, &jac, &zs, x.cols())?;
        if let Some(perm) = perm {
            let mut grad = Matrix::zeros(x.rows(), x.cols());
            for (i, &p) in perm.iter().enumerate() {
                grad.row_mut(p).copy_from_slice(out.grad.row(i));
            }
            out.grad = grad;
        }
        Ok(out)
    }
}
