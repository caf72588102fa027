//! Deterministic oracles: closed forms, Gauss-Hermite and adaptive
//! quadrature under a Gaussian measure, and finite differences.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::acquisition::{Acquisition, BaseSampleBlock};
use crate::error::{Error, Result};
use crate::gp::PosteriorGaussian;
use crate::linalg::Matrix;

/// Largest pool size handled by the tensor quadratures.
pub const MAX_QUADRATURE_DIM: usize = 3;
/// Newton root finding loses roots above roughly order 200.
pub const MAX_QUADRATURE_ORDER: usize = 160;

/// Half-width of the truncated standard-normal box used by the adaptive
/// oracle. The neglected mass is below 1e-22.
const Z_RADIUS: f64 = 10.0;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Probabilists' Gauss-Hermite rule: nodes and weights integrate against the
/// standard normal density, with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if !(2..=MAX_QUADRATURE_ORDER).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "quadrature order must be in 2..={MAX_QUADRATURE_ORDER}, got {order}"
            )));
        }
        let n = order;
        let nf = n as f64;
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0;
        // Newton iteration on the orthonormal physicists' Hermite recurrence,
        // largest root first.
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let total: f64 = w.iter().sum();
        let mut pairs: Vec<(f64, f64)> = x.iter().zip(&w).map(|(&xi, &wi)| (SQRT_2 * xi, wi / total)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { order, nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() })
    }
}

fn check_quadrature_dim(q: usize) -> Result<()> {
    if q > MAX_QUADRATURE_DIM {
        return Err(Error::DimensionTooLarge(q));
    }
    if q == 0 {
        return Err(Error::InvalidArgument("empty posterior".into()));
    }
    Ok(())
}

#[inline]
fn push_through(post: &PosteriorGaussian, z: &[f64], y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = post.mu[i] + (0..=i).map(|j| post.chol[(i, j)] * z[j]).sum::<f64>();
    }
}

/// Tensor-product Gauss-Hermite estimate of `E[integrand(y)]`,
/// `y ~ N(mu, L·Lᵀ)`.
pub fn gauss_hermite_expectation(
    integrand: impl Fn(&[f64]) -> f64,
    post: &PosteriorGaussian,
    order: usize,
) -> Result<f64> {
    let q = post.q();
    check_quadrature_dim(q)?;
    let rule = QuadratureRule::gauss_hermite(order)?;
    let mut idx = vec![0usize; q];
    let mut z = vec![0.0; q];
    let mut y = vec![0.0; q];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            z[k] = rule.nodes[i];
            weight *= rule.weights[i];
        }
        push_through(post, &z, &mut y);
        total += weight * integrand(&y);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == q {
                return Ok(total);
            }
        }
    }
}

#[allow(clippy::excessive_precision)]
const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive_rec(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> f64 {
    let (value, err) = whole;
    if err <= tol || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    let left = gauss_kronrod(f, a, m);
    let right = gauss_kronrod(f, m, b);
    adaptive_rec(f, a, m, left, 0.5 * tol, depth - 1) + adaptive_rec(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod (7/15) integral of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let whole = gauss_kronrod(&mut f, a, b);
    adaptive_rec(&mut f, a, b, whole, tol, 48)
}

/// Nested adaptive quadrature of `E[integrand(y)]`, `y ~ N(mu, L·Lᵀ)`, over a
/// truncated standard-normal box. Unlike the Gauss-Hermite rule it resolves
/// kinks and jumps in the integrand, at a higher cost.
pub fn adaptive_gaussian_expectation(
    integrand: impl Fn(&[f64]) -> f64,
    post: &PosteriorGaussian,
    tol: f64,
) -> Result<f64> {
    let q = post.q();
    check_quadrature_dim(q)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut z = vec![0.0; q];
    let mut y = vec![0.0; q];
    Ok(nested(&integrand, post, 0, &mut z, &mut y, tol))
}

fn nested(
    integrand: &impl Fn(&[f64]) -> f64,
    post: &PosteriorGaussian,
    level: usize,
    z: &mut [f64],
    y: &mut [f64],
    tol: f64,
) -> f64 {
    let q = z.len();
    let inner_tol = tol / (2.0 * Z_RADIUS);
    let mut g = |t: f64| {
        z[level] = t;
        let inner = if level + 1 == q {
            push_through(post, z, y);
            integrand(y)
        } else {
            let mut zc = z.to_vec();
            let mut yc = y.to_vec();
            nested(integrand, post, level + 1, &mut zc, &mut yc, inner_tol)
        };
        norm_pdf(t) * inner
    };
    integrate(&mut g, -Z_RADIUS, Z_RADIUS, tol)
}

/// Marginal expected improvement `sigma·(phi(u) + u·Phi(u))`, `u = (mu - alpha)/sigma`.
pub fn closed_form_ei(mu: f64, sigma: f64, alpha: f64) -> f64 {
    let u = (mu - alpha) / sigma;
    sigma * (norm_pdf(u) + u * norm_cdf(u))
}

/// Marginal probability of improvement `Phi((mu - alpha)/sigma)`.
pub fn closed_form_pi(mu: f64, sigma: f64, alpha: f64) -> f64 {
    norm_cdf((mu - alpha) / sigma)
}

/// Marginal upper confidence bound `mu + sqrt(beta)·sigma`.
pub fn closed_form_ucb1(mu: f64, sigma: f64, beta: f64) -> f64 {
    mu + beta.sqrt() * sigma
}

/// `sqrt(2·pi)·∫_0^∞ y·N(y; 0, sigma²) dy` by quadrature; equals `sigma`.
pub fn half_normal_moment_quadrature(sigma: f64) -> f64 {
    let c = (2.0 * PI).sqrt();
    integrate(|y| c * y * norm_pdf(y / sigma) / sigma, 0.0, 40.0 * sigma, 1e-14 * sigma)
}

/// `E[max(y, mu)]` for `y ~ N(mu, 2·pi·beta·sigma²)`, by quadrature; equals
/// `mu + sqrt(beta)·sigma`.
pub fn ucb_censored_quadrature(mu: f64, sigma: f64, beta: f64) -> f64 {
    let s = (2.0 * PI * beta).sqrt() * sigma;
    let upper = integrate(|y| y * norm_pdf((y - mu) / s) / s, mu, mu + 40.0 * s, 1e-14 * (mu.abs() + s));
    mu * 0.5 + upper
}

/// `∫_mu^∞ y·N(y; mu, 2·pi·beta·sigma²) dy` by quadrature; equals
/// `mu/2 + sqrt(beta)·sigma`.
pub fn ucb_upper_tail_quadrature(mu: f64, sigma: f64, beta: f64) -> f64 {
    ucb_censored_quadrature(mu, sigma, beta) - 0.5 * mu
}

/// Central differences `(f(X + h·e_jk) - f(X - h·e_jk)) / 2h` per coordinate.
pub fn finite_diff_grad(objective: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.as_slice().len() {
        let orig = x.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let fp = objective(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let fm = objective(&probe);
        probe.as_mut_slice()[idx] = orig;
        out.as_mut_slice()[idx] = (fp - fm) / (2.0 * h);
    }
    out
}

/// `max|g - reference| / max(max|reference|, floor)`.
pub fn relative_max_error(g: &Matrix, reference: &Matrix, floor: f64) -> f64 {
    let diff = g.as_slice().iter().zip(reference.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    diff / reference.max_abs().max(floor)
}

/// Whether the estimator's branch signature (which pool point wins each
/// sample, which side of each kink it falls on) is constant over the central
/// difference stencil of step `h` around `x`. Finite differences across a
/// branch change measure the jump, not the derivative.
pub fn stencil_is_smooth(acq: &Acquisition, x: &Matrix, z: &BaseSampleBlock, h: f64) -> Result<bool> {
    let center = acq.branch_signature(x, z)?;
    let mut probe = x.clone();
    for i in 0..x.as_slice().len() {
        for s in [-h, h] {
            probe.as_mut_slice()[i] = x.as_slice()[i] + s;
            if acq.branch_signature(&probe, z)? != center {
                return Ok(false);
            }
        }
        probe.as_mut_slice()[i] = x.as_slice()[i];
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_symmetric_and_normalized() {
        for order in [2, 3, 7, 64, 128] {
            let r = QuadratureRule::gauss_hermite(order).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for i in 0..order {
                assert!((r.nodes[i] + r.nodes[order - 1 - i]).abs() < 1e-10);
                assert!((r.weights[i] - r.weights[order - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_point_rule() {
        let r = QuadratureRule::gauss_hermite(2).unwrap();
        assert!((r.nodes[1] - 1.0).abs() < 1e-14);
        assert!((r.weights[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn moments_are_exact() {
        let r = QuadratureRule::gauss_hermite(20).unwrap();
        let m = |p: i32| r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn order_below_two_rejected() {
        assert!(QuadratureRule::gauss_hermite(1).is_err());
    }

    #[test]
    fn kronrod_integrates_polynomials_and_kinks() {
        let v = integrate(|x| x * x * x - 2.0 * x, -1.0, 3.0, 1e-12);
        assert!((v - (20.0 - 8.0)).abs() < 1e-11);
        let v = integrate(|x: f64| x.abs(), -1.0, 2.0, 1e-12);
        assert!((v - 2.5).abs() < 1e-11);
    }

    #[test]
    fn cdf_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(-0.5) - 0.308537538725987).abs() < 1e-14);
        assert!((norm_cdf(1.96) - 0.975002104851780).abs() < 1e-14);
    }
}
