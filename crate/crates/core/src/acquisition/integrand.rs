//! Reparameterized integrands, one per acquisition family.
//!
//! Each integrand maps a realization `y` of the pool outcomes to a score.
//! Step functions are replaced by a sigmoid/softmax with temperature `tau`,
//! and `max` is differentiated through its argmax (lowest index on ties).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::gp::PosteriorGaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "EI")]
    Ei,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "UCB")]
    Ucb,
    #[serde(rename = "SR")]
    Sr,
    #[serde(rename = "ES_INNER")]
    EsInner,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Ei, Family::Pi, Family::Ucb, Family::Sr, Family::EsInner];

    pub fn name(self) -> &'static str {
        match self {
            Family::Ei => "EI",
            Family::Pi => "PI",
            Family::Ucb => "UCB",
            Family::Sr => "SR",
            Family::EsInner => "ES_INNER",
        }
    }

    /// Whether the family compares against the improvement threshold.
    pub fn uses_threshold(self) -> bool {
        matches!(self, Family::Ei | Family::Pi)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "EI" => Ok(Family::Ei),
            "PI" => Ok(Family::Pi),
            "UCB" => Ok(Family::Ucb),
            "SR" => Ok(Family::Sr),
            "ES_INNER" | "ES" => Ok(Family::EsInner),
            other => Err(format!("unknown acquisition family `{other}`")),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index and value of the largest entry; the lowest index wins ties.
#[inline]
pub fn argmax(y: &[f64]) -> (usize, f64) {
    let mut best = (0, y[0]);
    for (i, &v) in y.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Scale applied to `|L·z|` in the UCB integrand: `sqrt(beta·pi/2)`.
#[inline]
pub fn ucb_scale(beta: f64) -> f64 {
    (beta * PI / 2.0).sqrt()
}

pub fn integrand_ei(y: &[f64], alpha: f64) -> f64 {
    (argmax(y).1 - alpha).max(0.0)
}

pub fn integrand_pi(y: &[f64], alpha: f64, tau: f64) -> f64 {
    sigmoid((argmax(y).1 - alpha) / tau)
}

pub fn integrand_sr(y: &[f64]) -> f64 {
    argmax(y).1
}

/// `max_i(mu_i + sqrt(beta·pi/2)·|(L·z)_i|)` for one base-sample row.
pub fn integrand_ucb(z_row: &[f64], post: &PosteriorGaussian, beta: f64) -> f64 {
    let s = ucb_scale(beta);
    let q = post.q();
    (0..q)
        .map(|i| {
            let w: f64 = (0..=i).map(|j| post.chol[(i, j)] * z_row[j]).sum();
            post.mu[i] + s * w.abs()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Soft indicator of which pool member attains the maximum.
pub fn integrand_es_pmax(y: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    softmax_into(y, tau, &mut out);
    out
}

#[inline]
pub(crate) fn softmax_into(y: &[f64], tau: f64, out: &mut [f64]) {
    let top = argmax(y).1;
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(y) {
        *o = ((v - top) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{JitterPolicy, Matrix};

    #[test]
    fn ei_examples() {
        assert_eq!(integrand_ei(&[1.0, 2.0], 1.5), 0.5);
        assert_eq!(integrand_ei(&[1.0, 2.0], 3.0), 0.0);
        let y = [0.3, -1.2, 0.8];
        assert!((integrand_ei(&y, -1e6) - 1e6 - integrand_sr(&y)).abs() < 1e-9);
    }

    #[test]
    fn pi_examples() {
        for tau in [1e-3, 0.1, 2.0] {
            assert_eq!(integrand_pi(&[0.2, 0.7], 0.7, tau), 0.5);
            assert!(integrand_pi(&[0.7 + 10.0 * tau], 0.7, tau) >= 0.9999);
        }
        let v = integrand_pi(&[-0.2], 0.0, 1e-3);
        assert!(v > 0.0 && v < 1e-80);
        assert_eq!(integrand_pi(&[-5.0], 0.0, 1e-3), 0.0);
    }

    #[test]
    fn sr_examples() {
        assert_eq!(integrand_sr(&[3.0]), 3.0);
        assert_eq!(integrand_sr(&[1.0, 4.0, 2.0]), integrand_sr(&[4.0, 2.0, 1.0]));
    }

    #[test]
    fn ucb_examples() {
        let sigma = Matrix::from_rows(&[[1.0, 0.3], [0.3, 0.5]]).unwrap();
        let post = PosteriorGaussian::from_moments(vec![0.2, 0.4], sigma, &JitterPolicy::default()).unwrap();
        assert_eq!(integrand_ucb(&[0.0, 0.0], &post, 2.0), 0.4);
        for z in [[0.3, -1.0], [-2.0, 0.1], [1.5, 1.5]] {
            assert!(integrand_ucb(&z, &post, 3.0) >= integrand_ucb(&z, &post, 1.0));
        }
    }

    #[test]
    fn es_examples() {
        for tau in [1e-3, 1.0] {
            assert_eq!(integrand_es_pmax(&[0.4, 0.4], tau), vec![0.5, 0.5]);
        }
        let p = integrand_es_pmax(&[1.0, 0.0], 0.01);
        assert!(p[0] >= 1.0 - 1e-10);
        let p = integrand_es_pmax(&[0.3, -0.1, 0.25, 0.0], 0.2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), (1, 3.0));
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
    }
}
