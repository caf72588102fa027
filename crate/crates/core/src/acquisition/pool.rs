use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{check_inside, Bounds};
use crate::linalg::Matrix;

/// `q` candidate query locations inside a box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    x: Matrix,
    bounds: Bounds,
}

impl Pool {
    pub fn new(x: Matrix, bounds: Bounds) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("pool must hold at least one point".into()));
        }
        check_inside(&x, &bounds)?;
        Ok(Self { x, bounds })
    }

    /// Builds a pool from a flattened row-major vector of length `q·d`.
    pub fn from_flat(flat: &[f64], d: usize, bounds: Bounds) -> Result<Self> {
        if d == 0 || !flat.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!("{} values for {d}-dim points", flat.len())));
        }
        Self::new(Matrix::from_vec(flat.len() / d, d, flat.to_vec())?, bounds)
    }

    pub fn q(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.x
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn flat(&self) -> &[f64] {
        self.x.as_slice()
    }

    pub fn permuted(&self, perm: &[usize]) -> Pool {
        Pool { x: self.x.permute_rows(perm), bounds: self.bounds.clone() }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.q()).map(|i| self.x.row(i).to_vec()).collect()
    }
}

/// Lexicographic ordering of the rows of `x`, ties broken by index.
pub fn canonical_permutation(x: &Matrix) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    perm.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::unit_bounds;

    #[test]
    fn rejects_points_outside_box() {
        let x = Matrix::from_rows(&[[0.5, 1.2]]).unwrap();
        assert!(Pool::new(x, unit_bounds(2)).is_err());
        assert!(Pool::new(Matrix::zeros(0, 2), unit_bounds(2)).is_err());
    }

    #[test]
    fn canonical_order_is_permutation_invariant() {
        let x = Matrix::from_rows(&[[0.5, 0.1], [0.2, 0.9], [0.5, 0.0]]).unwrap();
        let perm = canonical_permutation(&x);
        assert_eq!(perm, vec![1, 2, 0]);
        let shuffled = x.permute_rows(&[2, 0, 1]);
        let again = shuffled.permute_rows(&canonical_permutation(&shuffled));
        assert_eq!(again, x.permute_rows(&perm));
    }
}
