//! Dense row-major matrices, jittered Cholesky, triangular solves and the
//! forward-mode derivative of the Cholesky factor.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix times {}-vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch("matrix sum".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scaled(-1.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest |A_ij - A_ji| relative to the largest |A_ij|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(perm.len(), self.cols);
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(p));
        }
        out
    }

    /// Reorders columns so that column `j` of the result is column `perm[j]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, perm.len(), |i, j| self[(i, perm[j])])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Escalating diagonal jitter used when a covariance fails to factorize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub initial: f64,
    pub growth_factor: f64,
    pub max: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { initial: 1e-9, growth_factor: 10.0, max: 1e-3 }
    }
}

impl JitterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial <= self.max && self.growth_factor > 1.0) {
            return Err(Error::InvalidArgument(format!("invalid jitter policy {self:?}")));
        }
        Ok(())
    }

    /// Jitter levels tried in order: zero, then `initial` growing to `max`.
    fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        let mut next = Some(self.initial);
        std::iter::once(0.0).chain(std::iter::from_fn(move || {
            let cur = next?;
            let grown = cur * self.growth_factor;
            next = if cur < self.max { Some(grown.min(self.max)) } else { None };
            Some(cur)
        }))
    }
}

/// A lower-triangular Cholesky factor together with the jitter it needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    pub factor: Matrix,
    pub jitter_used: f64,
}

/// Factorizes `sigma + jitter·I` for the smallest jitter level in `policy`
/// that succeeds. Only the lower triangle of `sigma` is read after the
/// symmetry check.
pub fn cholesky(sigma: &Matrix, policy: &JitterPolicy) -> Result<Cholesky> {
    let (n, m) = sigma.shape();
    if n != m {
        return Err(Error::DimensionMismatch(format!("cholesky of {n}x{m} matrix")));
    }
    let asym = sigma.asymmetry();
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    for jitter in policy.levels() {
        if let Some(factor) = try_cholesky(sigma, jitter) {
            return Ok(Cholesky { factor, jitter_used: jitter });
        }
    }
    Err(Error::NotPositiveDefinite { jitter: policy.max })
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)] + jitter;
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

const SINGULAR_DIAG: f64 = 1e-14;

fn check_triangular(l: &Matrix, rhs_rows: usize) -> Result<()> {
    if l.rows() != l.cols() || l.rows() != rhs_rows {
        return Err(Error::DimensionMismatch(format!(
            "triangular {}x{} against {rhs_rows} right-hand-side rows",
            l.rows(),
            l.cols()
        )));
    }
    match (0..l.rows()).find(|&i| l[(i, i)].abs() < SINGULAR_DIAG) {
        Some(index) => Err(Error::SingularTriangular { index }),
        None => Ok(()),
    }
}

/// Solves `L·X = B` by forward substitution.
pub fn tri_solve_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_triangular(l, b.rows())?;
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `Lᵀ·X = B` by back substitution, reading only the lower triangle of `L`.
pub fn tri_solve_lower_transpose(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_triangular(l, b.rows())?;
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `(L·Lᵀ)·x = b` for a vector right-hand side.
pub fn cho_solve_vec(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = Matrix::from_vec(b.len(), 1, b.to_vec())?;
    let y = tri_solve_lower(l, &rhs)?;
    Ok(tri_solve_lower_transpose(l, &y)?.into_vec())
}

/// Directional derivative of the Cholesky map.
///
/// For `Σ = L·Lᵀ` and a symmetric perturbation `dΣ`, returns
/// `dL = L·Φ(L⁻¹·dΣ·L⁻ᵀ)` where `Φ` keeps the strictly lower triangle and
/// halves the diagonal.
pub fn cholesky_pushforward(l: &Matrix, dsigma: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if dsigma.shape() != (n, n) {
        return Err(Error::DimensionMismatch("cholesky pushforward direction".into()));
    }
    // L⁻¹·dΣ·L⁻ᵀ = L⁻¹·(L⁻¹·dΣ)ᵀ because dΣ is symmetric.
    let a = tri_solve_lower(l, dsigma)?;
    let mut inner = tri_solve_lower(l, &a.transpose())?;
    for i in 0..n {
        inner[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            inner[(i, j)] = 0.0;
        }
    }
    let mut dl = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in j..=i {
                s += l[(i, k)] * inner[(k, j)];
            }
            dl[(i, j)] = s;
        }
    }
    Ok(dl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut s = a.matmul(&a.transpose()).unwrap();
        for i in 0..n {
            s[(i, i)] += 0.5;
        }
        s
    }

    fn random_sym(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        a.add(&a.transpose()).unwrap()
    }

    fn reconstruction_error(sigma: &Matrix, ch: &Cholesky) -> f64 {
        let llt = ch.factor.matmul(&ch.factor.transpose()).unwrap();
        let target = sigma.add(&Matrix::identity(sigma.rows()).scaled(ch.jitter_used)).unwrap();
        llt.sub(&target).unwrap().frobenius_norm() / sigma.frobenius_norm()
    }

    #[test]
    fn identity_needs_no_jitter() {
        let ch = cholesky(&Matrix::identity(2), &JitterPolicy::default()).unwrap();
        assert_eq!(ch.factor, Matrix::identity(2));
        assert_eq!(ch.jitter_used, 0.0);
    }

    #[test]
    fn two_by_two_factor() {
        let s = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let ch = cholesky(&s, &JitterPolicy::default()).unwrap();
        let expected = [2.0, 0.0, 1.0, 2f64.sqrt()];
        for (a, b) in ch.factor.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(reconstruction_error(&s, &ch) < 1e-15);
    }

    #[test]
    fn rank_one_uses_jitter() {
        let s = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let ch = cholesky(&s, &JitterPolicy::default()).unwrap();
        assert!(ch.jitter_used > 0.0);
        assert!(reconstruction_error(&s, &ch) < 1e-8);
    }

    #[test]
    fn negative_definite_fails() {
        let s = Matrix::from_rows(&[[-1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(cholesky(&s, &JitterPolicy::default()), Err(Error::NotPositiveDefinite { jitter: 1e-3 }));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let s = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert!(matches!(cholesky(&s, &JitterPolicy::default()), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn jitter_levels_escalate_to_max() {
        let levels: Vec<f64> = JitterPolicy::default().levels().collect();
        assert_eq!(levels[0], 0.0);
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(levels[1], 1e-9);
        assert_eq!(*levels.last().unwrap(), 1e-3);
    }

    #[test]
    fn tri_solve_examples() {
        let b = Matrix::from_rows(&[[0.3, -2.0], [1.5, 4.0]]).unwrap();
        assert_eq!(tri_solve_lower(&Matrix::identity(2), &b).unwrap(), b);

        let l = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]).unwrap();
        let rhs = Matrix::from_vec(2, 1, vec![2.0, 1.0 + 2f64.sqrt()]).unwrap();
        let x = tri_solve_lower(&l, &rhs).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 1.0).abs() < 1e-15);

        let singular = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(tri_solve_lower(&singular, &rhs), Err(Error::SingularTriangular { index: 1 }));
    }

    #[test]
    fn pushforward_trivial_cases() {
        let l = cholesky(&random_spd(3, 1), &JitterPolicy::default()).unwrap().factor;
        let dl = cholesky_pushforward(&l, &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(dl.max_abs(), 0.0);

        let sigma = 1.7;
        let dl = cholesky_pushforward(
            &Matrix::from_vec(1, 1, vec![sigma]).unwrap(),
            &Matrix::from_vec(1, 1, vec![0.4]).unwrap(),
        )
        .unwrap();
        assert!((dl[(0, 0)] - 0.4 / (2.0 * sigma)).abs() < 1e-15);
    }

    #[test]
    fn pushforward_matches_finite_differences() {
        let policy = JitterPolicy::default();
        for seed in 0..20 {
            let s = random_spd(3, seed);
            let ds = random_sym(3, seed + 100);
            let l = cholesky(&s, &policy).unwrap().factor;
            let dl = cholesky_pushforward(&l, &ds).unwrap();
            let h = 1e-6;
            let lp = cholesky(&s.add(&ds.scaled(h)).unwrap(), &policy).unwrap().factor;
            let lm = cholesky(&s.sub(&ds.scaled(h)).unwrap(), &policy).unwrap().factor;
            let fd = lp.sub(&lm).unwrap().scaled(0.5 / h);
            let rel = dl.sub(&fd).unwrap().max_abs() / fd.max_abs();
            assert!(rel < 1e-5, "seed {seed}: relative error {rel:e}");
            for i in 0..3 {
                for j in (i + 1)..3 {
                    assert_eq!(dl[(i, j)], 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn reconstruction_within_tolerance(seed in 0u64..10_000, n in 1usize..8) {
            let s = random_spd(n, seed);
            let ch = cholesky(&s, &JitterPolicy::default()).unwrap();
            prop_assert!(reconstruction_error(&s, &ch) <= 1e-8);
            for i in 0..n {
                prop_assert!(ch.factor[(i, i)] > 0.0);
            }
        }

        #[test]
        fn pushforward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let l = cholesky(&random_spd(4, seed), &JitterPolicy::default()).unwrap().factor;
            let da = random_sym(4, seed ^ 0xA);
            let db = random_sym(4, seed ^ 0xB);
            let combined = cholesky_pushforward(&l, &da.scaled(a).add(&db.scaled(b)).unwrap()).unwrap();
            let separate = cholesky_pushforward(&l, &da).unwrap().scaled(a)
                .add(&cholesky_pushforward(&l, &db).unwrap().scaled(b)).unwrap();
            let scale = separate.max_abs().max(1.0);
            prop_assert!(combined.sub(&separate).unwrap().max_abs() / scale <= 1e-10);
        }

        #[test]
        fn tri_solve_round_trips(seed in 0u64..10_000, n in 1usize..8) {
            let l = cholesky(&random_spd(n, seed), &JitterPolicy::default()).unwrap().factor;
            let b = random_sym(n, seed + 7);
            let x = tri_solve_lower(&l, &b).unwrap();
            let back = l.matmul(&x).unwrap();
            prop_assert!(back.sub(&b).unwrap().max_abs() / b.max_abs() <= 1e-10);
            let xt = tri_solve_lower_transpose(&l, &b).unwrap();
            let back = l.transpose().matmul(&xt).unwrap();
            prop_assert!(back.sub(&b).unwrap().max_abs() / b.max_abs() <= 1e-10);
        }
    }
}
