//! Small dense complex/real linear algebra.
//!
//! Everything here is sized for beamforming problems (a few dozen antennas at
//! most), so the routines favour plain loops over blocking.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<C64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("ragged column set".into()));
        }
        Ok(Self::from_fn(rows, cols, |r, c| columns[c][r]))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[C64]) {
        assert_eq!(v.len(), self.rows);
        for (r, x) in v.iter().enumerate() {
            self[(r, c)] = *x;
        }
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!("{}x{} times {}x{}", self.rows, self.cols, rhs.rows, rhs.cols)));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += a * rhs.data[k * rhs.cols + c];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|r| self.row(r).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Sum of squared magnitudes of all entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `‖A − Aᴴ‖_∞ ≤ tol · ‖A‖_∞`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let diff = CMatrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)] - self[(c, r)].conj());
        diff.norm_inf() <= tol * self.norm_inf()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `aᴴ b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct ComplexCholesky {
    n: usize,
    l: Vec<C64>,
}

impl ComplexCholesky {
    /// Factors `a` reading only its lower triangle.
    pub fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!("{}x{} is not square", n, a.cols())));
        }
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for p in 0..j {
                d -= l[j * n + p].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_vec(&self, b: &mut [C64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[i * n + p] * b[p];
            }
            b[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in i + 1..n {
                s -= self.l[p * n + i].conj() * b[p];
            }
            b[i] = s / self.l[i * n + i].re;
        }
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        if b.rows() != self.n {
            return Err(Error::Shape(format!("rhs has {} rows, system is {}", b.rows(), self.n)));
        }
        let mut out = b.clone();
        for c in 0..b.cols() {
            let mut col = b.column(c);
            self.solve_vec(&mut col);
            out.set_column(c, &col);
        }
        Ok(out)
    }
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn hpd_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Contract("non-finite entries in linear system".into()));
    }
    if !a.is_hermitian(1e-10) {
        return Err(Error::Contract("system matrix is not Hermitian".into()));
    }
    ComplexCholesky::factor(a)?.solve(b)
}

/// Real symmetric positive-definite Cholesky factor, row-major lower triangle.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the `n`×`n` row-major matrix `a`, reading only its lower triangle.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for p in 0..j {
                d -= l[j * n + p] * l[j * n + p];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` in place where `b` is an `n`×`m` row-major block.
    pub fn solve_in_place(&self, b: &mut [f64], m: usize) {
        let n = self.n;
        assert_eq!(b.len(), n * m);
        for c in 0..m {
            for i in 0..n {
                let mut s = b[i * m + c];
                for p in 0..i {
                    s -= self.l[i * n + p] * b[p * m + c];
                }
                b[i * m + c] = s / self.l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = b[i * m + c];
                for p in i + 1..n {
                    s -= self.l[p * n + i] * b[p * m + c];
                }
                b[i * m + c] = s / self.l[i * n + i];
            }
        }
    }
}

const POWER_MAX_ITERS: usize = 100_000;
const POWER_REL_TOL: f64 = 1e-12;
const POWER_STABLE_STEPS: usize = 3;
const POWER_RESIDUAL_TOL: f64 = 1e-10;

/// Dominant eigenpair of an entrywise nonnegative `n`×`n` row-major matrix.
///
/// Starts from the all-ones vector. The eigenvector is scaled so its last
/// entry equals one and is required to be strictly positive.
pub fn power_iteration_max_eig(g: &[f64], n: usize) -> Result<(f64, Vec<f64>)> {
    power_iteration_from(g, n, &vec![1.0; n])
}

/// Same as [`power_iteration_max_eig`] from an explicit positive start vector.
pub fn power_iteration_from(g: &[f64], n: usize, start: &[f64]) -> Result<(f64, Vec<f64>)> {
    if g.len() != n * n || n == 0 || start.len() != n {
        return Err(Error::Shape(format!("{} entries for a {n}x{n} matrix", g.len())));
    }
    if g.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Contract("power iteration needs a finite nonnegative matrix".into()));
    }
    let matvec = |x: &[f64], y: &mut [f64]| {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = g[r * n..(r + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    };

    if start.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract("start vector must be strictly positive".into()));
    }
    let mut x = start.to_vec();
    let mut y = vec![0.0; n];
    let mut lambda = f64::NAN;
    let mut stable = 0;
    let mut converged = false;
    for _ in 0..POWER_MAX_ITERS {
        matvec(&x, &mut y);
        let next = y.iter().cloned().fold(0.0, f64::max);
        if next <= 0.0 {
            return Err(Error::Contract("matrix annihilates the start vector".into()));
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / next;
        }
        if (next - lambda).abs() <= POWER_REL_TOL * next {
            stable += 1;
        } else {
            stable = 0;
        }
        lambda = next;
        if stable >= POWER_STABLE_STEPS {
            matvec(&x, &mut y);
            let residual = y.iter().zip(&x).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max);
            if residual <= POWER_RESIDUAL_TOL * lambda {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(POWER_MAX_ITERS));
    }
    let last = x[n - 1];
    if !(last > 0.0) {
        return Err(Error::Contract("dominant eigenvector has a non-positive last entry".into()));
    }
    for xi in &mut x {
        *xi /= last;
    }
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract("dominant eigenvector is not strictly positive".into()));
    }
    Ok((lambda, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    /// σ²I + Σ q_l h_l h_lᴴ with random h_l.
    fn random_gram(rng: &mut impl Rng, n: usize, terms: usize) -> CMatrix {
        let mut a = CMatrix::identity(n);
        for _ in 0..terms {
            let h = random_vec(rng, n);
            let q: f64 = rng.random_range(0.0..3.0);
            for r in 0..n {
                for cc in 0..n {
                    a[(r, cc)] += q * h[r] * h[cc].conj();
                }
            }
        }
        a
    }

    /// Gauss-Jordan inverse with partial pivoting; independent of the Cholesky path.
    fn gauss_inverse(a: &CMatrix) -> CMatrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = CMatrix::identity(n);
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| m[(x, col)].norm().total_cmp(&m[(y, col)].norm())).unwrap();
            for k in 0..n {
                let t = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = t;
                let t = inv[(col, k)];
                inv[(col, k)] = inv[(piv, k)];
                inv[(piv, k)] = t;
            }
            let d = m[(col, col)];
            for k in 0..n {
                m[(col, k)] /= d;
                inv[(col, k)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = m[(r, col)];
                    for k in 0..n {
                        let a1 = m[(col, k)];
                        let b1 = inv[(col, k)];
                        m[(r, k)] -= f * a1;
                        inv[(r, k)] -= f * b1;
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn identity_system_returns_rhs() {
        let h = CMatrix::from_vec(3, 1, vec![c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 3.0)]).unwrap();
        let x = hpd_solve(&CMatrix::identity(3), &h).unwrap();
        assert_eq!(x, h);
    }

    #[test]
    fn scaled_identity() {
        let mut a = CMatrix::identity(2);
        a.scale(2.0);
        let b = CMatrix::from_vec(2, 1, vec![c(2.0, 0.0), c(0.0, 0.0)]).unwrap();
        let x = hpd_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(x[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn random_gram_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_gram(&mut rng, 4, 3);
            let b = CMatrix::from_vec(4, 1, random_vec(&mut rng, 4)).unwrap();
            let x = hpd_solve(&a, &b).unwrap();
            let oracle = gauss_inverse(&a).matmul(&b).unwrap();
            for r in 0..4 {
                assert!((x[(r, 0)] - oracle[(r, 0)]).norm() <= 1e-9 * vec_norm(&b.column(0)));
            }
            let resid: Vec<C64> = a.matvec(&x.column(0)).iter().zip(b.column(0)).map(|(p, q)| p - q).collect();
            assert!(vec_norm(&resid) <= 1e-9 * vec_norm(&b.column(0)));
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut a = CMatrix::identity(2);
        a[(0, 1)] = c(1.0, 0.0);
        let b = CMatrix::zeros(2, 1);
        assert!(matches!(hpd_solve(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn indefinite_rejected() {
        let mut a = CMatrix::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        let b = CMatrix::zeros(2, 1);
        assert!(matches!(hpd_solve(&a, &b), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn real_cholesky_solves() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let chol = Cholesky::factor(&a, 3).unwrap();
        let x_true = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let mut b = vec![0.0; 6];
        for i in 0..3 {
            for cc in 0..2 {
                b[i * 2 + cc] = (0..3).map(|p| a[i * 3 + p] * x_true[p * 2 + cc]).sum();
            }
        }
        chol.solve_in_place(&mut b, 2);
        for (x, t) in b.iter().zip(x_true) {
            assert!((x - t).abs() < 1e-12);
        }
    }

    #[test]
    fn power_iteration_two_by_two() {
        let (lam, v) = power_iteration_max_eig(&[0.0, 1.0, 0.5, 0.5], 2).unwrap();
        assert!((lam - 1.0).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] == 1.0);
    }

    #[test]
    fn power_iteration_scaled_all_ones() {
        let cval = 0.7;
        let (lam, v) = power_iteration_max_eig(&[cval; 4], 2).unwrap();
        assert!((lam - 2.0 * cval).abs() < 1e-12);
        assert_eq!(v, vec![1.0, 1.0]);
    }

    #[test]
    fn power_iteration_last_column_only_matches_quadratic_roots() {
        // [[0, a], [0, b]]: characteristic polynomial λ² − bλ = 0.
        let (a, b) = (0.8, 1.7);
        let disc: f64 = b * b;
        let root = (b + disc.sqrt()) / 2.0;
        let (lam, v) = power_iteration_max_eig(&[0.0, a, 0.0, b], 2).unwrap();
        assert!((lam - root).abs() < 1e-12);
        assert!((v[0] - a / root).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_residual_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..7 {
            let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..2.0)).collect();
            let (lam, v) = power_iteration_max_eig(&g, n).unwrap();
            assert!(v.iter().all(|&x| x > 0.0));
            for r in 0..n {
                let gv: f64 = (0..n).map(|cc| g[r * n + cc] * v[cc]).sum();
                assert!((gv - lam * v[r]).abs() <= 1e-10 * lam * v.iter().cloned().fold(0.0, f64::max));
            }
        }
    }

    #[test]
    fn negative_entries_rejected() {
        assert!(power_iteration_max_eig(&[1.0, -0.1, 0.0, 1.0], 2).is_err());
    }

    proptest::proptest! {
        #[test]
        fn hpd_solve_recovers_x(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..7);
            let a = random_gram(&mut rng, n, 2);
            let x = CMatrix::from_vec(n, 1, random_vec(&mut rng, n)).unwrap();
            let b = a.matmul(&x).unwrap();
            let got = hpd_solve(&a, &b).unwrap();
            let err: Vec<C64> = got.column(0).iter().zip(x.column(0)).map(|(p, q)| p - q).collect();
            proptest::prop_assert!(vec_norm(&err) <= 1e-9 * vec_norm(&x.column(0)));
        }

        #[test]
        fn power_eigenvalue_invariant_to_start_scaling(seed in 0u64..10_000, s in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..6);
            let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect();
            let start: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let scaled: Vec<f64> = start.iter().map(|x| x * s).collect();
            let (l1, _) = power_iteration_from(&g, n, &start).unwrap();
            let (l2, _) = power_iteration_from(&g, n, &scaled).unwrap();
            proptest::prop_assert!((l1 - l2).abs() <= 1e-10 * l1);
        }

        #[test]
        fn power_eigenvalue_scales_with_matrix(seed in 0u64..10_000, s in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..6);
            let g: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect();
            let (l1, v1) = power_iteration_max_eig(&g, n).unwrap();
            let gs: Vec<f64> = g.iter().map(|x| x * s).collect();
            let (l2, v2) = power_iteration_max_eig(&gs, n).unwrap();
            proptest::prop_assert!((l2 - s * l1).abs() <= 1e-9 * s * l1);
            for (a, b) in v1.iter().zip(&v2) {
                proptest::prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            }
        }
    }
}
