//! Small dense matrices, SPD factorization, log-gamma functions, and
//! Gaussian log-densities. Everything here is written for the moderate
//! dimensions this crate works at (d up to a few hundred), favouring
//! clarity and numerical care over asymptotics.

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch(format!(
                    "ragged rows: expected {c} columns, found {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `y = self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::DimMismatch(format!(
                "matvec: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            y[i] = dot(self.row(i), x);
        }
        Ok(y)
    }

    /// `y = self^T * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rows != x.len() {
            return Err(Error::DimMismatch(format!(
                "tr_matvec: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                y[j] += self[(i, j)] * xi;
            }
        }
        Ok(y)
    }

    /// Adds `w * x x^T` in place; `self` must be square with dim = len(x).
    pub fn add_outer(&mut self, x: &[f64], w: f64) {
        debug_assert_eq!(self.rows, x.len());
        debug_assert_eq!(self.cols, x.len());
        for i in 0..self.rows {
            let xi = w * x[i];
            for j in 0..self.cols {
                self.data[i * self.cols + j] += xi * x[j];
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Replaces the matrix with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let s = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = s;
                self[(j, i)] = s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales `a` to unit Euclidean norm; vectors shorter than `1e-12` are
/// returned unchanged to avoid amplifying noise.
pub fn l2_normalize(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n < 1e-12 {
        return a.to_vec();
    }
    a.iter().map(|v| v / n).collect()
}

/// Relative symmetry slack accepted by [`SpdMat::new`].
const SYMMETRY_RTOL: f64 = 1e-10;

/// Symmetric positive definite matrix. Construction checks symmetry to a
/// relative tolerance and stores the symmetrized average; positive
/// definiteness is established on first factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMat {
    m: Mat,
}

impl SpdMat {
    /// Validates shape, finiteness, and symmetry, then symmetrizes.
    pub fn new(mut m: Mat) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimMismatch(format!(
                "SPD matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        if !m.is_finite() {
            return Err(Error::NotSpd("matrix has non-finite entries".into()));
        }
        let scale = m.data.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::NotSpd(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        m.symmetrize();
        Ok(SpdMat { m })
    }

    pub fn dim(&self) -> usize {
        self.m.rows
    }

    pub fn mat(&self) -> &Mat {
        &self.m
    }

    pub fn into_mat(self) -> Mat {
        self.m
    }

    /// Lower-triangular Cholesky factor `L` with `L L^T = A`.
    pub fn cholesky(&self) -> Result<Mat> {
        cholesky(&self.m)
    }

    /// `ln det A` via the Cholesky factor.
    pub fn logdet(&self) -> Result<f64> {
        let l = self.cholesky()?;
        Ok((0..self.dim()).map(|i| 2.0 * l[(i, i)].ln()).sum())
    }
}

/// Plain Cholesky on a square symmetric matrix; fails with `NotSpd` on a
/// non-positive pivot.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows;
    if a.rows != a.cols {
        return Err(Error::DimMismatch("cholesky needs a square matrix".into()));
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotSpd(format!("pivot {s} at row {i}")));
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// `ln det A` of an SPD matrix.
pub fn cholesky_logdet(a: &SpdMat) -> Result<f64> {
    a.logdet()
}

/// Solves `L y = b` then `L^T x = y` for the Cholesky factor `L`.
pub fn chol_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    debug_assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[(i, k)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[(k, i)] * y[k];
        }
        y[i] /= l[(i, i)];
    }
    y
}

// Lanczos approximation, g = 7, n = 9. Accurate to ~1e-14 relative for
// positive arguments, which covers every caller in this crate.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    if x < 0.5 {
        // Reflection keeps accuracy near zero.
        let pi = std::f64::consts::PI;
        return Ok(pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x)?);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln())
}

/// Natural log of the multivariate gamma function,
/// `ln Gamma_d(a) = d(d-1)/4 * ln pi + sum_{j=1..d} ln Gamma(a + (1-j)/2)`.
/// Requires `a > (d-1)/2` so every term is in domain.
pub fn ln_mvgamma(d: usize, a: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("ln_mvgamma requires d >= 1".into()));
    }
    let dd = d as f64;
    if !(a > (dd - 1.0) / 2.0) {
        return Err(Error::Domain(format!(
            "ln_mvgamma requires a > (d-1)/2 = {}, got {a}",
            (dd - 1.0) / 2.0
        )));
    }
    let mut acc = dd * (dd - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 1..=d {
        acc += ln_gamma(a + (1.0 - j as f64) / 2.0)?;
    }
    Ok(acc)
}

/// Log density of a multivariate normal at `z`.
pub fn mvn_logpdf(z: &[f64], mean: &[f64], cov: &SpdMat) -> Result<f64> {
    let d = cov.dim();
    if z.len() != d || mean.len() != d {
        return Err(Error::DimMismatch(format!(
            "mvn_logpdf: point {} / mean {} / cov {d}",
            z.len(),
            mean.len()
        )));
    }
    let l = cov.cholesky()?;
    let diff = sub(z, mean);
    let x = chol_solve(&l, &diff);
    let quad = dot(&diff, &x);
    let logdet: f64 = (0..d).map(|i| 2.0 * l[(i, i)].ln()).sum();
    Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
}

/// Builds an SPD matrix, retrying once with a trace-scaled ridge
/// (`1e-8 * tr/d * I`) if the first factorization fails. A second failure
/// is a hard error.
pub fn spd_with_ridge(mut m: Mat) -> Result<SpdMat> {
    m.symmetrize();
    let first = SpdMat::new(m.clone()).and_then(|s| s.cholesky().map(|_| s));
    match first {
        Ok(s) => Ok(s),
        Err(_) => {
            let d = m.rows;
            let ridge = 1e-8 * (m.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
            for i in 0..d {
                m[(i, i)] += ridge;
            }
            let s = SpdMat::new(m)?;
            s.cholesky()?;
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_logdet_identity_is_zero() {
        let a = SpdMat::new(Mat::identity(3)).unwrap();
        assert_eq!(a.logdet().unwrap(), 0.0);
    }

    #[test]
    fn cholesky_logdet_diag() {
        let a = SpdMat::new(Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap()).unwrap();
        // det = 6
        assert_relative_eq!(a.logdet().unwrap(), 6.0_f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn cholesky_logdet_dense_2x2() {
        let a = SpdMat::new(Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()).unwrap();
        // det = 3 by cofactor expansion
        assert_relative_eq!(a.logdet().unwrap(), 3.0_f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        // Eigenvalues 3 and -1.
        let a = SpdMat::new(Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap()).unwrap();
        assert!(matches!(a.cholesky(), Err(Error::NotSpd(_))));
    }

    #[test]
    fn spd_rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]).unwrap();
        assert!(matches!(SpdMat::new(m), Err(Error::NotSpd(_))));
    }

    #[test]
    fn cholesky_matches_eigenvalue_product_on_random_spd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in 1..=8 {
            // A = B B^T + d*I is comfortably SPD.
            let mut b = Mat::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    b[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            let mut a = b.matmul(&b.transpose()).unwrap();
            for i in 0..d {
                a[(i, i)] += d as f64;
            }
            let spd = SpdMat::new(a.clone()).unwrap();
            let (evals, _) = crate::pca::jacobi_eigh(&a).unwrap();
            let eig_logdet: f64 = evals.iter().map(|v| v.ln()).sum();
            assert_relative_eq!(spd.logdet().unwrap(), eig_logdet, max_relative = 1e-8);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-14);
        assert_relative_eq!(
            ln_gamma(0.5).unwrap(),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-12
        );
        // ln k! for k up to 20 against exact integer factorials.
        let mut fact = 1u128;
        for k in 1..=20u128 {
            fact *= k;
            assert_relative_eq!(
                ln_gamma(k as f64 + 1.0).unwrap(),
                (fact as f64).ln(),
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn ln_gamma_rejects_nonpositive() {
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-1.5).is_err());
    }

    #[test]
    fn ln_mvgamma_d1_reduces_to_ln_gamma() {
        for a in [0.7, 1.0, 2.0, 3.5, 10.0] {
            assert_eq!(ln_mvgamma(1, a).unwrap(), ln_gamma(a).unwrap());
        }
        assert!(ln_mvgamma(1, 2.0).unwrap().abs() < 1e-14);
        assert_relative_eq!(ln_mvgamma(1, 5.0).unwrap(), 24.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ln_mvgamma_d2_worked_value() {
        // Gamma_2(1.5) = pi^{1/2} * Gamma(1.5) * Gamma(1.0) = pi/2.
        assert_relative_eq!(
            ln_mvgamma(2, 1.5).unwrap(),
            (std::f64::consts::PI / 2.0).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ln_mvgamma_domain_edge() {
        assert!(ln_mvgamma(2, 0.5).is_err());
        assert!(ln_mvgamma(2, 0.5000001).is_ok());
    }

    #[test]
    fn mvn_logpdf_standard_mode() {
        let cov = SpdMat::new(Mat::identity(1)).unwrap();
        assert_relative_eq!(
            mvn_logpdf(&[0.0], &[0.0], &cov).unwrap(),
            -0.918_938_533_204_672_7,
            epsilon = 1e-12
        );
        let cov2 = SpdMat::new(Mat::identity(2)).unwrap();
        assert_relative_eq!(
            mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &cov2).unwrap(),
            -2.0 * 0.918_938_533_204_672_7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mvn_logpdf_unit_point_variance_four() {
        let cov = SpdMat::new(Mat::from_rows(&[vec![4.0]]).unwrap()).unwrap();
        // -0.5 ln(8 pi) - 1/8
        let want = -0.5 * (8.0 * std::f64::consts::PI).ln() - 0.125;
        assert_relative_eq!(mvn_logpdf(&[1.0], &[0.0], &cov).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn mvn_logpdf_integrates_to_one_in_1d() {
        let cov = SpdMat::new(Mat::from_rows(&[vec![2.5]]).unwrap()).unwrap();
        let mu = [0.7];
        let (lo, hi, n) = (-20.0, 20.0, 40_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            total += w * mvn_logpdf(&[x], &mu, &cov).unwrap().exp();
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn mvn_logpdf_dim_mismatch() {
        let cov = SpdMat::new(Mat::identity(2)).unwrap();
        assert!(mvn_logpdf(&[0.0], &[0.0, 0.0], &cov).is_err());
    }

    #[test]
    fn ridge_recovers_semidefinite() {
        // Rank-1 PSD matrix: plain Cholesky fails, ridge fixes it.
        let mut m = Mat::zeros(2, 2);
        m.add_outer(&[1.0, 2.0], 1.0);
        assert!(SpdMat::new(m.clone()).unwrap().cholesky().is_err());
        let s = spd_with_ridge(m).unwrap();
        assert!(s.cholesky().is_ok());
    }

    #[test]
    fn chol_solve_roundtrip() {
        let a = SpdMat::new(
            Mat::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]])
                .unwrap(),
        )
        .unwrap();
        let l = a.cholesky().unwrap();
        let x = [1.0, -2.0, 0.5];
        let b = a.mat().matvec(&x).unwrap();
        let got = chol_solve(&l, &b);
        for (g, w) in got.iter().zip(x.iter()) {
            assert_relative_eq!(g, w, epsilon = 1e-12);
        }
    }
}
