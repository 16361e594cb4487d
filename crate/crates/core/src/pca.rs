//! Principal component analysis via eigendecomposition of the sample
//! covariance, plus the cyclic Jacobi eigensolver it rests on.

use crate::linalg::Mat;
use crate::{Error, Result};

/// Fitted projection onto the leading principal directions.
///
/// `basis` is `d x q` with orthonormal columns sorted by decreasing
/// singular value. When the data has fewer than the requested number of
/// nonzero singular values, `basis` keeps only the directions that exist
/// and `truncated` is set.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    pub basis: Mat,
    pub singular_values: Vec<f64>,
    /// Total sample variance `tr(cov)`, for explained-variance ratios.
    pub total_variance: f64,
    pub rows: usize,
    pub truncated: bool,
}

impl PcaProjection {
    pub fn q(&self) -> usize {
        self.basis.cols()
    }

    /// Fraction of total variance captured by the retained directions.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        let captured: f64 =
            self.singular_values.iter().map(|s| s * s / (self.rows as f64 - 1.0)).sum();
        captured / self.total_variance
    }
}

/// Fits a `q`-dimensional PCA to the rows of `x` by eigendecomposition of
/// the `d x d` sample covariance (divisor `rows - 1`).
pub fn fit_pca(x: &Mat, q: usize) -> Result<PcaProjection> {
    let (n, d) = (x.rows(), x.cols());
    if q == 0 || q > d {
        return Err(Error::DimMismatch(format!("pca: q = {q} outside 1..={d}")));
    }
    if n < 2 {
        return Err(Error::TooFewPoints(format!("pca needs at least 2 rows, got {n}")));
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(x.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        cov.add_outer(&centered, 1.0);
    }
    cov.scale(1.0 / (n as f64 - 1.0));

    let total_variance = cov.trace();
    let (evals, evecs) = jacobi_eigh(&cov)?;

    // Keep the q leading directions whose variance is numerically nonzero.
    let cutoff = evals.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let rank = evals.iter().take(q).filter(|&&v| v > cutoff).count();
    let truncated = rank < q;

    let mut basis = Mat::zeros(d, rank);
    for j in 0..rank {
        for i in 0..d {
            basis[(i, j)] = evecs[(i, j)];
        }
    }
    let singular_values: Vec<f64> =
        evals.iter().take(rank).map(|v| (v.max(0.0) * (n as f64 - 1.0)).sqrt()).collect();

    Ok(PcaProjection { mean, basis, singular_values, total_variance, rows: n, truncated })
}

/// Projects one point: `v = V^T (z - mean)`.
pub fn project(p: &PcaProjection, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != p.mean.len() {
        return Err(Error::DimMismatch(format!(
            "project: point has {} dims, projection expects {}",
            z.len(),
            p.mean.len()
        )));
    }
    let centered = crate::linalg::sub(z, &p.mean);
    p.basis.tr_matvec(&centered)
}

/// Projects every row of `x`.
pub fn project_all(p: &PcaProjection, x: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(x.rows(), p.q());
    for i in 0..x.rows() {
        let v = project(p, x.row(i))?;
        out.row_mut(i).copy_from_slice(&v);
    }
    Ok(out)
}

/// Maps a projected point back: `z = mean + V v`.
pub fn reconstruct(p: &PcaProjection, v: &[f64]) -> Result<Vec<f64>> {
    let mut z = p.basis.matvec(v)?;
    for (zi, m) in z.iter_mut().zip(&p.mean) {
        *zi += m;
    }
    Ok(z)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in decreasing order and the matching orthonormal
/// eigenvectors as columns.
pub fn jacobi_eigh(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows();
    if a.rows() != a.cols() {
        return Err(Error::DimMismatch("jacobi_eigh needs a square matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::Domain("jacobi_eigh: non-finite entries".into()));
    }
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Mat::identity(n);
    if n <= 1 {
        let evals = (0..n).map(|i| m[(i, i)]).collect();
        return Ok((evals, v));
    }

    let frob: f64 = m.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (frob * 1e-15).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs[(row, col)] = v[(row, src)];
        }
    }
    Ok((evals, vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-2.0..2.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn jacobi_reproduces_eigenpairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 3, 5, 8] {
            let a = random_symmetric(n, &mut rng);
            let (evals, vecs) = jacobi_eigh(&a).unwrap();
            // A v_i = lambda_i v_i
            for j in 0..n {
                let col: Vec<f64> = (0..n).map(|i| vecs[(i, j)]).collect();
                let av = a.matvec(&col).unwrap();
                for i in 0..n {
                    assert!((av[i] - evals[j] * col[i]).abs() < 1e-10, "residual at n={n}");
                }
            }
            // V^T V = I
            for j1 in 0..n {
                for j2 in 0..n {
                    let d: f64 = (0..n).map(|i| vecs[(i, j1)] * vecs[(i, j2)]).sum();
                    let want = if j1 == j2 { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-12);
                }
            }
            // Sorted descending.
            for w in evals.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn pca_line_data_has_exact_first_direction() {
        // Points on the line y = 2x: the single direction is (1,2)/sqrt(5).
        let x = Mat::from_rows(&[
            vec![-2.0, -4.0],
            vec![-1.0, -2.0],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![2.0, 4.0],
        ])
        .unwrap();
        let p = fit_pca(&x, 1).unwrap();
        let s5 = 5.0_f64.sqrt();
        let dir: Vec<f64> = (0..2).map(|i| p.basis[(i, 0)]).collect();
        let aligned = (dir[0] * 1.0 / s5 + dir[1] * 2.0 / s5).abs();
        assert_relative_eq!(aligned, 1.0, epsilon = 1e-10);
        assert_relative_eq!(p.explained_variance_ratio(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_full_rank_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for _ in 0..40 {
            rows.push((0..4).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>());
        }
        let x = Mat::from_rows(&rows).unwrap();
        let p = fit_pca(&x, 4).unwrap();
        assert!(!p.truncated);
        for i in 0..x.rows() {
            let v = project(&p, x.row(i)).unwrap();
            let back = reconstruct(&p, &v).unwrap();
            for (a, b) in back.iter().zip(x.row(i)) {
                assert!((a - b).abs() < 1e-8, "reconstruction error {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn pca_anisotropic_variance_ratio() {
        // Independent coordinates with variances 9 and 1: the first
        // direction explains about 9/10 of the variance.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rows = Vec::new();
        for _ in 0..2000 {
            let u: f64 = rng.gen_range(0.0..1.0);
            let v: f64 = rng.gen_range(0.0..1.0);
            let g1 = (-2.0 * u.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
            let u2: f64 = rng.gen_range(0.0..1.0);
            let v2: f64 = rng.gen_range(0.0..1.0);
            let g2 = (-2.0 * u2.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * v2).cos();
            rows.push(vec![3.0 * g1, g2]);
        }
        let x = Mat::from_rows(&rows).unwrap();
        let p = fit_pca(&x, 1).unwrap();
        assert!(
            (p.explained_variance_ratio() - 0.9).abs() < 0.02,
            "ratio {}",
            p.explained_variance_ratio()
        );
    }

    #[test]
    fn pca_rank_deficient_is_flagged() {
        // Rank-1 data in 2-D, q = 2 requested: one direction comes back.
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let p = fit_pca(&x, 2).unwrap();
        assert!(p.truncated);
        assert_eq!(p.q(), 1);
    }

    #[test]
    fn pca_rejects_bad_q() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&x, 3).is_err());
    }

    #[test]
    fn pca_orthonormal_basis_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        for _ in 0..60 {
            rows.push((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let x = Mat::from_rows(&rows).unwrap();
        let p = fit_pca(&x, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..6).map(|i| p.basis[(i, a)] * p.basis[(i, b)]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }
}
