//! Normal-Inverse-Wishart conjugate prior over Gaussian component
//! parameters: hyperparameter container, sufficient statistics, posterior
//! updates, and the closed-form log marginal likelihood of a point set.

use crate::linalg::{ln_mvgamma, spd_with_ridge, Mat, SpdMat};
use crate::{Error, Result};

/// Default prior strength for the mean.
pub const DEFAULT_KAPPA: f64 = 1.0;
/// Default degrees of freedom are `d + DEFAULT_NU_OFFSET`.
pub const DEFAULT_NU_OFFSET: f64 = 2.0;
/// Default scale matrix is `DEFAULT_PSI_SCALE * (tr(cov)/d) * I`.
pub const DEFAULT_PSI_SCALE: f64 = 0.05;

/// NIW hyperparameters `(m, kappa, Psi, nu)`.
#[derive(Debug, Clone)]
pub struct NiwHyper {
    pub m: Vec<f64>,
    pub kappa: f64,
    pub psi: SpdMat,
    pub nu: f64,
}

impl NiwHyper {
    pub fn new(m: Vec<f64>, kappa: f64, psi: SpdMat, nu: f64) -> Result<Self> {
        let d = m.len();
        if psi.dim() != d {
            return Err(Error::DimMismatch(format!(
                "psi is {}x{} but m has length {d}",
                psi.dim(),
                psi.dim()
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        if !(nu > d as f64 - 1.0) {
            return Err(Error::Domain(format!("nu must exceed d - 1 = {}, got {nu}", d - 1)));
        }
        Ok(NiwHyper { m, kappa, psi, nu })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Weakly informative data-scaled prior: `m` is the data mean, `kappa = 1`,
/// `nu = d + 2`, and `Psi` is an isotropic matrix carrying a small fraction
/// of the average per-coordinate variance. Scaling with the data keeps the
/// split/merge ratios usable across feature scales.
pub fn default_hyper(x: &Mat) -> Result<NiwHyper> {
    default_hyper_scaled(x, DEFAULT_KAPPA, None, DEFAULT_PSI_SCALE)
}

/// [`default_hyper`] with explicit overrides; `nu = None` uses `d + 2`.
pub fn default_hyper_scaled(
    x: &Mat,
    kappa: f64,
    nu: Option<f64>,
    psi_scale: f64,
) -> Result<NiwHyper> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(Error::TooFewPoints("default_hyper needs nonempty data".into()));
    }
    if !(psi_scale > 0.0) {
        return Err(Error::Domain(format!("psi scale must be positive, got {psi_scale}")));
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
    // Average per-coordinate variance of the data (MLE divisor).
    let mut var_sum = 0.0;
    for i in 0..n {
        for (v, m) in x.row(i).iter().zip(&mean) {
            var_sum += (v - m) * (v - m);
        }
    }
    let avg_var = (var_sum / (n as f64 * d as f64)).max(1e-12);
    let mut psi = Mat::zeros(d, d);
    for i in 0..d {
        psi[(i, i)] = psi_scale * avg_var;
    }
    NiwHyper::new(mean, kappa, SpdMat::new(psi)?, nu.unwrap_or(d as f64 + DEFAULT_NU_OFFSET))
}

/// Sufficient statistics of a point set: count, sum, and uncentered
/// second-moment matrix `sum_k z_k z_k^T`.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub n: usize,
    pub sum: Vec<f64>,
    pub scatter: Mat,
}

impl SuffStats {
    pub fn empty(d: usize) -> Self {
        SuffStats { n: 0, sum: vec![0.0; d], scatter: Mat::zeros(d, d) }
    }

    pub fn push(&mut self, z: &[f64]) {
        debug_assert_eq!(z.len(), self.sum.len());
        self.n += 1;
        for (s, v) in self.sum.iter_mut().zip(z) {
            *s += v;
        }
        self.scatter.add_outer(z, 1.0);
    }

    /// Merges another accumulator into this one (disjoint point sets).
    pub fn merge(&mut self, other: &SuffStats) {
        debug_assert_eq!(self.sum.len(), other.sum.len());
        self.n += other.n;
        for (s, v) in self.sum.iter_mut().zip(&other.sum) {
            *s += v;
        }
        self.scatter.add_assign(&other.scatter);
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

/// Accumulates statistics over the rows of `x` selected by `members`.
pub fn accumulate<'a, I>(points: I, d: usize) -> SuffStats
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut s = SuffStats::empty(d);
    for z in points {
        s.push(z);
    }
    s
}

/// Posterior hyperparameters after conditioning on a point set.
///
/// `psi_star` carries the same `1/nu_star` normalization as the prior's
/// scale matrix, so a posterior can be reused verbatim as the prior of a
/// further update.
#[derive(Debug, Clone)]
pub struct NiwPosterior {
    pub m_star: Vec<f64>,
    pub kappa_star: f64,
    pub psi_star: SpdMat,
    pub nu_star: f64,
}

impl NiwPosterior {
    /// Reinterprets the posterior as hyperparameters for further updates.
    pub fn into_hyper(self) -> Result<NiwHyper> {
        NiwHyper::new(self.m_star, self.kappa_star, self.psi_star, self.nu_star)
    }
}

/// Posterior update in the numerically preferred centered-scatter form:
///
/// `nu* Psi* = nu Psi + sum (z - zbar)(z - zbar)^T
///           + kappa N / kappa* (zbar - m)(zbar - m)^T`
pub fn posterior(hyper: &NiwHyper, stats: &SuffStats) -> Result<NiwPosterior> {
    let d = hyper.dim();
    if stats.dim() != d {
        return Err(Error::DimMismatch(format!(
            "stats dim {} vs hyper dim {d}",
            stats.dim()
        )));
    }
    let n = stats.n as f64;
    let kappa_star = hyper.kappa + n;
    let nu_star = hyper.nu + n;
    let mut m_star = vec![0.0; d];
    for i in 0..d {
        m_star[i] = (hyper.kappa * hyper.m[i] + stats.sum[i]) / kappa_star;
    }

    let mut scaled = hyper.psi.mat().clone();
    scaled.scale(hyper.nu);
    if stats.n > 0 {
        let zbar = stats.mean();
        // Centered scatter from the raw moments: sum zz^T - N zbar zbar^T.
        let mut centered = stats.scatter.clone();
        centered.add_outer(&zbar, -n);
        scaled.add_assign(&centered);
        let diff = crate::linalg::sub(&zbar, &hyper.m);
        scaled.add_outer(&diff, hyper.kappa * n / kappa_star);
    }
    scaled.scale(1.0 / nu_star);
    Ok(NiwPosterior { m_star, kappa_star, psi_star: spd_with_ridge(scaled)?, nu_star })
}

/// Posterior update grouped around uncentered moments:
///
/// `nu* Psi* = nu Psi + kappa m m^T + sum z z^T - kappa* m* m*^T`
///
/// Algebraically identical to [`posterior`]; kept as an independent route
/// for cross-checking.
pub fn posterior_uncentered(hyper: &NiwHyper, stats: &SuffStats) -> Result<NiwPosterior> {
    let d = hyper.dim();
    if stats.dim() != d {
        return Err(Error::DimMismatch(format!(
            "stats dim {} vs hyper dim {d}",
            stats.dim()
        )));
    }
    let n = stats.n as f64;
    let kappa_star = hyper.kappa + n;
    let nu_star = hyper.nu + n;
    let mut m_star = vec![0.0; d];
    for i in 0..d {
        m_star[i] = (hyper.kappa * hyper.m[i] + stats.sum[i]) / kappa_star;
    }
    let mut scaled = hyper.psi.mat().clone();
    scaled.scale(hyper.nu);
    scaled.add_outer(&hyper.m, hyper.kappa);
    scaled.add_assign(&stats.scatter);
    scaled.add_outer(&m_star, -kappa_star);
    scaled.scale(1.0 / nu_star);
    Ok(NiwPosterior { m_star, kappa_star, psi_star: spd_with_ridge(scaled)?, nu_star })
}

/// Log marginal likelihood of the point set summarized by `stats`:
///
/// `ln h(Z) = -(N d / 2) ln pi + ln Gamma_d(nu*/2) - ln Gamma_d(nu/2)
///          + (nu/2) ln |nu Psi| - (nu*/2) ln |nu* Psi*|
///          + (d/2)(ln kappa - ln kappa*)`
pub fn log_marginal(hyper: &NiwHyper, stats: &SuffStats) -> Result<f64> {
    if stats.n == 0 {
        // The integral of the prior itself is exactly one.
        if stats.dim() != hyper.dim() {
            return Err(Error::DimMismatch("stats dim vs hyper dim".into()));
        }
        return Ok(0.0);
    }
    let d = hyper.dim() as f64;
    let n = stats.n as f64;
    let post = posterior(hyper, stats)?;

    let logdet_prior = d * hyper.nu.ln() + hyper.psi.logdet()?;
    let logdet_post = d * post.nu_star.ln() + post.psi_star.logdet()?;

    Ok(-(n * d / 2.0) * std::f64::consts::PI.ln()
        + ln_mvgamma(hyper.dim(), post.nu_star / 2.0)?
        - ln_mvgamma(hyper.dim(), hyper.nu / 2.0)?
        + (hyper.nu / 2.0) * logdet_prior
        - (post.nu_star / 2.0) * logdet_post
        + (d / 2.0) * (hyper.kappa.ln() - post.kappa_star.ln()))
}

/// Convenience: marginal of an explicit point list.
pub fn log_marginal_of<'a, I>(hyper: &NiwHyper, points: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    log_marginal(hyper, &accumulate(points, hyper.dim()))
}
