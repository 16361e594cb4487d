//! Contrastive refinement of the feature embedding: an affine encoder
//! trained with an instance-level loss between two noisy views and a
//! prototype-level loss against the current cluster centers, blended by a
//! warmup ramp. All gradients are analytic.

use crate::config::{PcaRefresh, RunConfig};
use crate::linalg::{dot, l2_normalize, Mat};
use crate::pca::{fit_pca, project, PcaProjection};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Affine encoder `y = W x + b` with `d_out <= d_in`.
#[derive(Debug, Clone)]
pub struct Encoder {
    /// `d_out x d_in` weight matrix.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Encoder {
    /// Identity-like initialization: `W` is the leading rows of the
    /// identity, `b = 0`, so training starts from the raw features.
    pub fn identity(d_in: usize, d_out: usize) -> Result<Self> {
        if d_out == 0 || d_out > d_in {
            return Err(Error::DimMismatch(format!(
                "encoder output width {d_out} outside 1..={d_in}"
            )));
        }
        let mut w = Mat::zeros(d_out, d_in);
        for i in 0..d_out {
            w[(i, i)] = 1.0;
        }
        Ok(Encoder { w, b: vec![0.0; d_out] })
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.w.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        Ok(y)
    }

    /// Encodes every row of `x`.
    pub fn forward_all(&self, x: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(x.rows(), self.d_out());
        for i in 0..x.rows() {
            let y = self.forward(x.row(i))?;
            out.row_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }
}

/// Unit-norm cluster prototypes, one row per component.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub mu: Mat,
}

impl Prototypes {
    /// Normalizes each row to unit length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| l2_normalize(r)).collect();
        Ok(Prototypes { mu: Mat::from_rows(&normalized)? })
    }

    pub fn k(&self) -> usize {
        self.mu.rows()
    }
}

/// Two noisy views of one raw feature vector: `x + eps` with independent
/// Gaussian noise per view. `sigma` is an absolute per-coordinate scale
/// (callers usually pass a multiple of the feature standard deviation).
pub fn two_views(x: &[f64], sigma: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(x.len(), sigma.len());
    let mut a = Vec::with_capacity(x.len());
    let mut b = Vec::with_capacity(x.len());
    for (v, s) in x.iter().zip(sigma) {
        a.push(v + s * gauss(rng));
    }
    for (v, s) in x.iter().zip(sigma) {
        b.push(v + s * gauss(rng));
    }
    (a, b)
}

/// Standard normal draw via Box-Muller (keeps the dependency surface to
/// plain uniform draws, which makes seeded streams easy to reason about).
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Instance-level contrastive loss between paired views.
///
/// For each anchor `z_i` the positive is its own second view `z'_i`; the
/// denominator runs over every second view in the batch. One-sided (anchors
/// are first views only). Returns the mean loss and gradients with respect
/// to both view matrices.
pub fn loss_cl(z: &Mat, zp: &Mat, tau: f64) -> Result<(f64, Mat, Mat)> {
    let n = z.rows();
    if n == 0 || zp.rows() != n || z.cols() != zp.cols() {
        return Err(Error::DimMismatch(format!(
            "loss_cl: views {}x{} vs {}x{}",
            z.rows(),
            z.cols(),
            zp.rows(),
            zp.cols()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    let mut loss = 0.0;
    let mut dz = Mat::zeros(n, z.cols());
    let mut dzp = Mat::zeros(n, z.cols());
    let mut probs = vec![0.0; n];
    for i in 0..n {
        // Softmax over similarities to every second view, max-subtracted.
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            let s = dot(z.row(i), zp.row(j)) / tau;
            probs[j] = s;
            if s > best {
                best = s;
            }
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - best).exp();
            total += *p;
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        loss += -(probs[i].max(f64::MIN_POSITIVE)).ln();
        // dL/dz_i = (1/(n tau)) * (sum_j p_j z'_j - z'_i)
        // dL/dz'_j = (1/(n tau)) * (p_j - [j==i]) z_i
        let scale = 1.0 / (n as f64 * tau);
        for j in 0..n {
            let coef = scale * (probs[j] - if j == i { 1.0 } else { 0.0 });
            for c in 0..z.cols() {
                dz[(i, c)] += coef * zp[(j, c)];
                dzp[(j, c)] += coef * z[(i, c)];
            }
        }
    }
    Ok((loss / n as f64, dz, dzp))
}

/// Prototype-level contrastive loss: each embedding is attracted to its
/// own cluster prototype against all prototypes (its own included in the
/// denominator). Returns the mean loss and gradients with respect to the
/// embeddings and the prototypes.
pub fn loss_pcl(
    z: &Mat,
    owners: &[usize],
    protos: &Prototypes,
    tau: f64,
) -> Result<(f64, Mat, Mat)> {
    let n = z.rows();
    let k = protos.k();
    if owners.len() != n {
        return Err(Error::DimMismatch(format!("{} owners for {n} embeddings", owners.len())));
    }
    if k == 0 || protos.mu.cols() != z.cols() {
        return Err(Error::DimMismatch(format!(
            "prototypes are {}x{}, embeddings are {}x{}",
            k,
            protos.mu.cols(),
            n,
            z.cols()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if let Some(&bad) = owners.iter().find(|&&o| o >= k) {
        return Err(Error::OwnerOutOfRange(format!("owner {bad} with only {k} prototypes")));
    }
    let mut loss = 0.0;
    let mut dz = Mat::zeros(n, z.cols());
    let mut dmu = Mat::zeros(k, z.cols());
    let mut probs = vec![0.0; k];
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let own = owners[i];
        let mut best = f64::NEG_INFINITY;
        for (s, p) in probs.iter_mut().enumerate() {
            *p = dot(z.row(i), protos.mu.row(s)) / tau;
            if *p > best {
                best = *p;
            }
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - best).exp();
            total += *p;
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        loss += -(probs[own].max(f64::MIN_POSITIVE)).ln();
        for s in 0..k {
            let coef = scale * (probs[s] - if s == own { 1.0 } else { 0.0 });
            for c in 0..z.cols() {
                dz[(i, c)] += coef * protos.mu[(s, c)];
                dmu[(s, c)] += coef * z[(i, c)];
            }
        }
    }
    Ok((loss / n as f64, dz, dmu))
}

/// Warmup ramp for the prototype loss: `min(1, t / warmup)`.
pub fn lambda_warmup(t: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        return 1.0;
    }
    (t as f64 / warmup as f64).min(1.0)
}

/// Blended loss `L_cl + lambda * L_pcl` with gradients for both view
/// matrices and the prototypes. The prototype loss is evaluated on the
/// first view.
pub fn combined_loss(
    z: &Mat,
    zp: &Mat,
    owners: &[usize],
    protos: &Prototypes,
    tau: f64,
    lambda: f64,
) -> Result<(f64, Mat, Mat, Mat)> {
    let (lc, mut dz, dzp) = loss_cl(z, zp, tau)?;
    let (lp, dz_p, mut dmu) = loss_pcl(z, owners, protos, tau)?;
    for i in 0..z.rows() {
        for c in 0..z.cols() {
            dz[(i, c)] += lambda * dz_p[(i, c)];
        }
    }
    dmu.scale(lambda);
    Ok((lc + lambda * lp, dz, dzp, dmu))
}

/// Cosine-annealed learning rate at epoch `t` of `total`.
pub fn cosine_lr(lr0: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let progress = (t as f64 / total as f64).min(1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Per-feature standard deviations of the raw inputs, used to scale the
/// view noise.
pub fn feature_sigma(x: &Mat, relative: f64) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (s, (v, m)) in var.iter_mut().zip(x.row(i).iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter().map(|s| relative * (s / n.max(1) as f64).sqrt()).collect()
}

/// State threaded through one epoch of encoder training.
pub struct EpochPlan<'a> {
    /// Raw (unencoded) features.
    pub x: &'a Mat,
    /// Current projection; refit per batch when the config says so.
    pub pca: PcaProjection,
    /// Unit-norm prototypes in projected space.
    pub protos: &'a Prototypes,
    /// Component owner per instance, aligned with `x` rows.
    pub owners: &'a [usize],
    /// Instance indices that carry labels (for batch composition).
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
    /// Prototype-loss weight for this epoch.
    pub lambda: f64,
    /// Learning rate for this epoch.
    pub lr: f64,
}

/// Trains the encoder for one epoch of minibatch SGD and returns the mean
/// combined loss over the processed batches.
///
/// Forward path per view: affine encode, PCA-project (basis frozen unless
/// per-batch refresh is configured), L2-normalize. Gradients flow through
/// the normalization and the projection into the encoder; the PCA basis
/// and the prototypes receive none.
pub fn train_epoch(
    enc: &mut Encoder,
    plan: &mut EpochPlan,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = plan.x.rows();
    if n == 0 {
        return Err(Error::TooFewPoints("train_epoch on empty data".into()));
    }
    let sigma = feature_sigma(plan.x, cfg.sigma_aug);
    let batch_size = (cfg.batch_labelled + cfg.batch_unlabelled).max(1);
    let n_batches = n.div_ceil(batch_size);

    // Seeded shuffles; pools cycle when exhausted mid-epoch.
    let mut lab = plan.labelled.clone();
    let mut unl = plan.unlabelled.clone();
    shuffle(&mut lab, rng);
    shuffle(&mut unl, rng);
    let (mut li, mut ui) = (0usize, 0usize);

    let mut total_loss = 0.0;
    for _batch in 0..n_batches {
        let mut batch: Vec<usize> = Vec::with_capacity(batch_size);
        for _ in 0..cfg.batch_labelled.min(lab.len()) {
            batch.push(lab[li % lab.len()]);
            li += 1;
        }
        for _ in 0..cfg.batch_unlabelled.min(unl.len()) {
            batch.push(unl[ui % unl.len()]);
            ui += 1;
        }
        if batch.is_empty() {
            // No labelled/unlabelled pools at all: fall back to everything.
            batch.extend(0..n.min(batch_size));
        }

        if cfg.pca_refresh == PcaRefresh::Batch {
            let encoded = enc.forward_all(plan.x)?;
            let q = plan.pca.q();
            plan.pca = fit_pca(&encoded, q)?;
        }

        total_loss += train_batch(enc, plan, &batch, &sigma, cfg, rng)?;
    }
    Ok(total_loss / n_batches as f64)
}

fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

fn train_batch(
    enc: &mut Encoder,
    plan: &EpochPlan,
    batch: &[usize],
    sigma: &[f64],
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let nb = batch.len();
    let q = plan.pca.q();
    let mut z = Mat::zeros(nb, q);
    let mut zp = Mat::zeros(nb, q);
    // Cached intermediates for the backward pass.
    let mut raw_a: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut raw_b: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut proj_a: Vec<Vec<f64>> = Vec::with_capacity(nb);
    let mut proj_b: Vec<Vec<f64>> = Vec::with_capacity(nb);
    for (slot, &i) in batch.iter().enumerate() {
        let (va, vb) = two_views(plan.x.row(i), sigma, rng);
        let ya = enc.forward(&va)?;
        let yb = enc.forward(&vb)?;
        let pa = project(&plan.pca, &ya)?;
        let pb = project(&plan.pca, &yb)?;
        z.row_mut(slot).copy_from_slice(&l2_normalize(&pa));
        zp.row_mut(slot).copy_from_slice(&l2_normalize(&pb));
        raw_a.push(va);
        raw_b.push(vb);
        proj_a.push(pa);
        proj_b.push(pb);
    }
    let owners: Vec<usize> = batch.iter().map(|&i| plan.owners[i]).collect();
    let (loss, dz, dzp, _dmu) =
        combined_loss(&z, &zp, &owners, plan.protos, cfg.tau, plan.lambda)?;

    let mut dw = Mat::zeros(enc.d_out(), enc.d_in());
    let mut db = vec![0.0; enc.d_out()];
    for slot in 0..nb {
        backprop_view(enc, plan, dz.row(slot), &proj_a[slot], z.row(slot), &raw_a[slot], &mut dw, &mut db)?;
        backprop_view(enc, plan, dzp.row(slot), &proj_b[slot], zp.row(slot), &raw_b[slot], &mut dw, &mut db)?;
    }
    for r in 0..enc.d_out() {
        for c in 0..enc.d_in() {
            enc.w[(r, c)] -= plan.lr * dw[(r, c)];
        }
        enc.b[r] -= plan.lr * db[r];
    }
    Ok(loss)
}

/// Accumulates encoder gradients for one view of one instance:
/// normalization Jacobian, then the (fixed) projection basis, then the
/// affine map.
#[allow(clippy::too_many_arguments)]
fn backprop_view(
    enc: &Encoder,
    plan: &EpochPlan,
    dz_row: &[f64],
    projected: &[f64],
    normalized: &[f64],
    raw_input: &[f64],
    dw: &mut Mat,
    db: &mut [f64],
) -> Result<()> {
    let norm = crate::linalg::norm(projected);
    // d/dv (v/|v|) applied to the incoming gradient: (g - z (z.g)) / |v|.
    let dv: Vec<f64> = if norm < 1e-12 {
        dz_row.to_vec()
    } else {
        let zg = dot(normalized, dz_row);
        normalized.iter().zip(dz_row).map(|(zi, gi)| (gi - zi * zg) / norm).collect()
    };
    // Through the projection: dy = V dv.
    let dy = plan.pca.basis.matvec(&dv)?;
    // Affine: dW += dy x^T, db += dy.
    for r in 0..enc.d_out() {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        for c in 0..enc.d_in() {
            dw[(r, c)] += g * raw_input[c];
        }
        db[r] += g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn unit_rows(rows: &[Vec<f64>]) -> Mat {
        let normalized: Vec<Vec<f64>> = rows.iter().map(|r| l2_normalize(r)).collect();
        Mat::from_rows(&normalized).unwrap()
    }

    #[test]
    fn loss_cl_identical_pair_is_ln2() {
        // Two anchors with identical views everywhere: every similarity is
        // equal, so each softmax is uniform over 2 and the loss is ln 2.
        let z = unit_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let (loss, _, _) = loss_cl(&z, &z, 0.7).unwrap();
        assert_relative_eq!(loss, 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_cl_two_anchor_worked_value() {
        // s_ii = 1, s_ij = -1, tau = 1: loss = ln(1 + e^{-2}).
        let z = unit_rows(&[vec![1.0], vec![-1.0]]);
        let zp = unit_rows(&[vec![1.0], vec![-1.0]]);
        let (loss, _, _) = loss_cl(&z, &zp, 1.0).unwrap();
        assert_relative_eq!(loss, (1.0 + (-2.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_pcl_single_prototype_is_zero() {
        let z = unit_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]);
        let protos = Prototypes::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let (loss, _, _) = loss_pcl(&z, &[0, 0], &protos, 0.3).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_pcl_rejects_bad_owner() {
        let z = unit_rows(&[vec![1.0, 0.0]]);
        let protos = Prototypes::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            loss_pcl(&z, &[2], &protos, 0.3),
            Err(Error::OwnerOutOfRange(_))
        ));
    }

    #[test]
    fn lambda_ramp_values() {
        assert_eq!(lambda_warmup(0, 20), 0.0);
        assert_eq!(lambda_warmup(10, 20), 0.5);
        assert_eq!(lambda_warmup(20, 20), 1.0);
        assert_eq!(lambda_warmup(35, 20), 1.0);
    }

    #[test]
    fn losses_are_rotation_invariant() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 3;
        // Random orthogonal matrix by Gram-Schmidt on random vectors.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for b in &basis {
                let p = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
            let n = crate::linalg::norm(&v);
            if n > 1e-6 {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        let rot = Mat::from_rows(&basis).unwrap();

        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| l2_normalize(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let rows_p: Vec<Vec<f64>> = (0..4)
            .map(|_| l2_normalize(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let protos: Vec<Vec<f64>> = (0..2)
            .map(|_| l2_normalize(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let owners = [0usize, 1, 0, 1];

        let z = Mat::from_rows(&rows).unwrap();
        let zp = Mat::from_rows(&rows_p).unwrap();
        let pr = Prototypes::from_rows(&protos).unwrap();
        let (l1, _, _) = loss_cl(&z, &zp, 0.4).unwrap();
        let (lp1, _, _) = loss_pcl(&z, &owners, &pr, 0.4).unwrap();

        let rotate = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| rot.matvec(r).unwrap()).collect()
        };
        let zr = Mat::from_rows(&rotate(&rows)).unwrap();
        let zpr = Mat::from_rows(&rotate(&rows_p)).unwrap();
        let prr = Prototypes::from_rows(&rotate(&protos)).unwrap();
        let (l2, _, _) = loss_cl(&zr, &zpr, 0.4).unwrap();
        let (lp2, _, _) = loss_pcl(&zr, &owners, &prr, 0.4).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-9);
        assert_relative_eq!(lp1, lp2, epsilon = 1e-9);
    }

    /// Central finite differences on every input entry.
    fn fd_check_cl(z: &Mat, zp: &Mat, tau: f64) {
        let (_, dz, dzp) = loss_cl(z, zp, tau).unwrap();
        let eps = 1e-5;
        for (mat, grad, which) in [(z, &dz, 0), (zp, &dzp, 1)] {
            for i in 0..mat.rows() {
                for c in 0..mat.cols() {
                    let mut plus = mat.clone();
                    let mut minus = mat.clone();
                    plus[(i, c)] += eps;
                    minus[(i, c)] -= eps;
                    let lp = if which == 0 {
                        loss_cl(&plus, zp, tau).unwrap().0
                    } else {
                        loss_cl(z, &plus, tau).unwrap().0
                    };
                    let lm = if which == 0 {
                        loss_cl(&minus, zp, tau).unwrap().0
                    } else {
                        loss_cl(z, &minus, tau).unwrap().0
                    };
                    let fd = (lp - lm) / (2.0 * eps);
                    let an = grad[(i, c)];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "cl grad mismatch at ({i},{c}) side {which}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn loss_cl_gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|_| l2_normalize(&(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            let rows_p: Vec<Vec<f64>> = (0..5)
                .map(|_| l2_normalize(&(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
                .collect();
            fd_check_cl(&Mat::from_rows(&rows).unwrap(), &Mat::from_rows(&rows_p).unwrap(), 0.5);
        }
    }

    #[test]
    fn encoder_pipeline_gradients_match_finite_differences() {
        use rand::Rng;
        // Full path: affine -> projection -> normalize -> combined loss.
        // Check dL/dW and dL/db entry by entry.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d_in, d_out, q) = (4usize, 3usize, 3usize, 2usize);
        let rows: Vec<Vec<f64>> =
            (0..12).map(|_| (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let xfull = Mat::from_rows(&rows).unwrap();
        let enc0 = {
            let mut e = Encoder::identity(d_in, d_out).unwrap();
            for r in 0..d_out {
                for c in 0..d_in {
                    e.w[(r, c)] += rng.gen_range(-0.2..0.2);
                }
                e.b[r] = rng.gen_range(-0.1..0.1);
            }
            e
        };
        let pca = fit_pca(&enc0.forward_all(&xfull).unwrap(), q).unwrap();
        let protos = Prototypes::from_rows(&[
            l2_normalize(&[1.0, 0.3][..]),
            l2_normalize(&[-0.5, 1.0][..]),
        ])
        .unwrap();
        let owners = [0usize, 1, 0, 1];
        // Fixed views (no augmentation noise) keep the function of W pure.
        let views_a: Vec<Vec<f64>> = rows[..n].to_vec();
        let views_b: Vec<Vec<f64>> = rows[n..2 * n].to_vec();

        let eval = |enc: &Encoder| -> f64 {
            let mut z = Mat::zeros(n, q);
            let mut zp = Mat::zeros(n, q);
            for i in 0..n {
                let pa = project(&pca, &enc.forward(&views_a[i]).unwrap()).unwrap();
                let pb = project(&pca, &enc.forward(&views_b[i]).unwrap()).unwrap();
                z.row_mut(i).copy_from_slice(&l2_normalize(&pa));
                zp.row_mut(i).copy_from_slice(&l2_normalize(&pb));
            }
            combined_loss(&z, &zp, &owners, &protos, 0.5, 0.7).unwrap().0
        };

        // Analytic gradient via the module's backward helpers.
        let (mut dw, mut db) = (Mat::zeros(d_out, d_in), vec![0.0; d_out]);
        {
            let mut z = Mat::zeros(n, q);
            let mut zp = Mat::zeros(n, q);
            let mut proj_a = Vec::new();
            let mut proj_b = Vec::new();
            for i in 0..n {
                let pa = project(&pca, &enc0.forward(&views_a[i]).unwrap()).unwrap();
                let pb = project(&pca, &enc0.forward(&views_b[i]).unwrap()).unwrap();
                z.row_mut(i).copy_from_slice(&l2_normalize(&pa));
                zp.row_mut(i).copy_from_slice(&l2_normalize(&pb));
                proj_a.push(pa);
                proj_b.push(pb);
            }
            let (_, dz, dzp, _) = combined_loss(&z, &zp, &owners, &protos, 0.5, 0.7).unwrap();
            let plan = EpochPlan {
                x: &xfull,
                pca: pca.clone(),
                protos: &protos,
                owners: &[0; 12],
                labelled: vec![],
                unlabelled: vec![],
                lambda: 0.7,
                lr: 0.0,
            };
            for i in 0..n {
                backprop_view(&enc0, &plan, dz.row(i), &proj_a[i], z.row(i), &views_a[i], &mut dw, &mut db)
                    .unwrap();
                backprop_view(&enc0, &plan, dzp.row(i), &proj_b[i], zp.row(i), &views_b[i], &mut dw, &mut db)
                    .unwrap();
            }
        }

        let eps = 1e-5;
        for r in 0..d_out {
            for c in 0..d_in {
                let mut plus = enc0.clone();
                plus.w[(r, c)] += eps;
                let mut minus = enc0.clone();
                minus.w[(r, c)] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = dw[(r, c)];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "dW mismatch at ({r},{c}): fd {fd} vs {an}"
                );
            }
            let mut plus = enc0.clone();
            plus.b[r] += eps;
            let mut minus = enc0.clone();
            minus.b[r] -= eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let denom = fd.abs().max(db[r].abs()).max(1e-8);
            assert!((fd - db[r]).abs() / denom < 1e-4, "db mismatch at {r}");
        }
    }

    #[test]
    fn cosine_lr_endpoints() {
        assert_relative_eq!(cosine_lr(0.1, 0, 100), 0.1, epsilon = 1e-12);
        assert_relative_eq!(cosine_lr(0.1, 100, 100), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_lr(0.1, 50, 100), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn two_views_are_seeded_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = [1.0, 2.0];
        let s = [0.5, 0.5];
        let (a1, b1) = two_views(&x, &s, &mut rng);
        assert_ne!(a1, b1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let (a2, b2) = two_views(&x, &s, &mut rng2);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }
}
