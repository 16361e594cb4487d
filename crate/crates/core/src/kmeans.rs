//! Semi-supervised k-means: labelled instances are permanently locked to a
//! cluster owned by their class, unlabelled instances follow the nearest
//! center. Also holds the unconstrained two-way subclustering used to
//! propose component splits.

use crate::linalg::{dist_sq, Mat, SpdMat};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Maximum Lloyd iterations before giving up on assignment convergence.
const MAX_LLOYD_ITERS: usize = 300;
/// Relative ridge added to empirical covariances.
const COV_RIDGE: f64 = 1e-6;

/// Covariance estimation mode for fitted components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Full empirical covariance.
    Full,
    /// Diagonal (per-coordinate variance) covariance.
    Diag,
}

/// Per-instance label constraints. Classes are the sorted distinct labels;
/// class `classes()[c]` owns cluster index `c` in every constrained fit.
#[derive(Debug, Clone)]
pub struct LabelConstraints {
    labels: Vec<Option<i64>>,
    classes: Vec<i64>,
}

impl LabelConstraints {
    pub fn from_labels(labels: &[Option<i64>]) -> Self {
        let mut classes: Vec<i64> = labels.iter().flatten().copied().collect();
        classes.sort_unstable();
        classes.dedup();
        LabelConstraints { labels: labels.to_vec(), classes }
    }

    /// No labelled instances at all.
    pub fn none(n: usize) -> Self {
        LabelConstraints { labels: vec![None; n], classes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k_labelled(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn label_of(&self, i: usize) -> Option<i64> {
        self.labels[i]
    }

    /// Cluster index owned by a class, if the class is labelled.
    pub fn class_index(&self, class: i64) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }
}

/// Result of a constrained k-means fit. Cluster indices `0..k_labelled`
/// are owned by the sorted labelled classes, the rest are free.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Mat,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Cold-start attempts; the lowest-inertia run wins (first on ties).
const KMEANS_RESTARTS: usize = 24;

/// Constrained k-means with `k` clusters: class-mean initialization for the
/// locked clusters and k-means++ over unlabelled points for the free ones.
/// Free-center seeding restarts [`KMEANS_RESTARTS`] times and the run with
/// the lowest inertia is kept, all driven by the one seed.
pub fn ss_kmeans(x: &Mat, cons: &LabelConstraints, k: usize, seed: u64) -> Result<KMeansResult> {
    validate(x, cons, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = if k > cons.k_labelled() { KMEANS_RESTARTS } else { 1 };
    let mut best: Option<KMeansResult> = None;
    for _ in 0..attempts {
        let centers = initial_centers(x, cons, k, &mut rng)?;
        let run = lloyd_refined(x, cons, centers)?;
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// Constrained k-means from explicit starting centers (warm start). The
/// first `k_labelled` rows must be the centers owned by the sorted labelled
/// classes.
pub fn ss_kmeans_from_centers(
    x: &Mat,
    cons: &LabelConstraints,
    centers: Mat,
) -> Result<KMeansResult> {
    validate(x, cons, centers.rows())?;
    if centers.cols() != x.cols() {
        return Err(Error::DimMismatch(format!(
            "centers have {} dims, data has {}",
            centers.cols(),
            x.cols()
        )));
    }
    lloyd_refined(x, cons, centers)
}

fn validate(x: &Mat, cons: &LabelConstraints, k: usize) -> Result<()> {
    let n = x.rows();
    if cons.len() != n {
        return Err(Error::DimMismatch(format!(
            "constraints cover {} instances, data has {n}",
            cons.len()
        )));
    }
    if n == 0 {
        return Err(Error::TooFewPoints("k-means needs at least one point".into()));
    }
    if k < cons.k_labelled().max(1) {
        return Err(Error::InfeasibleK(format!(
            "k = {k} is below the labelled class count {}",
            cons.k_labelled()
        )));
    }
    if k > n {
        return Err(Error::InfeasibleK(format!("k = {k} exceeds the instance count {n}")));
    }
    Ok(())
}

fn initial_centers(x: &Mat, cons: &LabelConstraints, k: usize, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let d = x.cols();
    let kl = cons.k_labelled();
    let mut centers = Mat::zeros(k, d);

    // Locked clusters start at their class means.
    let mut counts = vec![0usize; kl];
    for i in 0..x.rows() {
        if let Some(c) = cons.label_of(i) {
            let ci = cons.class_index(c).expect("label not in class list");
            counts[ci] += 1;
            for (acc, v) in centers.row_mut(ci).iter_mut().zip(x.row(i)) {
                *acc += v;
            }
        }
    }
    for ci in 0..kl {
        debug_assert!(counts[ci] > 0, "labelled class without instances");
        for v in centers.row_mut(ci) {
            *v /= counts[ci] as f64;
        }
    }

    // Free clusters: k-means++ over the unlabelled pool (all points if the
    // pool is empty).
    let mut pool: Vec<usize> = (0..x.rows()).filter(|&i| cons.label_of(i).is_none()).collect();
    if pool.is_empty() {
        pool = (0..x.rows()).collect();
    }
    kmeanspp_fill(x, &pool, &mut centers, kl, rng);
    Ok(centers)
}

/// Fills `centers` rows `start..` by D^2-weighted sampling from `pool`,
/// measured against all centers placed so far.
fn kmeanspp_fill(x: &Mat, pool: &[usize], centers: &mut Mat, start: usize, rng: &mut ChaCha8Rng) {
    let k = centers.rows();
    if start >= k {
        return;
    }
    let mut d2: Vec<f64> = if start == 0 {
        vec![f64::INFINITY; pool.len()]
    } else {
        pool.iter()
            .map(|&i| {
                (0..start).map(|c| dist_sq(x.row(i), centers.row(c))).fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    for c in start..k {
        let total: f64 = d2.iter().filter(|v| v.is_finite()).sum();
        let pick = if total > 0.0 && d2.iter().all(|v| v.is_finite()) {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (idx, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = idx;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // First center ever, or all remaining distances are zero.
            rng.gen_range(0..pool.len())
        };
        centers.row_mut(c).copy_from_slice(x.row(pool[pick]));
        for (idx, &i) in pool.iter().enumerate() {
            let nd = dist_sq(x.row(i), centers.row(c));
            if nd < d2[idx] || !d2[idx].is_finite() {
                d2[idx] = nd;
            }
        }
    }
}

fn assign_all(x: &Mat, cons: &LabelConstraints, centers: &Mat) -> Vec<usize> {
    use rayon::prelude::*;
    let k = centers.rows();
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            if let Some(c) = cons.label_of(i) {
                return cons.class_index(c).expect("label not in class list");
            }
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = dist_sq(x.row(i), centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn update_centers(x: &Mat, assignment: &[usize], centers: &mut Mat) {
    let k = centers.rows();
    let d = x.cols();
    let mut sums = Mat::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue; // keep the stale center; empty handling reseeds it
        }
        for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s / counts[c] as f64;
        }
    }
}

fn inertia_of(x: &Mat, assignment: &[usize], centers: &Mat) -> f64 {
    assignment.iter().enumerate().map(|(i, &a)| dist_sq(x.row(i), centers.row(a))).sum()
}

/// Reseeds every empty cluster at the unlabelled point farthest from that
/// cluster's current center (deterministic; points are consumed greedily so
/// two empty clusters never grab the same one). Returns true if anything
/// was reseeded.
fn reseed_empty(x: &Mat, cons: &LabelConstraints, assignment: &[usize], centers: &mut Mat) -> bool {
    let k = centers.rows();
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empties.is_empty() {
        return false;
    }
    let mut taken = vec![false; x.rows()];
    let mut reseeded = false;
    for &c in &empties {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..x.rows() {
            if taken[i] || cons.label_of(i).is_some() {
                continue;
            }
            let d = dist_sq(x.row(i), centers.row(c));
            if best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            centers.row_mut(c).copy_from_slice(x.row(i));
            taken[i] = true;
            reseeded = true;
        }
    }
    reseeded
}

fn lloyd(x: &Mat, cons: &LabelConstraints, mut centers: Mat) -> Result<KMeansResult> {
    let mut assignment: Vec<usize> = Vec::new();
    let mut iterations = 0;
    #[cfg(debug_assertions)]
    let mut last_inertia = f64::INFINITY;
    for iter in 0..MAX_LLOYD_ITERS {
        iterations = iter + 1;
        let mut next = assign_all(x, cons, &centers);
        // Empty clusters get one reseed-and-reassign pass per iteration.
        if reseed_empty(x, cons, &next, &mut centers) {
            next = assign_all(x, cons, &centers);
        }
        if next == assignment {
            break;
        }
        assignment = next;
        update_centers(x, &assignment, &mut centers);
        #[cfg(debug_assertions)]
        {
            let now = inertia_of(x, &assignment, &centers);
            debug_assert!(
                now <= last_inertia + 1e-9 * last_inertia.abs().max(1.0),
                "inertia increased: {last_inertia} -> {now}"
            );
            last_inertia = now;
        }
    }
    let inertia = inertia_of(x, &assignment, &centers);
    Ok(KMeansResult { centers, assignment, inertia, iterations })
}

/// Alternations of Lloyd convergence and single-point improvement passes.
const MAX_REFINE_ROUNDS: usize = 20;

/// Lloyd to convergence, then size-weighted single-point moves (unlabelled
/// points only), alternating until neither step improves. Every accepted
/// move strictly lowers the inertia, so the alternation terminates; the
/// result is stable under both nearest-center reassignment and single-point
/// relocation, which escapes the local optima plain Lloyd gets stuck in.
fn lloyd_refined(x: &Mat, cons: &LabelConstraints, centers: Mat) -> Result<KMeansResult> {
    let mut result = lloyd(x, cons, centers)?;
    for _ in 0..MAX_REFINE_ROUNDS {
        if !improve_by_moves(x, cons, &mut result) {
            break;
        }
        let centers = std::mem::replace(&mut result.centers, Mat::zeros(0, 0));
        let iterations = result.iterations;
        result = lloyd(x, cons, centers)?;
        result.iterations += iterations;
    }
    Ok(result)
}

/// One round of greedy single-point relocations. Moving point `i` from
/// cluster `a` (size `n_a`) to `b` (size `n_b`) changes the inertia by
/// `n_b/(n_b+1)·d(i,c_b)² − n_a/(n_a−1)·d(i,c_a)²`; any strictly negative
/// change is applied immediately with incremental center updates. Labelled
/// points never move and no cluster is emptied. Returns whether anything
/// moved.
fn improve_by_moves(x: &Mat, cons: &LabelConstraints, r: &mut KMeansResult) -> bool {
    let k = r.centers.rows();
    let n = x.rows();
    if k < 2 {
        return false;
    }
    let mut counts = vec![0usize; k];
    for &a in &r.assignment {
        counts[a] += 1;
    }
    let mut any = false;
    for _ in 0..MAX_LLOYD_ITERS {
        let mut moved = false;
        for i in 0..n {
            if cons.label_of(i).is_some() {
                continue;
            }
            let a = r.assignment[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let leave_gain = na / (na - 1.0) * dist_sq(x.row(i), r.centers.row(a));
            let mut best = (a, -1e-12 * leave_gain.max(1.0));
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = counts[b] as f64;
                let join_cost = nb / (nb + 1.0) * dist_sq(x.row(i), r.centers.row(b));
                let delta = join_cost - leave_gain;
                if delta < best.1 {
                    best = (b, delta);
                }
            }
            let b = best.0;
            if b != a {
                let (na, nb) = (counts[a] as f64, counts[b] as f64);
                for j in 0..x.cols() {
                    let v = x.row(i)[j];
                    let ca = r.centers.row(a)[j];
                    r.centers.row_mut(a)[j] = (na * ca - v) / (na - 1.0);
                    let cb = r.centers.row(b)[j];
                    r.centers.row_mut(b)[j] = (nb * cb + v) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                r.assignment[i] = b;
                moved = true;
                any = true;
            }
        }
        if !moved {
            break;
        }
        // Exact recompute between sweeps stops incremental drift.
        update_centers(x, &r.assignment, &mut r.centers);
    }
    if any {
        update_centers(x, &r.assignment, &mut r.centers);
        r.inertia = inertia_of(x, &r.assignment, &r.centers);
    }
    any
}

/// Two-way unconstrained subclustering of one component's members.
#[derive(Debug, Clone)]
pub struct SubFit {
    pub centers: [Vec<f64>; 2],
    pub covs: [SpdMat; 2],
    pub weights: [f64; 2],
    /// Member row indices (into the full data matrix) per half.
    pub members: [Vec<usize>; 2],
}

/// Fits two sub-components to the listed member rows with plain k-means
/// (k-means++ start, nearest-center ties to the lower index), then
/// estimates per-half covariances with a relative ridge.
pub fn subcluster(
    x: &Mat,
    members: &[usize],
    mode: CovarianceMode,
    seed: u64,
) -> Result<SubFit> {
    if members.is_empty() {
        return Err(Error::TooFewPoints("subcluster needs at least one member".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Mat, Vec<u8>)> = None;
    for _ in 0..SUBCLUSTER_RESTARTS {
        let (inertia, centers, assignment) = subcluster_once(x, members, &mut rng);
        if best.as_ref().map_or(true, |(b, _, _)| inertia < *b) {
            best = Some((inertia, centers, assignment));
        }
    }
    let (_, centers, assignment) = best.expect("at least one attempt");

    let mut halves: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (slot, &i) in members.iter().enumerate() {
        halves[assignment[slot] as usize].push(i);
    }
    let n = members.len() as f64;
    let weights = [halves[0].len() as f64 / n, halves[1].len() as f64 / n];
    let mean0: Vec<f64> = centers.row(0).to_vec();
    let mean1: Vec<f64> = centers.row(1).to_vec();
    let covs = [
        empirical_cov(x, &halves[0], &mean0, mode)?,
        empirical_cov(x, &halves[1], &mean1, mode)?,
    ];
    Ok(SubFit {
        centers: [mean0, mean1],
        covs,
        weights,
        members: halves,
    })
}

/// Two-cluster seeding attempts; the lowest-inertia run wins.
const SUBCLUSTER_RESTARTS: usize = 4;

fn subcluster_once(x: &Mat, members: &[usize], rng: &mut ChaCha8Rng) -> (f64, Mat, Vec<u8>) {
    let d = x.cols();
    let mut centers = Mat::zeros(2, d);
    kmeanspp_fill(x, members, &mut centers, 0, rng);

    let mut assignment = vec![0u8; members.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut next = vec![0u8; members.len()];
        for (slot, &i) in members.iter().enumerate() {
            let d0 = dist_sq(x.row(i), centers.row(0));
            let d1 = dist_sq(x.row(i), centers.row(1));
            next[slot] = if d1 < d0 { 1 } else { 0 };
        }
        // Reseed an empty half at the member farthest from its center.
        for half in 0..2u8 {
            if next.iter().any(|&a| a == half) {
                continue;
            }
            let far = members
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| {
                    let da = dist_sq(x.row(a), centers.row(half as usize));
                    let db = dist_sq(x.row(b), centers.row(half as usize));
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(slot, _)| slot)
                .unwrap();
            let dfar = dist_sq(x.row(members[far]), centers.row(half as usize));
            if dfar > 0.0 {
                centers.row_mut(half as usize).copy_from_slice(x.row(members[far]));
                next[far] = half;
            }
        }
        if next == assignment {
            break;
        }
        assignment = next;
        for half in 0..2 {
            let mut count = 0usize;
            let mut sum = vec![0.0; d];
            for (slot, &i) in members.iter().enumerate() {
                if assignment[slot] == half as u8 {
                    count += 1;
                    for (s, v) in sum.iter_mut().zip(x.row(i)) {
                        *s += v;
                    }
                }
            }
            if count > 0 {
                for (dst, s) in centers.row_mut(half).iter_mut().zip(&sum) {
                    *dst = s / count as f64;
                }
            }
        }
    }

    let inertia = members
        .iter()
        .enumerate()
        .map(|(slot, &i)| dist_sq(x.row(i), centers.row(assignment[slot] as usize)))
        .sum();
    (inertia, centers, assignment)
}

/// Empirical covariance (MLE divisor) of the listed rows around `mean`,
/// with a relative ridge so the result always factorizes. An empty member
/// list yields the bare ridge.
pub fn empirical_cov(
    x: &Mat,
    members: &[usize],
    mean: &[f64],
    mode: CovarianceMode,
) -> Result<SpdMat> {
    let d = x.cols();
    let mut cov = Mat::zeros(d, d);
    for &i in members {
        let diff = crate::linalg::sub(x.row(i), mean);
        cov.add_outer(&diff, 1.0);
    }
    if !members.is_empty() {
        cov.scale(1.0 / members.len() as f64);
    }
    if mode == CovarianceMode::Diag {
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    cov[(i, j)] = 0.0;
                }
            }
        }
    }
    let ridge = COV_RIDGE * (cov.trace() / d as f64).max(1e-12);
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    SpdMat::new(cov)
}
