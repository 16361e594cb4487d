//! Mixture state machine: Gaussian components with two-way sub-components,
//! Hastings split/merge ratios from marginal likelihoods, label-derived
//! vetoes, and the epoch loop that alternates representation refinement,
//! constrained refitting, and one stochastic restructuring round.

use crate::config::{GammaConvention, PcaRefresh, RunConfig, SplitVeto};
use crate::contrastive::{
    cosine_lr, lambda_warmup, train_epoch, Encoder, EpochPlan, Prototypes,
};
use crate::kmeans::{
    empirical_cov, ss_kmeans, ss_kmeans_from_centers, subcluster, CovarianceMode,
    LabelConstraints, SubFit,
};
use crate::linalg::{dist_sq, ln_gamma, Mat, SpdMat};
use crate::niw::{accumulate, default_hyper_scaled, log_marginal, NiwHyper};
use crate::pca::{fit_pca, project_all, PcaProjection};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One Gaussian component of the mixture, together with the two-way
/// sub-fit that backs its split proposal.
#[derive(Debug, Clone)]
pub struct GaussComponent {
    /// Mixing proportion, always the member share of the dataset.
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: SpdMat,
    /// Two-way sub-fit of the members; `None` only transiently.
    pub sub: Option<SubFit>,
    /// Instance ids owned by this component.
    pub members: Vec<usize>,
    /// The single labelled class present among members, if any. The
    /// k-means constraints guarantee at most one.
    pub label_class: Option<i64>,
}

/// Mixture plus bookkeeping: assignment, epoch counter, and the seeded
/// generator that drives every stochastic choice (logged for replay).
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub components: Vec<GaussComponent>,
    /// Component index per instance.
    pub assignment: Vec<usize>,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl MixtureState {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Component means as matrix rows (the cluster prototypes).
    pub fn means(&self) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = self.components.iter().map(|c| c.mean.clone()).collect();
        Mat::from_rows(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Split,
    Merge,
}

/// Why a proposal was forced to `p = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VetoReason {
    /// Split veto: the component contains labelled instances.
    LabelledSplit,
    /// Split veto (relaxed mode): both halves would hold labelled instances.
    ClassBreakingSplit,
    /// Merge veto: the two components carry distinct labelled classes.
    CrossClassMerge,
    /// Split veto: one sub-component is empty, nothing to split off.
    DegenerateSub,
}

/// One split or merge proposal as recorded in the trace. `targets` index the
/// component list at the time of the phase: the round-start list for splits,
/// the post-split list for merges. `sizes` are the member counts of the two
/// halves (split) or the two partners (merge).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Proposal {
    pub op: OpKind,
    pub targets: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `ln H`; absent when a veto suppressed evaluation.
    pub log_ratio: Option<f64>,
    /// Acceptance probability `min(1, exp(ln H))`, or 0 under a veto.
    pub p: f64,
    /// The uniform draw compared against `p` (drawn even for vetoed
    /// proposals so the stream is reproducible).
    pub u: f64,
    pub accepted: bool,
    pub veto: Option<VetoReason>,
}

/// Record of one epoch's restructuring. `k_before` counts components when
/// the epoch started; `refit_dropped` components evaporated during the
/// constrained refit (clusters that could not be reseeded — rare), before
/// any proposal ran. The arithmetic invariant is
/// `k_after = k_before - refit_dropped + accepted splits - accepted merges`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMergeLog {
    pub epoch: usize,
    pub k_before: usize,
    #[serde(default)]
    pub refit_dropped: usize,
    pub proposals: Vec<Proposal>,
    pub k_after: usize,
}

impl SplitMergeLog {
    pub fn accepted_splits(&self) -> usize {
        self.proposals.iter().filter(|p| p.accepted && p.op == OpKind::Split).count()
    }

    pub fn accepted_merges(&self) -> usize {
        self.proposals.iter().filter(|p| p.accepted && p.op == OpKind::Merge).count()
    }
}

/// `ln Γ(N)` under the configured convention: `factorial` reads `Γ(N)` as
/// `N!` (so `ln Γ(N+1)`), `gamma` as the literal gamma function.
pub fn gamma_term(n: usize, conv: GammaConvention) -> Result<f64> {
    match conv {
        GammaConvention::Factorial => ln_gamma(n as f64 + 1.0),
        GammaConvention::Gamma => ln_gamma(n as f64),
    }
}

/// Split ratio `ln H_s` for a component whose members partition into the
/// two listed halves: count terms plus sub-marginals minus the parent
/// marginal.
pub fn log_split_ratio(
    hyper: &NiwHyper,
    x: &Mat,
    half0: &[usize],
    half1: &[usize],
    conv: GammaConvention,
) -> Result<f64> {
    if half0.is_empty() || half1.is_empty() {
        return Err(Error::TooFewPoints("split ratio needs two nonempty halves".into()));
    }
    let d = x.cols();
    let s0 = accumulate(half0.iter().map(|&i| x.row(i)), d);
    let s1 = accumulate(half1.iter().map(|&i| x.row(i)), d);
    let mut parent = s0.clone();
    parent.merge(&s1);
    Ok(gamma_term(s0.n, conv)? + log_marginal(hyper, &s0)? + gamma_term(s1.n, conv)?
        + log_marginal(hyper, &s1)?
        - gamma_term(parent.n, conv)?
        - log_marginal(hyper, &parent)?)
}

/// Merge ratio `ln H_m` for two components: count term plus the union
/// marginal minus both separate terms. Symmetric in its arguments.
pub fn log_merge_ratio(
    hyper: &NiwHyper,
    x: &Mat,
    a: &[usize],
    b: &[usize],
    conv: GammaConvention,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewPoints("merge ratio needs two nonempty components".into()));
    }
    let d = x.cols();
    let sa = accumulate(a.iter().map(|&i| x.row(i)), d);
    let sb = accumulate(b.iter().map(|&i| x.row(i)), d);
    let mut both = sa.clone();
    both.merge(&sb);
    Ok(gamma_term(both.n, conv)? + log_marginal(hyper, &both)?
        - gamma_term(sa.n, conv)?
        - log_marginal(hyper, &sa)?
        - gamma_term(sb.n, conv)?
        - log_marginal(hyper, &sb)?)
}

/// Split veto for one component, or `None` when the proposal may proceed.
pub fn veto_split(
    cons: &LabelConstraints,
    sub: &SubFit,
    mode: SplitVeto,
) -> Option<VetoReason> {
    if sub.members[0].is_empty() || sub.members[1].is_empty() {
        return Some(VetoReason::DegenerateSub);
    }
    let half_labelled =
        |half: &[usize]| half.iter().any(|&i| cons.label_of(i).is_some());
    match mode {
        SplitVeto::AnyLabelled => {
            if half_labelled(&sub.members[0]) || half_labelled(&sub.members[1]) {
                Some(VetoReason::LabelledSplit)
            } else {
                None
            }
        }
        SplitVeto::ClassBreaking => {
            if half_labelled(&sub.members[0]) && half_labelled(&sub.members[1]) {
                Some(VetoReason::ClassBreakingSplit)
            } else {
                None
            }
        }
    }
}

/// Merge veto: forbidden only when both components carry (distinct)
/// labelled classes. A labelled component may absorb an unlabelled one.
pub fn veto_merge(a: &GaussComponent, b: &GaussComponent) -> Option<VetoReason> {
    match (a.label_class, b.label_class) {
        (Some(ca), Some(cb)) if ca != cb => Some(VetoReason::CrossClassMerge),
        _ => None,
    }
}

/// The single labelled class among `members`, if any. Debug-asserts the
/// k-means invariant that there is never more than one.
fn class_of_members(cons: &LabelConstraints, members: &[usize]) -> Option<i64> {
    let mut found: Option<i64> = None;
    for &i in members {
        if let Some(c) = cons.label_of(i) {
            debug_assert!(
                found.is_none() || found == Some(c),
                "component holds labelled instances of two classes"
            );
            found = Some(c);
            #[cfg(not(debug_assertions))]
            break;
        }
    }
    found
}

/// Builds components from a hard assignment over `k` cluster slots,
/// dropping empty slots and remapping the assignment to the surviving
/// component indices. Each component gets a fresh two-way sub-fit seeded
/// from `rng` (one draw per surviving component, in slot order).
fn build_components(
    x: &Mat,
    cons: &LabelConstraints,
    assignment: &[usize],
    k: usize,
    mode: CovarianceMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<GaussComponent>, Vec<usize>)> {
    let n = x.rows();
    let d = x.cols();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        members[a].push(i);
    }
    let mut components = Vec::new();
    let mut remap = vec![usize::MAX; k];
    for (slot, mem) in members.into_iter().enumerate() {
        if mem.is_empty() {
            continue;
        }
        remap[slot] = components.len();
        let mut mean = vec![0.0; d];
        for &i in &mem {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= mem.len() as f64;
        }
        let cov = empirical_cov(x, &mem, &mean, mode)?;
        let seed = rng.gen::<u64>();
        let sub = subcluster(x, &mem, mode, seed)?;
        let label_class = class_of_members(cons, &mem);
        components.push(GaussComponent {
            weight: mem.len() as f64 / n as f64,
            mean,
            cov,
            sub: Some(sub),
            members: mem,
            label_class,
        });
    }
    let new_assignment: Vec<usize> = assignment
        .iter()
        .map(|&a| {
            debug_assert!(remap[a] != usize::MAX, "instance assigned to an empty cluster");
            remap[a]
        })
        .collect();
    Ok((components, new_assignment))
}

/// Initializes the mixture with constrained k-means at `k_init` clusters.
/// Clusters that end up empty (possible when the free centers find no
/// unlabelled mass) are dropped, so the resulting K may be below `k_init`
/// but never below the labelled class count.
pub fn init_mixture(
    x: &Mat,
    cons: &LabelConstraints,
    k_init: usize,
    mode: CovarianceMode,
    seed: u64,
) -> Result<MixtureState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km_seed = rng.gen::<u64>();
    let km = ss_kmeans(x, cons, k_init, km_seed)?;
    let (components, assignment) =
        build_components(x, cons, &km.assignment, k_init, mode, &mut rng)?;
    Ok(MixtureState { components, assignment, epoch: 0, rng })
}

/// One stochastic split-then-merge round. See [`split_merge_round_forced`]
/// for the diagnostic variant that accepts every non-vetoed proposal.
pub fn split_merge_round(
    state: &mut MixtureState,
    x: &Mat,
    cons: &LabelConstraints,
    hyper: &NiwHyper,
    cfg: &RunConfig,
) -> Result<SplitMergeLog> {
    round_impl(state, x, cons, hyper, cfg, false)
}

/// [`split_merge_round`] with the acceptance test short-circuited: every
/// proposal that survives its veto is applied regardless of the drawn `u`.
/// Diagnostic aid for studying the proposal machinery in isolation.
pub fn split_merge_round_forced(
    state: &mut MixtureState,
    x: &Mat,
    cons: &LabelConstraints,
    hyper: &NiwHyper,
    cfg: &RunConfig,
) -> Result<SplitMergeLog> {
    round_impl(state, x, cons, hyper, cfg, true)
}

fn round_impl(
    state: &mut MixtureState,
    x: &Mat,
    cons: &LabelConstraints,
    hyper: &NiwHyper,
    cfg: &RunConfig,
    force: bool,
) -> Result<SplitMergeLog> {
    let k_before = state.k();
    let n = x.rows();
    let mut proposals: Vec<Proposal> = Vec::new();

    // Phase 1: a split proposal for every component, applied immediately.
    // Children get their own sub-fits right away so a later round can split
    // them further. `fresh` marks children as off-limits for this round's
    // merge phase.
    let old = std::mem::take(&mut state.components);
    let mut staged: Vec<(GaussComponent, bool)> = Vec::with_capacity(old.len() + 4);
    for (idx, comp) in old.into_iter().enumerate() {
        let u: f64 = state.rng.gen();
        let sub = comp.sub.as_ref().ok_or_else(|| {
            Error::TooFewPoints(format!("component {idx} has no sub-fit"))
        })?;
        let sizes = vec![sub.members[0].len(), sub.members[1].len()];
        let veto = veto_split(cons, sub, cfg.split_veto);
        let (log_ratio, p) = match veto {
            Some(_) => (None, 0.0),
            None => {
                let lh = log_split_ratio(
                    hyper,
                    x,
                    &sub.members[0],
                    &sub.members[1],
                    cfg.gamma_convention,
                )?;
                (Some(lh), lh.exp().min(1.0))
            }
        };
        let accepted = veto.is_none() && (force || u < p);
        proposals.push(Proposal {
            op: OpKind::Split,
            targets: vec![idx],
            sizes,
            log_ratio,
            p,
            u,
            accepted,
            veto,
        });
        if accepted {
            let sub = comp.sub.clone().expect("checked above");
            for half in 0..2 {
                let members = sub.members[half].clone();
                let label_class = class_of_members(cons, &members);
                let seed = state.rng.gen::<u64>();
                let child_sub = subcluster(x, &members, cfg.covariance_mode, seed)?;
                staged.push((
                    GaussComponent {
                        weight: members.len() as f64 / n as f64,
                        mean: sub.centers[half].clone(),
                        cov: sub.covs[half].clone(),
                        sub: Some(child_sub),
                        members,
                        label_class,
                    },
                    true,
                ));
            }
        } else {
            staged.push((comp, false));
        }
    }

    // Phase 2: merge candidates among pre-existing components only. Each is
    // paired with its nearest surviving neighbor by centroid distance; the
    // deduplicated pairs are visited greedily by (distance, index) and a
    // component joins at most one accepted merge.
    let pre: Vec<usize> =
        staged.iter().enumerate().filter(|(_, (_, fresh))| !fresh).map(|(i, _)| i).collect();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for &i in &pre {
        let mut best: Option<(f64, usize)> = None;
        for &j in &pre {
            if j == i {
                continue;
            }
            let dsq = dist_sq(&staged[i].0.mean, &staged[j].0.mean);
            if best.map_or(true, |(bd, bj)| dsq < bd || (dsq == bd && j < bj)) {
                best = Some((dsq, j));
            }
        }
        if let Some((dsq, j)) = best {
            cands.push((dsq, i.min(j), i.max(j)));
        }
    }
    cands.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    cands.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);

    let mut consumed = vec![false; staged.len()];
    let mut accepted_pairs: Vec<(usize, usize)> = Vec::new();
    for (_, lo, hi) in cands {
        if consumed[lo] || consumed[hi] {
            continue;
        }
        let u: f64 = state.rng.gen();
        let veto = veto_merge(&staged[lo].0, &staged[hi].0);
        let (log_ratio, p) = match veto {
            Some(_) => (None, 0.0),
            None => {
                let lh = log_merge_ratio(
                    hyper,
                    x,
                    &staged[lo].0.members,
                    &staged[hi].0.members,
                    cfg.gamma_convention,
                )?;
                (Some(lh), lh.exp().min(1.0))
            }
        };
        let accepted = veto.is_none() && (force || u < p);
        proposals.push(Proposal {
            op: OpKind::Merge,
            targets: vec![lo, hi],
            sizes: vec![staged[lo].0.members.len(), staged[hi].0.members.len()],
            log_ratio,
            p,
            u,
            accepted,
            veto,
        });
        if accepted {
            consumed[lo] = true;
            consumed[hi] = true;
            accepted_pairs.push((lo, hi));
        }
    }

    // Phase 3: collapse accepted merges (the merged component takes the
    // lower slot, its sub-components are the two originals), then rebuild
    // weights and the assignment.
    let mut slots: Vec<Option<GaussComponent>> =
        staged.into_iter().map(|(c, _)| Some(c)).collect();
    for (lo, hi) in accepted_pairs {
        let a = slots[lo].take().expect("merge source vanished");
        let b = slots[hi].take().expect("merge source vanished");
        let mut members = a.members.clone();
        members.extend_from_slice(&b.members);
        let total = members.len() as f64;
        let mut mean = vec![0.0; x.cols()];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= total;
        }
        let cov = empirical_cov(x, &members, &mean, cfg.covariance_mode)?;
        let label_class = a.label_class.or(b.label_class);
        let sub = SubFit {
            centers: [a.mean.clone(), b.mean.clone()],
            covs: [a.cov.clone(), b.cov.clone()],
            weights: [a.members.len() as f64 / total, b.members.len() as f64 / total],
            members: [a.members, b.members],
        };
        slots[lo] = Some(GaussComponent {
            weight: total / n as f64,
            mean,
            cov,
            sub: Some(sub),
            members,
            label_class,
        });
    }
    let mut components: Vec<GaussComponent> = slots.into_iter().flatten().collect();
    for comp in &mut components {
        comp.weight = comp.members.len() as f64 / n as f64;
    }
    let mut assignment = vec![usize::MAX; n];
    for (ci, comp) in components.iter().enumerate() {
        for &i in &comp.members {
            debug_assert_eq!(assignment[i], usize::MAX, "instance in two components");
            assignment[i] = ci;
        }
    }
    debug_assert!(assignment.iter().all(|&a| a != usize::MAX), "unassigned instance");
    debug_assert!(
        (components.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() < 1e-9,
        "weights do not sum to 1"
    );

    let k_after = components.len();
    state.components = components;
    state.assignment = assignment;
    Ok(SplitMergeLog { epoch: state.epoch, k_before, refit_dropped: 0, proposals, k_after })
}

/// Nearest component mean to `z` (squared Euclidean), ties to the lowest
/// component id.
pub fn assign_by_prototype(state: &MixtureState, z: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (ci, comp) in state.components.iter().enumerate() {
        let d = dist_sq(z, &comp.mean);
        if d < best_d {
            best_d = d;
            best = ci;
        }
    }
    best
}

/// Everything the estimation loop produces: the final mixture, the
/// embedding it lives in, trained representation pieces, and the per-epoch
/// K trace with full proposal logs.
#[derive(Debug)]
pub struct LoopOutcome {
    pub state: MixtureState,
    /// Final embedding of every instance (the space `state` lives in).
    pub embedded: Mat,
    pub encoder: Option<Encoder>,
    pub pca: Option<PcaProjection>,
    /// Requested initial cluster count.
    pub k_init: usize,
    /// Components actually alive after initialization (empties dropped).
    pub k_after_init: usize,
    /// K after each completed epoch.
    pub k_history: Vec<usize>,
    pub logs: Vec<SplitMergeLog>,
    pub epochs_run: usize,
}

/// Builds the embedding the mixture lives in: encoder + projection when
/// representation learning is on, the raw features otherwise.
fn embed_all(enc: Option<&Encoder>, pca: Option<&PcaProjection>, x: &Mat) -> Result<Mat> {
    match (enc, pca) {
        (Some(e), Some(p)) => project_all(p, &e.forward_all(x)?),
        (None, None) => Ok(x.clone()),
        _ => Err(Error::DimMismatch("encoder and projection must come together".into())),
    }
}

/// Reorders components so the labelled-class components come first in
/// sorted class order (the layout the constrained k-means expects), then
/// returns their means as warm-start centers in the given embedding.
fn warm_start_centers(
    state: &mut MixtureState,
    embedded: &Mat,
    cons: &LabelConstraints,
) -> Result<Mat> {
    let mut order: Vec<usize> = Vec::with_capacity(state.k());
    for &class in cons.classes() {
        let idx = state
            .components
            .iter()
            .position(|c| c.label_class == Some(class))
            .ok_or_else(|| {
                Error::TooFewClasses(format!("labelled class {class} lost its component"))
            })?;
        order.push(idx);
    }
    for idx in 0..state.k() {
        if !order.contains(&idx) {
            order.push(idx);
        }
    }
    let reordered: Vec<GaussComponent> =
        order.iter().map(|&idx| state.components[idx].clone()).collect();
    let mut assignment = state.assignment.clone();
    for (new_idx, &old_idx) in order.iter().enumerate() {
        for &m in &state.components[old_idx].members {
            assignment[m] = new_idx;
        }
    }
    state.components = reordered;
    state.assignment = assignment;

    // Centers are member means in the *current* embedding, which may have
    // moved since the components were fitted.
    let d = embedded.cols();
    let mut centers = Mat::zeros(state.k(), d);
    for (ci, comp) in state.components.iter().enumerate() {
        let row = centers.row_mut(ci);
        for &m in &comp.members {
            for (acc, v) in row.iter_mut().zip(embedded.row(m)) {
                *acc += v;
            }
        }
        for v in row.iter_mut() {
            *v /= comp.members.len() as f64;
        }
    }
    Ok(centers)
}

/// Unit-norm prototypes (component member means) in the given embedding.
fn prototypes_in(embedded: &Mat, state: &MixtureState) -> Result<Prototypes> {
    let d = embedded.cols();
    let mut rows = Vec::with_capacity(state.k());
    for comp in &state.components {
        let mut mean = vec![0.0; d];
        for &m in &comp.members {
            for (acc, v) in mean.iter_mut().zip(embedded.row(m)) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= comp.members.len() as f64;
        }
        rows.push(mean);
    }
    Prototypes::from_rows(&rows)
}

/// The full estimation loop. Per epoch: refine the representation (when
/// enabled) and re-embed, warm-refit the constrained mixture in the new
/// embedding, then run one split/merge round. Stops after `epochs` epochs
/// or once K has been unchanged for `patience` consecutive epochs.
///
/// The observer runs after every epoch with (epoch, state, round log);
/// pass a closure that does nothing when no instrumentation is needed.
pub fn estimate_k_loop<F>(
    x: &Mat,
    labels: &[Option<i64>],
    cfg: &RunConfig,
    mut observer: F,
) -> Result<LoopOutcome>
where
    F: FnMut(usize, &MixtureState, &SplitMergeLog),
{
    cfg.validate()?;
    if labels.len() != x.rows() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} instances",
            labels.len(),
            x.rows()
        )));
    }
    let cons = LabelConstraints::from_labels(labels);
    let k_init = cfg.k_init_for(cons.k_labelled());
    if k_init == 0 {
        return Err(Error::InfeasibleK(
            "no labelled classes and no explicit initial cluster count".into(),
        ));
    }

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mixture_seed = master.gen::<u64>();
    let train_seed = master.gen::<u64>();
    let mut train_rng = ChaCha8Rng::seed_from_u64(train_seed);

    // Representation pieces. The encoder starts as (a slice of) the
    // identity so epoch 0 sees essentially the raw features.
    let d_in = x.cols();
    let (mut encoder, mut pca) = if cfg.replearn {
        let enc_dim = cfg.encoder_dim.unwrap_or(d_in);
        let enc = Encoder::identity(d_in, enc_dim)?;
        let q = cfg.pca_q.unwrap_or_else(|| enc_dim.min(128));
        let p = fit_pca(&enc.forward_all(x)?, q)?;
        (Some(enc), Some(p))
    } else {
        (None, None)
    };

    let mut embedded = embed_all(encoder.as_ref(), pca.as_ref(), x)?;
    let mut state = init_mixture(&embedded, &cons, k_init, cfg.covariance_mode, mixture_seed)?;
    let k_after_init = state.k();

    let mut k_history = Vec::new();
    let mut logs = Vec::new();
    let mut stable = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.epochs {
        let k_entering = state.k();

        if cfg.replearn {
            let enc = encoder.as_mut().expect("replearn encoder");
            // Refit the projection on the current encoded features once per
            // epoch (per batch happens inside training when configured).
            if cfg.pca_refresh == PcaRefresh::Epoch {
                let q = pca.as_ref().map(|p| p.q()).unwrap_or(d_in);
                pca = Some(fit_pca(&enc.forward_all(x)?, q)?);
            }
            let p = pca.clone().expect("replearn projection");
            let pre_embed = project_all(&p, &enc.forward_all(x)?)?;
            let protos = prototypes_in(&pre_embed, &state)?;
            let mut plan = EpochPlan {
                x,
                pca: p,
                protos: &protos,
                owners: &state.assignment,
                labelled: (0..x.rows()).filter(|&i| cons.label_of(i).is_some()).collect(),
                unlabelled: (0..x.rows()).filter(|&i| cons.label_of(i).is_none()).collect(),
                lambda: lambda_warmup(epoch - 1, cfg.warmup_epochs),
                lr: cosine_lr(cfg.lr, epoch - 1, cfg.epochs),
            };
            train_epoch(enc, &mut plan, cfg, &mut train_rng)?;
            pca = Some(plan.pca);
            embedded = embed_all(encoder.as_ref(), pca.as_ref(), x)?;
        }

        // Warm refit: constrained k-means from the carried-over centers in
        // the (possibly moved) embedding, then rebuild all parameters from
        // the hard assignment.
        let centers = warm_start_centers(&mut state, &embedded, &cons)?;
        let km = ss_kmeans_from_centers(&embedded, &cons, centers)?;
        let k_slots = state.k();
        let (components, assignment) =
            build_components(&embedded, &cons, &km.assignment, k_slots, cfg.covariance_mode, &mut state.rng)?;
        state.components = components;
        state.assignment = assignment;
        let k_post_refit = state.k();

        let hyper = default_hyper_scaled(
            &embedded,
            cfg.prior_kappa,
            cfg.prior_nu,
            cfg.prior_psi_scale,
        )?;
        state.epoch = epoch;
        let mut log = split_merge_round(&mut state, &embedded, &cons, &hyper, cfg)?;
        // Fold any refit-time component loss into the epoch record so the
        // trace arithmetic chains from epoch start to epoch end.
        log.k_before = k_entering;
        log.refit_dropped = k_entering - k_post_refit;

        k_history.push(state.k());
        observer(epoch, &state, &log);
        logs.push(log);
        epochs_run = epoch;

        if state.k() == k_entering {
            stable += 1;
        } else {
            stable = 0;
        }
        if stable >= cfg.patience {
            break;
        }
    }

    Ok(LoopOutcome {
        state,
        embedded,
        encoder,
        pca,
        k_init,
        k_after_init,
        k_history,
        logs,
        epochs_run,
    })
}

/// Result of a labelled-only probe run: hold out some labelled classes as
/// pretend-novel, run the loop, and compare the estimated novel count with
/// the known truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Classes that kept their labels.
    pub k_retained: usize,
    /// Classes whose labels were dropped (the pretend-novel ones).
    pub k_probe: usize,
    /// Final K of the loop on the labelled subset.
    pub k_final: usize,
    /// Estimated novel-class count: `k_final - k_retained`.
    pub novel_estimate: i64,
    /// Signed error `novel_estimate - k_probe`.
    pub novel_error: i64,
}

/// Partition sizes for a probe: how many labelled classes are retained
/// and how many have their labels dropped, given the class count and the
/// probe ratio. At least one class is always retained.
pub fn probe_counts(k_labelled: usize, probe_ratio: f64) -> (usize, usize) {
    let k_probe =
        ((probe_ratio * k_labelled as f64).round() as usize).min(k_labelled.saturating_sub(1));
    (k_labelled - k_probe, k_probe)
}

/// Runs the estimation loop on the labelled instances only, with the
/// labels of a seeded random `probe_ratio` share of the classes dropped.
/// Validates the class-number estimator against known classes.
pub fn probe_k_on_labelled(
    x: &Mat,
    labels: &[Option<i64>],
    probe_ratio: f64,
    cfg: &RunConfig,
) -> Result<ProbeReport> {
    if !(0.0..=1.0).contains(&probe_ratio) {
        return Err(Error::Config(format!(
            "probe ratio must lie in [0, 1], got {probe_ratio}"
        )));
    }
    let rows: Vec<usize> =
        (0..x.rows()).filter(|&i| labels[i].is_some()).collect();
    let mut classes: Vec<i64> = rows.iter().filter_map(|&i| labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    let kl = classes.len();
    if kl < 4 {
        return Err(Error::TooFewClasses(format!(
            "probe needs at least 4 labelled classes, found {kl}"
        )));
    }
    let (_, k_probe) = probe_counts(kl, probe_ratio);

    // Seeded class shuffle; the tail becomes the probe set.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffled = classes.clone();
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let probe_classes: std::collections::HashSet<i64> =
        shuffled[kl - k_probe..].iter().copied().collect();

    let sub_rows: Vec<Vec<f64>> = rows.iter().map(|&i| x.row(i).to_vec()).collect();
    let sub_x = Mat::from_rows(&sub_rows)?;
    let sub_labels: Vec<Option<i64>> = rows
        .iter()
        .map(|&i| labels[i].filter(|c| !probe_classes.contains(c)))
        .collect();

    let outcome = estimate_k_loop(&sub_x, &sub_labels, cfg, |_, _, _| {})?;
    let k_retained = kl - k_probe;
    let k_final = outcome.state.k();
    let novel_estimate = k_final as i64 - k_retained as i64;
    Ok(ProbeReport {
        k_retained,
        k_probe,
        k_final,
        novel_estimate,
        novel_error: novel_estimate - k_probe as i64,
    })
}
