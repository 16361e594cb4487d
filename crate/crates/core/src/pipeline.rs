//! End-to-end orchestration: run the estimation loop on a dataset, collect
//! a reproducible result record, emit per-instance assignments, and verify
//! trace streams by replay.

use crate::config::RunConfig;
use crate::dataset::FeatureDataset;
use crate::eval::{hungarian_acc, k_error, EvalReport};
use crate::mixture::{estimate_k_loop, LoopOutcome, SplitMergeLog};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// The JSON result record of one fit. Field order is the serialization
/// order; everything except `wall_clock_secs` is a pure function of
/// (dataset bytes, config), so two identical runs differ in that one field
/// only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub n: usize,
    pub d: usize,
    pub k_labelled: usize,
    pub k_init: usize,
    pub k_after_init: usize,
    pub k_final: usize,
    pub k_history: Vec<usize>,
    pub epochs_run: usize,
    /// Component means in the final embedding space.
    pub prototypes: Vec<Vec<f64>>,
    /// Present when ground truth was supplied.
    pub eval: Option<EvalSection>,
    pub wall_clock_secs: f64,
}

/// Evaluation block of the result record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    pub k_true: usize,
    pub k_error: i64,
    pub report: EvalReport,
}

/// Everything a fit produces: the result record, per-instance cluster
/// assignments (by instance id), the full trace, and the loop internals.
pub struct FitArtifacts {
    pub result: RunResult,
    pub assignments: Vec<(u64, usize)>,
    pub logs: Vec<SplitMergeLog>,
    pub outcome: LoopOutcome,
}

/// Runs the full loop on a dataset. When `truth` is given, the unlabelled
/// instances are scored against it and an evaluation block is attached.
pub fn run_fit(
    ds: &FeatureDataset,
    truth: Option<&FeatureDataset>,
    cfg: &RunConfig,
) -> Result<FitArtifacts> {
    let started = std::time::Instant::now();
    let outcome = estimate_k_loop(&ds.x, &ds.labels, cfg, |_, _, _| {})?;

    let assignments: Vec<(u64, usize)> = ds
        .ids
        .iter()
        .zip(&outcome.state.assignment)
        .map(|(&id, &c)| (id, c))
        .collect();

    let eval = match truth {
        Some(t) => Some(evaluate_against(ds, t, &outcome)?),
        None => None,
    };

    let result = RunResult {
        config: cfg.clone(),
        n: ds.n(),
        d: ds.d(),
        k_labelled: ds.labelled_classes().len(),
        k_init: outcome.k_init,
        k_after_init: outcome.k_after_init,
        k_final: outcome.state.k(),
        k_history: outcome.k_history.clone(),
        epochs_run: outcome.epochs_run,
        prototypes: outcome.state.components.iter().map(|c| c.mean.clone()).collect(),
        eval,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let logs = outcome.logs.clone();
    Ok(FitArtifacts { result, assignments, logs, outcome })
}

/// Scores the fit's unlabelled assignments against ground truth. The truth
/// dataset must cover the same instance ids; old classes are the ones
/// visible in the fitted dataset's labels.
pub fn evaluate_against(
    ds: &FeatureDataset,
    truth: &FeatureDataset,
    outcome: &LoopOutcome,
) -> Result<EvalSection> {
    let report = eval_assignments(ds, truth, &outcome.state.assignment)?;
    Ok(EvalSection {
        k_true: report.k_true,
        k_error: k_error(outcome.state.k(), report.k_true),
        report,
    })
}

/// Hungarian-matched accuracy of an assignment vector over the unlabelled
/// rows of `ds`, with true classes from `truth` (matched by instance id).
/// `k_true` in the report counts the distinct true classes across the
/// whole dataset, the quantity a class-number estimate is judged against.
pub fn eval_assignments(
    ds: &FeatureDataset,
    truth: &FeatureDataset,
    assignment: &[usize],
) -> Result<EvalReport> {
    if assignment.len() != ds.n() {
        return Err(Error::DimMismatch(format!(
            "{} assignments for {} instances",
            assignment.len(),
            ds.n()
        )));
    }
    let truth_of = truth_index(truth)?;
    let rows = ds.unlabelled_rows();
    if rows.is_empty() {
        return Err(Error::TooFewPoints("no unlabelled instances to evaluate".into()));
    }
    let mut y_true = Vec::with_capacity(rows.len());
    let mut y_pred = Vec::with_capacity(rows.len());
    for &i in &rows {
        let id = ds.ids[i];
        let t = truth_of
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Parse(format!("instance {id} missing from truth")))?;
        y_true.push(t);
        y_pred.push(assignment[i]);
    }
    let old = ds.labelled_classes();
    let mut report = hungarian_acc(&y_true, &y_pred, &old)?;
    // The matching sees only D^u; the class-count context is the full
    // dataset's truth (old classes all appear there by construction).
    let mut all_classes: Vec<i64> = truth.labels.iter().flatten().copied().collect();
    all_classes.sort_unstable();
    all_classes.dedup();
    report.k_true = all_classes.len();
    Ok(report)
}

fn truth_index(truth: &FeatureDataset) -> Result<std::collections::HashMap<u64, i64>> {
    let mut map = std::collections::HashMap::with_capacity(truth.n());
    for (i, &id) in truth.ids.iter().enumerate() {
        let label = truth.labels[i].ok_or_else(|| {
            Error::Parse(format!("truth instance {id} has no label"))
        })?;
        map.insert(id, label);
    }
    Ok(map)
}

/// Writes the trace as one JSON record per line.
pub fn write_trace<W: Write>(mut w: W, logs: &[SplitMergeLog]) -> Result<()> {
    for log in logs {
        let line = serde_json::to_string(log)
            .map_err(|e| Error::Parse(format!("trace serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a line-delimited trace stream.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<SplitMergeLog>> {
    let mut logs = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: SplitMergeLog = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("trace line {}: {e}", ln + 1)))?;
        logs.push(log);
    }
    Ok(logs)
}

/// Writes per-instance assignments as `id,cluster` CSV.
pub fn write_assignments<W: Write>(mut w: W, assignments: &[(u64, usize)]) -> Result<()> {
    writeln!(w, "id,cluster")?;
    for (id, c) in assignments {
        writeln!(w, "{id},{c}")?;
    }
    Ok(())
}

/// Reads an `id,cluster` CSV written by [`write_assignments`].
pub fn read_assignments(path: &std::path::Path) -> Result<Vec<(u64, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "id,cluster" => {}
        _ => return Err(Error::Parse(format!("{}: expected `id,cluster` header", path.display()))),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, c) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!("{} line {}: expected `id,cluster`", path.display(), ln + 1))
        })?;
        let id: u64 = id.trim().parse().map_err(|e| {
            Error::Parse(format!("{} line {}: bad id: {e}", path.display(), ln + 1))
        })?;
        let c: usize = c.trim().parse().map_err(|e| {
            Error::Parse(format!("{} line {}: bad cluster: {e}", path.display(), ln + 1))
        })?;
        out.push((id, c));
    }
    Ok(out)
}

/// Replays a trace from the component count the loop started with (after
/// initialization) and verifies every step: acceptance decisions must be
/// reproducible from the logged `(u, p, veto)`, per-epoch arithmetic must
/// balance, and epochs must chain. Returns the final K.
pub fn replay_trace(k_start: usize, logs: &[SplitMergeLog]) -> Result<usize> {
    let mut k = k_start;
    for (i, log) in logs.iter().enumerate() {
        let at = format!("trace record {} (epoch {})", i + 1, log.epoch);
        if log.k_before != k {
            return Err(Error::Parse(format!(
                "{at}: starts at K={} but the chain is at K={k}",
                log.k_before
            )));
        }
        let mut splits = 0usize;
        let mut merges = 0usize;
        for (j, p) in log.proposals.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.p) {
                return Err(Error::Parse(format!("{at}, proposal {j}: p={} outside [0,1]", p.p)));
            }
            if p.veto.is_some() && p.p != 0.0 {
                return Err(Error::Parse(format!(
                    "{at}, proposal {j}: vetoed but p={} != 0",
                    p.p
                )));
            }
            let expect = p.veto.is_none() && p.u < p.p;
            if expect != p.accepted {
                return Err(Error::Parse(format!(
                    "{at}, proposal {j}: acceptance flag does not follow from u={} vs p={}",
                    p.u, p.p
                )));
            }
            if p.accepted {
                match p.op {
                    crate::mixture::OpKind::Split => splits += 1,
                    crate::mixture::OpKind::Merge => merges += 1,
                }
            }
        }
        let expected_after = log.k_before - log.refit_dropped + splits - merges;
        if expected_after != log.k_after {
            return Err(Error::Parse(format!(
                "{at}: K arithmetic {} - {} + {splits} - {merges} != recorded {}",
                log.k_before, log.refit_dropped, log.k_after
            )));
        }
        k = log.k_after;
    }
    Ok(k)
}
