//! One-period optimisation, capacity sweeps and sweep diagnostics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::combinations::{
    enumerate_extreme_points, Candidate, CombinationError, Label, Status, CATALOG,
    DEFAULT_TOL,
};
use crate::model::{Allocation, PeriodParams, StationaryState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no feasible candidate (gamma = {0})")]
    NoFeasibleCandidate(f64),
    #[error(transparent)]
    Combination(#[from] CombinationError),
    #[error("invalid capacity grid: {0}")]
    InvalidGrid(String),
}

/// How equal-objective candidates are ordered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum TieBreak {
    /// More full efficiencies first, then lower id, then label.
    #[default]
    MoreFull,
    /// Lower id, then label.
    LowerId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub tie_break: TieBreak,
    pub max_depth: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOL,
            tie_break: TieBreak::MoreFull,
            max_depth: 4,
        }
    }
}

fn objectives_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Total order used to pick among candidates.
pub fn compare_candidates(a: &Candidate, b: &Candidate, tie: TieBreak) -> Ordering {
    if !objectives_tie(a.objective, b.objective) {
        return a.objective.total_cmp(&b.objective);
    }
    let (ia, ib) = (a.effective_id(), b.effective_id());
    let by_full = ib.combination().full_count().cmp(&ia.combination().full_count());
    let rest = ia.cmp(&ib).then(a.combination.cmp(&b.combination)).then(a.label.cmp(&b.label));
    match tie {
        TieBreak::MoreFull => by_full.then(rest),
        TieBreak::LowerId => rest,
    }
}

/// Zero-cost solution when capacity covers every arrival stream.
pub fn full_service(params: &PeriodParams) -> Candidate {
    let (p, pc, l2) = (params.p, params.p_covid, params.lambda2);
    Candidate {
        combination: CATALOG[0].id,
        label: Label::A,
        alloc: Allocation::new(params.lambda1, (1.0 - p) * l2 + params.lambda3, p * l2 * pc, p * l2 * (1.0 - pc)),
        state: StationaryState {
            a_e1: 1.0,
            a_e2: 1.0,
            a_e3: 1.0,
            a_c: 1.0,
            a_n: 1.0,
            ..Default::default()
        },
        objective: 0.0,
        status: Status::Feasible,
    }
}

/// Every extreme point of combinations 6..16, in (id, label) order.
pub fn enumerate_all(params: &PeriodParams, opts: &SolverOptions) -> Result<Vec<Candidate>, SolveError> {
    let per: Vec<Result<Vec<Candidate>, CombinationError>> = CATALOG[5..]
        .par_iter()
        .map(|c| enumerate_extreme_points(c, params, opts.tolerance))
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// Admissible candidates for one period; the full-service point when Γ ≥ λ.
pub fn admissible_candidates(params: &PeriodParams, opts: &SolverOptions) -> Result<Vec<Candidate>, SolveError> {
    if params.gamma >= params.lambda() {
        return Ok(vec![full_service(params)]);
    }
    if params.gamma <= 0.0 {
        return Err(SolveError::NoFeasibleCandidate(params.gamma));
    }
    let all = enumerate_all(params, opts)?;
    Ok(all.into_iter().filter(Candidate::is_admissible).collect())
}

pub fn best_of<'a>(cands: impl IntoIterator<Item = &'a Candidate>, tie: TieBreak) -> Option<&'a Candidate> {
    cands.into_iter().min_by(|a, b| compare_candidates(a, b, tie))
}

pub fn solve(params: &PeriodParams, opts: &SolverOptions) -> Result<Candidate, SolveError> {
    let cands = admissible_candidates(params, opts)?;
    best_of(&cands, opts.tie_break)
        .cloned()
        .ok_or(SolveError::NoFeasibleCandidate(params.gamma))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub gamma: f64,
    pub optimal: Candidate,
    pub feasible_ids: BTreeSet<u8>,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub records: Vec<SweepRecord>,
    /// Maximal runs of grid points on which each combination is feasible.
    pub feasibility: BTreeMap<u8, Vec<(f64, f64)>>,
}

/// Uniform grid `start, start + step, ..` up to `stop` inclusive.
pub fn grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, SolveError> {
    if step.is_nan() || step <= 0.0 || !start.is_finite() || !stop.is_finite() {
        return Err(SolveError::InvalidGrid("step must be positive".into()));
    }
    if stop < start {
        return Err(SolveError::InvalidGrid("stop is below start".into()));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

pub fn capacity_sweep(params: &PeriodParams, gammas: &[f64], opts: &SolverOptions) -> Result<Sweep, SolveError> {
    if gammas.iter().any(|g| g.is_nan() || *g <= 0.0) || gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolveError::InvalidGrid("grid must be positive and strictly increasing".into()));
    }
    let records = gammas
        .par_iter()
        .map(|&gamma| {
            let p = params.with_gamma(gamma);
            let cands = admissible_candidates(&p, opts)?;
            let feasible_ids: BTreeSet<u8> = if gamma >= p.lambda() {
                (1..=5).collect()
            } else {
                cands.iter().map(|c| c.effective_id().get()).collect()
            };
            let optimal = best_of(&cands, opts.tie_break)
                .cloned()
                .ok_or(SolveError::NoFeasibleCandidate(gamma))?;
            Ok(SweepRecord {
                gamma,
                objective: optimal.objective,
                optimal,
                feasible_ids,
            })
        })
        .collect::<Result<Vec<_>, SolveError>>()?;

    let mut feasibility: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for id in 1..=16u8 {
        let mut runs: Vec<(f64, f64)> = Vec::new();
        let mut prev_in = false;
        for r in &records {
            let here = r.feasible_ids.contains(&id);
            if here {
                match runs.last_mut() {
                    Some(run) if prev_in => run.1 = r.gamma,
                    _ => runs.push((r.gamma, r.gamma)),
                }
            }
            prev_in = here;
        }
        if !runs.is_empty() {
            feasibility.insert(id, runs);
        }
    }
    Ok(Sweep { records, feasibility })
}

pub const COVID_ORDER: [u8; 12] = [16, 12, 8, 14, 10, 6, 15, 11, 7, 13, 9, 1];
pub const NON_COVID_ORDER: [u8; 12] = [16, 12, 8, 15, 11, 7, 14, 10, 6, 13, 9, 1];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OrderVerdict {
    Pass { sequence: Vec<u8> },
    Fail { sequence: Vec<u8>, index: usize, id: u8 },
}

impl OrderVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, OrderVerdict::Pass { .. })
    }
}

/// Optimal ids along a sweep with consecutive repeats removed.
pub fn optimal_sequence(records: &[SweepRecord]) -> Vec<u8> {
    let mut seq: Vec<u8> = records.iter().map(|r| r.optimal.effective_id().get()).collect();
    seq.dedup();
    seq
}

pub fn preference_order(p_covid: f64) -> &'static [u8; 12] {
    if p_covid > 0.5 {
        &COVID_ORDER
    } else {
        &NON_COVID_ORDER
    }
}

/// Is `sequence` a subsequence of the preference order for `p_covid`?
pub fn check_order(sequence: &[u8], p_covid: f64) -> OrderVerdict {
    let order = preference_order(p_covid);
    let mut pos = 0;
    for (i, id) in sequence.iter().enumerate() {
        match order[pos..].iter().position(|o| o == id) {
            Some(k) => pos += k + 1,
            None => {
                return OrderVerdict::Fail {
                    sequence: sequence.to_vec(),
                    index: i,
                    id: *id,
                }
            }
        }
    }
    OrderVerdict::Pass {
        sequence: sequence.to_vec(),
    }
}

pub fn check_preference_order(records: &[SweepRecord], p_covid: f64) -> OrderVerdict {
    check_order(&optimal_sequence(records), p_covid)
}

#[derive(Debug, Clone, Serialize)]
pub struct Segment {
    pub id: u8,
    pub start: f64,
    pub end: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Largest distance from the secant through the run's end points.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseReport {
    pub segments: Vec<Segment>,
    /// Grid values where the second difference exceeds the tolerance.
    pub breakpoints: Vec<f64>,
    pub affine: bool,
    pub breakpoints_at_changes: bool,
}

pub fn check_piecewise_linear(records: &[SweepRecord], tol: f64) -> PiecewiseReport {
    let mut segments = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let id = records[i].optimal.effective_id().get();
        let mut j = i;
        while j + 1 < records.len() && records[j + 1].optimal.effective_id().get() == id {
            j += 1;
        }
        let (g0, f0) = (records[i].gamma, records[i].objective);
        let (g1, f1) = (records[j].gamma, records[j].objective);
        let slope = if j > i { (f1 - f0) / (g1 - g0) } else { 0.0 };
        let intercept = f0 - slope * g0;
        let max_deviation = records[i..=j]
            .iter()
            .map(|r| (r.objective - (intercept + slope * r.gamma)).abs())
            .fold(0.0, f64::max);
        segments.push(Segment {
            id,
            start: g0,
            end: g1,
            slope,
            intercept,
            max_deviation,
        });
        i = j + 1;
    }

    let mut breakpoints = Vec::new();
    let mut at_changes = true;
    for k in 1..records.len().saturating_sub(1) {
        let d2 = records[k + 1].objective - 2.0 * records[k].objective + records[k - 1].objective;
        if d2.abs() > tol {
            breakpoints.push(records[k].gamma);
            let ids: Vec<u8> = records[k - 1..=k + 1]
                .iter()
                .map(|r| r.optimal.effective_id().get())
                .collect();
            if ids[0] == ids[1] && ids[1] == ids[2] {
                at_changes = false;
            }
        }
    }
    PiecewiseReport {
        affine: segments.iter().all(|s| s.max_deviation < tol),
        segments,
        breakpoints,
        breakpoints_at_changes: at_changes,
    }
}
