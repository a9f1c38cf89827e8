//! Carryover between periods and horizon planning over extreme points.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::combinations::Candidate;
use crate::model::PeriodParams;
use crate::single_period::{admissible_candidates, best_of, compare_candidates, SolveError, SolverOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("horizon has no periods")]
    EmptyHorizon,
    #[error("horizon of {depth} periods exceeds the depth cap of {cap}")]
    DepthExceeded { depth: usize, cap: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Patient mass carried into the next period, by severity class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Buffers {
    pub b1: f64,
    pub b2c: f64,
    pub b2n: f64,
    pub b3: f64,
}

impl Buffers {
    /// Severity-weighted mass, `s1 b1 + s2 (b2c + b2n) + s3 b3`.
    pub fn weighted(&self, weights: [f64; 3]) -> f64 {
        weights[0] * self.b1 + weights[1] * (self.b2c + self.b2n) + weights[2] * self.b3
    }
}

/// Shares of the LPED s2 inflow coming from the Covid and non-Covid tracks.
fn lped_s2_shares(cand: &Candidate, params: &PeriodParams) -> (f64, f64) {
    let s = &cand.state;
    let p = params.p;
    let ac = params.p_covid * params.lambda2 + params.beta2 * s.h2c;
    let an = (1.0 - params.p_covid) * params.lambda2 + params.beta2 * s.h2n;
    let fc = ac * s.a_e2 * ((1.0 - p) + p * (1.0 - s.a_c));
    let fn_ = an * s.a_e2 * ((1.0 - p) + p * (1.0 - s.a_n));
    if fc + fn_ > 0.0 {
        (fc / (fc + fn_), fn_ / (fc + fn_))
    } else {
        (0.5, 0.5)
    }
}

pub fn compute_buffers(cand: &Candidate, params: &PeriodParams, tol: f64) -> Buffers {
    let s = &cand.state;
    if s.a_e3 < 1.0 - tol {
        return Buffers {
            b1: s.h1 + s.q_e1,
            b2c: s.h2c + s.q_c,
            b2n: s.h2n + s.q_n,
            b3: s.h3 + s.q_e23,
        };
    }
    let (sc, sn) = lped_s2_shares(cand, params);
    Buffers {
        b1: s.h1 + s.q_e1,
        b2c: s.h2c + s.q_c + s.q_e23 * sc,
        b2n: s.h2n + s.q_n + s.q_e23 * sn,
        b3: s.h3,
    }
}

/// Next-period parameters with carryover spread uniformly over its length.
pub fn effective_params(base: &PeriodParams, prev: &Buffers) -> PeriodParams {
    let t = base.t;
    let covid = base.lambda2 * base.p_covid + prev.b2c / t;
    let lambda2 = base.lambda2 + (prev.b2c + prev.b2n) / t;
    let p_covid = if prev.b2c == 0.0 && prev.b2n == 0.0 {
        base.p_covid
    } else if lambda2 > 0.0 {
        covid / lambda2
    } else {
        base.p_covid
    };
    PeriodParams {
        lambda1: base.lambda1 + prev.b1 / t,
        lambda2,
        lambda3: base.lambda3 + prev.b3 / t,
        p_covid,
        ..base.clone()
    }
}

/// Length-weighted average of period objectives plus the terminal penalty.
pub fn global_objective(per_period: &[(f64, f64)], terminal: &Buffers, weights: [f64; 3]) -> f64 {
    let total_t: f64 = per_period.iter().map(|(_, t)| t).sum();
    let cost: f64 = per_period.iter().map(|(obj, t)| obj * t).sum();
    (cost + terminal.weighted(weights)) / total_t
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanStep {
    pub candidate: Candidate,
    /// Parameters the period was solved under, carryover included.
    #[serde(skip)]
    pub params: PeriodParams,
    /// Carryover leaving the period.
    pub buffers: Buffers,
}

#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub global_objective: f64,
}

impl Plan {
    pub fn points(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.candidate.display_label()).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.candidate.objective).collect()
    }

    fn recompute(steps: Vec<PlanStep>) -> Plan {
        let per: Vec<(f64, f64)> = steps.iter().map(|s| (s.candidate.objective, s.params.t)).collect();
        let last = steps.last().expect("plans are non-empty");
        let global = global_objective(&per, &last.buffers, last.params.weights());
        Plan {
            steps,
            global_objective: global,
        }
    }

    /// The aggregation recomputed from the stored components.
    pub fn recomputed_objective(&self) -> f64 {
        Plan::recompute(self.steps.clone()).global_objective
    }
}

fn compare_plans(a: &Plan, b: &Plan, opts: &SolverOptions) -> Ordering {
    let tie = (a.global_objective - b.global_objective).abs()
        <= 1e-12 * a.global_objective.abs().max(b.global_objective.abs()).max(1.0);
    if !tie {
        return a.global_objective.total_cmp(&b.global_objective);
    }
    a.steps
        .iter()
        .zip(&b.steps)
        .map(|(x, y)| compare_candidates(&x.candidate, &y.candidate, opts.tie_break))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn check_depth(periods: &[PeriodParams], opts: &SolverOptions) -> Result<(), PlanError> {
    if periods.is_empty() {
        return Err(PlanError::EmptyHorizon);
    }
    if periods.len() > opts.max_depth {
        return Err(PlanError::DepthExceeded {
            depth: periods.len(),
            cap: opts.max_depth,
        });
    }
    Ok(())
}

fn step(cand: Candidate, params: PeriodParams, opts: &SolverOptions) -> PlanStep {
    let buffers = compute_buffers(&cand, &params, opts.tolerance);
    PlanStep {
        candidate: cand,
        params,
        buffers,
    }
}

fn extend(
    periods: &[PeriodParams],
    prefix: Vec<PlanStep>,
    opts: &SolverOptions,
    out: &mut Vec<Plan>,
) -> Result<(), PlanError> {
    let k = prefix.len();
    if k == periods.len() {
        out.push(Plan::recompute(prefix));
        return Ok(());
    }
    let params = match prefix.last() {
        None => periods[0].clone(),
        Some(prev) => effective_params(&periods[k], &prev.buffers),
    };
    let cands = admissible_candidates(&params, opts)?;
    assert!(!cands.is_empty(), "combination 16 is always feasible");
    for cand in cands {
        let mut next = prefix.clone();
        next.push(step(cand, params.clone(), opts));
        extend(periods, next, opts, out)?;
    }
    Ok(())
}

/// Every chain of admissible extreme points over the horizon, in (id, label) order.
pub fn chain_table(periods: &[PeriodParams], opts: &SolverOptions) -> Result<Vec<Plan>, PlanError> {
    check_depth(periods, opts)?;
    let first = admissible_candidates(&periods[0], opts)?;
    let per_root: Vec<Result<Vec<Plan>, PlanError>> = first
        .into_par_iter()
        .map(|cand| {
            let mut out = Vec::new();
            extend(periods, vec![step(cand, periods[0].clone(), opts)], opts, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut table = Vec::new();
    for r in per_root {
        table.extend(r?);
    }
    Ok(table)
}

pub fn best_plan<'a>(table: &'a [Plan], opts: &SolverOptions) -> Option<&'a Plan> {
    table.iter().min_by(|a, b| compare_plans(a, b, opts))
}

/// Exhaustive search over extreme-point chains.
pub fn solve_horizon(periods: &[PeriodParams], opts: &SolverOptions) -> Result<Plan, PlanError> {
    let table = chain_table(periods, opts)?;
    Ok(best_plan(&table, opts).cloned().expect("table is non-empty"))
}

/// Myopic plan: the best point of each period given realised carryover.
pub fn greedy_horizon(periods: &[PeriodParams], opts: &SolverOptions) -> Result<Plan, PlanError> {
    check_depth(periods, opts)?;
    let mut steps: Vec<PlanStep> = Vec::with_capacity(periods.len());
    for (k, base) in periods.iter().enumerate() {
        let params = match steps.last() {
            None => base.clone(),
            Some(prev) => effective_params(&periods[k], &prev.buffers),
        };
        let cands = admissible_candidates(&params, opts)?;
        let best = best_of(&cands, opts.tie_break)
            .cloned()
            .ok_or(SolveError::NoFeasibleCandidate(params.gamma))?;
        steps.push(step(best, params, opts));
    }
    Ok(Plan::recompute(steps))
}
