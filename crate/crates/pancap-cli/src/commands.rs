//! Command bodies. Each writes its report to `out` and returns the failure
//! class on error; the binary maps that to an exit status.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use pancap::multi_period::chain_table;
use pancap::oracle::simulate;
use pancap::single_period::{
    check_piecewise_linear, check_preference_order, grid, preference_order, OrderVerdict, COVID_ORDER,
};
use pancap::{
    capacity_sweep, greedy_horizon, period_objective, solve, solve_horizon, Allocation, Candidate, Plan,
    StationaryState, Status,
};
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::format::{g, rounded};
use crate::scenario::{GridSpec, Scenario};

pub const SWEEP_HEADER: [&str; 21] = [
    "gamma", "combination", "label", "objective", "mu_e1", "mu_e23", "mu_c", "mu_n", "a_e1", "a_e2", "a_e3", "a_c",
    "a_n", "q_e1", "q_e23", "q_c", "q_n", "h1", "h2c", "h2n", "h3",
];

pub const PLAN_HEADER: [&str; 4] = ["index", "pd_points", "pd_objectives", "global_objective"];

/// Breakpoint detection threshold on second differences of the sweep.
const PIECEWISE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Optimal,
    Greedy,
    Both,
}

/// Round-off from the linear solves prints as exact zero.
fn snap(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else {
        x
    }
}

/// Numeric fields of a candidate in sweep-column order, after `label`.
fn candidate_values(c: &Candidate) -> [f64; 18] {
    let (a, s) = (&c.alloc, &c.state);
    [
        c.objective, a.mu_e1, a.mu_e23, a.mu_c, a.mu_n, s.a_e1, s.a_e2, s.a_e3, s.a_c, s.a_n, s.q_e1, s.q_e23, s.q_c,
        s.q_n, s.h1, s.h2c, s.h2n, s.h3,
    ]
    .map(snap)
}

pub fn candidate_row(gamma: f64, c: &Candidate) -> Vec<String> {
    [g(gamma), c.effective_id().to_string(), c.display_label()]
        .into_iter()
        .chain(candidate_values(c).map(g))
        .collect()
}

fn candidate_json(gamma: f64, c: &Candidate) -> Value {
    let mut m = Map::new();
    m.insert("gamma".into(), json!(rounded(gamma)));
    m.insert("combination".into(), json!(c.effective_id().get()));
    m.insert("label".into(), json!(c.display_label()));
    for (name, v) in SWEEP_HEADER[3..].iter().zip(candidate_values(c)) {
        m.insert((*name).into(), json!(rounded(v)));
    }
    m.insert("status".into(), json!(status_text(&c.status)));
    Value::Object(m)
}

fn status_text(s: &Status) -> String {
    match s {
        Status::Feasible => "feasible".into(),
        Status::BoundaryReassigned(to) => format!("boundary, counted as {to}"),
        Status::Infeasible(why) => format!("infeasible: {why}"),
    }
}

fn line(vals: &[(&str, f64)]) -> String {
    vals.iter()
        .map(|(n, v)| format!("{n}={}", g(snap(*v))))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_candidate_text(out: &mut dyn Write, gamma: f64, c: &Candidate) -> std::io::Result<()> {
    writeln!(out, "gamma        {}", g(gamma))?;
    writeln!(out, "combination  {}", c.effective_id())?;
    writeln!(out, "point        {}", c.display_label())?;
    writeln!(out, "status       {}", status_text(&c.status))?;
    writeln!(out, "objective    {}", g(c.objective))?;
    let (a, s) = (&c.alloc, &c.state);
    writeln!(
        out,
        "allocation   {}",
        line(&[("e1", a.mu_e1), ("e23", a.mu_e23), ("c", a.mu_c), ("n", a.mu_n)])
    )?;
    write_state_text(out, s)
}

fn write_state_text(out: &mut dyn Write, s: &StationaryState) -> std::io::Result<()> {
    writeln!(
        out,
        "efficiency   {}",
        line(&[("e1", s.a_e1), ("e2", s.a_e2), ("e3", s.a_e3), ("c", s.a_c), ("n", s.a_n)])
    )?;
    writeln!(
        out,
        "queues       {}",
        line(&[("e1", s.q_e1), ("e23", s.q_e23), ("c", s.q_c), ("n", s.q_n)])
    )?;
    writeln!(
        out,
        "repository   {}",
        line(&[("h1", s.h1), ("h2c", s.h2c), ("h2n", s.h2n), ("h3", s.h3)])
    )
}

fn positive_gamma(gamma: f64) -> Result<f64, CliError> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(gamma)
    } else {
        Err(CliError::Schema(format!("gamma: expected a positive value, got {gamma}")))
    }
}

pub fn cmd_solve(
    scenario: &Scenario,
    gamma: Option<f64>,
    format: OutputFormat,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let base = scenario.single()?;
    let params = match gamma {
        Some(v) => base.with_gamma(positive_gamma(v)?),
        None => base.clone(),
    };
    let best = solve(&params, &scenario.solver_options())?;
    match format {
        OutputFormat::Text => write_candidate_text(out, params.gamma, &best)?,
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &candidate_json(params.gamma, &best))?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(SWEEP_HEADER)?;
            w.write_record(candidate_row(params.gamma, &best))?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Sidecar path next to the sweep CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn cmd_sweep(
    scenario: &Scenario,
    grid_spec: Option<GridSpec>,
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let params = scenario.single()?;
    let spec = grid_spec
        .or(scenario.solver.sweep_grid)
        .unwrap_or(GridSpec {
            start: 0.30,
            stop: 1.95,
            step: 0.05,
        });
    if spec.start.is_nan() || spec.start <= 0.0 {
        return Err(CliError::Schema(format!("sweep grid: start must be positive, got {}", spec.start)));
    }
    let gammas = grid(spec.start, spec.stop, spec.step)?;
    let sweep = capacity_sweep(params, &gammas, &scenario.solver_options())?;

    let write_rows = |sink: &mut dyn Write| -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(SWEEP_HEADER)?;
        for r in &sweep.records {
            w.write_record(candidate_row(r.gamma, &r.optimal))?;
        }
        w.flush()?;
        Ok(())
    };

    let verdict = check_preference_order(&sweep.records, params.p_covid);
    let report = check_piecewise_linear(&sweep.records, PIECEWISE_TOL);
    let regime = if *preference_order(params.p_covid) == COVID_ORDER {
        "covid_majority"
    } else {
        "non_covid_majority"
    };
    let (passed, sequence, violation) = match &verdict {
        OrderVerdict::Pass { sequence } => (true, sequence.clone(), Value::Null),
        OrderVerdict::Fail { sequence, index, id } => {
            (false, sequence.clone(), json!({ "index": index, "combination": id }))
        }
    };
    let feasibility: Map<String, Value> = sweep
        .feasibility
        .iter()
        .map(|(id, runs)| {
            let runs: Vec<Value> = runs.iter().map(|(a, b)| json!([rounded(*a), rounded(*b)])).collect();
            (id.to_string(), Value::Array(runs))
        })
        .collect();
    let segments: Vec<Value> = report
        .segments
        .iter()
        .map(|s| {
            json!({
                "combination": s.id,
                "start": rounded(s.start),
                "end": rounded(s.end),
                "slope": rounded(s.slope),
                "intercept": rounded(s.intercept),
                "max_deviation": s.max_deviation,
            })
        })
        .collect();
    let sidecar = json!({
        "grid": { "start": spec.start, "stop": spec.stop, "step": spec.step },
        "feasibility": feasibility,
        "preference_order": {
            "regime": regime,
            "verdict": if passed { "pass" } else { "fail" },
            "sequence": sequence,
            "violation": violation,
        },
        "breakpoints": report.breakpoints.iter().map(|b| rounded(*b)).collect::<Vec<_>>(),
        "segments": segments,
        "affine_segments": report.affine,
        "breakpoints_at_changes": report.breakpoints_at_changes,
    });

    match csv_out {
        Some(path) => {
            write_rows(&mut File::create(path)?)?;
            let side = sidecar_path(path);
            let mut f = File::create(&side)?;
            serde_json::to_writer_pretty(&mut f, &sidecar)?;
            writeln!(f)?;
            writeln!(
                out,
                "{} rows written to {}; preference order {} ({}); sidecar {}",
                sweep.records.len(),
                path.display(),
                if passed { "pass" } else { "fail" },
                regime,
                side.display()
            )?;
        }
        None => write_rows(out)?,
    }
    Ok(())
}

fn plan_json(name: &str, plan: &Plan) -> Value {
    json!({
        "policy": name,
        "points": plan.points(),
        "objectives": plan.objectives().into_iter().map(rounded).collect::<Vec<_>>(),
        "global_objective": rounded(plan.global_objective),
    })
}

fn write_plan_text(out: &mut dyn Write, name: &str, plan: &Plan) -> std::io::Result<()> {
    writeln!(out, "{name}: ({})", plan.points().join(", "))?;
    for (k, step) in plan.steps.iter().enumerate() {
        let b = &step.buffers;
        writeln!(
            out,
            "  period {}  {:<5} objective {}  carryover b1={} b2c={} b2n={} b3={}",
            k + 1,
            step.candidate.display_label(),
            g(step.candidate.objective),
            g(b.b1),
            g(b.b2c),
            g(b.b2n),
            g(b.b3)
        )?;
    }
    writeln!(out, "  global_objective {}", g(plan.global_objective))
}

pub fn plan_table_row(index: usize, plan: &Plan) -> Vec<String> {
    vec![
        index.to_string(),
        plan.points().join(";"),
        plan.objectives().into_iter().map(g).collect::<Vec<_>>().join(";"),
        g(plan.global_objective),
    ]
}

pub fn cmd_plan(
    scenario: &Scenario,
    policy: Policy,
    full_table: bool,
    format: OutputFormat,
    table_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let opts = scenario.solver_options();
    let periods = &scenario.periods;
    let mut plans: Vec<(&str, Plan)> = Vec::new();
    if matches!(policy, Policy::Optimal | Policy::Both) {
        plans.push(("optimal", solve_horizon(periods, &opts)?));
    }
    if matches!(policy, Policy::Greedy | Policy::Both) {
        plans.push(("greedy", greedy_horizon(periods, &opts)?));
    }

    let table = if full_table { Some(chain_table(periods, &opts)?) } else { None };
    let write_table = |sink: &mut dyn Write, table: &[Plan]| -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(PLAN_HEADER)?;
        for (i, row) in table.iter().enumerate() {
            w.write_record(plan_table_row(i + 1, row))?;
        }
        w.flush()?;
        Ok(())
    };

    // With --full-table and no --out the table owns stdout.
    let summary_to_stdout = table.is_none() || table_out.is_some();
    let mut summary: Vec<u8> = Vec::new();
    match format {
        OutputFormat::Json => {
            let v: Vec<Value> = plans.iter().map(|(n, p)| plan_json(n, p)).collect();
            serde_json::to_writer_pretty(&mut summary, &v)?;
            writeln!(summary)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut summary);
            w.write_record(["policy", "pd_points", "pd_objectives", "global_objective"])?;
            for (n, p) in &plans {
                let mut row = plan_table_row(0, p);
                row[0] = (*n).to_string();
                w.write_record(row)?;
            }
            w.flush()?;
        }
        OutputFormat::Text => {
            for (n, p) in &plans {
                write_plan_text(&mut summary, n, p)?;
            }
        }
    }
    if summary_to_stdout {
        out.write_all(&summary)?;
    } else {
        std::io::stderr().write_all(&summary)?;
    }
    if let Some(table) = &table {
        match table_out {
            Some(path) => write_table(&mut File::create(path)?, table)?,
            None => write_table(out, table)?,
        }
    }
    Ok(())
}

pub fn parse_alloc(s: &str) -> Result<Allocation, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [e1, e23, c, n] => Ok(Allocation::new(*e1, *e23, *c, *n)),
        _ => Err(format!("expected four comma-separated values e1,e23,c,n, got {}", v.len())),
    }
}

pub fn cmd_simulate(
    scenario: &Scenario,
    alloc: Allocation,
    dt: Option<f64>,
    horizon: Option<f64>,
    trace: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let params = scenario.single()?;
    let a = alloc.to_array();
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(CliError::Schema("alloc: capacities must be non-negative".into()));
    }
    if alloc.total() > params.gamma * (1.0 + 1e-12) {
        return Err(CliError::Schema(format!(
            "alloc: total {} exceeds gamma {}",
            g(alloc.total()),
            g(params.gamma)
        )));
    }
    let mut opts = scenario.sim_options();
    if let Some(dt) = dt {
        opts.dt = dt;
    }
    if let Some(h) = horizon {
        opts.horizon = h;
    }
    let traj = simulate(params, &alloc, &opts)?;
    if let Some(path) = trace {
        let mut w = csv::Writer::from_path(path)?;
        let header = std::iter::once("time").chain(StationaryState::COMPONENTS);
        w.write_record(header)?;
        for (t, s) in traj.times.iter().zip(&traj.states) {
            w.write_record(std::iter::once(g(*t)).chain(s.to_array().map(g)))?;
        }
        w.flush()?;
    }
    let eq = &traj.equilibrium;
    let residual = pancap::model::max_residual(eq, &alloc, params);
    writeln!(out, "objective    {}", g(period_objective(eq, params)))?;
    write_state_text(out, eq)?;
    writeln!(out, "converged    {}", traj.converged)?;
    writeln!(out, "drift        {}", g(traj.drift))?;
    writeln!(out, "residual     {}", g(residual))?;
    if !traj.converged {
        return Err(CliError::Simulation(format!(
            "not converged: trailing drift {} exceeds {}",
            g(traj.drift),
            g(opts.tol)
        )));
    }
    Ok(())
}
