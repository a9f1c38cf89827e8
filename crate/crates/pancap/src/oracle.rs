//! Forward fluid simulation with threshold joining, used to check solver output.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::combinations::{Candidate, Status};
use crate::model::{max_residual, period_objective, Allocation, PeriodParams, StationaryState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("invalid step: dt = {dt}, horizon = {horizon}")]
    InvalidStep { dt: f64, horizon: f64 },
    #[error("unstable step at t = {time}: {component} went negative")]
    UnstableStep { time: f64, component: &'static str },
    #[error("trajectory did not settle within the horizon (drift {drift:e})")]
    NotConverged { drift: f64 },
    #[error("candidate is not feasible")]
    InfeasibleCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Sup-norm drift allowed over the trailing window.
    pub tol: f64,
    /// Trailing fraction of the horizon checked for convergence.
    pub window: f64,
    /// Upper bound on stored snapshots.
    pub max_samples: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-3,
            horizon: 200.0,
            tol: 1e-6,
            window: 0.05,
            max_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StationaryState>,
    pub converged: bool,
    /// Largest sup-norm distance from the final state over the trailing window.
    pub drift: f64,
    pub equilibrium: StationaryState,
}

impl Trajectory {
    pub fn require_converged(self) -> Result<Self, OracleError> {
        if self.converged {
            Ok(self)
        } else {
            Err(OracleError::NotConverged { drift: self.drift })
        }
    }
}

fn room(mu: f64, tau: f64, q: f64, dt: f64) -> f64 {
    (mu + (mu * tau - q) / dt).max(0.0)
}

fn frac(admitted: f64, demand: f64, room: f64) -> f64 {
    if demand > 0.0 {
        admitted / demand
    } else if room > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Flows over one explicit step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepFlows {
    pub alpha: [f64; 5],
    pub admitted: [f64; 4],
    pub served: [f64; 4],
    pub dh: [f64; 4],
}

pub(crate) fn step_flows(params: &PeriodParams, alloc: &Allocation, x: &StationaryState, dt: f64) -> StepFlows {
    let prm = params;
    let p = prm.p;
    let tau = prm.tau;
    let i1 = prm.lambda1 + prm.beta1 * x.h1 + prm.delta21 * (x.q_c + x.q_n);
    let room1 = room(alloc.mu_e1, tau.e1, x.q_e1, dt);
    let adm1 = i1.min(room1);
    let a1 = frac(adm1, i1, room1);
    let gate = adm1 >= i1;

    let ac = prm.p_covid * prm.lambda2 + prm.beta2 * x.h2c;
    let an = (1.0 - prm.p_covid) * prm.lambda2 + prm.beta2 * x.h2n;
    let d3 = prm.lambda3 + prm.beta3 * x.h3;
    let room3 = if gate { room(alloc.mu_e23, tau.e3, x.q_e23, dt) } else { 0.0 };
    let room2 = if gate { room(alloc.mu_e23, tau.e2, x.q_e23, dt) } else { 0.0 };
    let room_c = room(alloc.mu_c, tau.c, x.q_c, dt);
    let room_n = room(alloc.mu_n, tau.n, x.q_n, dt);
    let adm3 = d3.min(room3);
    let a3 = frac(adm3, d3, room3);
    let room2_left = (room2 - adm3).max(0.0);

    // The LPED s2 fraction and the clinic efficiencies depend on each other.
    let (mut a_c, mut a_n) = (x.a_c, x.a_n);
    let mut a2 = x.a_e2;
    for _ in 0..200 {
        let d2 = (1.0 - p) * (ac + an) + p * ac * (1.0 - a_c) + p * an * (1.0 - a_n);
        a2 = frac(d2.min(room2_left), d2, room2_left);
        let dc = p * ac + (1.0 - p) * ac * (1.0 - a2);
        let dn = p * an + (1.0 - p) * an * (1.0 - a2);
        let nc = frac(dc.min(room_c), dc, room_c);
        let nn = frac(dn.min(room_n), dn, room_n);
        let change = (nc - a_c).abs() + (nn - a_n).abs();
        a_c = nc;
        a_n = nn;
        if change < 1e-15 {
            break;
        }
    }
    let d2 = (1.0 - p) * (ac + an) + p * ac * (1.0 - a_c) + p * an * (1.0 - a_n);
    let a2 = a2.min(1.0);
    let dc = p * ac + (1.0 - p) * ac * (1.0 - a2);
    let dn = p * an + (1.0 - p) * an * (1.0 - a2);
    let admitted = [adm1, a2 * d2 + adm3, a_c * dc, a_n * dn];
    let mu = alloc.to_array();
    let q = [x.q_e1, x.q_e23, x.q_c, x.q_n];
    let served: [f64; 4] = std::array::from_fn(|k| mu[k].min(q[k] / dt + admitted[k]));

    let pc = prm.p_covid;
    let h2 = x.h2c + x.h2n;
    let spill_c = ac * (1.0 - a2) * (1.0 - a_c);
    let spill_n = an * (1.0 - a2) * (1.0 - a_n);
    let dh = [
        (i1 - adm1) + prm.delta21 * h2 - prm.k1() * x.h1,
        spill_c + pc * (prm.delta32 * x.h3 + prm.delta12 * x.h1) - prm.k2() * x.h2c,
        spill_n + (1.0 - pc) * (prm.delta32 * x.h3 + prm.delta12 * x.h1) - prm.k2() * x.h2n,
        (d3 - adm3) + prm.delta23 * h2 - prm.k3() * x.h3,
    ];
    StepFlows {
        alpha: [a1, a2, a3, a_c, a_n],
        admitted,
        served,
        dh,
    }
}

pub(crate) fn advance(x: &StationaryState, f: &StepFlows, dt: f64) -> StationaryState {
    let q = [x.q_e1, x.q_e23, x.q_c, x.q_n];
    let nq: [f64; 4] = std::array::from_fn(|k| (q[k] + dt * (f.admitted[k] - f.served[k])).max(0.0));
    StationaryState {
        q_e1: nq[0],
        q_e23: nq[1],
        q_c: nq[2],
        q_n: nq[3],
        h1: x.h1 + dt * f.dh[0],
        h2c: x.h2c + dt * f.dh[1],
        h2n: x.h2n + dt * f.dh[2],
        h3: x.h3 + dt * f.dh[3],
        a_e1: f.alpha[0],
        a_e2: f.alpha[1],
        a_e3: f.alpha[2],
        a_c: f.alpha[3],
        a_n: f.alpha[4],
    }
}

pub fn simulate(params: &PeriodParams, alloc: &Allocation, opts: &SimOptions) -> Result<Trajectory, OracleError> {
    let start = StationaryState {
        a_e1: 1.0,
        a_e2: 1.0,
        a_e3: 1.0,
        a_c: 1.0,
        a_n: 1.0,
        ..Default::default()
    };
    simulate_from(params, alloc, &start, opts)
}

/// Integrate from `initial` instead of the empty network.
pub fn simulate_from(
    params: &PeriodParams,
    alloc: &Allocation,
    initial: &StationaryState,
    opts: &SimOptions,
) -> Result<Trajectory, OracleError> {
    let dt = opts.dt;
    if dt.is_nan() || dt <= 0.0 || opts.horizon.is_nan() || opts.horizon < dt {
        return Err(OracleError::InvalidStep {
            dt,
            horizon: opts.horizon,
        });
    }
    let steps = (opts.horizon / dt).round() as usize;
    let stride = steps.div_ceil(opts.max_samples.max(1)).max(1);
    let window_start = steps - ((steps as f64 * opts.window).ceil() as usize).min(steps);

    let mut x = *initial;
    let mut times = vec![0.0];
    let mut states = vec![x];
    let mut tail: Vec<[f64; 13]> = Vec::new();
    for k in 1..=steps {
        let f = step_flows(params, alloc, &x, dt);
        x = advance(&x, &f, dt);
        let t = k as f64 * dt;
        for (name, v) in [("h1", x.h1), ("h2c", x.h2c), ("h2n", x.h2n), ("h3", x.h3)] {
            if v.is_nan() || v < -1e-12 {
                return Err(OracleError::UnstableStep { time: t, component: name });
            }
        }
        if k % stride == 0 || k == steps {
            times.push(t);
            states.push(x);
        }
        if k >= window_start {
            tail.push(x.to_array());
        }
    }
    let last = x.to_array();
    let drift = tail
        .iter()
        .flat_map(|s| s.iter().zip(last.iter()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(Trajectory {
        times,
        states,
        converged: drift < opts.tol,
        drift,
        equilibrium: x,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentDeviation {
    pub name: &'static str,
    pub solver: f64,
    pub oracle: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub max_deviation: f64,
    pub components: Vec<ComponentDeviation>,
    /// Components whose deviation exceeds the report threshold.
    pub flagged: Vec<&'static str>,
    pub converged: bool,
    pub oracle_residual: f64,
}

/// Deviation above which a component is flagged.
pub const FLAG_THRESHOLD: f64 = 1e-3;

pub fn verify(cand: &Candidate, params: &PeriodParams, opts: &SimOptions) -> Result<VerifyReport, OracleError> {
    if matches!(cand.status, Status::Infeasible(_)) {
        return Err(OracleError::InfeasibleCandidate);
    }
    let traj = simulate(params, &cand.alloc, opts)?;
    let eq = traj.equilibrium;
    let names = StationaryState::COMPONENTS.iter().copied().chain(["objective"]);
    let solver = cand.state.to_array().into_iter().chain([cand.objective]);
    let oracle = eq.to_array().into_iter().chain([period_objective(&eq, params)]);
    let components: Vec<ComponentDeviation> = names
        .zip(solver.zip(oracle))
        .map(|(name, (s, o))| ComponentDeviation {
            name,
            solver: s,
            oracle: o,
            deviation: (s - o).abs(),
        })
        .collect();
    Ok(VerifyReport {
        max_deviation: components.iter().map(|c| c.deviation).fold(0.0, f64::max),
        flagged: components
            .iter()
            .filter(|c| c.deviation > FLAG_THRESHOLD)
            .map(|c| c.name)
            .collect(),
        components,
        converged: traj.converged,
        oracle_residual: max_residual(&eq, &cand.alloc, params),
    })
}

/// Congestion regime of every queue for fixed repository masses.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Regime {
    e1: bool,
    /// HPED admits everything, so the LPED is open.
    gate: bool,
    /// s3 congested at the LPED (s2 shut out).
    s3: bool,
    /// Common s2 admission fraction at the LPED when s3 is fully served.
    a2: f64,
    c: bool,
    n: bool,
}

fn ratio_capped(mu: f64, d: f64) -> f64 {
    if d > 0.0 {
        (mu / d).min(1.0)
    } else if mu > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Efficiencies for fixed H, iterating the HPED/clinic/LPED coupling.
fn regime_at(params: &PeriodParams, alloc: &Allocation, h: &[f64; 4]) -> (Regime, StationaryState) {
    let prm = params;
    let p = prm.p;
    let ac = prm.p_covid * prm.lambda2 + prm.beta2 * h[1];
    let an = (1.0 - prm.p_covid) * prm.lambda2 + prm.beta2 * h[2];
    let d3 = prm.lambda3 + prm.beta3 * h[3];
    let (mut a_c, mut a_n) = (1.0, 1.0);
    let mut s = StationaryState::default();
    let mut reg = Regime {
        e1: false,
        gate: true,
        s3: false,
        a2: 1.0,
        c: false,
        n: false,
    };
    for _ in 0..200 {
        let q_c = if a_c < 1.0 { prm.tau.c * alloc.mu_c } else { 0.0 };
        let q_n = if a_n < 1.0 { prm.tau.n * alloc.mu_n } else { 0.0 };
        let i1 = prm.lambda1 + prm.beta1 * h[0] + prm.delta21 * (q_c + q_n);
        let a1 = ratio_capped(alloc.mu_e1, i1);
        let gate = a1 >= 1.0;
        let (a2, a3, q23, s3) = if !gate {
            (0.0, 0.0, 0.0, false)
        } else if alloc.mu_e23 < d3 {
            (0.0, alloc.mu_e23 / d3, prm.tau.e3 * alloc.mu_e23, true)
        } else {
            let r = alloc.mu_e23 - d3;
            let d2 = (1.0 - p) * (ac + an) + p * ac * (1.0 - a_c) + p * an * (1.0 - a_n);
            if d2 > r {
                (r / d2, 1.0, prm.tau.e2 * alloc.mu_e23, false)
            } else {
                (1.0, 1.0, 0.0, false)
            }
        };
        let dc = p * ac + (1.0 - p) * ac * (1.0 - a2);
        let dn = p * an + (1.0 - p) * an * (1.0 - a2);
        let nc = ratio_capped(alloc.mu_c, dc);
        let nn = ratio_capped(alloc.mu_n, dn);
        let change = (nc - a_c).abs() + (nn - a_n).abs() + (a2 - reg.a2).abs();
        a_c = nc;
        a_n = nn;
        reg = Regime {
            e1: a1 < 1.0,
            gate,
            s3,
            a2,
            c: a_c < 1.0,
            n: a_n < 1.0,
        };
        s = StationaryState {
            q_e1: if a1 < 1.0 { prm.tau.e1 * alloc.mu_e1 } else { 0.0 },
            q_e23: q23,
            q_c: if a_c < 1.0 { prm.tau.c * alloc.mu_c } else { 0.0 },
            q_n: if a_n < 1.0 { prm.tau.n * alloc.mu_n } else { 0.0 },
            h1: h[0],
            h2c: h[1],
            h2n: h[2],
            h3: h[3],
            a_e1: a1,
            a_e2: a2,
            a_e3: a3,
            a_c,
            a_n,
        };
        if change < 1e-15 {
            break;
        }
    }
    (reg, s)
}

/// Repository balances with the regime frozen; spills are affine in H.
fn solve_h(params: &PeriodParams, alloc: &Allocation, reg: &Regime, s: &StationaryState) -> Option<[f64; 4]> {
    let prm = params;
    let p = prm.p;
    let pc = prm.p_covid;
    let mut m = Matrix4::zeros();
    let mut b = Vector4::zeros();

    m[(0, 0)] = -prm.k1();
    m[(0, 1)] = prm.delta21;
    m[(0, 2)] = prm.delta21;
    if reg.e1 {
        m[(0, 0)] += prm.beta1;
        b[0] = -(prm.lambda1 + prm.delta21 * (s.q_c + s.q_n) - alloc.mu_e1);
    }
    let a2 = if reg.gate && !reg.s3 { reg.a2 } else { 0.0 };
    for (row, congested, mu, share) in [(1, reg.c, alloc.mu_c, pc), (2, reg.n, alloc.mu_n, 1.0 - pc)] {
        m[(row, row)] = -prm.k2();
        m[(row, 0)] = share * prm.delta12;
        m[(row, 3)] = share * prm.delta32;
        // spill = A (1 - a2) - mu (1 - a2) / (p + (1 - p)(1 - a2)) when congested
        if congested {
            let reach = p + (1.0 - p) * (1.0 - a2);
            m[(row, row)] += prm.beta2 * (1.0 - a2);
            let served_loss = if reach > 0.0 { mu * (1.0 - a2) / reach } else { 0.0 };
            b[row] = -(share * prm.lambda2 * (1.0 - a2) - served_loss);
        }
    }
    m[(3, 3)] = -prm.k3();
    m[(3, 1)] = prm.delta23;
    m[(3, 2)] = prm.delta23;
    if !reg.gate {
        m[(3, 3)] += prm.beta3;
        b[3] = -prm.lambda3;
    } else if reg.s3 {
        m[(3, 3)] += prm.beta3;
        b[3] = -(prm.lambda3 - alloc.mu_e23);
    }
    let x = m.lu().solve(&b)?;
    Some([x[0], x[1], x[2], x[3]])
}

/// Stationary state for a fixed allocation by regime iteration, falling back
/// to time integration when the iteration does not settle.
pub fn equilibrium(params: &PeriodParams, alloc: &Allocation) -> Result<StationaryState, OracleError> {
    let mut h = [0.0; 4];
    for _ in 0..500 {
        let (reg, s) = regime_at(params, alloc, &h);
        let Some(next) = solve_h(params, alloc, &reg, &s) else {
            break;
        };
        let diff = next.iter().zip(h).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
        h = next.map(|v| v.max(0.0));
        if diff < 1e-13 {
            let (_, s) = regime_at(params, alloc, &h);
            if max_residual(&s, alloc, params) < 1e-8 {
                return Ok(s);
            }
            break;
        }
    }
    let opts = SimOptions {
        dt: 1e-2,
        horizon: 2000.0,
        ..SimOptions::default()
    };
    Ok(simulate(params, alloc, &opts)?.equilibrium)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridPoint {
    pub alloc: Allocation,
    pub objective: f64,
}

/// All compositions of `n` into four non-negative parts.
fn compositions(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            for k in 0..=n - i - j {
                out.push([i, j, k, n - i - j - k]);
            }
        }
    }
    out
}

fn evaluate(params: &PeriodParams, parts: [usize; 4], n: usize) -> Option<GridPoint> {
    let unit = params.gamma / n as f64;
    let alloc = Allocation::new(
        parts[0] as f64 * unit,
        parts[1] as f64 * unit,
        parts[2] as f64 * unit,
        parts[3] as f64 * unit,
    );
    let s = equilibrium(params, &alloc).ok()?;
    Some(GridPoint {
        alloc,
        objective: period_objective(&s, params),
    })
}

/// Brute-force search over capacity splits with Σμ = Γ.
///
/// A `coarse` lattice is scanned first; the best `keep` points are refined on
/// the `fine` lattice within one coarse cell.
pub fn grid_search(params: &PeriodParams, coarse: usize, fine: usize, keep: usize) -> Option<GridPoint> {
    let mut scored: Vec<([usize; 4], GridPoint)> = compositions(coarse)
        .into_par_iter()
        .filter_map(|c| evaluate(params, c, coarse).map(|g| (c, g)))
        .collect();
    scored.sort_by(|a, b| a.1.objective.total_cmp(&b.1.objective));
    let ratio = (fine / coarse).max(1);
    let r = ratio as i64;
    let mut best = scored.first().map(|s| s.1)?;
    for (c, _) in scored.iter().take(keep) {
        let centre = c.map(|v| (v * ratio) as i64);
        let local: Vec<[usize; 4]> = (-r..=r)
            .flat_map(|di| (-r..=r).flat_map(move |dj| (-r..=r).map(move |dk| (di, dj, dk))))
            .filter_map(|(di, dj, dk)| {
                let a = centre[0] + di;
                let b = centre[1] + dj;
                let c = centre[2] + dk;
                let d = fine as i64 - a - b - c;
                (a >= 0 && b >= 0 && c >= 0 && d >= 0).then_some([a as usize, b as usize, c as usize, d as usize])
            })
            .collect();
        if let Some(g) = local
            .into_par_iter()
            .filter_map(|c| evaluate(params, c, fine))
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
        {
            if g.objective < best.objective {
                best = g;
            }
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{example1, zero_arrivals};
    use crate::single_period::{enumerate_all, solve, SolverOptions};

    fn quick() -> SimOptions {
        SimOptions {
            dt: 5e-3,
            horizon: 200.0,
            ..SimOptions::default()
        }
    }

    #[test]
    fn empty_network_stays_empty() {
        let p = zero_arrivals(1.0);
        let t = simulate(&p, &Allocation::new(0.3, 0.2, 0.1, 0.1), &quick()).unwrap();
        assert!(t.converged);
        for s in &t.states {
            assert_eq!(s.h1 + s.h2c + s.h2n + s.h3 + s.q_e1 + s.q_e23 + s.q_c + s.q_n, 0.0);
        }
    }

    #[test]
    fn coarse_step_is_unstable() {
        let p = example1(0.3);
        let opts = SimOptions {
            dt: 10.0,
            ..SimOptions::default()
        };
        let err = simulate(&p, &Allocation::new(0.3, 0.0, 0.0, 0.0), &opts).unwrap_err();
        assert!(matches!(err, OracleError::UnstableStep { .. }));
    }

    #[test]
    fn invalid_step_rejected() {
        let p = example1(0.3);
        let opts = SimOptions {
            dt: 0.0,
            ..SimOptions::default()
        };
        assert!(matches!(
            simulate(&p, &Allocation::default(), &opts),
            Err(OracleError::InvalidStep { .. })
        ));
    }

    #[test]
    fn solver_optimum_matches_simulation() {
        let p = example1(1.4);
        let c = solve(&p, &SolverOptions::default()).unwrap();
        let t = simulate(&p, &c.alloc, &SimOptions::default()).unwrap();
        assert!(t.converged);
        let obj = period_objective(&t.equilibrium, &p);
        assert!((obj - c.objective).abs() < 1e-3, "{obj} vs {}", c.objective);
    }

    #[test]
    fn corrupted_candidate_is_flagged() {
        let p = example1(1.0);
        let mut c = solve(&p, &SolverOptions::default()).unwrap();
        c.state.h1 += 0.1;
        let rep = verify(&c, &p, &quick()).unwrap();
        assert!(rep.flagged.contains(&"h1"));
        assert!(rep.max_deviation >= 0.09);
    }

    #[test]
    fn equilibrium_agrees_with_candidates() {
        let p = example1(1.0);
        for c in enumerate_all(&p, &SolverOptions::default()).unwrap() {
            if !c.is_admissible() {
                continue;
            }
            let s = equilibrium(&p, &c.alloc).unwrap();
            let obj = period_objective(&s, &p);
            assert!((obj - c.objective).abs() < 1e-6, "{}: {obj} vs {}", c.display_label(), c.objective);
        }
    }

    #[test]
    fn conservation_along_trajectory() {
        let p = example1(0.8);
        let alloc = Allocation::new(0.45, 0.05, 0.2, 0.1);
        let dt = 1e-3;
        let mut x = StationaryState {
            a_e1: 1.0,
            a_e2: 1.0,
            a_e3: 1.0,
            a_c: 1.0,
            a_n: 1.0,
            ..Default::default()
        };
        let mass = |s: &StationaryState| s.to_array()[..8].iter().sum::<f64>();
        for _ in 0..20_000 {
            let f = step_flows(&p, &alloc, &x, dt);
            let next = advance(&x, &f, dt);
            let rate = (mass(&next) - mass(&x)) / dt;
            // The clinic queues also feed the HPED through delta21.
            let inflow = p.lambda() + p.delta21 * (x.q_c + x.q_n);
            let exits = p.sigma1 * x.h1
                + p.sigma2 * (x.h2c + x.h2n)
                + p.sigma3 * x.h3
                + p.delta10 * x.h1
                + p.delta34 * x.h3;
            let expected = inflow - f.served.iter().sum::<f64>() - exits;
            assert!((rate - expected).abs() < 1e-9, "{rate} vs {expected}");
            x = next;
        }
    }
}
