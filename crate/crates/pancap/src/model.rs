//! Domain types, parameter validation, flow balances and the period objective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("missing thresholds: give tau_e1..tau_n or both reward_b and phi")]
    MissingThresholds,
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// One period as written in a scenario file. Thresholds are either listed
/// directly or derived from `reward_b` and `phi`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodInput {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub p: f64,
    pub p_covid: f64,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_e1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_e2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_e3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_n: Option<f64>,
    pub delta10: f64,
    pub delta12: f64,
    pub delta21: f64,
    pub delta23: f64,
    pub delta32: f64,
    pub delta34: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub gamma: f64,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death_weight: Option<f64>,
}

/// Wait-time tolerance thresholds for the five queues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub c: f64,
    pub n: f64,
}

impl Thresholds {
    pub fn derive(reward_b: f64, phi: f64, r: f64, s: [f64; 3]) -> Self {
        Thresholds {
            e1: reward_b / (r + s[0]),
            e2: reward_b / (r + s[1]),
            e3: reward_b / (r + s[2]),
            c: reward_b / (phi * s[1]),
            n: reward_b / (phi * s[1]),
        }
    }
}

/// Validated parameters for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub p: f64,
    pub p_covid: f64,
    pub r: f64,
    pub reward_b: Option<f64>,
    pub phi: Option<f64>,
    pub tau: Thresholds,
    pub delta10: f64,
    pub delta12: f64,
    pub delta21: f64,
    pub delta23: f64,
    pub delta32: f64,
    pub delta34: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub gamma: f64,
    pub t: f64,
    pub death_weight: f64,
}

fn check(ok: bool, name: &str) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError::InvariantViolation(name.to_string()))
    }
}

pub fn validate_params(raw: &PeriodInput) -> Result<PeriodParams, ParamError> {
    let tau = match (raw.reward_b, raw.phi) {
        (Some(b), Some(phi)) => {
            check(b > 0.0 && b.is_finite(), "reward_b > 0")?;
            check(phi > 0.0 && phi <= 1.0, "0 < phi <= 1")?;
            Thresholds::derive(b, phi, raw.r, [raw.s1, raw.s2, raw.s3])
        }
        _ => match (raw.tau_e1, raw.tau_e2, raw.tau_e3, raw.tau_c, raw.tau_n) {
            (Some(e1), Some(e2), Some(e3), Some(c), Some(n)) => Thresholds { e1, e2, e3, c, n },
            _ => return Err(ParamError::MissingThresholds),
        },
    };
    let params = PeriodParams {
        lambda1: raw.lambda1,
        lambda2: raw.lambda2,
        lambda3: raw.lambda3,
        s1: raw.s1,
        s2: raw.s2,
        s3: raw.s3,
        p: raw.p,
        p_covid: raw.p_covid,
        r: raw.r,
        reward_b: raw.reward_b.filter(|_| raw.phi.is_some()),
        phi: raw.phi.filter(|_| raw.reward_b.is_some()),
        tau,
        delta10: raw.delta10,
        delta12: raw.delta12,
        delta21: raw.delta21,
        delta23: raw.delta23,
        delta32: raw.delta32,
        delta34: raw.delta34,
        beta1: raw.beta1,
        beta2: raw.beta2,
        beta3: raw.beta3,
        sigma1: raw.sigma1,
        sigma2: raw.sigma2,
        sigma3: raw.sigma3,
        gamma: raw.gamma,
        t: raw.t,
        death_weight: raw.death_weight.unwrap_or(1.0),
    };
    params.check_invariants()?;
    Ok(params)
}

impl PeriodParams {
    pub fn lambda(&self) -> f64 {
        self.lambda1 + self.lambda2 + self.lambda3
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        PeriodParams {
            gamma,
            ..self.clone()
        }
    }

    /// Outflow rates of the four repositories (h1, h2c, h2n, h3).
    pub(crate) fn k1(&self) -> f64 {
        self.sigma1 + self.delta12 + self.delta10 + self.beta1
    }

    pub(crate) fn k2(&self) -> f64 {
        self.sigma2 + self.delta23 + self.delta21 + self.beta2
    }

    pub(crate) fn k3(&self) -> f64 {
        self.delta32 + self.delta34 + self.sigma3 + self.beta3
    }

    pub fn check_invariants(&self) -> Result<(), ParamError> {
        let rates = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("r", self.r),
            ("delta10", self.delta10),
            ("delta12", self.delta12),
            ("delta21", self.delta21),
            ("delta23", self.delta23),
            ("delta32", self.delta32),
            ("delta34", self.delta34),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("sigma3", self.sigma3),
            ("gamma", self.gamma),
            ("tau_e1", self.tau.e1),
            ("tau_e2", self.tau.e2),
            ("tau_e3", self.tau.e3),
            ("tau_c", self.tau.c),
            ("tau_n", self.tau.n),
            ("death_weight", self.death_weight),
        ];
        for (name, v) in rates {
            check(v.is_finite() && v >= 0.0, &format!("{name} >= 0"))?;
        }
        check((0.0..=1.0).contains(&self.p), "p in [0,1]")?;
        check((0.0..=1.0).contains(&self.p_covid), "p_covid in [0,1]")?;
        check(self.s1 < 1.0, "s1 < 1")?;
        check(self.s1 > self.s2, "s1 > s2")?;
        check(self.s2 > self.s3, "s2 > s3")?;
        check(self.s3 > 0.0, "s3 > 0")?;
        check(self.tau.e1 <= self.tau.e2, "tau_e1 <= tau_e2")?;
        check(self.tau.e2 <= self.tau.e3, "tau_e2 <= tau_e3")?;
        check(self.delta10 + self.delta12 <= 1.0, "delta10 + delta12 <= 1")?;
        check(self.delta21 + self.delta23 <= 1.0, "delta21 + delta23 <= 1")?;
        check(self.delta32 + self.delta34 <= 1.0, "delta32 + delta34 <= 1")?;
        check(self.t.is_finite() && self.t > 0.0, "t > 0")?;
        Ok(())
    }

    /// Inverse of [`validate_params`]: a scenario record that re-validates to `self`.
    pub fn to_input(&self) -> PeriodInput {
        let derived = self.reward_b.is_some() && self.phi.is_some();
        let tau = |v: f64| if derived { None } else { Some(v) };
        PeriodInput {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            s1: self.s1,
            s2: self.s2,
            s3: self.s3,
            p: self.p,
            p_covid: self.p_covid,
            r: self.r,
            reward_b: self.reward_b,
            phi: self.phi,
            tau_e1: tau(self.tau.e1),
            tau_e2: tau(self.tau.e2),
            tau_e3: tau(self.tau.e3),
            tau_c: tau(self.tau.c),
            tau_n: tau(self.tau.n),
            delta10: self.delta10,
            delta12: self.delta12,
            delta21: self.delta21,
            delta23: self.delta23,
            delta32: self.delta32,
            delta34: self.delta34,
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            sigma3: self.sigma3,
            gamma: self.gamma,
            t: self.t,
            death_weight: (self.death_weight != 1.0).then_some(self.death_weight),
        }
    }
}

/// Service rates at the four facilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mu_e1: f64,
    pub mu_e23: f64,
    pub mu_c: f64,
    pub mu_n: f64,
}

impl Allocation {
    pub fn new(mu_e1: f64, mu_e23: f64, mu_c: f64, mu_n: f64) -> Self {
        Allocation {
            mu_e1,
            mu_e23,
            mu_c,
            mu_n,
        }
    }

    pub fn total(&self) -> f64 {
        self.mu_e1 + self.mu_e23 + self.mu_c + self.mu_n
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.mu_e1, self.mu_e23, self.mu_c, self.mu_n]
    }
}

/// Queue lengths, repository masses and efficiencies at a fluid equilibrium.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StationaryState {
    pub q_e1: f64,
    pub q_e23: f64,
    pub q_c: f64,
    pub q_n: f64,
    pub h1: f64,
    pub h2c: f64,
    pub h2n: f64,
    pub h3: f64,
    pub a_e1: f64,
    pub a_e2: f64,
    pub a_e3: f64,
    pub a_c: f64,
    pub a_n: f64,
}

impl StationaryState {
    pub const COMPONENTS: [&'static str; 13] = [
        "q_e1", "q_e23", "q_c", "q_n", "h1", "h2c", "h2n", "h3", "a_e1", "a_e2", "a_e3", "a_c", "a_n",
    ];

    pub fn to_array(&self) -> [f64; 13] {
        [
            self.q_e1, self.q_e23, self.q_c, self.q_n, self.h1, self.h2c, self.h2n, self.h3,
            self.a_e1, self.a_e2, self.a_e3, self.a_c, self.a_n,
        ]
    }

    pub fn efficiencies(&self) -> [f64; 5] {
        [self.a_e1, self.a_e2, self.a_e3, self.a_c, self.a_n]
    }
}

/// Demands seen by each facility for a given state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Demands {
    /// HPED inflow.
    pub i1: f64,
    /// Covid and non-Covid s2 arrivals including re-entries.
    pub a_c: f64,
    pub a_n: f64,
    /// s2 and s3 demand at the LPED.
    pub d2: f64,
    pub d3: f64,
    /// Demand reaching each clinic.
    pub dc: f64,
    pub dn: f64,
}

pub(crate) fn demands(state: &StationaryState, params: &PeriodParams) -> Demands {
    let p = params.p;
    let i1 = params.lambda1 + params.beta1 * state.h1 + params.delta21 * (state.q_c + state.q_n);
    let a_c = params.p_covid * params.lambda2 + params.beta2 * state.h2c;
    let a_n = (1.0 - params.p_covid) * params.lambda2 + params.beta2 * state.h2n;
    let d2 = (1.0 - p) * (a_c + a_n) + p * a_c * (1.0 - state.a_c) + p * a_n * (1.0 - state.a_n);
    let d3 = params.lambda3 + params.beta3 * state.h3;
    let dc = p * a_c + (1.0 - p) * a_c * (1.0 - state.a_e2);
    let dn = p * a_n + (1.0 - p) * a_n * (1.0 - state.a_e2);
    Demands {
        i1,
        a_c,
        a_n,
        d2,
        d3,
        dc,
        dn,
    }
}

fn served(q: f64, mu: f64, admitted: f64) -> f64 {
    if q > 0.0 {
        mu
    } else {
        mu.min(admitted)
    }
}

/// The eight time derivatives (q_e1, q_e23, q_c, q_n, h1, h2c, h2n, h3) at `state`.
pub fn flow_residuals(state: &StationaryState, alloc: &Allocation, params: &PeriodParams) -> [f64; 8] {
    let d = demands(state, params);
    let s = state;
    let adm1 = s.a_e1 * d.i1;
    let adm23 = s.a_e2 * d.d2 + s.a_e3 * d.d3;
    let adm_c = s.a_c * d.dc;
    let adm_n = s.a_n * d.dn;
    let spill_c = d.a_c * (1.0 - s.a_e2) * (1.0 - s.a_c);
    let spill_n = d.a_n * (1.0 - s.a_e2) * (1.0 - s.a_n);
    let h2 = s.h2c + s.h2n;
    let pc = params.p_covid;
    [
        adm1 - served(s.q_e1, alloc.mu_e1, adm1),
        adm23 - served(s.q_e23, alloc.mu_e23, adm23),
        adm_c - served(s.q_c, alloc.mu_c, adm_c),
        adm_n - served(s.q_n, alloc.mu_n, adm_n),
        d.i1 * (1.0 - s.a_e1) + params.delta21 * h2 - params.k1() * s.h1,
        spill_c + pc * (params.delta32 * s.h3 + params.delta12 * s.h1) - params.k2() * s.h2c,
        spill_n + (1.0 - pc) * (params.delta32 * s.h3 + params.delta12 * s.h1) - params.k2() * s.h2n,
        d.d3 * (1.0 - s.a_e3) + params.delta23 * h2 - params.k3() * s.h3,
    ]
}

pub fn max_residual(state: &StationaryState, alloc: &Allocation, params: &PeriodParams) -> f64 {
    flow_residuals(state, alloc, params)
        .iter()
        .fold(0.0, |m, r| m.max(r.abs()))
}

/// Rate of patients leaving the system, weighted by severity.
pub fn period_objective(state: &StationaryState, params: &PeriodParams) -> f64 {
    params.death_weight * state.h1 * params.delta10
        + params.s1 * params.sigma1 * state.h1
        + params.s2 * params.sigma2 * (state.h2c + state.h2n)
        + params.s3 * params.sigma3 * state.h3
}


#[cfg(test)]
mod tests {
    use super::fixtures::example1;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn derived(b: f64, phi: f64, r: f64, s: (f64, f64, f64)) -> PeriodInput {
        PeriodInput {
            s1: s.0,
            s2: s.1,
            s3: s.2,
            r,
            reward_b: Some(b),
            phi: Some(phi),
            t: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn thresholds_from_reward_and_phi() {
        let p = validate_params(&derived(0.7 / 3.0, 0.7, 0.2, (0.5, 0.25, 0.125))).unwrap();
        assert_abs_diff_eq!(p.tau.e1, 0.3333, epsilon = 1e-4);
        assert_abs_diff_eq!(p.tau.e2, 0.5185, epsilon = 1e-4);
        assert_abs_diff_eq!(p.tau.e3, 0.7179, epsilon = 1e-4);
        assert_abs_diff_eq!(p.tau.c, 1.3333, epsilon = 1e-4);
        assert_abs_diff_eq!(p.tau.n, 1.3333, epsilon = 1e-4);
    }

    #[test]
    fn rounded_reward_gives_same_thresholds_to_three_places() {
        let p = validate_params(&derived(0.2333, 0.7, 0.2, (0.5, 0.25, 0.125))).unwrap();
        assert_abs_diff_eq!(p.tau.e1, 0.3333, epsilon = 1e-3);
        assert_abs_diff_eq!(p.tau.c, 1.3333, epsilon = 1e-3);
    }

    #[test]
    fn equal_severities_without_risk() {
        // s must be strictly decreasing, so check the derivation directly.
        let t = Thresholds::derive(1.0, 1.0, 0.0, [0.5, 0.5, 0.5]);
        for v in [t.e1, t.e2, t.e3, t.c, t.n] {
            assert_eq!(v, 2.0);
        }
    }

    #[test]
    fn severity_order_is_enforced() {
        let err = validate_params(&derived(1.0, 1.0, 0.2, (0.25, 0.5, 0.125))).unwrap_err();
        assert_eq!(err, ParamError::InvariantViolation("s1 > s2".into()));
    }

    #[test]
    fn thresholds_required() {
        let mut raw = derived(1.0, 1.0, 0.2, (0.5, 0.25, 0.125));
        raw.phi = None;
        assert_eq!(validate_params(&raw).unwrap_err(), ParamError::MissingThresholds);
    }

    #[test]
    fn transition_rows_bounded() {
        let mut raw = example1(1.0).to_input();
        raw.delta10 = 0.8;
        raw.delta12 = 0.3;
        let err = validate_params(&raw).unwrap_err();
        assert_eq!(err, ParamError::InvariantViolation("delta10 + delta12 <= 1".into()));
    }

    #[test]
    fn input_round_trip() {
        let p = example1(0.75);
        assert_eq!(validate_params(&p.to_input()).unwrap(), p);
    }

    #[test]
    fn empty_system_has_zero_residual() {
        let mut p = example1(1.0);
        p.lambda1 = 0.0;
        p.lambda2 = 0.0;
        p.lambda3 = 0.0;
        let r = flow_residuals(&StationaryState::default(), &Allocation::default(), &p);
        assert_eq!(r, [0.0; 8]);
    }

    #[test]
    fn objective_of_empty_repositories_is_zero() {
        let s = StationaryState {
            q_e1: 0.3,
            a_e1: 0.5,
            ..Default::default()
        };
        assert_eq!(period_objective(&s, &example1(1.0)), 0.0);
    }

    #[test]
    fn objective_weights() {
        let p = example1(1.0);
        let s = StationaryState {
            h1: 1.0,
            h2c: 2.0,
            h2n: 3.0,
            h3: 4.0,
            ..Default::default()
        };
        let expected = 0.3 + 0.5 * 0.2 + 0.25 * 0.2 * 5.0 + 0.125 * 0.2 * 4.0;
        assert_abs_diff_eq!(period_objective(&s, &p), expected, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn thresholds_monotone(b in 0.01f64..5.0, phi in 0.05f64..1.0, r in 0.0f64..2.0,
                               s3 in 0.01f64..0.3, g2 in 0.01f64..0.3, g1 in 0.01f64..0.3) {
            let s = (s3 + g2 + g1, s3 + g2, s3);
            prop_assume!(s.0 < 1.0);
            let p = validate_params(&derived(b, phi, r, s)).unwrap();
            prop_assert!(p.tau.e1 <= p.tau.e2 && p.tau.e2 <= p.tau.e3);
            prop_assert_eq!(p.tau.c, p.tau.n);
        }

        #[test]
        fn objective_zero_iff_repositories_empty(h in proptest::array::uniform4(0.0f64..2.0),
                                                 empty in proptest::array::uniform4(any::<bool>())) {
            let h: Vec<f64> = h.iter().zip(empty).map(|(v, e)| if e { 0.0 } else { *v }).collect();
            let s = StationaryState { h1: h[0], h2c: h[1], h2n: h[2], h3: h[3], ..Default::default() };
            let obj = period_objective(&s, &example1(1.0));
            prop_assert!(obj >= 0.0);
            prop_assert_eq!(obj == 0.0, h.iter().all(|v| *v == 0.0));
        }
    }
}
