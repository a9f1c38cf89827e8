#![allow(dead_code)]

use pancap::{validate_params, PeriodInput, PeriodParams};
use proptest::prelude::*;

/// Example 1 with the calibrated thresholds.
pub fn example1(gamma: f64) -> PeriodParams {
    validate_params(&PeriodInput {
        lambda1: 0.6,
        lambda2: 1.2,
        lambda3: 0.2,
        s1: 0.5,
        s2: 0.25,
        s3: 0.125,
        p: 0.7,
        p_covid: 0.85,
        r: 0.2,
        tau_e1: Some(1.0 / 3.0),
        tau_e2: Some(0.7 / 3.0 / 0.45),
        tau_e3: Some(0.7 / 3.0 / 0.325),
        tau_c: Some(4.0 / 3.0),
        tau_n: Some(4.0 / 3.0),
        delta10: 0.3,
        delta21: 0.3,
        delta32: 0.2,
        delta12: 0.3,
        delta23: 0.3,
        delta34: 0.2,
        beta1: 0.25,
        beta2: 0.25,
        beta3: 0.25,
        sigma1: 0.2,
        sigma2: 0.2,
        sigma3: 0.2,
        gamma,
        t: 1.0,
        ..Default::default()
    })
    .unwrap()
}

/// Same as [`example1`] with Example 2's arrival mix and transition rates.
pub fn example2(gamma: f64) -> PeriodParams {
    let mut p = example1(gamma);
    p.lambda1 = 0.4;
    p.lambda2 = 1.2;
    p.lambda3 = 0.4;
    p.p_covid = 0.4;
    p.delta10 = 0.1;
    p.delta21 = 0.1;
    p.delta32 = 0.1;
    p.delta12 = 0.4;
    p.delta23 = 0.4;
    p.delta34 = 0.4;
    p
}

prop_compose! {
    /// A random valid period, with capacity drawn relative to total arrivals.
    pub fn period(max_load: f64)(
        lambda in [0.05f64..2.0, 0.05f64..2.0, 0.05f64..2.0],
        s1 in 0.3f64..0.95,
        shrink in [0.2f64..0.9, 0.2f64..0.9],
        p in 0.0f64..=1.0,
        p_covid in 0.0f64..=1.0,
        r in 0.0f64..0.5,
        reward_b in 0.1f64..1.0,
        phi in 0.2f64..=1.0,
        delta in [0.02f64..0.45, 0.02f64..0.45, 0.02f64..0.45, 0.02f64..0.45, 0.02f64..0.45, 0.02f64..0.45],
        beta in [0.05f64..0.4, 0.05f64..0.4, 0.05f64..0.4],
        sigma in [0.05f64..0.4, 0.05f64..0.4, 0.05f64..0.4],
        load in 0.02f64..max_load,
    ) -> PeriodParams {
        let s2 = s1 * shrink[0];
        validate_params(&PeriodInput {
            lambda1: lambda[0],
            lambda2: lambda[1],
            lambda3: lambda[2],
            s1,
            s2,
            s3: s2 * shrink[1],
            p,
            p_covid,
            r,
            reward_b: Some(reward_b),
            phi: Some(phi),
            delta10: delta[0],
            delta21: delta[1],
            delta32: delta[2],
            delta12: delta[3],
            delta23: delta[4],
            delta34: delta[5],
            beta1: beta[0],
            beta2: beta[1],
            beta3: beta[2],
            sigma1: sigma[0],
            sigma2: sigma[1],
            sigma3: sigma[2],
            gamma: load * (lambda[0] + lambda[1] + lambda[2]),
            t: 1.0,
            ..Default::default()
        })
        .unwrap()
    }
}

/// One period of the three-period studies; thresholds from B = 0.5, φ = 0.6.
pub fn study_period(lambda: [f64; 3], p: f64, p_covid: f64, r: f64, delta: [f64; 6], gamma: f64) -> PeriodParams {
    validate_params(&PeriodInput {
        lambda1: lambda[0],
        lambda2: lambda[1],
        lambda3: lambda[2],
        s1: 0.75,
        s2: 0.5,
        s3: 0.25,
        p,
        p_covid,
        r,
        reward_b: Some(0.5),
        phi: Some(0.6),
        delta10: delta[0],
        delta21: delta[1],
        delta32: delta[2],
        delta12: delta[3],
        delta23: delta[4],
        delta34: delta[5],
        beta1: 0.2,
        beta2: 0.2,
        beta3: 0.2,
        sigma1: 0.125,
        sigma2: 0.125,
        sigma3: 0.125,
        gamma,
        t: 5.0,
        ..Default::default()
    })
    .unwrap()
}

const D1: [f64; 6] = [0.2, 0.2, 0.2, 0.1, 0.1, 0.1];
const D2: [f64; 6] = [0.1; 6];
const D3: [f64; 6] = [0.1, 0.1, 0.1, 0.2, 0.2, 0.2];

pub fn example3() -> Vec<PeriodParams> {
    vec![
        study_period([0.5, 0.5, 1.5], 0.25, 0.2, 0.2, D1, 1.75),
        study_period([2.0, 1.4, 0.6], 0.7, 0.8, 0.4, D2, 2.0),
        study_period([1.4, 1.05, 1.05], 0.7, 0.6, 0.4, D3, 3.0),
    ]
}

pub fn example4() -> Vec<PeriodParams> {
    vec![
        study_period([1.8, 1.6, 0.6], 0.25, 0.85, 0.6, D1, 2.0),
        study_period([0.8, 2.4, 0.8], 0.7, 0.7, 0.4, D3, 2.5),
        study_period([0.63, 0.63, 1.89], 0.7, 0.6, 0.2, D3, 3.0),
    ]
}
