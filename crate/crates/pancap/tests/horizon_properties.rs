mod common;

use common::{example1, example3, example4, period};
use pancap::combinations::{classify, resolve_fixed, Candidate, Status, DEFAULT_TOL};
use pancap::multi_period::{best_plan, chain_table, compute_buffers, Buffers};
use pancap::single_period::solve;
use pancap::{greedy_horizon, period_objective, solve_horizon, Allocation, PeriodParams, SolverOptions};
use proptest::prelude::*;

fn horizon(t: f64) -> impl Strategy<Value = Vec<PeriodParams>> {
    prop::collection::vec(period(1.0), 3).prop_map(move |ps| {
        ps.into_iter()
            .map(|mut p| {
                p.t = t;
                p
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn greedy_never_beats_optimal(periods in horizon(5.0)) {
        let opts = SolverOptions::default();
        let g = greedy_horizon(&periods, &opts).unwrap();
        let o = solve_horizon(&periods, &opts).unwrap();
        prop_assert!(g.global_objective >= o.global_objective - 1e-12);
        prop_assert!((o.recomputed_objective() - o.global_objective).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn long_periods_make_greedy_optimal(periods in horizon(1e3)) {
        let opts = SolverOptions::default();
        let g = greedy_horizon(&periods, &opts).unwrap();
        let o = solve_horizon(&periods, &opts).unwrap();
        prop_assert!(g.global_objective - o.global_objective < 1e-3);
    }
}

#[test]
fn long_periods_close_the_gap_on_the_studies() {
    let opts = SolverOptions::default();
    for study in [example3(), example4()] {
        let long: Vec<PeriodParams> = study
            .iter()
            .map(|p| PeriodParams { t: 1e3, ..p.clone() })
            .collect();
        let g = greedy_horizon(&long, &opts).unwrap();
        let o = solve_horizon(&long, &opts).unwrap();
        assert!(g.global_objective - o.global_objective < 1e-3);
    }
}

#[test]
fn plan_is_the_minimum_of_its_chain_table() {
    let opts = SolverOptions::default();
    for study in [example3(), example4()] {
        let table = chain_table(&study, &opts).unwrap();
        let plan = solve_horizon(&study, &opts).unwrap();
        assert!(table.iter().any(|row| row.points() == plan.points()));
        for row in &table {
            assert!(row.global_objective >= plan.global_objective - 1e-12);
            assert!((row.recomputed_objective() - row.global_objective).abs() < 1e-12);
        }
        assert_eq!(best_plan(&table, &opts).unwrap().points(), plan.points());
        let greedy = greedy_horizon(&study, &opts).unwrap();
        assert!(table.iter().any(|row| row.points() == greedy.points()));
    }
}

fn fixed_candidate(template: &Candidate, params: &PeriodParams, alloc: Allocation) -> Candidate {
    let comb = template.combination.combination();
    let state = resolve_fixed(comb, params, &alloc).unwrap();
    Candidate {
        alloc,
        state,
        objective: period_objective(&state, params),
        status: Status::Feasible,
        ..template.clone()
    }
}

fn buffer_vec(b: &Buffers) -> [f64; 4] {
    [b.b1, b.b2c, b.b2n, b.b3]
}

#[test]
fn buffers_respond_linearly_to_allocation_shifts() {
    let params = example1(0.75);
    let base = solve(&params, &SolverOptions::default()).unwrap();
    assert_eq!(base.combination.get(), 12);
    assert!(base.alloc.mu_c > 1e-3);
    // move capacity from the Covid clinic to the non-Covid one
    let shift = |h: f64| {
        let a = base.alloc;
        let alloc = Allocation::new(a.mu_e1, a.mu_e23, a.mu_c - h, a.mu_n + h);
        let c = fixed_candidate(&base, &params, alloc);
        assert_eq!(classify(&c.state, DEFAULT_TOL).unwrap().id.get(), 12);
        buffer_vec(&compute_buffers(&c, &params, DEFAULT_TOL))
    };
    let b0 = shift(0.0);
    let slopes: Vec<[f64; 4]> = [1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&h| {
            let b = shift(h);
            std::array::from_fn(|i| (b[i] - b0[i]) / h)
        })
        .collect();
    for s in &slopes[1..] {
        for i in 0..4 {
            assert!((s[i] - slopes[0][i]).abs() < 1e-7 * (1.0 + slopes[0][i].abs()), "component {i}: {s:?} vs {:?}", slopes[0]);
        }
    }
    assert!(slopes[0].iter().any(|v| v.abs() > 1e-3));
}
