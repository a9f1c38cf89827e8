mod common;

use common::{example1, example2, period};
use pancap::combinations::resolve_fixed;
use pancap::model::max_residual;
use pancap::oracle::{equilibrium, grid_search, simulate_from};
use pancap::single_period::enumerate_all;
use pancap::{classify, period_objective, simulate, solve, verify, Allocation, SimOptions, SolverOptions};
use proptest::prelude::*;

fn sup_distance(a: &[f64; 13], b: &[f64; 13]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn equilibria_classify_uniquely_and_resolve(
        params in period(1.2),
        w in [0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0],
        used in 0.0f64..=1.0,
    ) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-6);
        let scale = used * params.gamma / total;
        let alloc = Allocation::new(w[0] * scale, w[1] * scale, w[2] * scale, w[3] * scale);
        let state = equilibrium(&params, &alloc).unwrap();
        let comb = classify(&state, 1e-7).unwrap();
        let again = resolve_fixed(comb, &params, &alloc).unwrap();
        let d = sup_distance(&state.to_array(), &again.to_array());
        prop_assert!(d < 1e-6, "combination {} off by {d}", comb.id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_states_are_fixed_points_of_the_dynamics(params in period(0.95)) {
        let best = solve(&params, &SolverOptions::default()).unwrap();
        let opts = SimOptions { dt: 1e-3, horizon: 50.0, ..SimOptions::default() };
        let traj = simulate_from(&params, &best.alloc, &best.state, &opts).unwrap();
        let start = best.state.to_array();
        for s in &traj.states {
            let d = sup_distance(&start, &s.to_array());
            prop_assert!(d < 1e-6, "{} drifted by {d}", best.display_label());
        }
    }
}

#[test]
fn halving_the_step_shrinks_the_error_linearly() {
    let params = example1(0.8);
    let alloc = Allocation::new(0.45, 0.05, 0.2, 0.1);
    let exact = equilibrium(&params, &alloc).unwrap().to_array();
    let run = |dt: f64, horizon: f64| {
        let opts = SimOptions { dt, horizon, ..SimOptions::default() };
        let traj = simulate_from(&params, &alloc, &Default::default(), &opts).unwrap();
        traj.states.iter().map(|s| s.to_array()).collect::<Vec<_>>()
    };
    // transient error at a fixed time, where first-order truncation shows
    let horizon = 5.0;
    let coarse = run(2e-2, horizon);
    let fine = run(1e-2, horizon);
    let finer = run(5e-3, horizon);
    let e1 = sup_distance(coarse.last().unwrap(), finer.last().unwrap());
    let e2 = sup_distance(fine.last().unwrap(), finer.last().unwrap());
    assert!(e1 > 0.0 && e2 > 0.0);
    let ratio = e1 / e2;
    assert!((2.0..4.5).contains(&ratio), "ratio {ratio}");
    // and the long-run state does not depend on dt at all
    let long = |dt| {
        let opts = SimOptions { dt, horizon: 400.0, ..SimOptions::default() };
        simulate(&params, &alloc, &opts).unwrap().equilibrium.to_array()
    };
    assert!(sup_distance(&long(1e-2), &exact) < 1e-6);
    assert!(sup_distance(&long(5e-3), &exact) < 1e-6);
}

#[test]
fn example_points_survive_forward_simulation() {
    let opts = SimOptions { dt: 5e-3, horizon: 300.0, ..SimOptions::default() };
    for params in [example1(1.0), example2(1.0)] {
        for c in enumerate_all(&params, &SolverOptions::default()).unwrap() {
            if !c.is_admissible() {
                continue;
            }
            let r = verify(&c, &params, &opts).unwrap();
            assert!(r.max_deviation < 1e-3, "{}: {:?}", c.display_label(), r.flagged);
            assert!(r.oracle_residual < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn grid_search_never_beats_the_solver(params in period(0.95)) {
        let best = solve(&params, &SolverOptions::default()).unwrap();
        let g = grid_search(&params, 40, 200, 5).unwrap();
        prop_assert!(g.objective >= best.objective - 1e-3, "grid {} solver {}", g.objective, best.objective);
        let s = equilibrium(&params, &g.alloc).unwrap();
        prop_assert!(max_residual(&s, &g.alloc, &params) < 1e-6);
        prop_assert!((period_objective(&s, &params) - g.objective).abs() < 1e-12);
    }
}
