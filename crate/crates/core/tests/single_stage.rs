use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use refine_rd::oracles::{analytic_rd, binary_entropy, binary_hamming_dual, brute_force_dual, AnalyticKind};
use refine_rd::prob::{Matrix, Pmf};
use refine_rd::single::{
    blahut_step, rd_envelope, run_blahut, sigma_bar, solve_at_distortion, sweep, tilted_information,
    verify_optimality, BlahutState, RdProblem, RunOptions, SlopeGrid,
};
use refine_rd::Error;

fn binary(p: f64) -> RdProblem {
    RdProblem::new(Pmf::new(vec![1.0 - p, p]).unwrap(), Matrix::hamming(2)).unwrap()
}

fn instance() -> impl Strategy<Value = (RdProblem, f64)> {
    (2usize..5, 2usize..5).prop_flat_map(|(nx, ny)| {
        (
            prop::collection::vec(0.05f64..1.0, nx),
            prop::collection::vec(0.0f64..2.0, nx * ny),
            0.1f64..6.0,
        )
            .prop_map(move |(w, d, lambda)| {
                let p = RdProblem::new(Pmf::from_weights(w).unwrap(), Matrix::new(nx, ny, d).unwrap()).unwrap();
                (p, lambda)
            })
    })
}

#[test]
fn sigma_bar_example() {
    let s = sigma_bar(&binary(0.5), 9f64.ln(), &Pmf::uniform(2)).unwrap();
    assert_abs_diff_eq!(s[0], 5.0 / 9.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s[1], 5.0 / 9.0, epsilon = 1e-15);
}

#[test]
fn uniform_binary_is_a_fixed_point() {
    let p = binary(0.5);
    let state = BlahutState::initial(&p, 9f64.ln(), &Pmf::uniform(2)).unwrap();
    let next = blahut_step(&p, &state).unwrap();
    assert_abs_diff_eq!(next.py.get(0), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(next.f_value, (9.0f64 / 5.0).ln(), epsilon = 1e-14);
    assert!(next.gap.abs() < 1e-15);
}

#[test]
fn rate_matches_binary_formula_along_a_sweep() {
    let p = binary(0.3);
    let lambdas = SlopeGrid {
        lo: 0.5,
        hi: 6.0,
        count: 12,
        geometric: true,
    }
    .values()
    .unwrap();
    let opts = RunOptions {
        delta: 1e-11,
        ..RunOptions::default()
    };
    for run in sweep(&p, &lambdas, &opts).unwrap() {
        assert_abs_diff_eq!(run.dual.f_value, binary_hamming_dual(0.3, run.dual.lambda), epsilon = 1e-9);
        let d = run.dual.distortion;
        let exact = analytic_rd(AnalyticKind::BinaryHamming { p: 0.3 }, d).unwrap().value;
        assert_abs_diff_eq!(run.dual.rate, exact, epsilon = 1e-6);
    }
}

#[test]
fn envelope_reconstructs_binary_curve() {
    let p = binary(0.2);
    let lambdas = SlopeGrid {
        lo: 0.2,
        hi: 8.0,
        count: 60,
        geometric: true,
    }
    .values()
    .unwrap();
    let duals: Vec<_> = sweep(&p, &lambdas, &RunOptions::default())
        .unwrap()
        .into_iter()
        .map(|r| r.dual)
        .collect();
    let curve = rd_envelope(&duals).unwrap();
    assert!(curve.is_convex_nonincreasing(1e-9));
    for d in [0.02, 0.05, 0.1, 0.15] {
        let exact = binary_entropy(0.2) - binary_entropy(d);
        let est = curve.evaluate(d);
        // A lower envelope of supporting lines: never above, close on a dense grid.
        assert!(est <= exact + 1e-8, "d = {d}: {est} > {exact}");
        assert!(exact - est < 5e-3, "d = {d}: {est} vs {exact}");
    }
    assert_abs_diff_eq!(curve.evaluate(0.25), 0.0, epsilon = 1e-12);
}

#[test]
fn envelope_needs_two_slopes() {
    let run = run_blahut(&binary(0.2), 2.0, &Pmf::uniform(2), &RunOptions::default()).unwrap();
    assert!(matches!(rd_envelope(&[run.dual]), Err(Error::InsufficientSlopes { got: 1 })));
}

#[test]
fn solve_at_distortion_hits_target() {
    let p = binary(0.35);
    let s = solve_at_distortion(&p, 0.1, &RunOptions::default()).unwrap();
    assert_abs_diff_eq!(s.run.dual.distortion, 0.1, epsilon = 1e-8);
    assert_abs_diff_eq!(s.lambda, 9f64.ln(), epsilon = 1e-5);
    assert!(matches!(solve_at_distortion(&p, 0.5, &RunOptions::default()), Err(Error::OutOfRange(_))));
}

#[test]
fn tilted_information_requires_convergence() {
    let p = binary(0.2);
    let opts = RunOptions {
        max_iters: 1,
        ..RunOptions::default()
    };
    let run = run_blahut(&p, 2.0, &Pmf::new(vec![0.9, 0.1]).unwrap(), &opts).unwrap();
    assert!(!run.dual.converged);
    assert!(matches!(
        tilted_information(&p, &run.dual, run.final_state(), 0.1),
        Err(Error::NotConverged { .. })
    ));
}

#[test]
fn tilted_information_of_skewed_binary() {
    // For a binary Hamming source j(x) = ln 1/P_X(x) - h(d).
    let p = binary(0.2);
    let s = solve_at_distortion(&p, 0.1, &RunOptions { delta: 1e-12, ..RunOptions::default() }).unwrap();
    let j = tilted_information(&p, &s.run.dual, s.run.final_state(), 0.1).unwrap();
    assert_abs_diff_eq!(j.mean(p.px()), binary_entropy(0.2) - binary_entropy(0.1), epsilon = 1e-8);
    for (x, v) in j.values.iter().enumerate() {
        let px = p.px().get(x);
        assert_abs_diff_eq!(*v, -px.ln() - binary_entropy(0.1), epsilon = 1e-7);
    }
    assert!(j.variance(p.px()) > 0.0);
}

#[test]
fn unsupported_start_is_rejected() {
    let p = binary(0.2);
    assert!(BlahutState::initial(&p, 1.0, &Pmf::point_mass(2, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_trace_is_nonincreasing((p, lambda) in instance()) {
        let opts = RunOptions { max_iters: 200, delta: 1e-13, record_states: true };
        let run = run_blahut(&p, lambda, &Pmf::uniform(p.num_outputs()), &opts).unwrap();
        for w in run.f_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        prop_assert_eq!(run.states.len(), run.f_trace.len() + 1);
    }

    #[test]
    fn weak_duality_against_grid((p, lambda) in instance()) {
        prop_assume!(p.num_inputs() <= 3 && p.num_outputs() <= 3);
        let run = run_blahut(&p, lambda, &Pmf::uniform(p.num_outputs()), &RunOptions::default()).unwrap();
        let grid = brute_force_dual(&p, lambda, 200).unwrap();
        // The grid minimizes over a subset, so it can only sit above the optimum.
        prop_assert!(run.dual.lower_value() <= grid.value + 1e-9);
    }

    #[test]
    fn lines_lie_below_the_rate_of_any_point((p, lambda) in instance()) {
        let run = run_blahut(&p, lambda, &Pmf::uniform(p.num_outputs()), &RunOptions::default()).unwrap();
        // F(λ) - λ d ≤ R(d) ≤ I(X;Y) for the test channel at distortion d.
        prop_assert!(run.dual.lower_value() - lambda * run.dual.distortion <= run.dual.rate + 1e-8);
    }

    #[test]
    fn envelope_is_convex_and_nonincreasing((p, _l) in instance()) {
        let lambdas: Vec<f64> = (0..15).map(|i| 0.1 * 1.4f64.powi(i)).collect();
        let duals: Vec<_> = sweep(&p, &lambdas, &RunOptions::default())
            .unwrap()
            .into_iter()
            .map(|r| r.dual)
            .collect();
        let curve = rd_envelope(&duals).unwrap();
        prop_assert!(curve.is_convex_nonincreasing(1e-9));
        let ds: Vec<f64> = (0..40).map(|i| p.d_min() + (p.d_max() - p.d_min()) * i as f64 / 39.0).collect();
        let vals: Vec<f64> = ds.iter().map(|&d| curve.evaluate(d)).collect();
        for w in vals.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(vals.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn converged_runs_verify((p, lambda) in instance()) {
        let run = run_blahut(&p, lambda, &Pmf::uniform(p.num_outputs()), &RunOptions::default()).unwrap();
        if run.dual.converged {
            prop_assert!(verify_optimality(&p, &run.dual, run.final_state()).unwrap().passed);
        }
    }
}
