use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use refine_rd::prob::{
    gibbs_tilt, logsumexp, mutual_information, relative_entropy, stable_sum, Kernel, LogProb, Matrix, Pmf,
};
use refine_rd::Error;

fn weights(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n)
}

fn pmf_pair() -> impl Strategy<Value = (Pmf, Pmf)> {
    (2usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n).prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3),
            prop::collection::vec(0.01f64..1.0, n),
        )
            .prop_map(|(a, b)| (Pmf::from_weights(a).unwrap(), Pmf::from_weights(b).unwrap()))
    })
}

fn kernel(rows: usize, cols: usize) -> impl Strategy<Value = Kernel> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, cols), rows).prop_map(move |rs| {
        let rows: Vec<Vec<f64>> = rs
            .into_iter()
            .map(|mut r| {
                r[0] += 1e-3;
                Pmf::from_weights(r).unwrap().probs().to_vec()
            })
            .collect();
        Kernel::from_rows(rows).unwrap()
    })
}

/// Independent double-sum for `I(X; Y)`.
fn mutual_information_naive(px: &[f64], k: &Kernel) -> f64 {
    let ny = k.output_size();
    let py: Vec<f64> = (0..ny).map(|y| (0..px.len()).map(|x| px[x] * k.get(x, y)).sum()).collect();
    let mut total = 0.0;
    for x in 0..px.len() {
        for y in 0..ny {
            let j = px[x] * k.get(x, y);
            if j > 0.0 {
                total += j * (k.get(x, y) / py[y]).ln();
            }
        }
    }
    total
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(w in weights(1..20)) {
        let p = Pmf::from_weights(w).unwrap();
        prop_assert!((stable_sum(p.probs().iter().copied()) - 1.0).abs() < 1e-12);
        prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn log_weights_match_linear_weights(w in weights(1..10)) {
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let a = Pmf::from_weights(w).unwrap();
        let b = Pmf::from_log_weights(&lw).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_matches_direct_sum(v in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((logsumexp(&v) - direct).abs() < 1e-10);
    }

    #[test]
    fn logsumexp_is_shift_equivariant(v in prop::collection::vec(-5.0f64..5.0, 1..8), c in -700.0f64..700.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((logsumexp(&shifted) - logsumexp(&v) - c).abs() < 1e-9);
    }

    #[test]
    fn log_prob_addition_matches_linear(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let s = LogProb::from_prob(a).ln_add(LogProb::from_prob(b)).prob();
        prop_assert!((s - (a + b)).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_nonnegative_and_zero_on_diagonal((p, q) in pmf_pair()) {
        prop_assert!(relative_entropy(&p, &q).unwrap() >= 0.0);
        prop_assert!(relative_entropy(&q, &q).unwrap().abs() < 1e-14);
    }

    #[test]
    fn mutual_information_bounds(px in weights(2..5), k in kernel(4, 3)) {
        let px = Pmf::from_weights(px[..px.len().min(4)].to_vec()).unwrap();
        let k = Kernel::from_rows(k.matrix().to_rows()[..px.len()].to_vec()).unwrap();
        let i = mutual_information(&px, &k).unwrap();
        prop_assert!(i >= 0.0);
        prop_assert!(i <= px.entropy() + 1e-12);
        prop_assert!((i - mutual_information_naive(px.probs(), &k)).abs() < 1e-12);
    }

    #[test]
    fn output_marginal_is_a_pmf(px in weights(3..4), k in kernel(3, 4)) {
        let px = Pmf::from_weights(px).unwrap();
        let py = k.output_marginal(&px).unwrap();
        prop_assert!((py.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gibbs_tilt_is_the_variational_minimizer(
        (base, q) in pmf_pair(),
        seed in prop::collection::vec(0.0f64..4.0, 7),
    ) {
        let rho = &seed[..base.len()];
        let (tilted, value) = gibbs_tilt(&base, rho).unwrap();
        let objective = |p: &Pmf| relative_entropy(p, &base).unwrap() + p.mean(rho);
        prop_assert!((objective(&tilted) - value).abs() < 1e-10);
        // Any other distribution does at least as badly.
        if let Ok(d) = relative_entropy(&q, &base) {
            prop_assert!(d + q.mean(rho) >= value - 1e-10);
        }
    }
}

#[test]
fn small_drift_is_renormalized() {
    let p = Pmf::new(vec![0.5, 0.5 + 5e-10]).unwrap();
    assert_abs_diff_eq!(p.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
}

#[test]
fn large_drift_is_rejected() {
    assert!(matches!(Pmf::new(vec![0.5, 0.6]), Err(Error::NotNormalized { .. })));
}

#[test]
fn invalid_entries_are_rejected() {
    assert!(matches!(Pmf::new(vec![]), Err(Error::Empty)));
    assert!(matches!(Pmf::new(vec![1.5, -0.5]), Err(Error::InvalidEntry { index: 1, .. })));
    assert!(matches!(Pmf::new(vec![f64::NAN, 1.0]), Err(Error::InvalidEntry { index: 0, .. })));
}

#[test]
fn divergence_requires_absolute_continuity() {
    let p = Pmf::new(vec![0.5, 0.5]).unwrap();
    let q = Pmf::new(vec![1.0, 0.0]).unwrap();
    assert!(matches!(relative_entropy(&p, &q), Err(Error::AbsoluteContinuityViolation { index: 1 })));
}

#[test]
fn hamming_matrix_and_kernel_shapes() {
    let d = Matrix::hamming(3);
    assert_eq!(d.get(1, 1), 0.0);
    assert_eq!(d.get(0, 2), 1.0);
    assert!(Kernel::from_rows(vec![vec![0.5, 0.5], vec![0.2]]).is_err());
    assert!(Kernel::from_rows(vec![vec![0.5, 0.6]]).is_err());
}

#[test]
fn uniform_binary_mutual_information_through_a_bsc() {
    let px = Pmf::uniform(2);
    let k = Kernel::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
    let h = -(0.1f64 * 0.1f64.ln() + 0.9 * 0.9f64.ln());
    assert_abs_diff_eq!(mutual_information(&px, &k).unwrap(), 2f64.ln() - h, epsilon = 1e-14);
}
