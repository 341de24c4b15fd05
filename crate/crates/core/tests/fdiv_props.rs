use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use udainv_core::fdiv::{
    closed_form_gaussian_divergence, conjugate_numeric_oracle, nwj_estimate, FDivergence,
    GaussianSpec,
};

fn divergence() -> impl Strategy<Value = FDivergence> {
    prop::sample::select(FDivergence::ALL.to_vec())
}

/// A point strictly inside the conjugate domain, as (lo, hi) fractions.
fn inside(div: FDivergence, u: f64) -> f64 {
    match div {
        FDivergence::KL | FDivergence::PearsonChi2 => -3.0 + 6.0 * u,
        FDivergence::JS => -3.0 + (3.0 + std::f64::consts::LN_2 - 0.05) * u,
        FDivergence::TotalVariation => -0.5 + u,
    }
}

#[test]
fn phi_vanishes_at_one_with_tabulated_slope() {
    for div in FDivergence::ALL {
        assert_eq!(div.phi(1.0).unwrap(), 0.0, "{div}");
    }
    assert_eq!(FDivergence::KL.phi_prime(1.0).unwrap(), 1.0);
    assert_eq!(FDivergence::JS.phi_prime(1.0).unwrap(), 0.0);
    assert_eq!(FDivergence::PearsonChi2.phi_prime(1.0).unwrap(), 0.0);
    assert_eq!(FDivergence::TotalVariation.phi_prime(1.0).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_convex(div in divergence(), a in 0.0f64..10.0, b in 0.0f64..10.0, l in 0.0f64..1.0) {
        let mid = div.phi(l * a + (1.0 - l) * b).unwrap();
        let chord = l * div.phi(a).unwrap() + (1.0 - l) * div.phi(b).unwrap();
        prop_assert!(mid <= chord + 1e-12 * (1.0 + chord.abs()), "{} {} > {}", div, mid, chord);
    }

    #[test]
    fn conjugate_dominates_identity(div in divergence(), u in 0.0f64..1.0) {
        let t = inside(div, u);
        prop_assert!(div.conjugate(t).unwrap() >= t - 1e-12);
    }

    #[test]
    fn conjugate_matches_grid_supremum(div in divergence(), u in 0.0f64..1.0) {
        let t = inside(div, u);
        let o = conjugate_numeric_oracle(div, t, 0.0, 40.0, 400_001).unwrap();
        prop_assert!((div.conjugate(t).unwrap() - o.value).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Any witness gives a lower bound: never above the truth by 3 SE.
    #[test]
    fn witnesses_never_beat_the_divergence(
        div in prop::sample::select(vec![FDivergence::KL, FDivergence::PearsonChi2]),
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let p = GaussianSpec::new(0.0, 1.0).unwrap();
        let q = GaussianSpec::new(0.7, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = p.sample(20_000, &mut rng);
        let sq = q.sample(20_000, &mut rng);
        let est = nwj_estimate(div, &sp, &sq, |x| a + b * x.tanh()).unwrap();
        let truth = closed_form_gaussian_divergence(div, &p, &q);
        prop_assert!(est.value <= truth + 3.0 * est.std_error, "{} {:?} vs {}", div, est, truth);
    }

    #[test]
    fn bounded_witnesses_stay_below_for_every_divergence(
        div in divergence(),
        u in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let p = GaussianSpec::new(0.0, 1.0).unwrap();
        let q = GaussianSpec::new(0.5, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = p.sample(20_000, &mut rng);
        let sq = q.sample(20_000, &mut rng);
        let c = inside(div, u);
        let est = nwj_estimate(div, &sp, &sq, move |x| if x < 0.0 { c } else { inside(div, 0.5) }).unwrap();
        let truth = closed_form_gaussian_divergence(div, &p, &q);
        prop_assert!(est.value <= truth + 3.0 * est.std_error + 1e-9, "{} {:?} vs {}", div, est, truth);
    }
}
