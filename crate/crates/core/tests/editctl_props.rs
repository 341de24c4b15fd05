use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use udainv_core::editctl::{
    apply_edit, attribute_probe, ganspace_directions, interfacegan_direction,
};
use udainv_core::nets::{GeneratorSpec, LatentCode};

fn latents(n: usize, seed: u64) -> Vec<LatentCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| LatentCode((0..8).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn directions_are_unit_vectors(seed in any::<u64>(), axis in 0usize..8, k in 1usize..8) {
        let ws = latents(60, seed);
        let labels: Vec<bool> = ws.iter().map(|w| w.0[axis] > 0.0).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let d = interfacegan_direction(&ws, &labels, "a").unwrap();
            prop_assert!((norm(&d.vector) - 1.0).abs() < 1e-10);
        }
        for d in ganspace_directions(&ws, k).unwrap() {
            prop_assert!((norm(&d.vector) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_strength_is_bit_identical(w in prop::collection::vec(-3.0f64..3.0, 8), seed in any::<u64>()) {
        let g = GeneratorSpec::default();
        let w = LatentCode(w);
        let dir = ganspace_directions(&latents(40, seed), 1).unwrap().remove(0);
        let (w0, img) = apply_edit(&g, &w, &dir, 0.0).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&w0.0), bits(&w.0));
        prop_assert_eq!(bits(img.pixels()), bits(g.generate(&w).unwrap().pixels()));
    }
}

/// A boundary on the sign of w0 recovers the first axis for every seed, and
/// sweeping along it moves the position probe monotonically.
#[test]
fn boundary_direction_is_stable_and_monotone() {
    let g = GeneratorSpec::default();
    for seed in 0..5 {
        let ws = latents(1000, seed);
        let labels: Vec<bool> = ws.iter().map(|w| w.0[0] > 0.0).collect();
        let d = interfacegan_direction(&ws, &labels, "sign_w0").unwrap();
        assert!(d.vector[0] >= 0.95, "seed {seed}: {:?}", d.vector);
        let monotone = latents(100, 100 + seed)
            .iter()
            .filter(|w| {
                let p: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0]
                    .iter()
                    .map(|&a| attribute_probe(&apply_edit(&g, w, &d, a).unwrap().1))
                    .collect();
                p.windows(2).all(|q| q[1] > q[0])
            })
            .count();
        assert!(monotone >= 90, "seed {seed}: {monotone}/100");
    }
}
