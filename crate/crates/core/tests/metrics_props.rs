use proptest::prelude::*;
use udainv_core::metrics::{frechet_feature_distance, pixel_metrics, psnr_from_mse, ssim};
use udainv_core::nets::Image;

fn image() -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..=1.0, 256).prop_map(|p| Image::new(16, p).unwrap())
}

fn features(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_log_of_mse(a in image(), b in image()) {
        let (mse, psnr) = pixel_metrics(&a, &b).unwrap();
        let direct = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 256.0;
        prop_assert!((mse - direct).abs() <= 1e-15);
        if mse > 0.0 {
            prop_assert!((psnr + 10.0 * mse.log10()).abs() < 1e-9);
        }
        prop_assert_eq!(psnr_from_mse(mse), psnr);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(), b in image()) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_itself(a in features(12), b in features(12)) {
        prop_assert!(frechet_feature_distance(&a, &a).unwrap().abs() <= 1e-8);
        let ab = frechet_feature_distance(&a, &b).unwrap();
        let ba = frechet_feature_distance(&b, &a).unwrap();
        prop_assert!(ab >= -1e-8);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()), "{} {}", ab, ba);
    }

    // A pure shift leaves the covariances equal, so only |Δμ|² remains.
    #[test]
    fn frechet_of_a_shift_is_squared_mean_gap(a in features(10), shift in prop::collection::vec(-2.0f64..2.0, 4)) {
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let want: f64 = shift.iter().map(|s| s * s).sum();
        let got = frechet_feature_distance(&a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * (1.0 + want), "{} vs {}", got, want);
    }
}
