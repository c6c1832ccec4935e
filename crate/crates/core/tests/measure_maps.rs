use gmcweld::gmc::build_measure;
use gmcweld::homeo::{build_homeomorphism, Orientation};
use gmcweld::whitenoise::{sample_field_stack, StackSpec};
use num_complex::Complex64;
use proptest::prelude::*;

fn measure(seed: u64, gamma: f64) -> gmcweld::gmc::MeasureSample {
    let stack = sample_field_stack(StackSpec::new(128, 0.25, 3).h_only(), seed).unwrap();
    build_measure(&stack, gamma, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cdf_is_a_monotone_bijection(seed in any::<u64>(), gamma in 0.0f64..1.2, xs in prop::collection::vec(0.0f64..1.0, 2..20)) {
        let tau = measure(seed, gamma);
        prop_assert_eq!(tau.cdf(0.0), 0.0);
        prop_assert!((tau.cdf(1.0) - 1.0).abs() < 1e-15);
        let mut xs = xs;
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in xs.windows(2) {
            prop_assert!(tau.cdf(w[0]) <= tau.cdf(w[1]));
        }
        for &x in &xs {
            prop_assert!((tau.inverse_cdf(tau.cdf(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_mass_is_additive(seed in any::<u64>(), a in -1.0f64..1.0, l1 in 0.0f64..0.5, l2 in 0.0f64..0.5) {
        let tau = measure(seed, 0.7);
        let whole = tau.circle_mass(a, a + l1 + l2);
        let parts = tau.circle_mass(a, a + l1) + tau.circle_mass(a + l1, a + l1 + l2);
        prop_assert!((whole - parts).abs() < 1e-12 * tau.total());
    }

    #[test]
    fn psi_is_a_degree_one_lift(seed in any::<u64>(), x in -2.0f64..2.0, dx in 1e-6f64..0.5) {
        let h = build_homeomorphism(&measure(seed, 0.6), Orientation::Upper).unwrap();
        prop_assert!(h.psi(x + dx) > h.psi(x));
        prop_assert!((h.psi(x + 1.0) - h.psi(x) - 1.0).abs() < 1e-12);
        prop_assert!((h.psi_inverse(h.psi(x)) - x).abs() < 1e-11);
    }

    #[test]
    fn extension_inverts(seed in any::<u64>(), x in 0.0f64..1.0, y in 0.01f64..0.6, lower in any::<bool>()) {
        let o = if lower { Orientation::Lower } else { Orientation::Upper };
        let h = build_homeomorphism(&measure(seed, 0.4), o).unwrap();
        let z = Complex64::new(x, if lower { -y } else { y });
        let back = h.extension_inverse(h.extension(z).unwrap()).unwrap();
        prop_assert!((back - z).norm() < 1e-9, "{z} -> {back}");
    }
}
