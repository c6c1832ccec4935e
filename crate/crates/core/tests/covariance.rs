use gmcweld::covcheck::{h_covariance, h_oracle_convergence, v_band_closed_form, v_band_covariance, v_variance_offset};
use gmcweld::whitenoise::{overlap_by_quadrature, RegionKind, StackSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn v_closed_form_matches_quadrature(delta in 1e-4f64..0.2, ratio in 1.01f64..100.0, frac in 0.0f64..=1.0) {
        let r = (delta * ratio).min(0.5);
        prop_assume!(r > delta);
        let gap = frac * delta;
        let q = overlap_by_quadrature(RegionKind::V, RegionKind::V, delta, r, gap, 1e-12).unwrap();
        prop_assert!((v_band_closed_form(delta, r, gap).unwrap() - q).abs() < 1e-8);
    }
}

#[test]
fn sampled_tables_agree_with_their_oracles() {
    let h = h_covariance(StackSpec::new(512, 0.25, 5), &[0, 1, 5, 40, 256], 1500, 2).unwrap();
    assert!(h.pass_fraction >= 0.8, "{h:?}");
    let v = v_band_covariance(512, 0.25, 1, 2, &[0, 8, 16, 32], 1500, 3).unwrap();
    assert!(v.pass_fraction >= 0.75, "{v:?}");
}

#[test]
fn variance_offset_is_log_two() {
    let o = v_variance_offset(256, 1.0 / 16.0, 1, 2000, 4).unwrap();
    assert!((o.offset - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(o.region_consistent && !o.log_inverse_consistent, "{o:?}");
}

#[test]
fn oracle_error_shrinks_with_the_cutoff() {
    let rows = h_oracle_convergence(&[0.05, 0.3], &[0.25, 1.0 / 64.0, 1e-6]).unwrap();
    for t in [0.05, 0.3] {
        let errs: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.error).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{errs:?}");
        assert!(errs[2] < 1e-9);
    }
}
