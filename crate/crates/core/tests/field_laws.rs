use gmcweld::events::{x_processes, Ensemble};
use gmcweld::stats::Estimate;
use gmcweld::whitenoise::{overlap_by_quadrature, slab_overlap_area, RegionKind, StackSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn closed_form_overlap_matches_quadrature(a in 1e-4f64..0.3, stretch in 0.1f64..20.0, t in 0.0f64..1.0) {
        let b = a * (1.0 + stretch);
        for kind in [RegionKind::H, RegionKind::V] {
            let c = slab_overlap_area(kind, a, b, t).unwrap();
            let q = overlap_by_quadrature(kind, kind, a, b, t, 1e-12).unwrap();
            prop_assert!((c - q).abs() < 1e-8 * (1.0 + c.abs()), "{kind:?}: {c} vs {q}");
        }
    }

    #[test]
    fn overlap_is_even_in_the_offset(a in 1e-3f64..0.2, t in 0.0f64..1.0) {
        let l = slab_overlap_area(RegionKind::H, a, 1.0, t).unwrap();
        let r = slab_overlap_area(RegionKind::H, a, 1.0, 1.0 - t).unwrap();
        prop_assert!((l - r).abs() < 1e-12);
        prop_assert!(l <= slab_overlap_area(RegionKind::H, a, 1.0, 0.0).unwrap() + 1e-12);
    }
}

/// `X^V_{t+u,s+v} − X^V_{t,s} ~ N(d(v−u), σ²(u+v))` for scales below 1.
#[test]
fn x_v_increment_law() {
    let (gamma, rho) = (0.5, 0.25);
    let l = -f64::ln(rho);
    let (d, s2) = ((1.0 + 0.5 * gamma * gamma) * l, gamma * gamma * l);
    let ens = Ensemble::new(StackSpec::new(256, rho, 4), gamma, 3, 100, 1.0, 11).unwrap();
    let incs: Vec<f64> = (0..3000)
        .map(|r| {
            let st = ens.stacks(r);
            let (_, a) = x_processes(&st, 3, 100, 1.0, 1.0, gamma, rho).unwrap();
            let (_, b) = x_processes(&st, 3, 100, 2.0, 3.0, gamma, rho).unwrap();
            b - a
        })
        .collect();
    // (t, s) = (1, 1) → (2, 3): u = 1, v = 2.
    let (u, v) = (1.0, 2.0);
    let (mean, var) = (d * (v - u), s2 * (u + v));
    let m = Estimate::of(&incs);
    assert!(m.z(mean) < 4.0, "mean {m:?} vs {mean}");
    let sq: Vec<f64> = incs.iter().map(|x| (x - mean).powi(2)).collect();
    let v = Estimate::of(&sq);
    assert!(v.z(var) < 4.0, "variance {v:?} vs {var}");
}
