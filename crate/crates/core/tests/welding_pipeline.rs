use std::f64::consts::TAU;

use gmcweld::welding::{point_in_polygon, run_welding, self_intersections, WeldingConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn small(gamma: f64) -> WeldingConfig {
    WeldingConfig {
        gamma,
        grid_m: 1024,
        lattice_n: 128,
        n_list: vec![1, 4],
        probes: 128,
        ..WeldingConfig::default()
    }
}

#[test]
fn zero_gamma_welds_the_circle() {
    let r = run_welding(&small(0.0), 3).unwrap();
    assert!(r.consistency_error < 1e-6, "{}", r.consistency_error);
    assert!(r.max_radial_deviation < 1e-6);
    assert_eq!(r.self_intersections, 0);
    assert_eq!(r.curve.len(), 1025);
}

#[test]
fn small_gamma_gives_a_simple_curve() {
    let r = run_welding(&small(0.2), 5).unwrap();
    assert_eq!(r.self_intersections, 0);
    assert!(r.consistency_error.is_finite() && r.consistency_error < 0.2);
    assert!(r.solves.iter().all(|s| s.mu_sup < 1.0));
    assert!(r.cascade.windows(2).all(|w| w[1] <= w[0] * 1.5), "{:?}", r.cascade);
    assert!(point_in_polygon(&r.curve, Complex64::new(0.0, 0.0)));
}

#[test]
fn config_rejects_large_gamma() {
    assert!(run_welding(&small(0.5), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn star_polygons_are_simple(n in 3usize..80, wobble in 0.0f64..0.5, phase in 0.0f64..TAU) {
        let poly: Vec<Complex64> = (0..=n)
            .map(|k| {
                let a = phase + TAU * k as f64 / n as f64;
                Complex64::from_polar(1.0 + wobble * (3.0 * a).cos(), a)
            })
            .collect();
        prop_assert_eq!(self_intersections(&poly), 0);
        prop_assert!(point_in_polygon(&poly, Complex64::new(0.0, 0.0)));
    }
}

#[test]
fn bow_tie_crosses_once() {
    let p = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)].map(|(x, y)| Complex64::new(x, y));
    assert_eq!(self_intersections(&p), 1);
}
