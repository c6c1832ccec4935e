use gmcweld::events::Ensemble;
use gmcweld::walk::{
    burn_in_decay, overshoot_envelope, run_field_walk, run_walk, run_walks, select_pair, trace_violations, Init,
    WalkParams,
};
use gmcweld::whitenoise::StackSpec;
use proptest::prelude::*;

fn in_set(x: f64) -> bool {
    (1.0 - 1e-12..=1.5 + 1e-12).contains(&x) || (x - 2.0).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn selection_is_the_minimal_root(r in -1.0f64..=1.0, d in 0.05f64..20.0, i in 0u32..1000, j in 0u32..1000) {
        let y = r * d;
        let (t, s) = select_pair(y, i, j, d).unwrap();
        let (u, v) = (t - i as f64, s - j as f64);
        prop_assert!(in_set(u) && in_set(v), "u = {u}, v = {v}");
        prop_assert!((y + d * (v - u)).abs() <= 1e-12 * d.max(1.0));
        prop_assert!((0.0..=0.5).contains(&(t - t.floor())));
        // No smaller u in the set admits a feasible v.
        for k in 0..200 {
            let u2 = 1.0 + k as f64 * 0.005;
            if u2 < u - 1e-9 && in_set(u2) {
                prop_assert!(!in_set(u2 - r), "u = {u2} also works");
            }
        }
    }

    #[test]
    fn abstract_traces_keep_their_invariants(gamma in 0.05f64..1.4, rho in 0.01f64..0.9, n in 1u32..50, y0 in -30.0f64..30.0, seed in any::<u64>()) {
        let p = WalkParams::new(gamma, rho, n).unwrap();
        let tr = run_walk(&p, Init::Value { y: y0 }, 60, seed).unwrap();
        prop_assert!(trace_violations(&tr).is_empty(), "{:?}", trace_violations(&tr));
        prop_assert_eq!(tr.stops.len(), tr.ts.len());
    }
}

#[test]
fn field_walk_starts_from_the_reduced_statistic() {
    let rho = (-1.0f64).exp();
    let ens = Ensemble::new(StackSpec::new(256, rho, 7), 0.5, 0, 128, 1.0, 4).unwrap();
    let p = WalkParams::new(0.5, rho, 1).unwrap().field_driven();
    for r in 0..20 {
        let w = ens.world(r).unwrap();
        let tr = run_field_walk(&p, &w, 3).unwrap();
        assert!(trace_violations(&tr).is_empty());
        let x = gmcweld::events::size_red_offset(&w, 1).unwrap() + gmcweld::events::x_v(&w, 1.0, 1.0).unwrap();
        assert_eq!(tr.y[0], x);
    }
    let w = ens.world(0).unwrap();
    assert!(run_field_walk(&p, &w, 4).is_err());
}

#[test]
fn overshoot_envelope_holds_out_of_sample() {
    let p = WalkParams::new(1.0, 1.0 / 16.0, 1).unwrap();
    let s = p.sigma2.sqrt();
    let traces = run_walks(&p, Init::Uniform { lo: p.d, hi: 3.0 * p.d }, 40, 8, 20_000).unwrap();
    let probes: Vec<f64> = [0.25, 0.5].iter().map(|k| -p.d - k * s).collect();
    let held: Vec<f64> = [1.0, 2.0].iter().map(|k| -p.d - k * s).collect();
    let rep = overshoot_envelope(&traces, &probes, &held, p.sigma2).unwrap();
    assert!(rep.c_hat > 0.0);
    assert!(rep.held_out.iter().all(|r| r.below), "{rep:?}");
    assert!(overshoot_envelope(&traces, &probes, &probes, p.sigma2).is_err());
}

#[test]
fn burn_in_tail_decays() {
    let p = WalkParams::new(1.3, 0.9, 1).unwrap();
    let traces = run_walks(&p, Init::Value { y: 2.0 * p.d }, 150, 4, 5000).unwrap();
    let b = burn_in_decay(&traces, 20).unwrap();
    assert_eq!(b.j0, 16);
    assert!(b.geometric, "{b:?}");
}
