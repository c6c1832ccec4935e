use std::cmp::Ordering;

use gmcweld::exact::{DyadicRho, QuarticSurd};
use gmcweld::events::{lebesgue, EventConstants};
use proptest::prelude::*;

fn surd(c: [i64; 4], shift: i64) -> QuarticSurd {
    let mut s = QuarticSurd::zero();
    for (k, &a) in c.iter().enumerate() {
        s = s + QuarticSurd::int(a) * QuarticSurd::r_pow(k as i64);
    }
    s * QuarticSurd::two_pow(shift)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_agrees_with_floating_point(c in prop::array::uniform4(-50i64..50), shift in -20i64..20) {
        let s = surd(c, shift);
        let f = s.to_f64();
        if f.abs() > 1e-9 * 2f64.powi(shift as i32) {
            let want = if f > 0.0 { Ordering::Greater } else { Ordering::Less };
            prop_assert_eq!(s.signum(), want);
        }
        if c == [0, 0, 0, 0] {
            prop_assert!(s.is_zero());
        }
    }

    #[test]
    fn ring_laws(a in prop::array::uniform4(-9i64..9), b in prop::array::uniform4(-9i64..9)) {
        let (x, y) = (surd(a, 0), surd(b, 0));
        prop_assert_eq!((x.clone() + y.clone()) - y.clone(), x.clone());
        prop_assert_eq!(x.clone() * y.clone(), y.clone() * x.clone());
        let p = (x.clone() * y.clone()).to_f64();
        prop_assert!((p - x.to_f64() * y.to_f64()).abs() < 1e-9 * (1.0 + p.abs()));
    }

    #[test]
    fn rho_powers_multiply(e in 1u32..40, p in -20i64..20, q in -20i64..20) {
        let rho = DyadicRho::new(e).unwrap();
        prop_assert_eq!(rho.pow_quarters(p) * rho.pow_quarters(q), rho.pow_quarters(p + q));
    }
}

#[test]
fn lebesgue_shape_headline_cases() {
    let c = EventConstants::default();
    let tiny = DyadicRho::new(140).unwrap();
    for t in [0.0, 1.0, 2.5] {
        assert!(lebesgue::shape(tiny, t, &c).unwrap(), "t = {t}");
    }
    assert!(!lebesgue::shape(DyadicRho::new(2).unwrap(), 1.0, &c).unwrap());
}
