//! Exact arithmetic in `ℚ(r)`, `r = 2^{1/4}`, and the Lebesgue-measure
//! versions of the interval predicates.
//!
//! With `ρ = 2^{−e}` every quarter power `ρ^t` is a power of `r`, so each
//! length that enters a predicate is an element `a + br + cr² + dr³` with
//! rational coefficients. Signs are decided by interval refinement of `r`;
//! a nonzero element is never mistaken for zero because `r` has degree 4.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::whitenoise::Scale;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QuarticSurd {
    c: [BigRational; 4],
}

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn pow2(k: i64) -> BigRational {
    let p = BigInt::one() << k.unsigned_abs();
    if k >= 0 {
        BigRational::from_integer(p)
    } else {
        BigRational::new(BigInt::one(), p)
    }
}

impl QuarticSurd {
    pub fn zero() -> Self {
        QuarticSurd { c: [rat(0), rat(0), rat(0), rat(0)] }
    }

    pub fn one() -> Self {
        Self::rational(rat(1))
    }

    pub fn rational(q: BigRational) -> Self {
        QuarticSurd { c: [q, rat(0), rat(0), rat(0)] }
    }

    pub fn int(n: i64) -> Self {
        Self::rational(rat(n))
    }

    /// The exact binary value of a finite float.
    pub fn from_f64(x: f64) -> Result<Self> {
        BigRational::from_float(x)
            .map(Self::rational)
            .ok_or_else(|| Error::domain(format!("{x} has no exact rational value")))
    }

    /// `r^k = 2^{⌊k/4⌋} r^{k mod 4}`.
    pub fn r_pow(k: i64) -> Self {
        let mut out = Self::zero();
        out.c[k.rem_euclid(4) as usize] = pow2(k.div_euclid(4));
        out
    }

    pub fn two_pow(k: i64) -> Self {
        Self::rational(pow2(k))
    }

    pub fn coefficients(&self) -> &[BigRational; 4] {
        &self.c
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(Zero::is_zero)
    }

    /// Bounds `[lo, hi]` of the element for `r ∈ [a, b]`, `1 ≤ a ≤ b`.
    fn enclose(&self, a: &BigRational, b: &BigRational) -> (BigRational, BigRational) {
        let (mut lo, mut hi) = (rat(0), rat(0));
        let (mut pa, mut pb) = (rat(1), rat(1));
        for c in &self.c {
            if c.is_positive() {
                lo += c * &pa;
                hi += c * &pb;
            } else {
                lo += c * &pb;
                hi += c * &pa;
            }
            pa = &pa * a;
            pb = &pb * b;
        }
        (lo, hi)
    }

    pub fn signum(&self) -> Ordering {
        if self.is_zero() {
            return Ordering::Equal;
        }
        let two = rat(2);
        let mut a = BigRational::new(BigInt::from(1_189_207_115i64), BigInt::from(1_000_000_000i64));
        let mut b = BigRational::new(BigInt::from(1_189_207_116i64), BigInt::from(1_000_000_000i64));
        loop {
            let (lo, hi) = self.enclose(&a, &b);
            if lo.is_positive() {
                return Ordering::Greater;
            }
            if hi.is_negative() {
                return Ordering::Less;
            }
            for _ in 0..16 {
                let mid = (&a + &b) / &two;
                let m2 = &mid * &mid;
                if &m2 * &m2 < two {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        let r = 2f64.powf(0.25);
        self.c
            .iter()
            .enumerate()
            .map(|(i, c)| ratio_to_f64(c) * r.powi(i as i32))
            .sum()
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    /// Smallest integer `k` with `self ≤ k`.
    pub fn ceil(&self) -> BigInt {
        if self.c[1..].iter().all(Zero::is_zero) {
            return self.c[0].ceil().to_integer();
        }
        let guess = self.to_f64();
        let spread = (guess.abs() * 1e-9).max(2.0);
        let mut lo = float_floor(guess - spread);
        let mut hi = float_floor(guess + spread) + 1;
        while self.cmp_int(&lo) != Ordering::Greater {
            lo -= (&hi - &lo) * 2;
        }
        while self.cmp_int(&hi) == Ordering::Greater {
            hi += (&hi - &lo) * 2;
        }
        // Invariant: self > lo, self ≤ hi.
        while &hi - &lo > BigInt::one() {
            let mid: BigInt = (&lo + &hi).div_floor(&BigInt::from(2));
            if self.cmp_int(&mid) == Ordering::Greater {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn cmp_int(&self, k: &BigInt) -> Ordering {
        (self - &Self::rational(BigRational::from_integer(k.clone()))).signum()
    }
}

fn float_floor(x: f64) -> BigInt {
    BigRational::from_float(x.floor()).map(|q| q.to_integer()).unwrap_or_default()
}

fn ratio_to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        let (n, d) = (q.numer().bits() as i64, q.denom().bits() as i64);
        let shift = n - d;
        let scaled = q / pow2(shift);
        scaled.to_f64().unwrap_or(0.0) * 2f64.powi(shift as i32)
    })
}

impl PartialOrd for QuarticSurd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QuarticSurd {
    fn cmp(&self, other: &Self) -> Ordering {
        (self - other).signum()
    }
}

impl fmt::Display for QuarticSurd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = &self.c;
        write!(f, "{a} + {b}·r + {c}·r² + {d}·r³")
    }
}

impl<'a> Add<&'a QuarticSurd> for &'a QuarticSurd {
    type Output = QuarticSurd;
    fn add(self, o: &QuarticSurd) -> QuarticSurd {
        QuarticSurd { c: std::array::from_fn(|i| &self.c[i] + &o.c[i]) }
    }
}

impl<'a> Sub<&'a QuarticSurd> for &'a QuarticSurd {
    type Output = QuarticSurd;
    fn sub(self, o: &QuarticSurd) -> QuarticSurd {
        QuarticSurd { c: std::array::from_fn(|i| &self.c[i] - &o.c[i]) }
    }
}

impl<'a> Mul<&'a QuarticSurd> for &'a QuarticSurd {
    type Output = QuarticSurd;
    fn mul(self, o: &QuarticSurd) -> QuarticSurd {
        let mut c = [rat(0), rat(0), rat(0), rat(0)];
        for i in 0..4 {
            if self.c[i].is_zero() {
                continue;
            }
            for j in 0..4 {
                let p = &self.c[i] * &o.c[j];
                if i + j >= 4 {
                    c[i + j - 4] += p * rat(2);
                } else {
                    c[i + j] += p;
                }
            }
        }
        QuarticSurd { c }
    }
}

impl Neg for &QuarticSurd {
    type Output = QuarticSurd;
    fn neg(self) -> QuarticSurd {
        QuarticSurd { c: std::array::from_fn(|i| -&self.c[i]) }
    }
}

macro_rules! by_value {
    ($tr:ident, $f:ident) => {
        impl $tr<QuarticSurd> for QuarticSurd {
            type Output = QuarticSurd;
            fn $f(self, o: QuarticSurd) -> QuarticSurd {
                (&self).$f(&o)
            }
        }
    };
}
by_value!(Add, add);
by_value!(Sub, sub);
by_value!(Mul, mul);

/// `ρ = 2^{−e}` together with exact powers `ρ^t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicRho {
    pub exponent: u32,
}

impl DyadicRho {
    pub fn new(exponent: u32) -> Result<Self> {
        if exponent == 0 {
            return Err(Error::domain("ρ = 2^{-e} needs e ≥ 1"));
        }
        Ok(DyadicRho { exponent })
    }

    /// Recognize `ρ = 2^{−e}` exactly.
    pub fn from_f64(rho: f64) -> Option<Self> {
        let e = -rho.log2();
        (e >= 1.0 && e.fract() == 0.0 && 2f64.powi(-(e as i32)) == rho).then(|| DyadicRho { exponent: e as u32 })
    }

    pub fn value(self) -> f64 {
        2f64.powi(-(self.exponent as i32))
    }

    /// `ρ^{q/4}` for integer `q`.
    pub fn pow_quarters(self, q: i64) -> QuarticSurd {
        QuarticSurd::r_pow(-(self.exponent as i64) * q)
    }

    pub fn pow(self, t: Scale) -> QuarticSurd {
        self.pow_quarters(t.quarters() as i64)
    }
}

/// Lebesgue mass of an interval of the given length on `ℝ/ℤ`.
pub fn circle_length(len: &QuarticSurd) -> QuarticSurd {
    len.clone().min(QuarticSurd::one())
}

/// Count of `ℓ` with `α ≤ 2^{−m}|ℓ| ≤ 1`, for `α > 0`.
pub fn index_count_exact(m: u32, alpha: &QuarticSurd) -> BigInt {
    let top = BigInt::one() << m;
    let low = (alpha * &QuarticSurd::two_pow(m as i64)).ceil().max(BigInt::one());
    if low > top {
        BigInt::zero()
    } else {
        (top - low + 1) * 2
    }
}

/// Outcome of a threshold comparison for a convergent nonnegative series.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesVerdict {
    Below,
    Above,
    Undecided,
}

/// Decide `Σ_m |S(m, ρ^{1/4}R, R)|·min(4R2^{−m}, 1)² / B² ≤ c` for Lebesgue measure
/// (`R = ρ^t`, `B = min(2R, 1)`) from exact partial sums and the tail bound
/// `Σ_{m ≥ m₀} 2(2^m + 1)(4R)²4^{−m}/B²`.
pub fn dyadic_series_le(rho: DyadicRho, t: Scale, c: &QuarticSurd, max_levels: u32) -> SeriesVerdict {
    let big_r = rho.pow(t);
    let alpha = rho.pow_quarters(1);
    let b = circle_length(&(&QuarticSurd::int(2) * &big_r));
    let b2 = &b * &b;
    let four_r = &QuarticSurd::int(4) * &big_r;
    let mut partial = QuarticSurd::zero();
    for m in 0..max_levels {
        let window = circle_length(&(&four_r * &QuarticSurd::two_pow(-(m as i64))));
        let count = QuarticSurd::rational(BigRational::from_integer(index_count_exact(m, &alpha)));
        partial = &partial + &(&count * &(&window * &window));
        // c·B² vs partial + tail, all scaled by B² to stay polynomial.
        if partial > c * &b2 {
            return SeriesVerdict::Above;
        }
        let m0 = m as i64 + 1;
        let tail_factor = &(&QuarticSurd::two_pow(1 - m0) + &(&QuarticSurd::rational(BigRational::new(4.into(), 3.into())) * &QuarticSurd::two_pow(-2 * m0)))
            * &QuarticSurd::int(2);
        let tail = &tail_factor * &(&four_r * &four_r);
        if &partial + &tail <= c * &b2 {
            return SeriesVerdict::Below;
        }
    }
    SeriesVerdict::Undecided
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_arithmetic() {
        let r = QuarticSurd::r_pow(1);
        let r4 = &(&r * &r) * &(&r * &r);
        assert_eq!(r4, QuarticSurd::int(2));
        assert_eq!(&QuarticSurd::r_pow(-3) * &QuarticSurd::r_pow(3), QuarticSurd::one());
        assert!((QuarticSurd::r_pow(7).to_f64() - 2f64.powf(1.75)).abs() < 1e-14);
    }

    #[test]
    fn signs_of_near_cancellation() {
        // 1189207115/10^9 < r < 1189207116/10^9.
        let lo = QuarticSurd::rational(BigRational::new(1_189_207_115.into(), 1_000_000_000.into()));
        let r = QuarticSurd::r_pow(1);
        assert_eq!((&r - &lo).signum(), Ordering::Greater);
        // r² − √2 = 0 exactly, r³ vs 2^{3/4}.
        assert!((&(&r * &r) - &QuarticSurd::r_pow(2)).is_zero());
        let tiny = QuarticSurd::two_pow(-200);
        assert_eq!((&(&r + &tiny) - &r).signum(), Ordering::Greater);
        assert_eq!((&r - &(&r + &tiny)).signum(), Ordering::Less);
    }

    #[test]
    fn ceil_matches_float_on_safe_values() {
        for k in -20..40 {
            let v = &QuarticSurd::r_pow(k) * &QuarticSurd::int(3);
            let f = v.to_f64();
            assert_eq!(v.ceil(), BigInt::from(f.ceil() as i64), "k={k}");
        }
        assert_eq!(QuarticSurd::int(5).ceil(), BigInt::from(5));
        let huge = &QuarticSurd::r_pow(1) * &QuarticSurd::two_pow(120);
        let c = huge.ceil();
        assert!(QuarticSurd::rational(BigRational::from_integer(c.clone())) >= huge);
        assert!(QuarticSurd::rational(BigRational::from_integer(c - 1)) < huge);
    }

    #[test]
    fn exact_counts_agree_with_float_counts() {
        let rho = DyadicRho::new(4).unwrap();
        let alpha = rho.pow_quarters(1);
        for m in 0..12 {
            let exact = index_count_exact(m, &alpha).to_f64().unwrap();
            assert_eq!(exact, crate::dyadic::index_count(m, 0.5, 1.0));
        }
    }

    #[test]
    fn dyadic_rho_roundtrip() {
        assert_eq!(DyadicRho::from_f64(1.0 / 16.0), Some(DyadicRho { exponent: 4 }));
        assert_eq!(DyadicRho::from_f64(0.3), None);
        let rho = DyadicRho::new(140).unwrap();
        assert_eq!(rho.pow(Scale::new(1.25).unwrap()), QuarticSurd::two_pow(-175));
    }
}
