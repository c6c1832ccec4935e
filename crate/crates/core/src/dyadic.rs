//! Dyadic window sums `Σ_m Σ_{ℓ∈S(m,r,R)} (F(x+(ℓ+2)R2^{−m}) − F(x+(ℓ−2)R2^{−m}))²`
//! for piecewise-linear `F` on a uniform grid of `M` cells.

/// A nondecreasing piecewise-linear function with one slope per grid cell.
pub trait Increments {
    fn cells(&self) -> usize;
    /// `F(b) − F(a)` for `a ≤ b`.
    fn increment(&self, a: f64, b: f64) -> f64;
}

/// Count of `ℓ ∈ ℤ` with `r ≤ R2^{−m}|ℓ| ≤ R`.
pub fn index_count(m: u32, r: f64, big_r: f64) -> f64 {
    let top = 2f64.powi(m as i32);
    let low = (r / big_r * top).ceil().max(0.0);
    if low > top {
        return 0.0;
    }
    let nonneg = top - low + 1.0;
    if low == 0.0 {
        2.0 * nonneg - 1.0
    } else {
        2.0 * nonneg
    }
}

/// The double sum, truncated once a level adds less than `rel_tol` of the running total.
pub fn dyadic_sum<F: Increments + ?Sized>(f: &F, x: f64, r: f64, big_r: f64, rel_tol: f64) -> f64 {
    let mut total = 0.0;
    for m in 0..1100u32 {
        let top = 2f64.powi(m as i32);
        let delta = big_r / top;
        let low = (r / big_r * top).ceil().max(1.0);
        let mut level = if low <= top {
            window_sum(f, x, delta, low, top) + window_sum(f, x, delta, -top, -low)
        } else {
            0.0
        };
        if r <= 0.0 {
            level += window_sum(f, x, delta, 0.0, 0.0);
        }
        total += level;
        if m > 0 && level <= rel_tol * total {
            break;
        }
    }
    total
}

/// `Σ_{ℓ=a}^{b} (F(x+(ℓ+2)δ) − F(x+(ℓ−2)δ))²`; runs of windows inside one cell are summed in closed form.
fn window_sum<F: Increments + ?Sized>(f: &F, x: f64, delta: f64, a: f64, b: f64) -> f64 {
    let term = |l: f64| f.increment(x + (l - 2.0) * delta, x + (l + 2.0) * delta).powi(2);
    let mf = f.cells() as f64;
    let mut s = 0.0;
    let mut l = a;
    if b - a < 4096.0 || 4.0 * delta >= 1.0 / mf {
        while l <= b {
            s += term(l);
            l += 1.0;
        }
        return s;
    }
    while l <= b {
        let left = x + (l - 2.0) * delta;
        let cell = (left * mf).floor();
        let last = (((cell + 1.0) / mf - x) / delta - 2.0).floor();
        if last >= l {
            let hi = last.min(b);
            let slope = f.increment(cell / mf, (cell + 1.0) / mf) * mf;
            s += (hi - l + 1.0) * (slope * 4.0 * delta).powi(2);
            l = hi + 1.0;
        } else {
            s += term(l);
            l += 1.0;
        }
    }
    s
}
