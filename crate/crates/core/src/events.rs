//! Scale events on a pair of sampled measures, their Monte Carlo rates,
//! and the Lebesgue-measure versions decided in exact arithmetic.
//!
//! Points `x`, `y` are circle grid points `i/M`. Interval masses are read
//! from the piecewise-constant densities; suprema of fields are maxima over
//! the grid points of the stated windows.

use std::f64::consts::LN_2;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{dyadic_sum, Increments};
use crate::error::{Error, Result};
use crate::exact::{circle_length, dyadic_series_le, DyadicRho, QuarticSurd, SeriesVerdict};
use crate::gmc::{build_measure, build_restricted_measure, MeasureKind, MeasureSample};
use crate::rng::replica_seed;
use crate::stats::{wilson, Proportion};
use crate::whitenoise::{FieldSampler, FieldStack, Scale, StackSpec};

/// Thresholds of every event; `Default` gives the printed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConstants {
    pub shape: [f64; 4],
    pub size: [f64; 2],
    pub centre: f64,
    pub shape_red: [f64; 6],
    pub size_red: f64,
    /// Scaled by `2^{k−n}`.
    pub upp: f64,
    /// Scaled by `2^{n−k}`.
    pub low: f64,
    pub frac: f64,
    pub scal: [f64; 2],
}

impl Default for EventConstants {
    fn default() -> Self {
        let p = |k: i32| 2f64.powi(k);
        EventConstants {
            shape: [p(-9), p(-33), p(7), p(13)],
            size: [p(-11), p(11)],
            centre: p(-23),
            shape_red: [1.0, p(2), p(-4), p(-38), p(2), p(5)],
            size_red: LN_2,
            upp: LN_2,
            low: p(-41),
            frac: LN_2,
            scal: [0.5, LN_2],
        }
    }
}

impl EventConstants {
    /// Override one entry by key: `shape.2`, `centre`, `shape_red.6`, ... (1-based indices).
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let (name, idx) = match key.split_once('.') {
            Some((n, i)) => {
                let i: usize = i.parse().map_err(|_| Error::domain(format!("bad constant index in `{key}`")))?;
                (n, Some(i))
            }
            None => (key, None),
        };
        let slot: &mut [f64] = match name {
            "shape" => &mut self.shape,
            "size" => &mut self.size,
            "centre" => std::slice::from_mut(&mut self.centre),
            "shape_red" => &mut self.shape_red,
            "size_red" => std::slice::from_mut(&mut self.size_red),
            "upp" => std::slice::from_mut(&mut self.upp),
            "low" => std::slice::from_mut(&mut self.low),
            "frac" => std::slice::from_mut(&mut self.frac),
            "scal" => &mut self.scal,
            _ => return Err(Error::domain(format!("unknown event constant `{key}`"))),
        };
        let i = match (idx, slot.len()) {
            (None, 1) => 0,
            (Some(i), n) if (1..=n).contains(&i) => i - 1,
            _ => return Err(Error::domain(format!("constant `{key}` needs an index in 1..={}", slot.len()))),
        };
        if value.is_nan() {
            return Err(Error::domain(format!("constant `{key}` is NaN")));
        }
        slot[i] = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::First => 0,
            Side::Second => 1,
        }
    }

    fn digit(self) -> &'static str {
        match self {
            Side::First => "1",
            Side::Second => "2",
        }
    }
}

/// One event with its parameters; scales must lie on the quarter lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Shape { side: Side, t: f64 },
    Size { t: f64, s: f64 },
    Centre { big_n: u32 },
    Match { big_n: u32 },
    AnnPrime { t: f64, s: f64, big_n: u32 },
    ShapeRed { side: Side, t: f64 },
    SizeRed { t: f64, s: f64, big_n: u32 },
    Upp { side: Side, n: u32 },
    Low { side: Side, n: u32 },
    Frac { side: Side, n: u32 },
    Scal { big_n: u32 },
}

impl Event {
    pub fn name(&self) -> String {
        match self {
            Event::Shape { side, .. } => format!("Shape{}", side.digit()),
            Event::Size { .. } => "Size".into(),
            Event::Centre { .. } => "Centre".into(),
            Event::Match { .. } => "Match".into(),
            Event::AnnPrime { .. } => "AnnPrime".into(),
            Event::ShapeRed { side, .. } => format!("ShapeRed{}", side.digit()),
            Event::SizeRed { .. } => "SizeRed".into(),
            Event::Upp { side, .. } => format!("Upp{}", side.digit()),
            Event::Low { side, .. } => format!("Low{}", side.digit()),
            Event::Frac { side, .. } => format!("Frac{}", side.digit()),
            Event::Scal { .. } => "Scal".into(),
        }
    }

    /// Same event at index `n` for the families indexed by `n`.
    fn reindexed(&self, n: u32) -> Option<Event> {
        match *self {
            Event::Upp { side, .. } => Some(Event::Upp { side, n }),
            Event::Low { side, .. } => Some(Event::Low { side, n }),
            Event::Frac { side, .. } => Some(Event::Frac { side, n }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub event: Event,
    #[serde(default)]
    pub constants: EventConstants,
    /// For `Upp`/`Low`/`Frac`: also count occurrences over `n = 1..=5N`.
    #[serde(default)]
    pub count_up_to: Option<u32>,
}

impl EventSpec {
    pub fn new(event: Event) -> Self {
        EventSpec { event, constants: EventConstants::default(), count_up_to: None }
    }
}

impl Increments for MeasureSample {
    fn cells(&self) -> usize {
        self.grid_size
    }

    fn increment(&self, a: f64, b: f64) -> f64 {
        self.circle_mass(a, b)
    }
}

/// Everything an event reads for one replica.
#[derive(Debug, Clone)]
pub struct World {
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
    /// Grid indices of `x` and `y`.
    pub x: usize,
    pub y: usize,
    pub tau: [MeasureSample; 2],
    pub stacks: Option<[FieldStack; 2]>,
}

impl World {
    /// Measures built from both stacks at their full depth.
    pub fn from_stacks(stacks: [FieldStack; 2], gamma: f64, x: usize, y: usize, eps: f64) -> Result<Self> {
        let spec = stacks[0].spec;
        if stacks[1].spec != spec {
            return Err(Error::domain("both stacks must share one grid and ρ"));
        }
        let tau = [build_measure(&stacks[0], gamma, spec.depth)?, build_measure(&stacks[1], gamma, spec.depth)?];
        let w = World { rho: spec.rho, gamma, eps, x, y, tau, stacks: Some(stacks) };
        w.check()?;
        Ok(w)
    }

    /// Measures only; events that read fields fail.
    pub fn from_measures(tau: [MeasureSample; 2], rho: f64, x: usize, y: usize, eps: f64) -> Result<Self> {
        if tau[0].grid_size != tau[1].grid_size {
            return Err(Error::domain("both measures must share one grid"));
        }
        let gamma = tau[0].gamma;
        let w = World { rho, gamma, eps, x, y, tau, stacks: None };
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<()> {
        let m = self.grid();
        if self.x >= m || self.y >= m {
            return Err(Error::Index(format!("points ({}, {}) outside a grid of {m}", self.x, self.y)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0 && self.eps > 0.0) {
            return Err(Error::domain("need 0 < ρ < 1 and ε > 0"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.tau[0].grid_size
    }

    fn point(&self, side: Side) -> f64 {
        [self.x, self.y][side.index()] as f64 / self.grid() as f64
    }

    fn stack(&self, side: Side) -> Result<&FieldStack> {
        self.stacks
            .as_ref()
            .map(|s| &s[side.index()])
            .ok_or_else(|| Error::Insufficient("this event reads field stacks, but the world has measures only".into()))
    }

    fn rho_pow(&self, t: f64) -> f64 {
        self.rho.powf(t)
    }

    /// Grid indices `j` with circle distance `|j − i|/M ≤ radius`.
    fn window(&self, i: usize, radius: f64) -> Vec<usize> {
        let m = self.grid();
        let reach = ((radius * m as f64 + 1e-9).floor() as usize).min(m / 2);
        if 2 * reach + 1 >= m {
            return (0..m).collect();
        }
        (0..=2 * reach).map(|d| (i + m + d - reach) % m).collect()
    }
}

fn scale(t: f64) -> Result<Scale> {
    Scale::new(t)
}

/// Mass of `c + [a, b]`.
fn mass(tau: &MeasureSample, c: f64, a: f64, b: f64) -> f64 {
    tau.circle_mass(c + a, c + b)
}

/// Mass of `c + ([a, b] ∖ (−d, d))`, for `2d < 1`.
fn mass_outside(tau: &MeasureSample, c: f64, a: f64, b: f64, d: f64) -> f64 {
    if b - a >= 1.0 {
        return tau.total() - mass(tau, c, -d, d);
    }
    let left = if a < -d { mass(tau, c, a, b.min(-d)) } else { 0.0 };
    let right = if b > d { mass(tau, c, a.max(d), b) } else { 0.0 };
    left + right
}

/// Evaluate one event. Errors only when a required scale or field is missing.
pub fn evaluate_event(spec: &EventSpec, w: &World) -> Result<bool> {
    let c = &spec.constants;
    match spec.event {
        Event::Shape { side, t } => shape(w, side, t, c),
        Event::Size { t, s } => size(w, t, s, c),
        Event::Centre { big_n } => centre(w, big_n, c),
        Event::Match { big_n } => matched(w, big_n),
        Event::AnnPrime { t, s, big_n } => Ok(size(w, t, s, c)?
            && shape(w, Side::First, t, c)?
            && shape(w, Side::Second, s, c)?
            && centre(w, big_n, c)?),
        Event::ShapeRed { side, t } => shape_red(w, side, t, c),
        Event::SizeRed { t, s, big_n } => size_red(w, t, s, big_n, c),
        Event::Upp { side, n } => upp(w, side, n, c),
        Event::Low { side, n } => low(w, side, n, c),
        Event::Frac { side, n } => frac(w, side, n, c),
        Event::Scal { big_n } => scal(w, big_n, c),
    }
}

fn shape(w: &World, side: Side, t: f64, c: &EventConstants) -> Result<bool> {
    scale(t)?;
    let tau = &w.tau[side.index()];
    let x = w.point(side);
    let r = w.rho_pow(t);
    let r4 = w.rho_pow(t + 0.25);
    let bt = mass(tau, x, -r, r);
    let min_j = (1..=8)
        .map(|l| mass(tau, x, r * (l as f64 - 5.0) / 4.0, r * (l as f64 - 4.0) / 4.0))
        .fold(f64::INFINITY, f64::min);
    Ok(min_j / bt >= c.shape[0]
        && mass(tau, x, -2.0 * r4, 2.0 * r4) / bt <= c.shape[1]
        && mass(tau, x, -2.0 * r, 2.0 * r) / bt <= c.shape[2]
        && dyadic_sum(tau, x, r4, r, 1e-12) / (bt * bt) <= c.shape[3])
}

fn size(w: &World, t: f64, s: f64, c: &EventConstants) -> Result<bool> {
    scale(t)?;
    scale(s)?;
    let (r, q) = (w.rho_pow(t), w.rho_pow(s));
    let a = mass(&w.tau[0], w.point(Side::First), -r, r) / w.tau[0].total();
    let b = mass(&w.tau[1], w.point(Side::Second), -q, q) / w.tau[1].total();
    let ratio = a / b;
    Ok(c.size[0] <= ratio && ratio <= c.size[1])
}

fn centre_length(w: &World, big_n: u32) -> f64 {
    w.rho_pow((1.0 + w.eps) * 5.0 * big_n as f64)
}

fn centre(w: &World, big_n: u32, c: &EventConstants) -> Result<bool> {
    let tau = &w.tau[1];
    let y = w.point(Side::Second);
    let b = w.rho_pow(5.0 * big_n as f64 + 1.0);
    Ok(mass(tau, y, 0.0, centre_length(w, big_n)) / mass(tau, y, -b, b) <= c.centre)
}

/// `ψ₂(y) ≤ ψ₁(x) < ψ₂(y + ρ^{(1+ε)5N})` on the circle.
fn matched(w: &World, big_n: u32) -> Result<bool> {
    let (x, y) = (w.point(Side::First), w.point(Side::Second));
    let p1 = w.tau[0].cdf(x);
    let p2 = w.tau[1].cumulative(y) / w.tau[1].total();
    let reach = w.tau[1].circle_mass(y, y + centre_length(w, big_n)) / w.tau[1].total();
    Ok((p1 - p2).rem_euclid(1.0) < reach)
}

fn restricted(w: &World, side: Side, t: Scale) -> Result<MeasureSample> {
    build_restricted_measure(w.stack(side)?, w.gamma, t, MeasureKind::TauT)
}

fn shape_red(w: &World, side: Side, t: f64, c: &EventConstants) -> Result<bool> {
    let ts = scale(t)?;
    if ts.quarters() % 4 == 3 {
        return Err(Error::Scale(t));
    }
    let tau = restricted(w, side, ts)?;
    let x = w.point(side);
    let r = w.rho_pow(t);
    let r4 = w.rho_pow(t + 0.25);
    let d = w.rho_pow(ts.floor() as f64 + 0.75);
    let den = mass_outside(&tau, x, -r, r, d);
    let level = den / r;
    let min_j = (1..=8)
        .map(|l| mass_outside(&tau, x, r * (l as f64 - 5.0) / 4.0, r * (l as f64 - 4.0) / 4.0, d))
        .fold(f64::INFINITY, f64::min);
    let k = &c.shape_red;
    Ok(k[0] <= level
        && level <= k[1]
        && min_j / den >= k[2]
        && mass_outside(&tau, x, -2.0 * r4, 2.0 * r4, d) / den <= k[3]
        && mass_outside(&tau, x, -2.0 * r, 2.0 * r, d) / den <= k[4]
        && dyadic_sum(&tau, x, r4, r, 1e-12) / (den * den) <= k[5])
}

/// `(X^{(H)}_{t,s}, X^{(V)}_{t,s})` at grid points `x`, `y`, variances from the quadrature oracle.
pub fn x_processes(stacks: &[FieldStack; 2], x: usize, y: usize, t: f64, s: f64, gamma: f64, rho: f64) -> Result<(f64, f64)> {
    let spec = stacks[0].spec;
    if stacks[1].spec != spec {
        return Err(Error::domain("both stacks must share one grid and ρ"));
    }
    if (spec.rho - rho).abs() > 1e-15 * rho {
        return Err(Error::domain(format!("stacks were sampled at ρ = {}, not {rho}", spec.rho)));
    }
    if !spec.with_v {
        return Err(Error::Insufficient("X^(V) needs stacks sampled with V layers".into()));
    }
    let (ts, ss) = (scale(t)?, scale(s)?);
    let log_inv = -rho.ln();
    let h1 = stacks[0].h_at(x, ts)?;
    let h2 = stacks[1].h_at(y, ss)?;
    let v1 = stacks[0].v_at(x, ts)?;
    let v2 = stacks[1].v_at(y, ss)?;
    let xh = gamma * (h1 - h2) - 0.5 * gamma * gamma * (spec.var_h(ts) - spec.var_h(ss)) - (t - s) * log_inv;
    let xv = gamma * (v1 - v2) - (0.5 * gamma * gamma + 1.0) * (t - s) * log_inv;
    Ok((xh, xv))
}

fn world_x(w: &World, t: f64, s: f64) -> Result<(f64, f64)> {
    let stacks = w.stacks.as_ref().ok_or_else(|| Error::Insufficient("X processes need field stacks".into()))?;
    x_processes(stacks, w.x, w.y, t, s, w.gamma, w.rho)
}

/// `−X^{(V)}_{N,N} + X^{(H)}_{N,N} + log(τ₂([0,1]∖B_N)/τ₁([0,1]∖B_N))`: the part of the
/// SizeRed statistic that does not move with `(t, s)`.
pub fn size_red_offset(w: &World, big_n: u32) -> Result<f64> {
    let nf = big_n as f64;
    let (xh_nn, xv_nn) = world_x(w, nf, nf)?;
    let b = w.rho_pow(nf);
    let out = |side: Side| {
        let tau = &w.tau[side.index()];
        tau.total() - mass(tau, w.point(side), -b, b)
    };
    Ok(xh_nn - xv_nn + (out(Side::Second) / out(Side::First)).ln())
}

/// `X^{(V)}_{t,s}` at the world's points.
pub fn x_v(w: &World, t: f64, s: f64) -> Result<f64> {
    Ok(world_x(w, t, s)?.1)
}

fn size_red(w: &World, t: f64, s: f64, big_n: u32, c: &EventConstants) -> Result<bool> {
    let nf = big_n as f64;
    if t < nf || s < nf {
        return Err(Error::domain("SizeRed(t, s) needs t, s ≥ N"));
    }
    let value = x_v(w, t, s)? + size_red_offset(w, big_n)?;
    Ok(value.abs() <= c.size_red)
}

/// `γ·(band_k(u) − band_k(x))` over `u ∈ x + 2B_n`; band `−1` is the top field.
fn upp(w: &World, side: Side, n: u32, c: &EventConstants) -> Result<bool> {
    let stack = w.stack(side)?;
    if n > stack.spec.depth {
        return Err(Error::Scale(n as f64));
    }
    let i = [w.x, w.y][side.index()];
    let pts = w.window(i, 2.0 * w.rho_pow(n as f64));
    for k in -1..n as i64 {
        let band = |u: usize| -> Result<f64> {
            if k < 0 {
                Ok(stack.top_h[u])
            } else {
                stack.h_band(u, Scale::integer(k as u32), Scale::integer(k as u32 + 1))
            }
        };
        let at_x = band(i)?;
        let bound = 2f64.powi((k - n as i64) as i32) * c.upp;
        for &u in &pts {
            let d = w.gamma * (band(u)? - at_x);
            if d > bound || d < -bound {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Checked for `k ≥ n` down to the first `k` whose inner window is below one cell.
fn low(w: &World, side: Side, n: u32, c: &EventConstants) -> Result<bool> {
    let tau = restricted(w, side, Scale::integer(n))?;
    let x = w.point(side);
    let cell = 1.0 / w.grid() as f64;
    let nf = n as f64;
    let den = mass_outside(&tau, x, -w.rho_pow(nf + 0.5), w.rho_pow(nf + 0.5), w.rho_pow(nf + 0.75));
    let mut k = n;
    loop {
        let kf = k as f64;
        let outer = w.rho_pow(kf + 0.75);
        let num = mass_outside(&tau, x, -outer, outer, w.rho_pow(kf + 1.75));
        if num / den > 2f64.powi(n as i32 - k as i32) * c.low {
            return Ok(false);
        }
        if 2.0 * outer < cell {
            return Ok(true);
        }
        k += 1;
    }
}

/// Sup over the resolved scales `t ∈ [n, n + 1/2]` and `u ∈ x + 2B_n`.
fn frac(w: &World, side: Side, n: u32, c: &EventConstants) -> Result<bool> {
    let stack = w.stack(side)?;
    let base = Scale::integer(n);
    stack.spec.layers_above(base.plus_quarters(2))?;
    let i = [w.x, w.y][side.index()];
    let pts = w.window(i, 2.0 * w.rho_pow(n as f64));
    for q in 1..=2 {
        let t = base.plus_quarters(q);
        if stack.spec.layers_above(t).is_err() {
            continue;
        }
        let var = stack.spec.var_h_band(base, t);
        for &u in &pts {
            let v = w.gamma * stack.h_band(u, base, t)? - 0.5 * w.gamma * w.gamma * var;
            if v.abs() >= c.frac {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The sup over `t, s ∈ [N, 5N]` separates into `sup_t g₁ − inf_s g₂` and its mirror.
fn scal(w: &World, big_n: u32, c: &EventConstants) -> Result<bool> {
    let nf = big_n as f64;
    let b = w.rho_pow(nf);
    for side in [Side::First, Side::Second] {
        let tau = &w.tau[side.index()];
        if mass(tau, w.point(side), -b, b) / tau.total() >= c.scal[0] {
            return Ok(false);
        }
    }
    let stacks = w.stacks.as_ref().ok_or_else(|| Error::Insufficient("Scal reads field stacks".into()))?;
    let spec = stacks[0].spec;
    if !spec.with_v {
        return Err(Error::Insufficient("Scal needs V layers".into()));
    }
    let step = 4 / spec.substeps;
    let lo = Scale::integer(big_n);
    let hi = Scale::integer(5 * big_n);
    spec.layers_above(hi)?;
    let g = w.gamma;
    let l = -w.rho.ln();
    let profile = |side: Side, i: usize| -> Result<Vec<f64>> {
        let st = &stacks[side.index()];
        let f = |t: Scale| -> Result<f64> {
            Ok(g * (st.h_at(i, t)? - st.v_at(i, t)?) - 0.5 * g * g * spec.var_h(t) + 0.5 * g * g * t.value() * l)
        };
        let base = f(lo)?;
        let mut out = Vec::new();
        let mut t = lo;
        while t <= hi {
            out.push(f(t)? - base);
            t = t.plus_quarters(step);
        }
        Ok(out)
    };
    let g1 = profile(Side::First, w.x)?;
    let g2 = profile(Side::Second, w.y)?;
    let (max1, min1) = extremes(&g1);
    let (max2, min2) = extremes(&g2);
    Ok((max1 - min2).max(max2 - min1) < c.scal[1])
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &x| (a.max(x), b.min(x)))
}

/// Replicas of two independent stacks sharing one [`StackSpec`].
#[derive(Debug)]
pub struct Ensemble {
    sampler: FieldSampler,
    pub gamma: f64,
    pub eps: f64,
    pub x: usize,
    pub y: usize,
    pub seed: u64,
}

impl Ensemble {
    pub fn new(spec: StackSpec, gamma: f64, x: usize, y: usize, eps: f64, seed: u64) -> Result<Self> {
        Ok(Ensemble { sampler: FieldSampler::new(spec)?, gamma, eps, x, y, seed })
    }

    pub fn spec(&self) -> &StackSpec {
        self.sampler.spec()
    }

    pub fn stacks(&self, replica: u64) -> [FieldStack; 2] {
        let base = replica_seed(self.seed, replica);
        [self.sampler.sample(replica_seed(base, 1)), self.sampler.sample(replica_seed(base, 2))]
    }

    pub fn world(&self, replica: u64) -> Result<World> {
        World::from_stacks(self.stacks(replica), self.gamma, self.x, self.y, self.eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    /// Occurrences over `n = 1..=5N`, one per replica.
    pub counts: Vec<u32>,
    pub mean: f64,
    pub out_of: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRate {
    pub event: String,
    pub params: Event,
    pub constants: EventConstants,
    pub rate: f64,
    pub ci: (f64, f64),
    pub replicas: usize,
    pub successes: usize,
    pub grid: usize,
    pub count: Option<CountSummary>,
}

/// Per-event empirical probabilities over `replicas ≥ 100` worlds, in parallel.
pub fn event_frequency(specs: &[EventSpec], ensemble: &Ensemble, replicas: usize) -> Result<Vec<EventRate>> {
    if replicas < 100 {
        return Err(Error::Insufficient(format!("{replicas} replicas; at least 100 are needed")));
    }
    let rows: Vec<Vec<(bool, Option<u32>)>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let w = ensemble.world(r)?;
            specs.iter().map(|s| evaluate_with_count(s, &w)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let successes = rows.iter().filter(|r| r[j].0).count();
            let p: Proportion = wilson(successes, replicas);
            let count = spec.count_up_to.map(|big_n| {
                let counts: Vec<u32> = rows.iter().map(|r| r[j].1.unwrap_or(0)).collect();
                let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / replicas as f64;
                CountSummary { counts, mean, out_of: 5 * big_n }
            });
            EventRate {
                event: spec.event.name(),
                params: spec.event.clone(),
                constants: spec.constants.clone(),
                rate: p.rate,
                ci: (p.lo, p.hi),
                replicas,
                successes,
                grid: ensemble.spec().grid_size,
                count,
            }
        })
        .collect())
}

fn evaluate_with_count(spec: &EventSpec, w: &World) -> Result<(bool, Option<u32>)> {
    let hit = evaluate_event(spec, w)?;
    let count = match spec.count_up_to {
        Some(big_n) => {
            let mut c = 0;
            for n in 1..=5 * big_n {
                let e = spec
                    .event
                    .reindexed(n)
                    .ok_or_else(|| Error::domain("occurrence counts apply to Upp, Low and Frac only"))?;
                let s = EventSpec { event: e, constants: spec.constants.clone(), count_up_to: None };
                c += evaluate_event(&s, w)? as u32;
            }
            Some(c)
        }
        None => None,
    };
    Ok((hit, count))
}

/// Lebesgue measure on both sides, `ρ = 2^{−e}`: every length is an exact element of `ℚ(2^{1/4})`.
pub mod lebesgue {
    use super::*;

    fn exact(x: f64) -> Result<QuarticSurd> {
        QuarticSurd::from_f64(x)
    }

    fn ge(a: &QuarticSurd, b: &QuarticSurd) -> bool {
        a >= b
    }

    /// The four conditions of `Shape(t)`; independent of the base point.
    pub fn shape(rho: DyadicRho, t: f64, c: &EventConstants) -> Result<bool> {
        let ts = scale(t)?;
        let r = rho.pow(ts);
        let r4 = rho.pow(ts.plus_quarters(1));
        let two = QuarticSurd::int(2);
        let four = QuarticSurd::int(4);
        let bt = circle_length(&(&two * &r));
        // Each J has length ρ^t/4 ≤ 1/4.
        let j = &r * &QuarticSurd::rational(BigRational::new(1.into(), 4.into()));
        let first = ge(&j, &(&exact(c.shape[0])? * &bt));
        let second = circle_length(&(&four * &r4)) <= &exact(c.shape[1])? * &bt;
        let third = circle_length(&(&four * &r)) <= &exact(c.shape[2])? * &bt;
        if !(first && second && third) {
            return Ok(false);
        }
        match dyadic_series_le(rho, ts, &exact(c.shape[3])?, 400) {
            SeriesVerdict::Below => Ok(true),
            SeriesVerdict::Above => Ok(false),
            SeriesVerdict::Undecided => Err(Error::domain("dyadic series too close to its threshold to decide")),
        }
    }

    pub fn size(rho: DyadicRho, t: f64, s: f64, c: &EventConstants) -> Result<bool> {
        let two = QuarticSurd::int(2);
        let a = circle_length(&(&two * &rho.pow(scale(t)?)));
        let b = circle_length(&(&two * &rho.pow(scale(s)?)));
        Ok(&exact(c.size[0])? * &b <= a && a <= &exact(c.size[1])? * &b)
    }

    /// `ρ^{(1+ε)5N}`; requires `20N(1+ε)` to be an integer.
    pub fn centre_length(rho: DyadicRho, big_n: u32, eps: f64) -> Result<QuarticSurd> {
        let q = 20.0 * big_n as f64 * (1.0 + eps);
        if q.fract() != 0.0 {
            return Err(Error::domain(format!("ε = {eps} gives a non-quarter exponent for N = {big_n}")));
        }
        Ok(rho.pow_quarters(q as i64))
    }

    pub fn centre(rho: DyadicRho, big_n: u32, eps: f64, c: &EventConstants) -> Result<bool> {
        let num = circle_length(&centre_length(rho, big_n, eps)?);
        let b = circle_length(&(&QuarticSurd::int(2) * &rho.pow(Scale::integer(5 * big_n + 1))));
        Ok(num <= &exact(c.centre)? * &b)
    }

    /// `x ∈ [y, y + ρ^{(1+ε)5N})` modulo 1, for rational `x`, `y`.
    pub fn matched(rho: DyadicRho, x: &BigRational, y: &BigRational, big_n: u32, eps: f64) -> Result<bool> {
        let d = x - y;
        let frac = &d - BigRational::from_integer(d.floor().to_integer());
        Ok(QuarticSurd::rational(frac) < centre_length(rho, big_n, eps)?)
    }

    /// Convenience float view of an exact element.
    pub fn approx(v: &QuarticSurd) -> f64 {
        v.to_f64()
    }

    pub fn rational_point(i: usize, m: usize) -> BigRational {
        BigRational::new((i as i64).into(), (m as i64).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_world(m: usize, rho: f64) -> World {
        World::from_measures([MeasureSample::uniform(m), MeasureSample::uniform(m)], rho, 7, 7, 1.0).unwrap()
    }

    #[test]
    fn default_constants_are_the_printed_ones() {
        let c = EventConstants::default();
        assert_eq!(c.shape, [1.0 / 512.0, 2f64.powi(-33), 128.0, 8192.0]);
        assert_eq!(c.shape_red, [1.0, 4.0, 1.0 / 16.0, 2f64.powi(-38), 4.0, 32.0]);
        assert_eq!(c.low, 2f64.powi(-41));
        let mut d = c.clone();
        d.set("shape.2", 0.5).unwrap();
        assert_eq!(d.shape[1], 0.5);
        assert!(d.set("shape.5", 1.0).is_err());
        assert!(d.set("centre.1", 1.0).is_ok());
        assert!(d.set("bogus", 1.0).is_err());
    }

    #[test]
    fn mass_outside_core() {
        let tau = MeasureSample::uniform(64);
        assert!((mass_outside(&tau, 0.3, -0.2, 0.2, 0.05) - 0.3).abs() < 1e-14);
        assert!((mass_outside(&tau, 0.3, -0.2, -0.1, 0.05) - 0.1).abs() < 1e-14);
        assert!((mass_outside(&tau, 0.3, -0.01, 0.03, 0.05)).abs() < 1e-14);
        assert!((mass_outside(&tau, 0.0, -0.8, 0.8, 0.1) - 0.8).abs() < 1e-14);
    }

    #[test]
    fn uniform_shape_fails_at_desk_rho_for_the_inner_window() {
        let w = uniform_world(1024, 1.0 / 16.0);
        let spec = EventSpec::new(Event::Shape { side: Side::First, t: 1.0 });
        assert!(!evaluate_event(&spec, &w).unwrap());
        let mut relaxed = spec.clone();
        relaxed.constants.shape[1] = 1.0;
        assert!(evaluate_event(&relaxed, &w).unwrap());
    }

    #[test]
    fn float_and_exact_shape_agree_on_uniform() {
        for (e, t) in [(4u32, 1.0), (2, 0.5), (4, 0.25)] {
            let rho = DyadicRho::new(e).unwrap();
            let mut c = EventConstants::default();
            c.shape[1] = 1.0;
            let w = uniform_world(1 << 14, rho.value());
            let spec = EventSpec { event: Event::Shape { side: Side::Second, t }, constants: c.clone(), count_up_to: None };
            assert_eq!(evaluate_event(&spec, &w).unwrap(), lebesgue::shape(rho, t, &c).unwrap(), "e={e} t={t}");
        }
    }

    #[test]
    fn exact_lebesgue_shape_headline_cases() {
        let c = EventConstants::default();
        let tiny = DyadicRho::new(140).unwrap();
        for t in [0.0, 1.0, 2.5] {
            assert!(lebesgue::shape(tiny, t, &c).unwrap(), "t={t}");
        }
        assert!(!lebesgue::shape(DyadicRho::new(2).unwrap(), 1.0, &c).unwrap());
        assert!(lebesgue::size(tiny, 1.0, 1.0, &c).unwrap());
        assert!(!lebesgue::size(tiny, 1.0, 2.0, &c).unwrap());
        assert!(lebesgue::centre(tiny, 1, 1.0, &c).unwrap());
        let x = lebesgue::rational_point(3, 64);
        assert!(lebesgue::matched(tiny, &x, &x, 2, 1.0).unwrap());
        assert!(!lebesgue::matched(tiny, &x, &lebesgue::rational_point(4, 64), 2, 1.0).unwrap());
    }

    #[test]
    fn quarter_lattice_enforced() {
        let w = uniform_world(256, 0.25);
        let spec = EventSpec::new(Event::Shape { side: Side::First, t: 0.3 });
        assert!(matches!(evaluate_event(&spec, &w), Err(Error::Scale(_))));
    }

    #[test]
    fn match_is_periodic() {
        let mut w = uniform_world(64, 0.25);
        w.eps = 1.0;
        w.x = 0;
        w.y = 63;
        // x − y = 1/64 against ρ^{10} ≈ 1e−6.
        assert!(!matched(&w, 1).unwrap());
        w.y = 0;
        assert!(matched(&w, 1).unwrap());
    }

    #[test]
    fn stack_events_need_stacks() {
        let w = uniform_world(64, 0.25);
        let spec = EventSpec::new(Event::Frac { side: Side::First, n: 1 });
        assert!(matches!(evaluate_event(&spec, &w), Err(Error::Insufficient(_))));
    }

    #[test]
    fn x_processes_trivial_cases() {
        let spec = StackSpec::new(256, 0.25, 3).quarter();
        let ens = Ensemble::new(spec, 0.0, 5, 5, 1.0, 9).unwrap();
        let st = ens.stacks(0);
        let same = [st[0].clone(), st[0].clone()];
        let (_, xv) = x_processes(&same, 5, 5, 1.5, 1.5, 0.4, 0.25).unwrap();
        assert_eq!(xv, 0.0);
        let (xh, _) = x_processes(&st, 5, 9, 2.0, 0.75, 0.0, 0.25).unwrap();
        assert!((xh + 1.25 * 4f64.ln()).abs() < 1e-14);
        assert!(x_processes(&st, 5, 5, 2.0, 0.3, 0.2, 0.25).is_err());
    }

    #[test]
    fn size_red_reduces_when_stacks_agree() {
        let spec = StackSpec::new(512, 1.0 / 16.0, 3).quarter();
        let ens = Ensemble::new(spec, 0.25, 40, 40, 1.0, 3).unwrap();
        let st = ens.stacks(1);
        let w = World::from_stacks([st[0].clone(), st[0].clone()], 0.25, 40, 40, 1.0).unwrap();
        let (xh, xv) = x_processes(w.stacks.as_ref().unwrap(), 40, 40, 1.0, 1.0, 0.25, spec.rho).unwrap();
        assert_eq!(xv, 0.0);
        let b = spec.rho;
        let out = |tau: &MeasureSample| tau.total() - mass(tau, 40.0 / 512.0, -b, b);
        let direct = (xh + (out(&w.tau[1]) / out(&w.tau[0])).ln()).abs() <= LN_2;
        let spec_ev = EventSpec::new(Event::SizeRed { t: 1.0, s: 1.0, big_n: 1 });
        assert_eq!(evaluate_event(&spec_ev, &w).unwrap(), direct);
    }

    #[test]
    fn gamma_zero_frac_and_upp_always_hold() {
        let spec = StackSpec::new(256, 1.0 / 16.0, 4).quarter();
        let ens = Ensemble::new(spec, 0.0, 3, 100, 1.0, 1).unwrap();
        let w = ens.world(0).unwrap();
        for n in 1..=3 {
            for side in [Side::First, Side::Second] {
                assert!(evaluate_event(&EventSpec::new(Event::Frac { side, n }), &w).unwrap());
                assert!(evaluate_event(&EventSpec::new(Event::Upp { side, n }), &w).unwrap());
            }
        }
    }
}
