//! Scale-matching oscillating random walk.
//!
//! `Y_m` is pushed towards `[−d, d]`: above it `i` advances (mean step `−d`),
//! below it `j` advances (mean step `+d`), inside it both advance by two
//! (mean zero, variance `4σ²`). Every visit to `[−d, d]` is a stopping time and
//! yields a fractional pair `(t_n, s_n)` that cancels the current drift.
//!
//! The branch engine is shared; only the source of `Y_{m+1}` differs between
//! the abstract Gaussian mode and the field-driven mode.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{size_red_offset, x_v, World};
use crate::rng::{replica_seed, stream};
use crate::stats::{fit_line, slope_ci, wilson, Estimate, Proportion};

const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    Abstract,
    FieldDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub d: f64,
    pub sigma2: f64,
    pub big_n: u32,
    pub mode: WalkMode,
}

impl WalkParams {
    /// `d = (1 + γ²/2) log(1/ρ)`, `σ² = γ² log(1/ρ)`.
    pub fn new(gamma: f64, rho: f64, big_n: u32) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0,1), got {rho}")));
        }
        let l = -rho.ln();
        Self::raw((1.0 + 0.5 * gamma * gamma) * l, gamma * gamma * l, big_n)
    }

    pub fn raw(d: f64, sigma2: f64, big_n: u32) -> Result<Self> {
        if !(d > 0.0 && sigma2 > 0.0 && d.is_finite() && sigma2.is_finite()) {
            return Err(Error::domain(format!("need d > 0 and σ² > 0, got d = {d}, σ² = {sigma2}")));
        }
        Ok(WalkParams { d, sigma2, big_n, mode: WalkMode::Abstract })
    }

    pub fn field_driven(mut self) -> Self {
        self.mode = WalkMode::FieldDriven;
        self
    }
}

/// Law of `Y_N` in abstract mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Init {
    Value { y: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Init {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Init::Value { y } => y,
            Init::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Init::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `Y < −d`: `(i, j + 1)`.
    AdvanceS,
    /// `Y > d`: `(i + 1, j)`.
    AdvanceT,
    /// `|Y| ≤ d`: `(i + 2, j + 2)`.
    Both,
}

impl Branch {
    pub fn classify(y: f64, d: f64) -> Branch {
        if y < -d {
            Branch::AdvanceS
        } else if y > d {
            Branch::AdvanceT
        } else {
            Branch::Both
        }
    }

    pub fn step(self) -> (u32, u32) {
        match self {
            Branch::AdvanceS => (0, 1),
            Branch::AdvanceT => (1, 0),
            Branch::Both => (2, 2),
        }
    }

    pub fn from_step(di: u32, dj: u32) -> Option<Branch> {
        match (di, dj) {
            (0, 1) => Some(Branch::AdvanceS),
            (1, 0) => Some(Branch::AdvanceT),
            (2, 2) => Some(Branch::Both),
            _ => None,
        }
    }

    /// `(mean, variance)` of `Y_{m+1} − Y_m`.
    pub fn moments(self, d: f64, sigma2: f64) -> (f64, f64) {
        match self {
            Branch::AdvanceS => (d, sigma2),
            Branch::AdvanceT => (-d, sigma2),
            Branch::Both => (0.0, 4.0 * sigma2),
        }
    }
}

/// One trajectory. `y[k]` and `ij[k]` belong to `m = N + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    pub big_n: u32,
    pub d: f64,
    pub y: Vec<f64>,
    pub ij: Vec<(u32, u32)>,
    /// `T_1 < T_2 < …` (`T_0 = N − 1` is implicit).
    pub stops: Vec<usize>,
    pub ts: Vec<(f64, f64)>,
    pub seed: u64,
}

impl WalkTrace {
    pub fn branch(&self, k: usize) -> Branch {
        Branch::classify(self.y[k], self.d)
    }

    pub fn m(&self, k: usize) -> usize {
        self.big_n as usize + k
    }

    /// Last index `m` carried by the trace.
    pub fn last_m(&self) -> usize {
        self.m(self.y.len() - 1)
    }
}

/// `(i + u, j + v)` with `u, v ∈ [1, 3/2] ∪ {2}` minimal (u first) and `Y + d(v − u) = 0`.
pub fn select_pair(y: f64, i: u32, j: u32, d: f64) -> Result<(f64, f64)> {
    if !(d > 0.0) || !(y.abs() <= d) {
        return Err(Error::domain(format!("selection needs |Y| ≤ d, got Y = {y}, d = {d}")));
    }
    let r = y / d;
    // v − u = −r.
    let (u, v) = if r <= -0.5 {
        (2.0 + r, 2.0)
    } else if r <= 0.0 {
        (1.0, 1.0 - r)
    } else if r <= 0.5 {
        (1.0 + r, 1.0)
    } else {
        (2.0, 2.0 - r)
    };
    Ok((i as f64 + u, j as f64 + v))
}

/// Source of `Y_{m+1}` given the branch taken at `m`.
trait Source {
    fn initial(&mut self) -> Result<f64>;
    fn next(&mut self, y: f64, branch: Branch, i: u32, j: u32) -> Result<f64>;
}

struct Gaussian<R: Rng> {
    rng: R,
    init: Init,
    d: f64,
    sigma2: f64,
}

impl<R: Rng> Source for Gaussian<R> {
    fn initial(&mut self) -> Result<f64> {
        Ok(self.init.draw(&mut self.rng))
    }

    fn next(&mut self, y: f64, branch: Branch, _: u32, _: u32) -> Result<f64> {
        let (mean, var) = branch.moments(self.d, self.sigma2);
        let z: f64 = self.rng.sample(StandardNormal);
        Ok(y + mean + var.sqrt() * z)
    }
}

struct Fields<'a> {
    world: &'a World,
    offset: f64,
    n: f64,
}

impl Source for Fields<'_> {
    fn initial(&mut self) -> Result<f64> {
        Ok(x_v(self.world, self.n, self.n)? + self.offset)
    }

    fn next(&mut self, _: f64, _: Branch, i: u32, j: u32) -> Result<f64> {
        Ok(x_v(self.world, i as f64, j as f64)? + self.offset)
    }
}

fn drive(params: &WalkParams, steps: usize, seed: u64, src: &mut dyn Source) -> Result<WalkTrace> {
    if steps == 0 {
        return Err(Error::domain("a walk needs at least one step"));
    }
    let n = params.big_n;
    let d = params.d;
    let mut tr = WalkTrace {
        big_n: n,
        d,
        y: Vec::with_capacity(steps + 1),
        ij: Vec::with_capacity(steps + 1),
        stops: Vec::new(),
        ts: Vec::new(),
        seed,
    };
    let (mut i, mut j) = (n, n);
    let mut y = src.initial()?;
    for k in 0..=steps {
        tr.y.push(y);
        tr.ij.push((i, j));
        let b = Branch::classify(y, d);
        if b == Branch::Both {
            tr.stops.push(n as usize + k);
            tr.ts.push(select_pair(y, i, j, d)?);
        }
        if k == steps {
            break;
        }
        let (di, dj) = b.step();
        i += di;
        j += dj;
        y = src.next(y, b, i, j)?;
    }
    Ok(tr)
}

/// Abstract mode: exact Gaussian increments, `Y_N` drawn from `init`.
pub fn run_walk(params: &WalkParams, init: Init, steps: usize, seed: u64) -> Result<WalkTrace> {
    let mut src = Gaussian { rng: stream(seed, 0x57A1), init, d: params.d, sigma2: params.sigma2 };
    drive(params, steps, seed, &mut src)
}

/// Field-driven mode: `Y_m` is the SizeRed statistic at `(i_m, j_m)` read from
/// the world's stacks. `N + 2·steps` must not exceed the stack depth.
pub fn run_field_walk(params: &WalkParams, world: &World, steps: usize) -> Result<WalkTrace> {
    let stacks = world
        .stacks
        .as_ref()
        .ok_or_else(|| Error::Insufficient("field-driven walk needs field stacks".into()))?;
    let depth = stacks[0].spec.depth as usize;
    let reach = params.big_n as usize + 2 * steps;
    if reach > depth {
        return Err(Error::Scale(reach as f64));
    }
    let mut src = Fields { world, offset: size_red_offset(world, params.big_n)?, n: params.big_n as f64 };
    drive(params, steps, stacks[0].seed, &mut src)
}

/// `replicas` abstract traces, replica `r` seeded by `replica_seed(seed, r)`.
pub fn run_walks(params: &WalkParams, init: Init, steps: usize, seed: u64, replicas: usize) -> Result<Vec<WalkTrace>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| run_walk(params, init, steps, replica_seed(seed, r)))
        .collect()
}

/// Violations of the per-trace invariants; empty when the trace is sound.
pub fn trace_violations(tr: &WalkTrace) -> Vec<String> {
    let mut bad = Vec::new();
    for k in 1..tr.ij.len() {
        let (a, b) = (tr.ij[k - 1], tr.ij[k]);
        match Branch::from_step(b.0.wrapping_sub(a.0), b.1.wrapping_sub(a.1)) {
            Some(br) if br == tr.branch(k - 1) => {}
            _ => bad.push(format!("step {k}: ({:?}) → ({:?}) disagrees with Y = {}", a, b, tr.y[k - 1])),
        }
    }
    let mut prev: Option<(f64, f64)> = None;
    for (&m, &(t, s)) in tr.stops.iter().zip(&tr.ts) {
        let k = m - tr.big_n as usize;
        let (i, j) = tr.ij[k];
        let (u, v) = (t - i as f64, s - j as f64);
        let root = tr.y[k] + tr.d * (v - u);
        if root.abs() > ROOT_TOL * tr.d.max(1.0) {
            bad.push(format!("m = {m}: Y + d(v − u) = {root:e}"));
        }
        for (name, x) in [("t", t), ("s", s)] {
            let f = x - x.floor();
            if !(0.0..=0.5).contains(&f) {
                bad.push(format!("m = {m}: {name} = {x} has fractional part {f}"));
            }
        }
        if let Some((pt, ps)) = prev {
            if t - pt < 0.25 || s - ps < 0.25 {
                bad.push(format!("m = {m}: spacing ({}, {}) below 1/4", t - pt, s - ps));
            }
        }
        prev = Some((t, s));
    }
    bad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationStats {
    pub window: (usize, usize),
    /// Per-trace fraction of `m` in the window with `|Y_m| ≤ d`, averaged.
    pub fraction: Estimate,
    /// `k` in `P(T_k ≤ window.1)`.
    pub k: usize,
    pub stop_by_end: Proportion,
}

/// Occupation of `[−d, d]` over `window` and `P(T_k ≤ window.1)`, `k = ⌈δ′N⌉`.
pub fn occupation_stats(traces: &[WalkTrace], window: (usize, usize), delta_prime: f64) -> Result<OccupationStats> {
    if traces.len() < 100 {
        return Err(Error::Insufficient(format!("{} traces, need at least 100", traces.len())));
    }
    let (lo, hi) = window;
    let n = traces[0].big_n as usize;
    if lo < n || hi < lo {
        return Err(Error::domain(format!("window [{lo}, {hi}] must start at or after N = {n}")));
    }
    if traces.iter().any(|t| t.last_m() < hi || t.big_n as usize != n) {
        return Err(Error::Insufficient(format!("every trace must start at N = {n} and reach m = {hi}")));
    }
    let k = ((delta_prime * n as f64).ceil() as usize).max(1);
    let fractions: Vec<f64> = traces
        .iter()
        .map(|t| {
            let inside = (lo..=hi).filter(|&m| t.y[m - n].abs() <= t.d).count();
            inside as f64 / (hi - lo + 1) as f64
        })
        .collect();
    let hits = traces.iter().filter(|t| t.stops.get(k - 1).is_some_and(|&m| m <= hi)).count();
    Ok(OccupationStats { window, fraction: Estimate::of(&fractions), k, stop_by_end: wilson(hits, traces.len()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvershootRate {
    pub a: f64,
    pub rate: Proportion,
    /// `e^{−a²/2σ²}`.
    pub gaussian: f64,
}

const MIN_CONDITIONING: usize = 100;

/// `P(Y_S < a | Y_N > d)` with `S` the first `m ≥ N` where `Y_m ≤ d`.
/// Traces that never come down are dropped from the conditioning.
pub fn overshoot_tail(traces: &[WalkTrace], a: f64, sigma2: f64) -> Result<OvershootRate> {
    let d = traces.first().map(|t| t.d).ok_or_else(|| Error::Insufficient("no traces".into()))?;
    if a > -d {
        return Err(Error::domain(format!("threshold {a} must be ≤ −d = {}", -d)));
    }
    let landings: Vec<f64> = traces
        .iter()
        .filter(|t| t.y[0] > t.d)
        .filter_map(|t| t.y.iter().find(|&&y| y <= t.d).copied())
        .collect();
    if landings.len() < MIN_CONDITIONING {
        return Err(Error::Insufficient(format!(
            "{} conditioning events, need {MIN_CONDITIONING}",
            landings.len()
        )));
    }
    let below = landings.iter().filter(|&&y| y < a).count();
    Ok(OvershootRate { a, rate: wilson(below, landings.len()), gaussian: (-a * a / (2.0 * sigma2)).exp() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub overshoot: OvershootRate,
    pub bound: f64,
    pub below: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub c_hat: f64,
    pub probes: Vec<OvershootRate>,
    pub held_out: Vec<EnvelopeRow>,
}

/// Fit `Ĉ = max rate/e^{−a²/2σ²}` on `probes`, then test each held-out threshold.
/// A held-out rate counts as below the envelope unless its Wilson interval lies
/// entirely above it; with a handful of events the point rate alone is too noisy.
pub fn overshoot_envelope(traces: &[WalkTrace], probes: &[f64], held_out: &[f64], sigma2: f64) -> Result<EnvelopeReport> {
    if probes.iter().any(|p| held_out.contains(p)) {
        return Err(Error::domain("probe and held-out thresholds must be disjoint"));
    }
    let probes: Vec<OvershootRate> = probes.iter().map(|&a| overshoot_tail(traces, a, sigma2)).collect::<Result<_>>()?;
    let c_hat = probes.iter().map(|p| p.rate.rate / p.gaussian).fold(0.0, f64::max);
    let held_out = held_out
        .iter()
        .map(|&a| {
            let o = overshoot_tail(traces, a, sigma2)?;
            let bound = c_hat * o.gaussian;
            Ok(EnvelopeRow { below: o.rate.lo <= bound, bound, overshoot: o })
        })
        .collect::<Result<_>>()?;
    Ok(EnvelopeReport { c_hat, probes, held_out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInReport {
    pub u: f64,
    /// `⌈8|u|/d⌉`.
    pub j0: usize,
    /// `(j, P(T_1 − N > j))` for `j ≥ j0` while at least `min_count` traces exceed `j`.
    pub tail: Vec<(usize, Proportion)>,
    pub log_slope: f64,
    pub slope_ci: (f64, f64),
    pub geometric: bool,
}

/// Decay shape of `P(T_1 − N > j | Y_N = u)` beyond `j0 = ⌈8|u|/d⌉`: geometric
/// when the log-linear slope is negative with its 95% interval below zero.
/// Traces with no stop count as exceeding every `j` they cover.
pub fn burn_in_decay(traces: &[WalkTrace], min_count: usize) -> Result<BurnInReport> {
    let first = traces.first().ok_or_else(|| Error::Insufficient("no traces".into()))?;
    let (u, d) = (first.y[0], first.d);
    if traces.iter().any(|t| t.y[0] != u) {
        return Err(Error::domain("burn-in tail needs a common starting value"));
    }
    let j0 = (8.0 * u.abs() / d).ceil() as usize;
    let horizon = traces.iter().map(|t| t.y.len() - 1).min().unwrap_or(0);
    let waits: Vec<usize> = traces
        .iter()
        .map(|t| t.stops.first().map_or(usize::MAX, |&m| m - t.big_n as usize))
        .collect();
    let mut tail = Vec::new();
    for j in j0..horizon {
        let over = waits.iter().filter(|&&w| w > j).count();
        if over < min_count {
            break;
        }
        tail.push((j, wilson(over, traces.len())));
    }
    if tail.len() < 3 {
        return Err(Error::Insufficient(format!("only {} tail points beyond j0 = {j0}", tail.len())));
    }
    let xs: Vec<f64> = tail.iter().map(|(j, _)| *j as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, p)| p.rate.ln()).collect();
    let fit = fit_line(&xs, &ys);
    let ci = slope_ci(&xs, &ys);
    Ok(BurnInReport { u, j0, tail, log_slope: fit.slope, slope_ci: ci, geometric: fit.slope < 0.0 && ci.1 < 0.0 })
}

/// Increment samples grouped by branch: `[AdvanceS, AdvanceT, Both]`.
pub fn increments_by_branch(traces: &[WalkTrace]) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for t in traces {
        for k in 1..t.y.len() {
            let slot = match t.branch(k - 1) {
                Branch::AdvanceS => 0,
                Branch::AdvanceT => 1,
                Branch::Both => 2,
            };
            out[slot].push(t.y[k] - t.y[k - 1]);
        }
    }
    out
}
