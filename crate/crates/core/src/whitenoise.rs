//! Periodic hyperbolic white-noise fields sampled as independent per-slab
//! Gaussian layers on the circle grid `x_i = i/M`.
//!
//! A slab `[lo, hi]` of the half-plane contributes a stationary periodic
//! process `x ↦ W((R + x) ∩ {lo ≤ y ≤ hi})` for each region `R ∈ {H, V}`.
//! Both regions of one slab share the same noise, so their processes are
//! sampled jointly; distinct slabs are independent.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::rng;

const C: f64 = PI / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    H,
    V,
}

/// Half-width of the horizontal cross-section of the region at height `y`.
pub fn region_halfwidth(kind: RegionKind, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::domain(format!("height must be positive, got {y}")));
    }
    Ok(halfwidth(kind, y))
}

fn halfwidth(kind: RegionKind, y: f64) -> f64 {
    match kind {
        RegionKind::H => (C * y).atan() / PI,
        RegionKind::V => {
            if y <= 0.5 {
                0.5 * y
            } else {
                0.0
            }
        }
    }
}

/// `∫_p^q 2w_H(y)/y² dy`, `q` possibly infinite.
fn fh_diff(p: f64, q: f64) -> f64 {
    let atan_ratio = |y: f64| (C * y).atan() / y;
    if q.is_infinite() {
        return (2.0 / PI) * atan_ratio(p) - (C * p).ln() + 0.5 * (C * C * p * p).ln_1p();
    }
    -(2.0 / PI) * (atan_ratio(q) - atan_ratio(p)) + (q / p).ln()
        - 0.5 * ((C * C * q * q).ln_1p() - (C * C * p * p).ln_1p())
}

fn inv_diff(p: f64, q: f64) -> f64 {
    if q.is_infinite() {
        -1.0 / p
    } else {
        1.0 / q - 1.0 / p
    }
}

/// Smallest `y` in `(0, cap]` with `f(y) ≥ d` for increasing `f`; `None` if `f(cap) < d`.
fn threshold<F: Fn(f64) -> f64>(f: F, d: f64, cap: f64) -> Option<f64> {
    if f(cap) < d {
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// `∫_a^b max(0, 2w(y) − d)/y² dy` for one periodic copy at distance `d`.
fn self_overlap(kind: RegionKind, a: f64, b: f64, d: f64) -> Result<f64> {
    match kind {
        RegionKind::H => {
            if d >= 1.0 {
                return Ok(0.0);
            }
            let yd = (2.0 / PI) * (C * d).tan();
            let lo = a.max(yd);
            if lo >= b {
                return Ok(0.0);
            }
            if lo == 0.0 {
                return Err(Error::domain("overlap diverges at y = 0 with zero offset"));
            }
            Ok(fh_diff(lo, b) + d * inv_diff(lo, b))
        }
        RegionKind::V => {
            let hi = b.min(0.5);
            let lo = a.max(d);
            if lo >= hi {
                return Ok(0.0);
            }
            if lo == 0.0 {
                return Err(Error::domain("overlap diverges at y = 0 with zero offset"));
            }
            Ok((hi / lo).ln() + d * (1.0 / hi - 1.0 / lo))
        }
    }
}

/// `∫_a^b |[−w_H, w_H] ∩ [d − w_V, d + w_V]|/y² dy` for one periodic copy.
fn cross_overlap(a: f64, b: f64, d: f64) -> f64 {
    let hi = b.min(0.5);
    if a >= hi {
        return 0.0;
    }
    let gap = |y: f64| 0.5 * y - (C * y).atan() / PI;
    let sum = |y: f64| 0.5 * y + (C * y).atan() / PI;
    let y_touch = match threshold(sum, d, hi) {
        Some(y) => y,
        None => return 0.0,
    };
    let y_inside = if d == 0.0 { Some(0.0) } else { threshold(gap, d, hi) };
    let mut total = 0.0;
    let partial_lo = a.max(y_touch);
    let partial_hi = y_inside.unwrap_or(hi).min(hi);
    if partial_lo < partial_hi {
        total += 0.5 * fh_diff(partial_lo, partial_hi)
            + 0.5 * (partial_hi / partial_lo).ln()
            + d * (1.0 / partial_hi - 1.0 / partial_lo);
    }
    if let Some(yi) = y_inside {
        let full_lo = a.max(yi);
        if full_lo < hi && full_lo > 0.0 {
            total += fh_diff(full_lo, hi);
        }
    }
    total
}

fn check_slab(a: f64, b: f64, t: f64) -> Result<f64> {
    if !(a >= 0.0) || !(a < b) {
        return Err(Error::domain(format!("slab requires 0 ≤ a < b, got a={a}, b={b}")));
    }
    if !t.is_finite() {
        return Err(Error::domain("offset must be finite"));
    }
    Ok(t.rem_euclid(1.0))
}

/// `Cov[W((R+0)∩S), W((R+t)∩S)]` for the slab `S = {a ≤ y ≤ b}`: the area
/// `∫_a^b Σ_n max(0, 2w(y) − |t−n|) y⁻² dy`.
pub fn slab_overlap_area(kind: RegionKind, a: f64, b: f64, t: f64) -> Result<f64> {
    let t = check_slab(a, b, t)?;
    Ok(self_overlap(kind, a, b, t)? + self_overlap(kind, a, b, 1.0 - t)?)
}

/// `Cov[W((H+0)∩S), W((V+t)∩S)]` for the slab `S = {a ≤ y ≤ b}`.
pub fn cross_overlap_area(a: f64, b: f64, t: f64) -> Result<f64> {
    let t = check_slab(a, b, t)?;
    if a == 0.0 && t == 0.0 {
        return Err(Error::domain("overlap diverges at y = 0 with zero offset"));
    }
    Ok(cross_overlap(a, b, t) + cross_overlap(a, b, 1.0 - t))
}

/// The same pair overlap by adaptive quadrature of the cross-section overlap length.
pub fn overlap_by_quadrature(
    first: RegionKind,
    second: RegionKind,
    a: f64,
    b: f64,
    t: f64,
    tol: f64,
) -> Result<f64> {
    let t = check_slab(a, b, t)?;
    let f = |y: f64| {
        if y <= 0.0 {
            return 0.0;
        }
        let (u, v) = (halfwidth(first, y), halfwidth(second, y));
        let mut len = 0.0;
        for d in [t, 1.0 - t] {
            len += ((u).min(d + v) - (-u).max(d - v)).max(0.0);
        }
        len / (y * y)
    };
    let mut cuts = vec![a];
    for k in -80..=40 {
        let p = 2f64.powi(k);
        if p > a && p < b {
            cuts.push(p);
        }
    }
    cuts.push(b);
    Ok(cuts.windows(2).map(|w| quad::integrate(f, w[0], w[1], tol)).sum())
}

/// `Var[U_δ^r]` for `U = H − V` restricted to `δ ≤ y ≤ r ≤ 1/2`:
/// `∫_δ^r (y − (2/π)·arctan(πy/2)) y⁻² dy`.
pub fn u_variance(delta: f64, r: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < r && r <= 0.5) {
        return Err(Error::domain("u_variance requires 0 < δ < r ≤ 1/2"));
    }
    // g(y) = (2/π)arctan(cy)/y + ½ln(1+c²y²) − 1, expanded near 0.
    let g = |y: f64| {
        let x = C * y;
        if x < 0.05 {
            let x2 = x * x;
            let atan_part = (2.0 / PI) * C * (-x2 / 3.0 + x2 * x2 / 5.0 - x2 * x2 * x2 / 7.0);
            let log_part = 0.5 * (x2 - x2 * x2 / 2.0 + x2 * x2 * x2 / 3.0);
            atan_part + log_part
        } else {
            (2.0 / PI) * x.atan() / y + 0.5 * (x * x).ln_1p() - 1.0
        }
    };
    Ok(g(r) - g(delta))
}

/// A scale `t` on the quarter lattice, stored as `4t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Scale(u32);

impl Scale {
    pub const fn from_quarters(q: u32) -> Self {
        Scale(q)
    }

    pub const fn integer(k: u32) -> Self {
        Scale(4 * k)
    }

    pub fn new(t: f64) -> Result<Self> {
        let q = 4.0 * t;
        if !(t >= 0.0) || (q - q.round()).abs() > 1e-9 || q > u32::MAX as f64 {
            return Err(Error::Scale(t));
        }
        Ok(Scale(q.round() as u32))
    }

    pub fn quarters(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 4.0
    }

    pub fn floor(self) -> u32 {
        self.0 / 4
    }

    pub fn plus_quarters(self, q: u32) -> Self {
        Scale(self.0 + q)
    }

    pub fn rho_pow(self, rho: f64) -> f64 {
        rho.powf(self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub grid_size: usize,
    pub rho: f64,
    /// Finest integer scale index resolved.
    pub depth: u32,
    /// Layers per integer scale step: 1, 2 or 4.
    pub substeps: u32,
    pub with_v: bool,
}

impl StackSpec {
    pub fn new(grid_size: usize, rho: f64, depth: u32) -> Self {
        StackSpec { grid_size, rho, depth, substeps: 1, with_v: true }
    }

    pub fn quarter(mut self) -> Self {
        self.substeps = 4;
        self
    }

    pub fn h_only(mut self) -> Self {
        self.with_v = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 || !self.grid_size.is_power_of_two() {
            return Err(Error::domain(format!("grid size {} is not a power of two", self.grid_size)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if ![1, 2, 4].contains(&self.substeps) {
            return Err(Error::domain("substeps must be 1, 2 or 4"));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        (self.depth * self.substeps) as usize
    }

    /// Slab `[lo, hi]` of layer `q` (layer 0 is the coarsest below y = 1).
    pub fn slab(&self, q: usize) -> (f64, f64) {
        let s = self.substeps as f64;
        (self.rho.powf((q + 1) as f64 / s), self.rho.powf(q as f64 / s))
    }

    /// Number of layers above scale `t`; fails off the resolved lattice.
    pub fn layers_above(&self, t: Scale) -> Result<usize> {
        let step = 4 / self.substeps;
        if t.quarters() % step != 0 || t.quarters() > 4 * self.depth {
            return Err(Error::Scale(t.value()));
        }
        Ok((t.quarters() / step) as usize)
    }

    pub fn var_h(&self, t: Scale) -> f64 {
        slab_overlap_area(RegionKind::H, t.rho_pow(self.rho), f64::INFINITY, 0.0)
            .expect("positive cutoff")
    }

    pub fn var_v(&self, t: Scale) -> f64 {
        slab_overlap_area(RegionKind::V, t.rho_pow(self.rho), f64::INFINITY, 0.0)
            .expect("positive cutoff")
    }

    /// Variance of `H_{ρ^t} − H_{ρ^s}` for `s ≤ t`.
    pub fn var_h_band(&self, s: Scale, t: Scale) -> f64 {
        if s == t {
            return 0.0;
        }
        slab_overlap_area(RegionKind::H, t.rho_pow(self.rho), s.rho_pow(self.rho), 0.0)
            .expect("ordered band")
    }

    /// Variance of `V_{ρ^t} − V_{ρ^s}` for `s ≤ t`.
    pub fn var_v_band(&self, s: Scale, t: Scale) -> f64 {
        if s == t {
            return 0.0;
        }
        slab_overlap_area(RegionKind::V, t.rho_pow(self.rho), s.rho_pow(self.rho), 0.0)
            .expect("ordered band")
    }
}

enum Root {
    Single(Vec<f64>),
    Joint { hh: Vec<f64>, hv: Vec<f64>, vv: Vec<f64> },
}

/// Precomputed spectral square roots for every layer of a [`StackSpec`].
pub struct FieldSampler {
    spec: StackSpec,
    fft: Arc<dyn Fft<f64>>,
    top: Root,
    layers: Vec<Root>,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSampler").field("spec", &self.spec).finish()
    }
}

fn spectrum(fft: &Arc<dyn Fft<f64>>, cov: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = cov.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

fn covariance_row<F: Fn(f64) -> Result<f64>>(m: usize, f: F) -> Result<Vec<f64>> {
    let mut row = vec![0.0; m];
    for j in 0..=m / 2 {
        let v = f(j as f64 / m as f64)?;
        row[j] = v;
        row[(m - j) % m] = v;
    }
    Ok(row)
}

fn clip(mode: usize, lambda: f64, scale: f64) -> Result<f64> {
    if lambda >= 0.0 {
        Ok(lambda)
    } else if lambda >= -1e-9 * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Covariance { mode, eigenvalue: lambda })
    }
}

impl FieldSampler {
    pub fn new(spec: StackSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.grid_size;
        let fft = FftPlanner::new().plan_fft_forward(m);
        let single = |lo: f64, hi: f64| -> Result<Root> {
            let row = covariance_row(m, |t| slab_overlap_area(RegionKind::H, lo, hi, t))?;
            let lam = spectrum(&fft, &row);
            let scale = lam.iter().cloned().fold(0.0, f64::max);
            let mut root = Vec::with_capacity(m);
            for (k, &l) in lam.iter().enumerate() {
                root.push((clip(k, l, scale)? / m as f64).sqrt());
            }
            Ok(Root::Single(root))
        };
        let top = single(1.0, f64::INFINITY)?;
        let mut layers = Vec::with_capacity(spec.layer_count());
        for q in 0..spec.layer_count() {
            let (lo, hi) = spec.slab(q);
            if !spec.with_v || lo >= 0.5 {
                layers.push(single(lo, hi)?);
                continue;
            }
            let hh = spectrum(&fft, &covariance_row(m, |t| slab_overlap_area(RegionKind::H, lo, hi, t))?);
            let vv = spectrum(&fft, &covariance_row(m, |t| slab_overlap_area(RegionKind::V, lo, hi, t))?);
            let hv = spectrum(&fft, &covariance_row(m, |t| cross_overlap_area(lo, hi, t))?);
            let scale = hh.iter().chain(vv.iter()).cloned().fold(0.0, f64::max);
            let (mut r11, mut r12, mut r22) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
            for k in 0..m {
                let (a, b, c) = (hh[k], vv[k], hv[k]);
                let mean = 0.5 * (a + b);
                let rad = (0.25 * (a - b).powi(2) + c * c).sqrt();
                let l1 = clip(k, mean + rad, scale)?;
                let l2 = clip(k, mean - rad, scale)?;
                let s = (l1 * l2).sqrt();
                let tr = (l1 + l2 + 2.0 * s).sqrt();
                if tr > 0.0 {
                    // sqrt of a 2×2 PSD matrix: (A + √det·I)/√(tr A + 2√det)
                    let norm = 1.0 / (tr * (m as f64).sqrt());
                    let (a, b) = (a.max(0.0), b.max(0.0));
                    r11[k] = (a + s) * norm;
                    r12[k] = c * norm;
                    r22[k] = (b + s) * norm;
                }
            }
            layers.push(Root::Joint { hh: r11, hv: r12, vv: r22 });
        }
        Ok(FieldSampler { spec, fft, top, layers })
    }

    pub fn spec(&self) -> &StackSpec {
        &self.spec
    }

    fn hermitian_noise<R: Rng>(&self, rng: &mut R, out: &mut [Complex64]) {
        let m = out.len();
        out[0] = Complex64::new(rng.sample(StandardNormal), 0.0);
        out[m / 2] = Complex64::new(rng.sample(StandardNormal), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..m / 2 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            out[k] = Complex64::new(a * s, b * s);
            out[m - k] = Complex64::new(a * s, -b * s);
        }
    }

    fn realize(&self, buf: &mut [Complex64]) -> Vec<f64> {
        self.fft.process(buf);
        buf.iter().map(|z| z.re).collect()
    }

    fn sample_root<R: Rng>(&self, root: &Root, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let m = self.spec.grid_size;
        match root {
            Root::Single(r) => {
                let mut eta = vec![Complex64::new(0.0, 0.0); m];
                self.hermitian_noise(rng, &mut eta);
                for (e, &w) in eta.iter_mut().zip(r) {
                    *e *= w;
                }
                (self.realize(&mut eta), Vec::new())
            }
            Root::Joint { hh, hv, vv } => {
                let mut e1 = vec![Complex64::new(0.0, 0.0); m];
                let mut e2 = vec![Complex64::new(0.0, 0.0); m];
                self.hermitian_noise(rng, &mut e1);
                self.hermitian_noise(rng, &mut e2);
                let mut xh = vec![Complex64::new(0.0, 0.0); m];
                let mut xv = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..m {
                    xh[k] = e1[k] * hh[k] + e2[k] * hv[k];
                    xv[k] = e1[k] * hv[k] + e2[k] * vv[k];
                }
                (self.realize(&mut xh), self.realize(&mut xv))
            }
        }
    }

    /// One stack; `seed` fully determines the result.
    pub fn sample(&self, seed: u64) -> FieldStack {
        let mut g_rng = rng::stream(seed, 0);
        let g: f64 = g_rng.sample::<f64, _>(StandardNormal) * (2.0 * LN_2).sqrt();
        let (top, _) = self.sample_root(&self.top, &mut rng::stream(seed, 1));
        let mut layers_h = Vec::with_capacity(self.layers.len());
        let mut layers_v = Vec::with_capacity(self.layers.len());
        for (q, root) in self.layers.iter().enumerate() {
            let (h, v) = self.sample_root(root, &mut rng::stream(seed, 2 + q as u64));
            layers_h.push(h);
            layers_v.push(v);
        }
        FieldStack { spec: self.spec, top_h: top, layers_h, layers_v, g, seed }
    }
}

/// Samples of one replica of the layered fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStack {
    pub spec: StackSpec,
    /// `H_1(x_i)`.
    pub top_h: Vec<f64>,
    /// Layer `q`: `H_{lo} − H_{hi}` over the slab of [`StackSpec::slab`].
    pub layers_h: Vec<Vec<f64>>,
    /// Same for V; empty vectors stand for identically zero layers.
    pub layers_v: Vec<Vec<f64>>,
    pub g: f64,
    pub seed: u64,
}

/// Convenience wrapper: build a sampler and draw one stack.
pub fn sample_field_stack(spec: StackSpec, seed: u64) -> Result<FieldStack> {
    Ok(FieldSampler::new(spec)?.sample(seed))
}

impl FieldStack {
    pub fn grid_size(&self) -> usize {
        self.spec.grid_size
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.spec.grid_size {
            return Err(Error::Index(format!("grid index {i} ≥ {}", self.spec.grid_size)));
        }
        Ok(())
    }

    fn v_layer(&self, q: usize, i: usize) -> f64 {
        self.layers_v.get(q).and_then(|l| l.get(i)).copied().unwrap_or(0.0)
    }

    /// `H_{ρ^t}(x_i)`.
    pub fn h_at(&self, i: usize, t: Scale) -> Result<f64> {
        self.check_index(i)?;
        let n = self.spec.layers_above(t)?;
        Ok(self.top_h[i] + self.layers_h[..n].iter().map(|l| l[i]).sum::<f64>())
    }

    /// `V_{ρ^t}(x_i)`.
    pub fn v_at(&self, i: usize, t: Scale) -> Result<f64> {
        self.check_index(i)?;
        let n = self.spec.layers_above(t)?;
        Ok((0..n).map(|q| self.v_layer(q, i)).sum())
    }

    /// `H_{ρ^t}(x_i) − H_{ρ^s}(x_i)` for `s ≤ t`.
    pub fn h_band(&self, i: usize, s: Scale, t: Scale) -> Result<f64> {
        self.check_index(i)?;
        let (a, b) = (self.spec.layers_above(s)?, self.spec.layers_above(t)?);
        Ok(self.layers_h[a.min(b)..b.max(a)].iter().map(|l| l[i]).sum::<f64>() * sign(a, b))
    }

    /// `V_{ρ^t}(x_i) − V_{ρ^s}(x_i)` for `s ≤ t`.
    pub fn v_band(&self, i: usize, s: Scale, t: Scale) -> Result<f64> {
        self.check_index(i)?;
        let (a, b) = (self.spec.layers_above(s)?, self.spec.layers_above(t)?);
        Ok((a.min(b)..b.max(a)).map(|q| self.v_layer(q, i)).sum::<f64>() * sign(a, b))
    }

    /// Whole-grid `H_{ρ^t}`.
    pub fn h_field(&self, t: Scale) -> Result<Vec<f64>> {
        let n = self.spec.layers_above(t)?;
        let mut out = self.top_h.clone();
        for l in &self.layers_h[..n] {
            for (o, v) in out.iter_mut().zip(l) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Whole-grid `H_{ρ^t} − H_{ρ^s}` (`s ≤ t`).
    pub fn h_band_field(&self, s: Scale, t: Scale) -> Result<Vec<f64>> {
        let (a, b) = (self.spec.layers_above(s)?, self.spec.layers_above(t)?);
        let mut out = vec![0.0; self.spec.grid_size];
        for l in &self.layers_h[a..b.max(a)] {
            for (o, v) in out.iter_mut().zip(l) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Whole-grid `V_{ρ^t} − V_{ρ^s}` (`s ≤ t`).
    pub fn v_band_field(&self, s: Scale, t: Scale) -> Result<Vec<f64>> {
        let (a, b) = (self.spec.layers_above(s)?, self.spec.layers_above(t)?);
        let mut out = vec![0.0; self.spec.grid_size];
        for l in &self.layers_v[a..b.max(a)] {
            for (o, v) in out.iter_mut().zip(l) {
                *o += v;
            }
        }
        Ok(out)
    }
}

fn sign(a: usize, b: usize) -> f64 {
    if b >= a {
        1.0
    } else {
        -1.0
    }
}

/// `H_{ρ^k}(x_i)` at integer scale `k`.
pub fn field_at(stack: &FieldStack, i: usize, k: u32) -> Result<f64> {
    stack.h_at(i, Scale::integer(k))
}
