//! Analytic against empirical covariance of the sampled fields.
//!
//! Empirical values are per-replica spatial averages `M⁻¹ Σ_i f_i f_{i+k}`
//! (fields are centred, so no mean is subtracted); replicas are iid, which
//! makes the standard error of the replica mean honest.

use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::replica_seed;
use crate::stats::Estimate;
use crate::whitenoise::{overlap_by_quadrature, slab_overlap_area, FieldSampler, RegionKind, Scale, StackSpec};

const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovRow {
    /// Grid offset `k`; the circle offset is `k/M`.
    pub k: usize,
    pub t: f64,
    pub analytic: f64,
    pub empirical: Estimate,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovTable {
    pub field: String,
    pub grid: usize,
    pub rho: f64,
    pub replicas: usize,
    /// Slab `[lo, hi]` in `y`; `hi = ∞` is serialized as `null`.
    pub slab: (f64, Option<f64>),
    pub rows: Vec<CovRow>,
    pub pass_fraction: f64,
}

/// `2 log 2 + log(1/(2 sin πt))`, the cutoff-free H covariance.
pub fn h_kernel_limit(t: f64) -> f64 {
    2.0 * LN_2 - (2.0 * (PI * t).sin()).ln()
}

/// `log(r/δ) − |b − a|(1/δ − 1/r)`: V covariance on `δ ≤ y ≤ r ≤ 1/2` for `|b − a| ≤ δ`.
pub fn v_band_closed_form(delta: f64, r: f64, gap: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < r && r <= 0.5 && gap.abs() <= delta) {
        return Err(Error::domain(format!(
            "closed form needs 0 < δ < r ≤ 1/2 and |b − a| ≤ δ (δ = {delta}, r = {r}, gap = {gap})"
        )));
    }
    Ok((r / delta).ln() - gap.abs() * (1.0 / delta - 1.0 / r))
}

fn lag_products(f: &[f64], offsets: &[usize]) -> Vec<f64> {
    let m = f.len();
    offsets
        .iter()
        .map(|&k| (0..m).map(|i| f[i] * f[(i + k) % m]).sum::<f64>() / m as f64)
        .collect()
}

fn tabulate(
    samples: Vec<Vec<f64>>,
    offsets: &[usize],
    grid: usize,
    analytic: impl Fn(usize) -> Result<f64>,
) -> Result<(Vec<CovRow>, f64)> {
    let mut rows = Vec::with_capacity(offsets.len());
    for (c, &k) in offsets.iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let empirical = Estimate::of(&col);
        let a = analytic(k)?;
        let z = empirical.z(a);
        rows.push(CovRow { k, t: k as f64 / grid as f64, analytic: a, empirical, z, pass: z <= 3.0 });
    }
    let frac = rows.iter().filter(|r| r.pass).count() as f64 / rows.len() as f64;
    Ok((rows, frac))
}

fn check_offsets(offsets: &[usize], grid: usize) -> Result<()> {
    if offsets.is_empty() || offsets.iter().any(|&k| k > grid / 2) {
        return Err(Error::domain("offsets must be non-empty and at most M/2"));
    }
    Ok(())
}

/// H field at the stack's finest scale against the quadrature overlap on `[ρ^depth, ∞)`.
pub fn h_covariance(spec: StackSpec, offsets: &[usize], replicas: usize, seed: u64) -> Result<CovTable> {
    check_offsets(offsets, spec.grid_size)?;
    if replicas < 2 {
        return Err(Error::Insufficient("need at least two replicas".into()));
    }
    let spec = spec.h_only();
    let sampler = FieldSampler::new(spec)?;
    let finest = Scale::integer(spec.depth);
    let samples: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let stack = sampler.sample(replica_seed(seed, r));
            stack.h_field(finest).map(|f| lag_products(&f, offsets))
        })
        .collect::<Result<_>>()?;
    let lo = finest.rho_pow(spec.rho);
    let m = spec.grid_size;
    let (rows, pass_fraction) = tabulate(samples, offsets, m, |k| {
        overlap_by_quadrature(RegionKind::H, RegionKind::H, lo, f64::INFINITY, k as f64 / m as f64, QUAD_TOL)
    })?;
    Ok(CovTable {
        field: "H".into(),
        grid: m,
        rho: spec.rho,
        replicas,
        slab: (lo, None),
        rows,
        pass_fraction,
    })
}

/// V band between integer scales `s < t` against the closed form.
pub fn v_band_covariance(
    grid: usize,
    rho: f64,
    s: u32,
    t: u32,
    offsets: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<CovTable> {
    check_offsets(offsets, grid)?;
    if s >= t {
        return Err(Error::domain("band needs s < t"));
    }
    let spec = StackSpec::new(grid, rho, t);
    let sampler = FieldSampler::new(spec)?;
    let (ss, ts) = (Scale::integer(s), Scale::integer(t));
    let (delta, r) = (ts.rho_pow(rho), ss.rho_pow(rho));
    let samples: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|q| {
            let stack = sampler.sample(replica_seed(seed, q));
            stack.v_band_field(ss, ts).map(|f| lag_products(&f, offsets))
        })
        .collect::<Result<_>>()?;
    let (rows, pass_fraction) =
        tabulate(samples, offsets, grid, |k| v_band_closed_form(delta, r, k as f64 / grid as f64))?;
    Ok(CovTable { field: "V band".into(), grid, rho, replicas, slab: (delta, Some(r)), rows, pass_fraction })
}

/// `Var V_ξ` from the region (`log(1/(2ξ))`) against `−log ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceOffset {
    pub xi: f64,
    pub region_value: f64,
    pub log_inverse_xi: f64,
    pub offset: f64,
    pub empirical: Estimate,
    /// Empirical value within 3 SE of `log(1/(2ξ))`.
    pub region_consistent: bool,
    /// Empirical value within 3 SE of `−log ξ`.
    pub log_inverse_consistent: bool,
}

pub fn v_variance_offset(grid: usize, rho: f64, k: u32, replicas: usize, seed: u64) -> Result<VarianceOffset> {
    let spec = StackSpec::new(grid, rho, k);
    let sampler = FieldSampler::new(spec)?;
    let sc = Scale::integer(k);
    let xi = sc.rho_pow(rho);
    if xi >= 0.5 {
        return Err(Error::domain("need ξ < 1/2"));
    }
    let vars: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|q| {
            let stack = sampler.sample(replica_seed(seed, q));
            let f: Vec<f64> = (0..grid).map(|i| stack.v_at(i, sc)).collect::<Result<_>>()?;
            Ok(lag_products(&f, &[0])[0])
        })
        .collect::<Result<_>>()?;
    let empirical = Estimate::of(&vars);
    let region_value = slab_overlap_area(RegionKind::V, xi, f64::INFINITY, 0.0)?;
    let log_inverse_xi = -xi.ln();
    Ok(VarianceOffset {
        xi,
        region_value,
        log_inverse_xi,
        offset: log_inverse_xi - region_value,
        region_consistent: empirical.z(region_value) <= 3.0,
        log_inverse_consistent: empirical.z(log_inverse_xi) <= 3.0,
        empirical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub t: f64,
    pub cutoff: f64,
    pub oracle: f64,
    pub limit: f64,
    pub error: f64,
}

/// Quadrature oracle on `[cutoff, ∞)` against the cutoff-free kernel.
pub fn h_oracle_convergence(ts: &[f64], cutoffs: &[f64]) -> Result<Vec<LimitRow>> {
    let mut out = Vec::new();
    for &c in cutoffs {
        for &t in ts {
            let oracle = overlap_by_quadrature(RegionKind::H, RegionKind::H, c, f64::INFINITY, t, QUAD_TOL)?;
            let limit = h_kernel_limit(t);
            out.push(LimitRow { t, cutoff: c, oracle, limit, error: (oracle - limit).abs() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub h: CovTable,
    pub v_band: CovTable,
    pub v_offset: VarianceOffset,
    pub convergence: Vec<LimitRow>,
}

/// Offsets `0, 1, 2, 4, …` up to `M/2`, plus a few interior points.
pub fn default_offsets(grid: usize) -> Vec<usize> {
    let mut ks = vec![0];
    let mut k = 1;
    while k <= grid / 2 {
        ks.push(k);
        if k >= 4 && k * 3 / 2 <= grid / 2 {
            ks.push(k * 3 / 2);
        }
        k *= 2;
    }
    ks.sort_unstable();
    ks.dedup();
    ks
}
