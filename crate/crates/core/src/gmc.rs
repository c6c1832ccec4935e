//! Discretized GMC measures on the circle grid.
//!
//! Cell `i` covers `[i/M, (i+1)/M)` and carries a constant density read
//! from the field sample at index `i`; the field is stationary, so the
//! sample is taken to sit at the cell midpoint.

use std::f64::consts::SQRT_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::whitenoise::{FieldStack, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    Tau,
    TauT,
    NuT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSample {
    pub grid_size: usize,
    pub masses: Vec<f64>,
    pub gamma: f64,
    pub kind: MeasureKind,
    /// Upper cutoff `t` for restricted kinds.
    pub cutoff: Option<Scale>,
    /// Finest scale used.
    pub depth: Scale,
    /// Constant factor applied to every cell, `e^{−γG}·2^{−γ²}` for `Tau`.
    pub normalization: f64,
    #[serde(skip)]
    prefix: Vec<f64>,
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma < SQRT_2) {
        return Err(Error::Gamma(gamma));
    }
    Ok(())
}

fn prefix_sums(masses: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    p.push(0.0);
    for &m in masses {
        acc += m;
        p.push(acc);
    }
    p
}

fn exp_density(field: &[f64], gamma: f64, var: f64, factor: f64) -> Vec<f64> {
    let shift = 0.5 * gamma * gamma * var;
    field.iter().map(|&h| (gamma * h - shift).exp() * factor).collect()
}

/// `τ` at cutoff `ρ^{k_max}`.
pub fn build_measure(stack: &FieldStack, gamma: f64, k_max: u32) -> Result<MeasureSample> {
    check_gamma(gamma)?;
    let t = Scale::integer(k_max);
    let field = stack.h_field(t)?;
    let m = stack.grid_size();
    let normalization = (-gamma * stack.g).exp() * 2f64.powf(-gamma * gamma);
    let masses = if gamma == 0.0 {
        vec![1.0 / m as f64; m]
    } else {
        exp_density(&field, gamma, stack.spec.var_h(t), normalization / m as f64)
    };
    MeasureSample::from_parts(masses, gamma, MeasureKind::Tau, None, t, normalization)
}

/// `τ_t` (H increments) or `ν_t` (V increments) below scale `ρ^t`, down to the stack depth.
pub fn build_restricted_measure(
    stack: &FieldStack,
    gamma: f64,
    t: Scale,
    kind: MeasureKind,
) -> Result<MeasureSample> {
    check_gamma(gamma)?;
    let depth = Scale::integer(stack.spec.depth);
    if t > depth {
        return Err(Error::Scale(t.value()));
    }
    let m = stack.grid_size();
    let (field, var) = match kind {
        MeasureKind::TauT => (stack.h_band_field(t, depth)?, stack.spec.var_h_band(t, depth)),
        MeasureKind::NuT => (stack.v_band_field(t, depth)?, stack.spec.var_v_band(t, depth)),
        MeasureKind::Tau => return Err(Error::domain("use build_measure for the full measure")),
    };
    let masses = if gamma == 0.0 {
        vec![1.0 / m as f64; m]
    } else {
        exp_density(&field, gamma, var, 1.0 / m as f64)
    };
    MeasureSample::from_parts(masses, gamma, kind, Some(t), depth, 1.0)
}

impl MeasureSample {
    pub fn from_parts(
        masses: Vec<f64>,
        gamma: f64,
        kind: MeasureKind,
        cutoff: Option<Scale>,
        depth: Scale,
        normalization: f64,
    ) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::domain("measure needs at least one cell"));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::domain("cell masses must be finite and nonnegative"));
        }
        let prefix = prefix_sums(&masses);
        if !(prefix[masses.len()] > 0.0) {
            return Err(Error::domain("total mass must be positive"));
        }
        Ok(MeasureSample {
            grid_size: masses.len(),
            masses,
            gamma,
            kind,
            cutoff,
            depth,
            normalization,
            prefix,
        })
    }

    pub fn uniform(m: usize) -> Self {
        Self::from_parts(vec![1.0 / m as f64; m], 0.0, MeasureKind::Tau, None, Scale::integer(0), 1.0)
            .expect("uniform measure is valid")
    }

    /// Rebuild cached prefix sums after deserialization.
    pub fn restore(mut self) -> Self {
        self.prefix = prefix_sums(&self.masses);
        self
    }

    pub fn total(&self) -> f64 {
        self.prefix[self.grid_size]
    }

    /// Prefix mass `P_i = τ([0, i/M))`, `i = 0..=M`.
    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Unnormalized lift `τ([0, x])` for real `x` (periodic increments).
    pub fn cumulative(&self, x: f64) -> f64 {
        let n = x.floor();
        let f = (x - n) * self.grid_size as f64;
        let c = (f as usize).min(self.grid_size - 1);
        n * self.total() + self.prefix[c] + self.masses[c] * (f - c as f64)
    }

    /// Mass of `[a, b]` read modulo 1.
    pub fn interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b) || b - a > 1.0 + 1e-12 {
            return Err(Error::domain(format!("interval [{a}, {b}] must satisfy a < b ≤ a + 1")));
        }
        Ok(self.circle_mass(a, b))
    }

    /// Mass of the image of `[a, b]` on the circle; saturates at the total.
    pub fn circle_mass(&self, a: f64, b: f64) -> f64 {
        if b - a >= 1.0 {
            return self.total();
        }
        if b <= a {
            return 0.0;
        }
        (self.cumulative(b) - self.cumulative(a)).max(0.0)
    }

    /// Normalized CDF on `[0, 1]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        self.cumulative(x) / self.total()
    }

    /// Exact inverse of [`cdf`](Self::cdf) on `[0, 1]`.
    pub fn inverse_cdf(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        if q >= 1.0 {
            return 1.0;
        }
        let target = q * self.total();
        let c = (self.prefix.partition_point(|&p| p <= target) - 1).min(self.grid_size - 1);
        let within = if self.masses[c] > 0.0 {
            ((target - self.prefix[c]) / self.masses[c]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (c as f64 + within) / self.grid_size as f64
    }
}

/// `ζ_p(γ) = p − (p² − p)γ²/2`.
pub fn zeta_p(p: f64, gamma: f64) -> f64 {
    p - 0.5 * (p * p - p) * gamma * gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSlope {
    pub p: f64,
    pub gamma: f64,
    pub slope: f64,
    pub ci: (f64, f64),
    pub r2: f64,
    pub heavy_tail: bool,
    /// `(δ, mean τ([0,δ])^p)` per scale.
    pub points: Vec<(f64, f64)>,
    pub replicas: usize,
}

/// Per-replica average of `τ(I)^p` over the disjoint translates `I` of `[0, δ]`.
pub fn translate_moments(measure: &MeasureSample, p: f64, deltas: &[f64]) -> Vec<f64> {
    deltas
        .iter()
        .map(|&d| {
            let count = ((1.0 / d).round() as usize).max(1);
            (0..count)
                .map(|j| measure.circle_mass(j as f64 * d, (j + 1) as f64 * d).powf(p))
                .sum::<f64>()
                / count as f64
        })
        .collect()
}

/// Least-squares slope of `log mean τ([0,δ])^p` against `log δ`, with a
/// bootstrap interval over replicas.
pub fn moment_slope(ensemble: &[MeasureSample], p: f64, deltas: &[f64], seed: u64) -> Result<MomentSlope> {
    if ensemble.len() < 2 || deltas.len() < 2 {
        return Err(Error::Insufficient("moment slope needs ≥ 2 replicas and ≥ 2 scales".into()));
    }
    let rows: Vec<Vec<f64>> = ensemble.iter().map(|m| translate_moments(m, p, deltas)).collect();
    moment_slope_from_rows(&rows, p, ensemble[0].gamma, deltas, seed)
}

/// As [`moment_slope`] but from precomputed per-replica translate averages.
pub fn moment_slope_from_rows(
    rows: &[Vec<f64>],
    p: f64,
    gamma: f64,
    deltas: &[f64],
    seed: u64,
) -> Result<MomentSlope> {
    let n = rows.len();
    if n < 2 || deltas.len() < 2 {
        return Err(Error::Insufficient("moment slope needs ≥ 2 replicas and ≥ 2 scales".into()));
    }
    let logd: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let fit_from = |idx: &mut dyn Iterator<Item = usize>| {
        let mut sums = vec![0.0; deltas.len()];
        let mut count = 0usize;
        for r in idx {
            for (s, v) in sums.iter_mut().zip(&rows[r]) {
                *s += v;
            }
            count += 1;
        }
        let logm: Vec<f64> = sums.iter().map(|s| (s / count as f64).ln()).collect();
        stats::fit_line(&logd, &logm)
    };
    let fit = fit_from(&mut (0..n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ci = stats::bootstrap_ci(n, 1000, &mut rng, |ix| fit_from(&mut ix.iter().copied()).slope);
    let means: Vec<f64> = (0..deltas.len())
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    Ok(MomentSlope {
        p,
        gamma,
        slope: fit.slope,
        ci,
        r2: fit.r2,
        heavy_tail: gamma > 0.0 && p >= 2.0 / (gamma * gamma),
        points: deltas.iter().copied().zip(means).collect(),
        replicas: n,
    })
}
