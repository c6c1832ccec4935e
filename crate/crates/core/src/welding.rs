//! End-to-end welding at desk scale: two independent measures, their
//! extensions `Φ₁`, `Φ₂`, the dilatation `μ`, truncated solves `F_n`, and
//! diagnostics of the welded curve `F(∂𝔻)`.

use num_complex::Complex64;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::beltrami::{solve_beltrami, BeltramiSolution, Spectral};
use crate::error::{Error, Result};
use crate::events::{evaluate_event, lebesgue, Event, EventConstants, EventSpec, World};
use crate::exact::{circle_length, DyadicRho, QuarticSurd};
use crate::gmc::build_measure;
use crate::grid::{GridField, Lattice};
use crate::homeo::{
    build_homeomorphism, dilatation_field, exp_coordinate, inverse_dilatation_at, wirtinger,
    HomeoExtension, Orientation,
};
use crate::rng::replica_seed;
use crate::stats::{fit_line, slope_ci};
use crate::whitenoise::{sample_field_stack, StackSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeldingConfig {
    pub gamma: f64,
    pub gamma_max: f64,
    pub rho: f64,
    /// Circle grid size `M`; also the number of curve samples.
    pub grid_m: usize,
    pub depth: u32,
    /// Solver box is `[−L, L]²`.
    pub half_width: f64,
    pub lattice_n: usize,
    /// `μ` is set to zero beyond this radius.
    pub support_radius: f64,
    pub n_list: Vec<u32>,
    pub tol: f64,
    pub max_iter: usize,
    /// Boundary probes for the consistency error.
    pub probes: usize,
    /// Probe offset `η` in lattice steps.
    pub eta_steps: f64,
}

impl Default for WeldingConfig {
    fn default() -> Self {
        WeldingConfig {
            gamma: 0.2,
            gamma_max: 0.3,
            rho: 1.0 / 16.0,
            grid_m: 4096,
            depth: 3,
            half_width: 4.0,
            lattice_n: 512,
            support_radius: 2.0,
            n_list: vec![1, 2, 4, 8, 16],
            tol: 1e-10,
            max_iter: 500,
            probes: 512,
            eta_steps: 3.0,
        }
    }
}

impl WeldingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma <= self.gamma_max) {
            return Err(Error::domain(format!("γ = {} exceeds γ_max = {}", self.gamma, self.gamma_max)));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("n_list must be nonempty and increasing"));
        }
        if self.support_radius <= 1.0 || 2.0 * self.support_radius > self.half_width * 2.0 - 1e-12 {
            return Err(Error::domain("support radius must lie in (1, L]"));
        }
        if self.probes == 0 || !(self.eta_steps >= 2.0) {
            return Err(Error::domain("need probes ≥ 1 and η ≥ 2 lattice steps"));
        }
        Lattice::new(self.half_width, self.lattice_n)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stack_seeds: [u64; 2],
    pub gamma: f64,
    pub rho: f64,
    pub grid_m: usize,
    pub depth: u32,
    pub lattice_n: usize,
    pub half_width: f64,
    pub lattice_step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub n: u32,
    pub iterations: usize,
    pub residual_l2: f64,
    pub contraction_estimate: f64,
    pub mu_sup: f64,
    pub orientation_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub constant: f64,
    pub exponent: f64,
    pub exponent_ci: (f64, f64),
    pub r2: f64,
    /// `(δ, sup |F(p) − F(q)|)` at each lag.
    pub points: Vec<(f64, f64)>,
}

/// Interior conformality of `F∘Φ₁` against the value the truncation predicts.
#[derive(Debug, Clone, Serialize)]
pub struct StoilowCheck {
    pub nodes: usize,
    pub median_defect: f64,
    pub max_defect: f64,
    /// Median `|μ_{F∘Φ₁}|`, for scale.
    pub median_dilatation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeldingResult {
    /// `F(e^{2πik/M})`, `k = 0..M`, closed by repeating the first point.
    pub curve: Vec<Complex64>,
    pub consistency_error: f64,
    pub cascade: Vec<f64>,
    pub holder_fit: HolderEstimate,
    pub stoilow: StoilowCheck,
    pub max_radial_deviation: f64,
    pub self_intersections: usize,
    pub flagged_nodes: usize,
    pub solves: Vec<SolveSummary>,
    pub provenance: Provenance,
    #[serde(skip)]
    pub final_map: Option<GridField>,
    #[serde(skip)]
    pub mu: Option<GridField>,
}

/// The whole pipeline; any failure carries the stage that raised it.
pub fn run_welding(config: &WeldingConfig, seed: u64) -> Result<WeldingResult> {
    config.validate().map_err(|e| e.at("config"))?;
    let spec = StackSpec::new(config.grid_m, config.rho, config.depth).h_only();
    let seeds = [replica_seed(seed, 1), replica_seed(seed, 2)];
    let stacks = [sample_field_stack(spec, seeds[0]), sample_field_stack(spec, seeds[1])];
    let [s1, s2] = stacks;
    let (s1, s2) = (s1.map_err(|e| e.at("fields"))?, s2.map_err(|e| e.at("fields"))?);
    let tau1 = build_measure(&s1, config.gamma, config.depth).map_err(|e| e.at("measure"))?;
    let tau2 = build_measure(&s2, config.gamma, config.depth).map_err(|e| e.at("measure"))?;
    let homeo1 = build_homeomorphism(&tau1, Orientation::Upper).map_err(|e| e.at("homeomorphism"))?;
    let homeo2 = build_homeomorphism(&tau2, Orientation::Lower).map_err(|e| e.at("homeomorphism"))?;
    let lattice = Lattice::new(config.half_width, config.lattice_n).map_err(|e| e.at("lattice"))?;
    let dil = dilatation_field(&homeo1, &homeo2, lattice, config.support_radius).map_err(|e| e.at("dilatation"))?;

    let mut solutions: Vec<BeltramiSolution> = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let sol = solve_beltrami(&dil.mu, Some(n), config.tol, config.max_iter).map_err(|e| e.at("beltrami"))?;
        solutions.push(sol);
    }
    let m = config.grid_m;
    let circle: Vec<Complex64> =
        (0..m).map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / m as f64)).collect();
    let boundary = |sol: &BeltramiSolution| -> Vec<Complex64> { circle.iter().map(|&p| sol.f.interpolate(p)).collect() };
    let traces: Vec<Vec<Complex64>> = solutions.iter().map(boundary).collect();
    let cascade = traces
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
        .collect();
    let last = solutions.last().expect("n_list is nonempty");
    let mut curve = traces.last().expect("n_list is nonempty").clone();
    curve.push(curve[0]);

    let consistency_error =
        consistency_error(&last.f, &homeo1, &homeo2, config.probes, config.eta_steps * lattice.h()).map_err(|e| e.at("consistency"))?;
    let holder_fit = holder_estimate(&curve[..m]).map_err(|e| e.at("holder"))?;
    let stoilow = stoilow_check(last, &homeo1).map_err(|e| e.at("stoilow"))?;
    let max_radial_deviation = curve.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);

    let solves = config
        .n_list
        .iter()
        .zip(&solutions)
        .map(|(&n, s)| SolveSummary {
            n,
            iterations: s.iterations,
            residual_l2: s.residual_l2,
            contraction_estimate: s.contraction_estimate,
            mu_sup: s.mu_sup,
            orientation_fraction: s.orientation_fraction(),
        })
        .collect();
    Ok(WeldingResult {
        self_intersections: self_intersections(&curve),
        curve,
        consistency_error,
        cascade,
        holder_fit,
        stoilow,
        max_radial_deviation,
        flagged_nodes: dil.flagged.len(),
        solves,
        provenance: Provenance {
            seed,
            stack_seeds: seeds,
            gamma: config.gamma,
            rho: config.rho,
            grid_m: m,
            depth: config.depth,
            lattice_n: config.lattice_n,
            half_width: config.half_width,
            lattice_step: lattice.h(),
        },
        final_map: Some(last.f.clone()),
        mu: Some(dil.mu),
    })
}

/// One-sided boundary value `lim F∘Φ(rw)` at `|w| = 1`, by linear extrapolation
/// from `r = 1 ∓ η` and `1 ∓ 2η`.
fn one_sided(f: &GridField, homeo: &HomeoExtension, w: Complex64, eta: f64) -> Result<Complex64> {
    let sign = match homeo.orientation {
        Orientation::Upper => -1.0,
        Orientation::Lower => 1.0,
    };
    let near = f.interpolate(homeo.phi(w * (1.0 + sign * eta))?);
    let far = f.interpolate(homeo.phi(w * (1.0 + sign * 2.0 * eta))?);
    Ok(near * 2.0 - far)
}

/// `sup_p |f₁(φ₁⁻¹(p)) − f₂(φ₂⁻¹(p))|` over equally spaced probes `p`,
/// each one-sided value read at distance `∝ η` from the circle.
pub fn consistency_error(f: &GridField, homeo1: &HomeoExtension, homeo2: &HomeoExtension, probes: usize, eta: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..probes {
        let theta = (k as f64 + 0.5) / probes as f64;
        let w1 = exp_coordinate(Complex64::new(homeo1.psi_inverse(theta), 0.0));
        let w2 = exp_coordinate(Complex64::new(homeo2.psi_inverse(theta), 0.0));
        let a = one_sided(f, homeo1, w1, eta)?;
        let b = one_sided(f, homeo2, w2, eta)?;
        worst = worst.max((a - b).norm());
    }
    Ok(worst)
}

/// Fit `sup_{|p−q|=δ} |F(p) − F(q)| ≈ Cδ^α` over dyadic index lags of equally spaced circle samples.
pub fn holder_estimate(samples: &[Complex64]) -> Result<HolderEstimate> {
    let k = samples.len();
    if k < 1024 {
        return Err(Error::Insufficient(format!("{k} boundary samples; at least 1024 are needed")));
    }
    let mut points = Vec::new();
    let mut lag = 1;
    while lag <= k / 8 {
        let osc = (0..k).map(|i| (samples[(i + lag) % k] - samples[i]).norm()).fold(0.0, f64::max);
        let chord = 2.0 * (std::f64::consts::PI * lag as f64 / k as f64).sin();
        points.push((chord, osc));
        lag *= 2;
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = fit_line(&lx, &ly);
    Ok(HolderEstimate {
        constant: fit.intercept.exp(),
        exponent: fit.slope,
        exponent_ci: slope_ci(&lx, &ly),
        r2: fit.r2,
        points,
    })
}

/// At lattice nodes in `𝔻`, compare `μ_{F∘Φ₁}` (chain rule on the spectral
/// `∂F`, analytic `∂Φ₁`) with `μ_Φ(1−t)/(1−t|μ_Φ|²)`, `t = n/(n+1)`.
pub fn stoilow_check(sol: &BeltramiSolution, homeo1: &HomeoExtension) -> Result<StoilowCheck> {
    let lattice = sol.h_field.lattice;
    let sp = Spectral::new(lattice);
    let sh = sp.beurling(&sol.h_field.values);
    let t = sol.factor;
    let mut defects = Vec::new();
    let mut sizes = Vec::new();
    for idx in 0..lattice.len() {
        let z = lattice.node(idx);
        if z.norm() >= 1.0 || z.norm() < (-4.0 * std::f64::consts::PI).exp() {
            continue;
        }
        let node = match inverse_dilatation_at(homeo1, z) {
            Ok(Some(node)) => node,
            Ok(None) | Err(Error::SingularDistortion(_)) => continue,
            Err(e) => return Err(e),
        };
        let (pz, pzb) = wirtinger(&node.forward);
        let (fz, fzb) = (sh[idx] + 1.0, sol.h_field.values[idx]);
        let gz = fz * pz + fzb * pzb.conj();
        let gzb = fz * pzb + fzb * pz.conj();
        let mu_g = gzb / gz;
        let mu_phi = pzb / pz;
        let predicted = mu_phi * (1.0 - t) / (1.0 - t * mu_phi.norm_sqr());
        defects.push((mu_g - predicted).norm());
        sizes.push(mu_g.norm());
    }
    if defects.is_empty() {
        return Err(Error::Insufficient("no lattice nodes inside the disk".into()));
    }
    Ok(StoilowCheck {
        nodes: defects.len(),
        median_defect: median(&mut defects.clone()),
        max_defect: defects.iter().cloned().fold(0.0, f64::max),
        median_dilatation: median(&mut sizes),
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cross(o: Complex64, a: Complex64, b: Complex64) -> f64 {
    let (u, v) = (a - o, b - o);
    u.re * v.im - u.im * v.re
}

fn segments_cross(p1: Complex64, p2: Complex64, q1: Complex64, q2: Complex64) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0) != (d2 > 0.0) && d1 != 0.0 && d2 != 0.0) && ((d3 > 0.0) != (d4 > 0.0) && d3 != 0.0 && d4 != 0.0)
}

/// Crossings between non-adjacent edges of a closed polyline (last point equals first).
pub fn self_intersections(poly: &[Complex64]) -> usize {
    let n = poly.len().saturating_sub(1);
    if n < 4 {
        return 0;
    }
    let bbox = |i: usize| {
        let (a, b) = (poly[i], poly[i + 1]);
        (a.re.min(b.re), a.re.max(b.re), a.im.min(b.im), a.im.max(b.im))
    };
    let boxes: Vec<_> = (0..n).map(bbox).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| boxes[i].0.total_cmp(&boxes[j].0));
    let mut count = 0;
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if boxes[j].0 > boxes[i].1 {
                break;
            }
            let adjacent = i.abs_diff(j) == 1 || i.abs_diff(j) == n - 1;
            if adjacent || boxes[j].3 < boxes[i].2 || boxes[j].2 > boxes[i].3 {
                continue;
            }
            if segments_cross(poly[i], poly[i + 1], poly[j], poly[j + 1]) {
                count += 1;
            }
        }
    }
    count
}

/// Even-odd rule; points on the boundary count as outside.
pub fn point_in_polygon(poly: &[Complex64], p: Complex64) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.im > p.im) != (b.im > p.im) {
            let x = a.re + (p.im - a.im) / (b.im - a.im) * (b.re - a.re);
            if p.re < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// `c₀ = 2^{−44} / (2^{43}(T₁² + T₂²))` for total masses `T₁`, `T₂`.
pub fn modulus_constant(total1: f64, total2: f64) -> f64 {
    2f64.powi(-87) / (total1 * total1 + total2 * total2)
}

pub fn modulus_constant_exact(total1: &BigRational, total2: &BigRational) -> BigRational {
    let p = BigRational::new(1.into(), num_bigint::BigInt::from(1u8) << 87usize);
    p / (total1 * total1 + total2 * total2)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnulusEntry {
    pub t: f64,
    pub s: f64,
    pub ann_prime: bool,
    pub matched: bool,
    /// Half-size `a` of the inner square of `𝔸`.
    pub scale: f64,
    pub probed: bool,
    pub containment_failures: usize,
    pub containment_probes: usize,
    pub surrounds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnulusReport {
    pub x: usize,
    pub y: usize,
    pub big_n: u32,
    pub rho: f64,
    pub eps: f64,
    pub modulus_constant: f64,
    pub entries: Vec<AnnulusEntry>,
    pub failures: Vec<String>,
}

/// All integer pairs `0 ≤ t, s ≤ 5N`.
pub fn integer_pairs(big_n: u32) -> Vec<(f64, f64)> {
    let top = 5 * big_n;
    (0..=top).flat_map(|t| (0..=top).map(move |s| (t as f64, s as f64))).collect()
}

fn circ(d: f64) -> f64 {
    d - d.round()
}

fn in_half_annulus(w: Complex64, centre: f64, outer: f64, inner: f64, upper: bool) -> bool {
    let slack = 1e-9 * inner;
    let dx = circ(w.re - centre);
    let h = if upper { w.im } else { -w.im };
    let in_outer = dx.abs() <= outer + slack && h >= -slack && h <= outer + slack;
    let in_hole = dx.abs() < inner - slack && h < inner - slack;
    in_outer && !in_hole
}

fn square(centre: Complex64, half: f64, per_side: usize) -> Vec<Complex64> {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut out = Vec::with_capacity(4 * per_side);
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        for j in 0..per_side {
            let s = j as f64 / per_side as f64;
            let p = Complex64::new(a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
            out.push(centre + p * half);
        }
    }
    out
}

/// For each pair `(t, s)`: `Ann′ ∧ Match`, and when it holds (or `probe_all`),
/// the composite annulus `𝔸 = ψ₁(x) + a([−2,2]²∖[−1,1]²)` probed for
/// `𝔸 ⊆ Ψ₁(A_t(x)) ∪ Ψ₂(Ã_s(y))` and for surrounding `Ψ₂([y, y+ρ^{(1+ε)5N}])`.
#[allow(clippy::too_many_arguments)]
pub fn annulus_chain_report(
    homeo1: &HomeoExtension,
    homeo2: &HomeoExtension,
    x: usize,
    y: usize,
    big_n: u32,
    rho: f64,
    eps: f64,
    pairs: &[(f64, f64)],
    constants: &EventConstants,
    probe_all: bool,
) -> Result<AnnulusReport> {
    let world = World::from_measures([homeo1.measure.clone(), homeo2.measure.clone()], rho, x, y, eps)?;
    let m = world.grid() as f64;
    let (xf, yf) = (x as f64 / m, y as f64 / m);
    let ev = |e: Event| evaluate_event(&EventSpec { event: e, constants: constants.clone(), count_up_to: None }, &world);
    let matched = ev(Event::Match { big_n })?;
    let centre = homeo1.psi(xf);
    let total2 = homeo2.measure.total();
    let mut entries = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for &(t, s) in pairs {
        if t > 5.0 * big_n as f64 || s > 5.0 * big_n as f64 {
            failures.push(format!("({t}, {s}) lies outside [0, 5N]"));
            continue;
        }
        let ann_prime = ev(Event::AnnPrime { t, s, big_n })?;
        let bs = rho.powf(s);
        let a = 2f64.powi(-22) * homeo2.measure.circle_mass(yf - bs, yf + bs) / total2;
        let mut entry = AnnulusEntry {
            t,
            s,
            ann_prime,
            matched,
            scale: a,
            probed: false,
            containment_failures: 0,
            containment_probes: 0,
            surrounds: None,
        };
        if !(ann_prime && matched) {
            failures.push(format!("({t}, {s}): Ann′ = {ann_prime}, Match = {matched}"));
        }
        if (ann_prime && matched) || probe_all {
            let (fails, probes) = probe_containment(homeo1, homeo2, xf, yf, t, s, rho, centre, a)?;
            entry.probed = true;
            entry.containment_failures = fails;
            entry.containment_probes = probes;
            let inner = square(Complex64::new(centre, 0.0), a, 4);
            let len = rho.powf((1.0 + eps) * 5.0 * big_n as f64);
            let start = homeo2.psi(yf);
            let surrounds = (0..=16).all(|j| {
                let v = start + homeo2.psi_increment(yf, yf + len * j as f64 / 16.0);
                let v = centre + circ(v - centre);
                point_in_polygon(&inner, Complex64::new(v, 0.0))
            });
            entry.surrounds = Some(surrounds);
            if fails > 0 {
                failures.push(format!("({t}, {s}): {fails} of {probes} containment probes fail"));
            }
            if !surrounds {
                failures.push(format!("({t}, {s}): 𝔸 does not surround the matched interval"));
            }
        }
        entries.push(entry);
    }
    Ok(AnnulusReport {
        x,
        y,
        big_n,
        rho,
        eps,
        modulus_constant: modulus_constant(homeo1.measure.total(), total2),
        entries,
        failures,
    })
}

/// Boundary probes of `𝔸` pulled back by `Ψ_j`, plus forward images of the
/// half-annuli boundaries, which must avoid the open interior of `𝔸`.
#[allow(clippy::too_many_arguments)]
fn probe_containment(
    homeo1: &HomeoExtension,
    homeo2: &HomeoExtension,
    x: f64,
    y: f64,
    t: f64,
    s: f64,
    rho: f64,
    centre: f64,
    a: f64,
) -> Result<(usize, usize)> {
    let per_side = 32;
    let c = Complex64::new(centre, 0.0);
    let (rt, rt4, rs, rs4) = (rho.powf(t), rho.powf(t + 0.25), rho.powf(s), rho.powf(s + 0.25));
    let mut fails = 0;
    let mut probes = 0;
    for p in square(c, 2.0 * a, per_side).into_iter().chain(square(c, a, per_side)) {
        probes += 1;
        let ok = if p.im > 0.0 {
            in_half_annulus(homeo1.extension_inverse(p)?, x, rt, rt4, true)
        } else if p.im < 0.0 {
            in_half_annulus(homeo2.extension_inverse(p)?, y, rs, rs4, false)
        } else {
            let w1 = Complex64::new(homeo1.psi_inverse(p.re.rem_euclid(1.0)), 0.0);
            let w2 = Complex64::new(homeo2.psi_inverse(p.re.rem_euclid(1.0)), 0.0);
            in_half_annulus(w1, x, rt, rt4, true) || in_half_annulus(w2, y, rs, rs4, false)
        };
        fails += !ok as usize;
    }
    let inside_open = |q: Complex64| {
        let d = Complex64::new(circ(q.re - centre), q.im);
        let n = d.re.abs().max(d.im.abs());
        n > a && n < 2.0 * a
    };
    for (homeo, base, outer, inner, upper) in [(homeo1, x, rt, rt4, true), (homeo2, y, rs, rs4, false)] {
        let sgn = if upper { 1.0 } else { -1.0 };
        for r in [outer, inner] {
            for j in 0..=3 * per_side {
                let u = j as f64 / per_side as f64;
                let (dx, h) = match j / per_side {
                    0 => (-r, u * r),
                    1 => (-r + 2.0 * r * (u - 1.0), r),
                    _ => (r, r * (3.0 - u)),
                };
                if h <= 0.0 {
                    continue;
                }
                probes += 1;
                let q = homeo.extension(Complex64::new(base + dx, sgn * h))?;
                fails += inside_open(q) as usize;
            }
        }
    }
    Ok((fails, probes))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactAnnulusEntry {
    pub t: f64,
    pub s: f64,
    pub ann_prime: bool,
    pub matched: bool,
    pub contained: bool,
    pub surrounds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactAnnulusReport {
    pub rho_exponent: u32,
    pub modulus_constant: String,
    pub entries: Vec<ExactAnnulusEntry>,
}

/// Lebesgue measure on both sides (`Ψ_j` the identity), decided exactly.
/// Containment reduces to four box inequalities for `a = 2^{−22}·min(2ρ^s, 1)`.
pub fn annulus_chain_exact(
    rho: DyadicRho,
    x: &BigRational,
    y: &BigRational,
    big_n: u32,
    eps: f64,
    pairs: &[(f64, f64)],
    constants: &EventConstants,
) -> Result<ExactAnnulusReport> {
    let matched = lebesgue::matched(rho, x, y, big_n, eps)?;
    let centre_ok = lebesgue::centre(rho, big_n, eps, constants)?;
    let d = {
        let diff = x - y;
        let wrapped = &diff - BigRational::from_integer((&diff + BigRational::new(1.into(), 2.into())).floor().to_integer());
        QuarticSurd::rational(if wrapped < BigRational::from_integer(0.into()) { -wrapped } else { wrapped })
    };
    let signed_y_minus_x = {
        let diff = y - x;
        let wrapped = &diff - BigRational::from_integer((&diff + BigRational::new(1.into(), 2.into())).floor().to_integer());
        QuarticSurd::rational(wrapped)
    };
    let len = lebesgue::centre_length(rho, big_n, eps)?;
    let two = QuarticSurd::int(2);
    let mut entries = Vec::new();
    for &(t, s) in pairs {
        let ts = crate::whitenoise::Scale::new(t)?;
        let ss = crate::whitenoise::Scale::new(s)?;
        let ann_prime = lebesgue::size(rho, t, s, constants)?
            && lebesgue::shape(rho, t, constants)?
            && lebesgue::shape(rho, s, constants)?
            && centre_ok;
        let a = &QuarticSurd::two_pow(-22) * &circle_length(&(&two * &rho.pow(ss)));
        let (rt, rt4) = (rho.pow(ts), rho.pow(ts.plus_quarters(1)));
        let (rs, rs4) = (rho.pow(ss), rho.pow(ss.plus_quarters(1)));
        let contained = rt4 <= a
            && &two * &a <= rt
            && &d + &(&two * &a) <= rs
            && &d + &rs4 <= a;
        // Open inner square around x contains [y, y + len].
        let neg_a = -&a;
        let surrounds = neg_a < signed_y_minus_x && &signed_y_minus_x + &len < a;
        entries.push(ExactAnnulusEntry { t, s, ann_prime, matched, contained, surrounds });
    }
    let one = BigRational::from_integer(1.into());
    Ok(ExactAnnulusReport {
        rho_exponent: rho.exponent,
        modulus_constant: modulus_constant_exact(&one, &one).to_string(),
        entries,
    })
}

/// `f(e^{2πik/m})`, `k = 0..m`.
pub fn circle_samples(m: usize, f: impl Fn(Complex64) -> Complex64) -> Vec<Complex64> {
    (0..m).map(|k| f(exp_coordinate(Complex64::new(k as f64 / m as f64, 0.0)))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::MeasureSample;

    #[test]
    fn holder_identity_and_dilation() {
        let id = holder_estimate(&circle_samples(2048, |z| z)).unwrap();
        assert!((id.exponent - 1.0).abs() < 1e-3 && (id.constant - 1.0).abs() < 1e-3);
        let dil = holder_estimate(&circle_samples(2048, |z| 2.0 * z)).unwrap();
        assert!((dil.exponent - 1.0).abs() < 1e-3 && (dil.constant - 2.0).abs() < 1e-3);
        assert!(holder_estimate(&circle_samples(512, |z| z)).is_err());
    }

    #[test]
    fn polygon_helpers() {
        let mut sq = square(Complex64::new(0.0, 0.0), 1.0, 1);
        assert!(point_in_polygon(&sq, Complex64::new(0.2, -0.9)));
        assert!(!point_in_polygon(&sq, Complex64::new(1.2, 0.0)));
        sq.push(sq[0]);
        assert_eq!(self_intersections(&sq), 0);
        let bow = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
        ];
        assert_eq!(self_intersections(&bow), 1);
    }

    #[test]
    fn modulus_constant_on_uniform_measures() {
        let one = BigRational::from_integer(1.into());
        let c = modulus_constant_exact(&one, &one);
        assert_eq!(c, BigRational::new(1.into(), num_bigint::BigInt::from(1u8) << 88usize));
        assert_eq!(modulus_constant(1.0, 1.0), 2f64.powi(-88));
    }

    #[test]
    fn exact_annuli_for_lebesgue_at_tiny_rho() {
        let rho = DyadicRho::new(140).unwrap();
        let x = lebesgue::rational_point(5, 64);
        let pairs: Vec<(f64, f64)> = (0..=5).map(|t| (t as f64, t as f64)).collect();
        let rep = annulus_chain_exact(rho, &x, &x, 1, 1.0, &pairs, &EventConstants::default()).unwrap();
        for e in &rep.entries {
            assert!(e.ann_prime && e.matched && e.contained && e.surrounds, "{e:?}");
        }
        // Mismatched scales break Size and the box inclusions.
        let rep = annulus_chain_exact(rho, &x, &x, 1, 1.0, &[(0.0, 3.0)], &EventConstants::default()).unwrap();
        assert!(!rep.entries[0].ann_prime && !rep.entries[0].contained);
    }

    #[test]
    fn float_report_on_uniform_measures_lists_failures_at_desk_rho() {
        let m = 256;
        let h1 = build_homeomorphism(&MeasureSample::uniform(m), Orientation::Upper).unwrap();
        let h2 = build_homeomorphism(&MeasureSample::uniform(m), Orientation::Lower).unwrap();
        let rep = annulus_chain_report(&h1, &h2, 10, 10, 1, 1.0 / 16.0, 1.0, &[(1.0, 1.0)], &EventConstants::default(), true)
            .unwrap();
        let e = &rep.entries[0];
        assert!(!e.ann_prime && e.matched && e.probed);
        assert!(e.containment_failures > 0);
        assert_eq!(e.surrounds, Some(true));
        assert!(!rep.failures.is_empty());
    }

    #[test]
    fn float_containment_matches_exact_reasoning_with_relaxed_geometry() {
        // Identity maps: containment holds iff the four box inequalities do.
        let m = 256;
        let h1 = build_homeomorphism(&MeasureSample::uniform(m), Orientation::Upper).unwrap();
        let h2 = build_homeomorphism(&MeasureSample::uniform(m), Orientation::Lower).unwrap();
        let (rho, t) = (2f64.powi(-40), 0.25);
        let a = 2f64.powi(-15);
        let (fails, _) = probe_containment(&h1, &h2, 0.25, 0.25, t, t, rho, 0.25, a).unwrap();
        assert_eq!(fails, 0);
        let (fails, _) = probe_containment(&h1, &h2, 0.25, 0.25, 1.0, 1.0, rho, 0.25, a).unwrap();
        assert!(fails > 0);
    }
}
