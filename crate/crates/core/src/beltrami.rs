//! Principal solutions of `∂z̄F = μ_n ∂zF` on a periodic lattice.
//!
//! The Beurling and Cauchy transforms are Fourier multipliers `conj κ/κ` and
//! `−2i/κ` (`κ = k₁ + ik₂`). A periodic multiplier cannot represent the `1/z`
//! tail of a compactly supported density, so each density is split as
//! `h = a·g + h₀` with `g` a Gaussian of the same integral; `g` is transformed
//! in closed form and only the mean-free remainder goes through the FFT.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridField, Lattice};
use crate::dyadic::dyadic_sum;
use crate::homeo::HomeoExtension;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// FFT plans and symbols for one lattice.
pub struct Spectral {
    lattice: Lattice,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kappa: Vec<Complex64>,
    /// Width of the Gaussian reference density.
    width: f64,
}

impl Spectral {
    pub fn new(lattice: Lattice) -> Self {
        let n = lattice.n;
        let mut planner = FftPlanner::new();
        let freq = |m: usize| {
            let f = if m < n / 2 { m as f64 } else { m as f64 - n as f64 };
            PI * f / lattice.half_width
        };
        let kappa = (0..n * n).map(|idx| Complex64::new(freq(idx % n), freq(idx / n))).collect();
        Spectral {
            lattice,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            kappa,
            width: lattice.half_width / 8.0,
        }
    }

    fn fft2(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.lattice.n;
        plan.process(data);
        transpose(data, n);
        plan.process(data);
        transpose(data, n);
    }

    fn multiply(&self, field: &[Complex64], symbol: impl Fn(Complex64) -> Complex64) -> Vec<Complex64> {
        let mut data = field.to_vec();
        self.fft2(&mut data, &self.fwd);
        let scale = 1.0 / (self.lattice.len() as f64);
        for (v, k) in data.iter_mut().zip(&self.kappa) {
            *v = if *k == ZERO { ZERO } else { *v * symbol(*k) * scale };
        }
        self.fft2(&mut data, &self.inv);
        data
    }

    fn gaussian(&self, z: Complex64) -> f64 {
        (-z.norm_sqr() / (self.width * self.width)).exp()
    }

    fn cauchy_gaussian(&self, z: Complex64) -> Complex64 {
        let s2 = self.width * self.width;
        let u = z.norm_sqr() / s2;
        if u < 1e-8 {
            return z.conj() * (1.0 - 0.5 * u);
        }
        -s2 * (-u).exp_m1() / z
    }

    fn beurling_gaussian(&self, z: Complex64) -> Complex64 {
        let s2 = self.width * self.width;
        let u = z.norm_sqr() / s2;
        if u < 1e-6 {
            return -z.conj() * z.conj() / (2.0 * s2) * (1.0 - 2.0 * u / 3.0);
        }
        z.conj() * (-u).exp() / z + s2 * (-u).exp_m1() / (z * z)
    }

    /// Split `h = a·g + h₀` with `∫h₀ = 0`.
    fn split(&self, values: &[Complex64]) -> (Complex64, Vec<Complex64>) {
        let h = self.lattice.h();
        let integral: Complex64 = values.iter().sum::<Complex64>() * (h * h);
        let a = integral / (PI * self.width * self.width);
        let rest = values.iter().enumerate().map(|(idx, v)| v - a * self.gaussian(self.lattice.node(idx))).collect();
        (a, rest)
    }

    pub fn beurling(&self, values: &[Complex64]) -> Vec<Complex64> {
        let (a, rest) = self.split(values);
        let mut out = self.multiply(&rest, |k| k.conj() / k);
        if a != ZERO {
            for (idx, v) in out.iter_mut().enumerate() {
                *v += a * self.beurling_gaussian(self.lattice.node(idx));
            }
        }
        out
    }

    pub fn cauchy(&self, values: &[Complex64]) -> Vec<Complex64> {
        let (a, rest) = self.split(values);
        let mut out = self.multiply(&rest, |k| Complex64::new(0.0, -2.0) / k);
        // Fix the free constant so the remainder vanishes on the outer ring.
        let ring = outer_ring(self.lattice, 0.9);
        let shift: Complex64 = ring.iter().map(|&i| out[i]).sum::<Complex64>() / ring.len() as f64;
        for (idx, v) in out.iter_mut().enumerate() {
            *v += a * self.cauchy_gaussian(self.lattice.node(idx)) - shift;
        }
        out
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in j + 1..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

/// Nodes with `max(|x|,|y|) ≥ frac·L`.
pub fn outer_ring(lattice: Lattice, frac: f64) -> Vec<usize> {
    let cut = frac * lattice.half_width;
    (0..lattice.len())
        .filter(|&i| {
            let z = lattice.node(i);
            z.re.abs().max(z.im.abs()) >= cut
        })
        .collect()
}

/// Support must stay inside the central half of the box.
pub fn check_support(field: &GridField) -> Result<()> {
    let limit = 0.5 * field.lattice.half_width;
    let mut worst = 0.0f64;
    for (idx, v) in field.values.iter().enumerate() {
        if *v != ZERO {
            let z = field.lattice.node(idx);
            worst = worst.max(z.re.abs().max(z.im.abs()));
        }
    }
    if worst > limit {
        return Err(Error::Aliasing(field.lattice.half_width - worst));
    }
    Ok(())
}

fn l2(values: &[Complex64], h: f64) -> f64 {
    (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h).sqrt()
}

fn full_field(lattice: Lattice, values: Vec<Complex64>) -> GridField {
    let mask = vec![true; values.len()];
    GridField { lattice, values, mask }
}

pub fn beurling_transform(field: &GridField) -> Result<GridField> {
    check_support(field)?;
    let sp = Spectral::new(field.lattice);
    Ok(full_field(field.lattice, sp.beurling(&field.values)))
}

pub fn cauchy_transform(field: &GridField) -> Result<GridField> {
    check_support(field)?;
    let sp = Spectral::new(field.lattice);
    Ok(full_field(field.lattice, sp.cauchy(&field.values)))
}

#[derive(Debug, Clone, Serialize)]
pub struct BeltramiSolution {
    /// `None` solves the untruncated equation.
    pub n: Option<u32>,
    /// `n/(n+1)`, or 1 when untruncated.
    pub factor: f64,
    #[serde(skip)]
    pub f: GridField,
    #[serde(skip)]
    pub h_field: GridField,
    /// `‖h − μ_n(1 + Sh)‖₂`, i.e. `‖∂z̄F − μ_n ∂zF‖₂`.
    pub residual_l2: f64,
    /// `residual_l2 / ‖∂zF‖₂`.
    pub relative_residual: f64,
    pub iterations: usize,
    /// Geometric mean of the late update ratios.
    pub contraction_estimate: f64,
    pub updates: Vec<f64>,
    pub mu_sup: f64,
}

pub fn truncation_factor(n: Option<u32>) -> f64 {
    n.map_or(1.0, |n| n as f64 / (n as f64 + 1.0))
}

pub fn solve_beltrami(mu: &GridField, n: Option<u32>, tol: f64, max_iter: usize) -> Result<BeltramiSolution> {
    let sup = mu.sup_norm();
    if sup > 1.0 + 1e-12 || (n.is_none() && sup >= 1.0) {
        return Err(Error::SingularDistortion(sup));
    }
    check_support(mu)?;
    let lattice = mu.lattice;
    let h = lattice.h();
    let factor = truncation_factor(n);
    let mu_n: Vec<Complex64> = mu.values.iter().map(|m| m * factor).collect();
    let sp = Spectral::new(lattice);

    let mut dens = mu_n.clone();
    let mut updates = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let s = sp.beurling(&dens);
        let next: Vec<Complex64> = mu_n.iter().zip(&s).map(|(m, sv)| m * sv + m).collect();
        let diff: Vec<Complex64> = next.iter().zip(&dens).map(|(a, b)| a - b).collect();
        let upd = l2(&diff, h);
        updates.push(upd);
        dens = next;
        if upd < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: max_iter, residual: *updates.last().unwrap_or(&f64::NAN) });
    }

    let s = sp.beurling(&dens);
    let dz: Vec<Complex64> = s.iter().map(|v| v + 1.0).collect();
    let res: Vec<Complex64> = dens.iter().zip(&mu_n).zip(&dz).map(|((d, m), fz)| d - m * fz).collect();
    let residual_l2 = l2(&res, h);
    let relative_residual = residual_l2 / l2(&dz, h);
    let c = sp.cauchy(&dens);
    let f_values = c.iter().enumerate().map(|(idx, v)| lattice.node(idx) + v).collect();

    Ok(BeltramiSolution {
        n,
        factor,
        f: full_field(lattice, f_values),
        h_field: GridField { lattice, mask: mu.mask.clone(), values: dens },
        residual_l2,
        relative_residual,
        iterations: updates.len(),
        contraction_estimate: contraction(&updates),
        updates,
        mu_sup: sup * factor,
    })
}

fn contraction(updates: &[f64]) -> f64 {
    let usable: Vec<f64> = updates.iter().copied().filter(|u| *u > 1e-300).collect();
    if usable.len() < 3 {
        return 0.0;
    }
    let tail = &usable[usable.len() / 2..];
    let steps = (tail.len() - 1) as f64;
    if steps < 1.0 {
        return 0.0;
    }
    (tail[tail.len() - 1] / tail[0]).powf(1.0 / steps)
}

impl BeltramiSolution {
    /// Fraction of interior nodes where the central-difference Jacobian of `F` is positive.
    pub fn orientation_fraction(&self) -> f64 {
        let lat = self.f.lattice;
        let n = lat.n;
        let h = lat.h();
        let v = &self.f.values;
        let (mut pos, mut total) = (0usize, 0usize);
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let fx = (v[j * n + i + 1] - v[j * n + i - 1]) / (2.0 * h);
                let fy = (v[(j + 1) * n + i] - v[(j - 1) * n + i]) / (2.0 * h);
                total += 1;
                if fx.re * fy.im - fy.re * fx.im > 0.0 {
                    pos += 1;
                }
            }
        }
        pos as f64 / total as f64
    }

    /// Least-squares fit `|F(z) − z| ≈ c/|z| + b` on the outer 10% ring; returns `(c, b)`.
    pub fn far_field_fit(&self) -> (f64, f64) {
        let lat = self.f.lattice;
        let ring = outer_ring(lat, 0.9);
        let xs: Vec<f64> = ring.iter().map(|&i| 1.0 / lat.node(i).norm()).collect();
        let ys: Vec<f64> = ring.iter().map(|&i| (self.f.values[i] - lat.node(i)).norm()).collect();
        let fit = crate::stats::fit_line(&xs, &ys);
        (fit.slope, fit.intercept)
    }

    /// Discrete `∂z̄F / ∂zF` by central differences at an interior node.
    pub fn discrete_dilatation(&self, idx: usize) -> Complex64 {
        let lat = self.f.lattice;
        let n = lat.n;
        let h = lat.h();
        let v = &self.f.values;
        let fx = (v[idx + 1] - v[idx - 1]) / (2.0 * h);
        let fy = (v[idx + n] - v[idx - n]) / (2.0 * h);
        let i = Complex64::new(0.0, 1.0);
        (fx + i * fy) / (fx - i * fy)
    }
}

/// Lower bound `Th(A)² / ∫_A K` for a lattice annulus.
#[derive(Debug, Clone, Serialize)]
pub struct ModulusBound {
    pub thickness: f64,
    pub distortion_integral: f64,
    pub bound: f64,
}

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

fn flood(n: usize, seeds: &[usize], allowed: impl Fn(usize) -> bool, nbrs: &[(i64, i64)], label: &mut [u32], id: u32) -> usize {
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut count = 0;
    for &s in seeds {
        if label[s] == 0 && allowed(s) {
            label[s] = id;
            queue.push_back(s);
        }
    }
    while let Some(k) = queue.pop_front() {
        count += 1;
        let (i, j) = ((k % n) as i64, (k / n) as i64);
        for (di, dj) in nbrs {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                continue;
            }
            let q = b as usize * n + a as usize;
            if label[q] == 0 && allowed(q) {
                label[q] = id;
                queue.push_back(q);
            }
        }
    }
    count
}

pub fn modulus_lower_bound(lattice: Lattice, mask: &[bool], k_field: &[f64]) -> Result<ModulusBound> {
    let n = lattice.n;
    if mask.len() != lattice.len() || k_field.len() != lattice.len() {
        return Err(Error::domain("mask and distortion field must match the lattice"));
    }
    let first = mask.iter().position(|m| *m).ok_or_else(|| Error::NotAnnulus("empty mask".into()))?;
    let mut label = vec![0u32; lattice.len()];
    let inside = flood(n, &[first], |q| mask[q], &N4, &mut label, 1);
    if inside != mask.iter().filter(|m| **m).count() {
        return Err(Error::NotAnnulus("mask is not connected".into()));
    }
    let border: Vec<usize> = (0..lattice.len())
        .filter(|&k| {
            let (i, j) = (k % n, k / n);
            i == 0 || j == 0 || i == n - 1 || j == n - 1
        })
        .collect();
    if border.iter().any(|&k| mask[k]) {
        return Err(Error::NotAnnulus("mask touches the lattice boundary".into()));
    }
    flood(n, &border, |q| !mask[q], &N8, &mut label, 2);
    let mut holes = 0;
    for k in 0..lattice.len() {
        if label[k] == 0 && !mask[k] {
            holes += 1;
            flood(n, &[k], |q| !mask[q], &N8, &mut label, 2 + holes);
        }
    }
    if holes != 1 {
        return Err(Error::NotAnnulus(format!("complement has {} bounded components", holes)));
    }
    let touches_mask = |k: usize| {
        let (i, j) = ((k % n) as i64, (k / n) as i64);
        N8.iter().any(|(di, dj)| {
            let (a, b) = (i + di, j + dj);
            a >= 0 && b >= 0 && a < n as i64 && b < n as i64 && mask[b as usize * n + a as usize]
        })
    };
    let edge = |id: u32| -> Vec<Complex64> {
        (0..lattice.len()).filter(|&k| label[k] == id && touches_mask(k)).map(|k| lattice.node(k)).collect()
    };
    let (outer, inner) = (edge(2), edge(3));
    let mut thickness = f64::INFINITY;
    for a in &inner {
        for b in &outer {
            thickness = thickness.min((a - b).norm());
        }
    }
    let h = lattice.h();
    let distortion_integral: f64 = (0..lattice.len()).filter(|&k| mask[k]).map(|k| k_field[k]).sum::<f64>() * h * h;
    Ok(ModulusBound { thickness, distortion_integral, bound: thickness * thickness / distortion_integral })
}

/// Lattice mask of `{r ≤ |z − c| ≤ R}`.
pub fn round_annulus_mask(lattice: Lattice, center: Complex64, r: f64, big_r: f64) -> Vec<bool> {
    lattice
        .nodes()
        .map(|z| {
            let d = (z - center).norm();
            d >= r && d <= big_r
        })
        .collect()
}

/// Modulus of the round annulus `r < |z| < R` in both common normalizations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RoundModulus {
    /// `2π log(R/r)`.
    pub two_pi_log: f64,
    /// `log(R/r) / 2π`.
    pub log_over_two_pi: f64,
}

pub fn round_modulus(r: f64, big_r: f64) -> RoundModulus {
    let l = (big_r / r).ln();
    RoundModulus { two_pi_log: 2.0 * PI * l, log_over_two_pi: l / (2.0 * PI) }
}

/// Boxes `D[ψ(x), R′]` and `D[ψ(x), r′]` with `Ψ(D[x,R] ∖ D[x,r]) ⊇ D[ψ(x),R′] ∖ D[ψ(x),r′]`,
/// where `D[x,r] = [x−r, x+r] × [0, r]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HalfAnnulusBounds {
    pub center: f64,
    pub outer: f64,
    pub inner: f64,
}

pub fn image_halfannulus_bounds(homeo: &HomeoExtension, x: f64, r: f64, big_r: f64) -> Result<HalfAnnulusBounds> {
    if !(0.0 < r && r < big_r && big_r <= 1.0) {
        return Err(Error::domain(format!("need 0 < r < R <= 1, got r={r}, R={big_r}")));
    }
    let outer = 0.5
        * (1..=8)
            .map(|k| {
                let a = x - big_r + (k - 1) as f64 * big_r / 4.0;
                homeo.psi_increment(a, a + big_r / 4.0)
            })
            .fold(f64::INFINITY, f64::min);
    let inner = homeo.psi_increment(x - 2.0 * r, x + 2.0 * r);
    Ok(HalfAnnulusBounds { center: homeo.psi(x), outer, inner })
}

/// Right-hand side of the Dirichlet-energy bound
/// `2⁵|ψ(x+2R)−ψ(x−2R)|² + 2⁷ Σ_m Σ_{ℓ∈S(m,r,R)} |ψ(x+(ℓ+2)R2^{−m}) − ψ(x+(ℓ−2)R2^{−m})|²`.
pub fn dirichlet_energy_bound(homeo: &HomeoExtension, x: f64, r: f64, big_r: f64) -> Result<f64> {
    if !(0.0 < r && r < big_r && big_r < 1.0) {
        return Err(Error::domain(format!("need 0 < r < R < 1, got r={r}, R={big_r}")));
    }
    let head = 32.0 * homeo.psi_increment(x - 2.0 * big_r, x + 2.0 * big_r).powi(2);
    Ok(head + 128.0 * dyadic_sum(homeo, x, r, big_r, 1e-14))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::{MeasureKind, MeasureSample};
    use crate::homeo::{build_homeomorphism, Orientation};
    use crate::whitenoise::Scale;
    use rand::{Rng, SeedableRng};

    /// Fraction of the cell around `z` covered by the unit disk.
    fn coverage(z: Complex64, h: f64) -> f64 {
        let s = 8;
        let mut c = 0;
        for a in 0..s {
            for b in 0..s {
                let p = z + Complex64::new((a as f64 + 0.5) / s as f64 - 0.5, (b as f64 + 0.5) / s as f64 - 0.5) * h;
                if p.norm() < 1.0 {
                    c += 1;
                }
            }
        }
        c as f64 / (s * s) as f64
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let lat = Lattice::new(4.0, 64).unwrap();
        let z = GridField::zeros(lat);
        assert_eq!(beurling_transform(&z).unwrap().sup_norm(), 0.0);
        assert_eq!(cauchy_transform(&z).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn beurling_is_isometric_on_mean_free_fields() {
        let lat = Lattice::new(4.0, 128).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut f = GridField::from_fn(lat, |z| {
            if z.re.abs() < 1.5 && z.im.abs() < 1.5 { Complex64::new(1.0, 0.5) } else { ZERO }
        });
        for v in f.values.iter_mut().filter(|v| **v != ZERO) {
            *v = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        let mean: Complex64 = f.values.iter().sum::<Complex64>() / f.mask.iter().filter(|m| **m).count() as f64;
        for (v, m) in f.values.iter_mut().zip(&f.mask) {
            if *m {
                *v -= mean;
            }
        }
        let s = beurling_transform(&f).unwrap();
        assert!((s.l2_norm() - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }

    #[test]
    fn aliasing_guard_rejects_wide_support() {
        let lat = Lattice::new(4.0, 64).unwrap();
        let f = GridField::from_fn(lat, |z| if z.norm() < 2.5 { Complex64::new(1.0, 0.0) } else { ZERO });
        assert!(matches!(beurling_transform(&f), Err(Error::Aliasing(_))));
    }

    #[test]
    fn transforms_of_disk_indicator() {
        let lat = Lattice::new(4.0, 256).unwrap();
        let h = lat.h();
        let chi = GridField::from_fn(lat, |z| Complex64::new(coverage(z, h), 0.0));
        let s = beurling_transform(&chi).unwrap();
        let c = cauchy_transform(&chi).unwrap();
        let (mut es, mut ec) = (0.0f64, 0.0f64);
        for (idx, z) in lat.nodes().enumerate() {
            if (z.norm() - 1.0).abs() < 4.0 * h {
                continue;
            }
            let (s_exact, c_exact) = if z.norm() < 1.0 { (ZERO, z.conj()) } else { (-1.0 / (z * z), 1.0 / z) };
            es = es.max((s.values[idx] - s_exact).norm());
            ec = ec.max((c.values[idx] - c_exact).norm());
        }
        assert!(es < 10.0 * h, "S error {es}");
        assert!(ec < 10.0 * h, "C error {ec}");
    }

    #[test]
    fn cauchy_matches_direct_quadrature_and_inverts_dbar() {
        let lat = Lattice::new(4.0, 128).unwrap();
        let h = lat.h();
        let f = GridField::from_fn(lat, |z| {
            let r2 = z.norm_sqr();
            if r2 < 1.8 { Complex64::new(1.0 - r2 / 1.8, 0.3 * z.re).powi(2) } else { ZERO }
        });
        let c = cauchy_transform(&f).unwrap();
        let support: Vec<(Complex64, Complex64)> =
            f.values.iter().enumerate().filter(|(_, v)| **v != ZERO).map(|(i, v)| (lat.node(i), *v)).collect();
        let mut worst = 0.0f64;
        for j in (0..lat.n).step_by(2) {
            for i in (0..lat.n).step_by(2) {
                let z = lat.node(j * lat.n + i) + Complex64::new(0.5 * h, 0.5 * h);
                let direct: Complex64 = support.iter().map(|(p, v)| v / (z - p)).sum::<Complex64>() * (h * h / PI);
                worst = worst.max((c.interpolate(z) - direct).norm());
            }
        }
        assert!(worst < 10.0 * h, "quadrature mismatch {worst}");
        // ∂z̄ C f = f by central differences.
        let n = lat.n;
        let sup = f.sup_norm();
        let i = Complex64::new(0.0, 1.0);
        for j in 2..n - 2 {
            for k in 2..n - 2 {
                let idx = j * n + k;
                let dx = (c.values[idx + 1] - c.values[idx - 1]) / (2.0 * h);
                let dy = (c.values[idx + n] - c.values[idx - n]) / (2.0 * h);
                let dbar = 0.5 * (dx + i * dy);
                assert!((dbar - f.values[idx]).norm() < 5.0 * h * sup);
            }
        }
    }

    #[test]
    fn linearity() {
        let lat = Lattice::new(4.0, 64).unwrap();
        let a = GridField::from_fn(lat, |z| if z.norm() < 1.5 { z * z } else { ZERO });
        let b = GridField::from_fn(lat, |z| if z.norm() < 1.0 { z.conj() + 0.5 } else { ZERO });
        let w = Complex64::new(0.7, -1.3);
        let mut combo = a.clone();
        for (c, v) in combo.values.iter_mut().zip(&b.values) {
            *c += w * v;
        }
        for op in [cauchy_transform, beurling_transform] {
            let (ta, tb, tc) = (op(&a).unwrap(), op(&b).unwrap(), op(&combo).unwrap());
            for k in 0..lat.len() {
                assert!((tc.values[k] - ta.values[k] - w * tb.values[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_dilatation_gives_identity() {
        let lat = Lattice::new(4.0, 64).unwrap();
        let sol = solve_beltrami(&GridField::zeros(lat), Some(3), 1e-10, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        for (idx, v) in sol.f.values.iter().enumerate() {
            assert!((v - lat.node(idx)).norm() < 1e-12);
        }
    }

    #[test]
    fn random_dilatation_iteration_bound() {
        let lat = Lattice::new(4.0, 128).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut mu = GridField::from_fn(lat, |z| if z.norm() < 1.5 { Complex64::new(1.0, 0.0) } else { ZERO });
        for v in mu.values.iter_mut().filter(|v| **v != ZERO) {
            *v = Complex64::from_polar(0.5 * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>());
        }
        mu.values[lat.len() / 2 + lat.n / 2] = Complex64::new(0.5, 0.0);
        let tol = 1e-10;
        let sol = solve_beltrami(&mu, None, tol, 500).unwrap();
        assert!(sol.iterations as f64 <= tol.ln() / 0.55f64.ln(), "{} iterations", sol.iterations);
        assert!(sol.residual_l2 < tol);
        assert!(sol.orientation_fraction() > 0.999);
        let (_, intercept) = sol.far_field_fit();
        assert!(intercept.abs() < 5.0 * lat.h());
    }

    #[test]
    fn round_annulus_modulus() {
        let lat = Lattice::new(3.0, 256).unwrap();
        let mask = round_annulus_mask(lat, ZERO, 1.0, 2.0);
        let k = vec![1.0; lat.len()];
        let b = modulus_lower_bound(lat, &mask, &k).unwrap();
        assert!((b.bound - 1.0 / (3.0 * PI)).abs() < 0.03 / (3.0 * PI), "{:?}", b);
        assert!(b.bound <= round_modulus(1.0, 2.0).log_over_two_pi);
        let thin = round_annulus_mask(lat, ZERO, 1.0, 1.05);
        let bt = modulus_lower_bound(lat, &thin, &k).unwrap();
        assert!(bt.bound < 0.01);
        let disk_mask = round_annulus_mask(lat, ZERO, 0.0, 1.0);
        assert!(matches!(modulus_lower_bound(lat, &disk_mask, &k), Err(Error::NotAnnulus(_))));
    }

    fn random_homeo(seed: u64) -> HomeoExtension {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let masses = (0..1024).map(|_| (4.0 * (rng.random::<f64>() - 0.5)).exp()).collect();
        let m = MeasureSample::from_parts(masses, 0.5, MeasureKind::Tau, None, Scale::integer(0), 1.0).unwrap();
        build_homeomorphism(&m, Orientation::Upper).unwrap()
    }

    #[test]
    fn halfannulus_identity_values() {
        let id = build_homeomorphism(&MeasureSample::uniform(1024), Orientation::Upper).unwrap();
        let b = image_halfannulus_bounds(&id, 0.0, 0.1, 0.4).unwrap();
        assert!((b.outer - 0.05).abs() < 1e-14 && (b.inner - 0.4).abs() < 1e-14);
    }

    #[test]
    fn halfannulus_containment_by_forward_evaluation() {
        let h = random_homeo(21);
        let (x, r, big_r) = (0.3, 0.002, 0.5);
        let b = image_halfannulus_bounds(&h, x, r, big_r).unwrap();
        assert!(b.outer > 0.0);
        let in_box = |w: Complex64, c: f64, s: f64| (w.re - c).abs() <= s + 1e-12 && w.im <= s + 1e-12;
        for k in 0..1000 {
            let t = k as f64 / 999.0;
            // Inner box boundary (sides and top) maps into D[ψ(x), r′].
            let p = match k % 3 {
                0 => Complex64::new(x - r, t * r),
                1 => Complex64::new(x + r, t * r),
                _ => Complex64::new(x - r + 2.0 * r * t, r),
            };
            assert!(in_box(h.ba_extension_at(p.re, p.im).unwrap(), b.center, b.inner));
            // Outer box boundary maps outside the interior of D[ψ(x), R′].
            let q = match k % 3 {
                0 => Complex64::new(x - big_r, t * big_r),
                1 => Complex64::new(x + big_r, t * big_r),
                _ => Complex64::new(x - big_r + 2.0 * big_r * t, big_r),
            };
            let w = h.ba_extension_at(q.re, q.im).unwrap();
            assert!((w.re - b.center).abs() >= b.outer - 1e-12 || w.im >= b.outer - 1e-12);
        }
    }

    #[test]
    fn dirichlet_bound_identity_closed_form() {
        let id = build_homeomorphism(&MeasureSample::uniform(4096), Orientation::Upper).unwrap();
        let rho: f64 = 1.0 / 16.0;
        let (big_r, r) = (rho, rho.powf(1.25));
        let got = dirichlet_energy_bound(&id, 0.4, r, big_r).unwrap();
        let mut sum = 0.0;
        for m in 0..200u32 {
            let w = 4.0 * big_r / 2f64.powi(m as i32);
            sum += crate::dyadic::index_count(m, r, big_r) * w * w;
        }
        let exact = 32.0 * (4.0 * big_r).powi(2) + 128.0 * sum;
        assert!((got - exact).abs() < 1e-11 * exact, "{got} vs {exact}");
    }

    #[test]
    fn dirichlet_bound_dominates_lattice_energy() {
        let h = random_homeo(22);
        let (x, r, big_r) = (0.6, 0.02, 0.2);
        let bound = dirichlet_energy_bound(&h, x, r, big_r).unwrap();
        // ∫_{Ψ(A)} K(·, Ψ⁻¹) = ∫_A (|∂zΨ| + |∂z̄Ψ|)² by change of variables.
        let cells = 400;
        let step = 2.0 * big_r / cells as f64;
        let mut energy = 0.0;
        for i in 0..cells {
            for j in 0..cells / 2 {
                let u = -big_r + (i as f64 + 0.5) * step;
                let v = (j as f64 + 0.5) * step;
                if u.abs() <= r && v <= r {
                    continue;
                }
                let (dz, dzb) = h.ba_derivative_at(x + u, v).unwrap();
                energy += (dz.norm() + dzb.norm()).powi(2) * step * step;
            }
        }
        assert!(bound >= energy, "{bound} < {energy}");
    }

    #[test]
    fn dirichlet_bound_monotone_in_outer_radius() {
        let id = build_homeomorphism(&MeasureSample::uniform(1024), Orientation::Upper).unwrap();
        let mut prev = 0.0;
        for k in 1..8 {
            let v = dirichlet_energy_bound(&id, 0.1, 0.01, 0.05 * k as f64).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }
}
