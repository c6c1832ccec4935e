//! Circle homeomorphisms from sampled measures and their modified
//! Beurling–Ahlfors extensions.
//!
//! `ψ(x) = τ([0,x])/τ([0,1])` is piecewise linear on the measure grid, lifted
//! by `ψ(n+x) = n + ψ(x)`. Its extension `E` to the upper half-plane is the
//! Beurling–Ahlfors average for `0 < y ≤ 1`, an affine shear for `1 < y < 2`
//! and the identity above. All segment integrals are evaluated exactly: short
//! spans by walking the cells of ψ, long spans through prefix antiderivatives.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gmc::MeasureSample;
use crate::grid::{GridField, Lattice};

/// Beyond this many cells a span integral switches to prefix antiderivatives.
const WALK_LIMIT: f64 = 48.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// `Ψ₁`, defined on the closed upper half-plane (`𝔻` after exponentiation).
    Upper,
    /// `Ψ₂(z) = conj E₂(conj z)`, defined on the closed lower half-plane.
    Lower,
}

/// Real Jacobian `[[∂x u, ∂y u], [∂x v, ∂y v]]`.
pub type Jacobian = [[f64; 2]; 2];

#[derive(Debug, Clone)]
pub struct HomeoExtension {
    pub measure: MeasureSample,
    pub orientation: Orientation,
    /// `∫₀¹ ψ − 1/2`.
    pub c0: f64,
    m: usize,
    knots: Vec<f64>,
    slopes: Vec<f64>,
    prefix_int: Vec<f64>,
}

pub fn build_homeomorphism(measure: &MeasureSample, orientation: Orientation) -> Result<HomeoExtension> {
    let m = measure.grid_size;
    let total = measure.total();
    if measure.masses.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::domain("measure has an empty cell, so ψ would not be strictly increasing"));
    }
    let mf = m as f64;
    let knots: Vec<f64> = measure.prefix().iter().map(|p| p / total).collect();
    let slopes: Vec<f64> = measure.masses.iter().map(|w| mf * w / total).collect();
    let mut prefix_int = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    prefix_int.push(0.0);
    for c in 0..m {
        acc += knots[c] / mf + slopes[c] / (2.0 * mf * mf);
        prefix_int.push(acc);
    }
    let c0 = prefix_int[m] - 0.5;
    Ok(HomeoExtension { measure: measure.clone(), orientation, c0, m, knots, slopes, prefix_int })
}

/// Wirtinger pair `(∂z f, ∂z̄ f)` of a real Jacobian.
pub fn wirtinger(j: &Jacobian) -> (Complex64, Complex64) {
    let [[ux, uy], [vx, vy]] = *j;
    (
        Complex64::new(0.5 * (ux + vy), 0.5 * (vx - uy)),
        Complex64::new(0.5 * (ux - vy), 0.5 * (vx + uy)),
    )
}

pub fn det(j: &Jacobian) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

pub fn invert(j: &Jacobian) -> Option<Jacobian> {
    let d = det(j);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]])
}

fn matmul(a: &Jacobian, b: &Jacobian) -> Jacobian {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][k] + a[i][1] * b[1][k];
        }
    }
    out
}

/// Real matrix of multiplication by `a`.
fn cmul_matrix(a: Complex64) -> Jacobian {
    [[a.re, -a.im], [a.im, a.re]]
}

/// Complex dilatation `∂z̄ f / ∂z f` from a real Jacobian.
pub fn dilatation_of(j: &Jacobian) -> Complex64 {
    let (dz, dzb) = wirtinger(j);
    dzb / dz
}

pub fn distortion_at(mu: Complex64) -> Result<f64> {
    let a = mu.norm();
    if !(a < 1.0) {
        return Err(Error::SingularDistortion(a));
    }
    Ok((1.0 + a) / (1.0 - a))
}

/// Increment and deviation integral of ψ along a span starting at `x`.
#[derive(Debug, Clone, Copy)]
struct Span {
    /// `ψ(end) − ψ(x)`.
    delta: f64,
    /// `∫ (ψ − ψ(x))` over the span, oriented from the lower endpoint.
    dev: f64,
}

impl HomeoExtension {
    pub fn grid_size(&self) -> usize {
        self.m
    }

    fn slope(&self, g: i64) -> f64 {
        self.slopes[g.rem_euclid(self.m as i64) as usize]
    }

    pub fn psi(&self, x: f64) -> f64 {
        let n = x.floor();
        let f = x - n;
        let c = ((f * self.m as f64) as usize).min(self.m - 1);
        n + self.knots[c] + self.slopes[c] * (f - c as f64 / self.m as f64)
    }

    pub fn psi_inverse(&self, v: f64) -> f64 {
        let n = v.floor();
        let f = v - n;
        let c = self.knots.partition_point(|&k| k <= f).clamp(1, self.m) - 1;
        n + c as f64 / self.m as f64 + (f - self.knots[c]) / self.slopes[c]
    }

    /// Circle map `φ(e^{2πiθ}) = e^{2πiψ(θ)}`.
    pub fn circle_map(&self, theta: f64) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.psi(theta))
    }

    /// `∫₀ˣ ψ` for the lifted ψ.
    fn antiderivative(&self, x: f64) -> f64 {
        let n = x.floor();
        let f = x - n;
        let mf = self.m as f64;
        let c = ((f * mf) as usize).min(self.m - 1);
        let r = f - c as f64 / mf;
        let within = self.prefix_int[c] + self.knots[c] * r + 0.5 * self.slopes[c] * r * r;
        n * self.prefix_int[self.m] + 0.5 * n * (n - 1.0) + within + n * f
    }

    fn forward(&self, x: f64, s: f64) -> Span {
        let mf = self.m as f64;
        if s * mf > WALK_LIMIT {
            let p = self.psi(x);
            return Span {
                delta: self.psi(x + s) - p,
                dev: self.antiderivative(x + s) - self.antiderivative(x) - s * p,
            };
        }
        let mut g = (x * mf).floor() as i64;
        if g as f64 / mf > x {
            g -= 1;
        }
        while (g + 1) as f64 / mf <= x {
            g += 1;
        }
        // Lengths are tracked against `s` so spans inside one cell stay exact.
        let (mut u, mut covered, mut delta, mut dev) = (x, 0.0, 0.0, 0.0);
        while covered < s {
            let b = (g + 1) as f64 / mf;
            let l = (b - u).min(s - covered);
            if l > 0.0 {
                let sl = self.slope(g);
                dev += l * delta + 0.5 * sl * l * l;
                delta += sl * l;
                covered += l;
            }
            u = b;
            g += 1;
        }
        Span { delta, dev }
    }

    fn backward(&self, x: f64, s: f64) -> Span {
        let mf = self.m as f64;
        if s * mf > WALK_LIMIT {
            let p = self.psi(x);
            return Span {
                delta: self.psi(x - s) - p,
                dev: self.antiderivative(x) - self.antiderivative(x - s) - s * p,
            };
        }
        let mut g = (x * mf).ceil() as i64 - 1;
        if (g + 1) as f64 / mf < x {
            g += 1;
        }
        while g as f64 / mf >= x {
            g -= 1;
        }
        let (mut u, mut covered, mut delta, mut dev) = (x, 0.0, 0.0, 0.0);
        while covered < s {
            let a = g as f64 / mf;
            let l = (u - a).min(s - covered);
            if l > 0.0 {
                let sl = self.slope(g);
                dev += l * delta - 0.5 * sl * l * l;
                delta -= sl * l;
                covered += l;
            }
            u = a;
            g -= 1;
        }
        Span { delta, dev }
    }

    /// `ψ(b) − ψ(a)` without cancellation for nearby arguments.
    pub fn psi_increment(&self, a: f64, b: f64) -> f64 {
        if b >= a {
            self.forward(a, b - a).delta
        } else {
            -self.forward(b, a - b).delta
        }
    }

    /// Unoriented extension `E(x+iy)` for `y ≥ 0`.
    pub fn ba_extension_at(&self, x: f64, y: f64) -> Result<Complex64> {
        if !(y >= 0.0) || !x.is_finite() {
            return Err(Error::domain(format!("extension needs y >= 0, got ({x}, {y})")));
        }
        let n = x.floor();
        let f = x - n;
        let w = if y == 0.0 {
            Complex64::new(self.psi(f), 0.0)
        } else if y <= 1.0 {
            let p = self.forward(f, y);
            let q = self.backward(f, y);
            Complex64::new(self.psi(f) + (p.dev + q.dev) / (2.0 * y), (p.dev - q.dev) / y)
        } else if y < 2.0 {
            Complex64::new(f + (2.0 - y) * self.c0, y)
        } else {
            Complex64::new(f, y)
        };
        Ok(w + n)
    }

    /// Real Jacobian of `E` at `x+iy`, `y > 0`; at `y = 1` the averaging branch is used.
    pub fn ba_jacobian(&self, x: f64, y: f64) -> Result<Jacobian> {
        if !(y > 0.0) || !x.is_finite() {
            return Err(Error::domain(format!("Jacobian needs y > 0, got ({x}, {y})")));
        }
        if y >= 2.0 {
            return Ok([[1.0, 0.0], [0.0, 1.0]]);
        }
        if y > 1.0 {
            return Ok([[1.0, -self.c0], [0.0, 1.0]]);
        }
        let f = x - x.floor();
        let p = self.forward(f, y);
        let q = self.backward(f, y);
        let (dp, dq) = (p.delta, q.delta);
        Ok([
            [(dp - dq) / (2.0 * y), (dp + dq) / (2.0 * y) - (p.dev + q.dev) / (2.0 * y * y)],
            [(dp + dq) / y, (dp - dq) / y - (p.dev - q.dev) / (y * y)],
        ])
    }

    pub fn ba_derivative_at(&self, x: f64, y: f64) -> Result<(Complex64, Complex64)> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::domain(format!("closed-form partials need 0 < y < 1, got {y}")));
        }
        Ok(wirtinger(&self.ba_jacobian(x, y)?))
    }

    /// Inverse of `E` on the closed upper half-plane.
    pub fn ba_inverse(&self, target: Complex64) -> Result<Complex64> {
        let (a, b) = (target.re, target.im);
        if !(b >= 0.0) || !a.is_finite() {
            return Err(Error::domain(format!("inverse extension needs Im >= 0, got {target}")));
        }
        if b >= 2.0 {
            return Ok(target);
        }
        if b >= 1.0 {
            return Ok(Complex64::new(a - (2.0 - b) * self.c0, b));
        }
        let n = a.floor();
        let f = a - n;
        if b == 0.0 {
            return Ok(Complex64::new(self.psi_inverse(f) + n, 0.0));
        }
        let goal = Complex64::new(f, b);
        let x0 = self.psi_inverse(f);
        let mut y = b;
        for _ in 0..8 {
            let avg = self.psi_increment(x0 - y, x0 + y) / (2.0 * y);
            y = (b / avg).clamp(1e-300, 1.0);
        }
        let mut w = Complex64::new(x0, y);
        let mut r = self.ba_extension_at(w.re, w.im)? - goal;
        let tol = 1e-13 * b.max(1e-3);
        for _ in 0..200 {
            if r.norm() <= tol {
                return Ok(w + n);
            }
            let j = self.ba_jacobian(w.re, w.im)?;
            let ji = invert(&j).ok_or(Error::SingularDistortion(1.0))?;
            let step = Complex64::new(ji[0][0] * r.re + ji[0][1] * r.im, ji[1][0] * r.re + ji[1][1] * r.im);
            let mut lambda = 1.0;
            loop {
                let mut cand = w - step * lambda;
                if cand.im <= 0.0 {
                    cand.im = 0.5 * w.im;
                }
                if cand.im > 1.0 {
                    cand.im = 0.5 * (1.0 + w.im);
                }
                let rc = self.ba_extension_at(cand.re, cand.im)? - goal;
                if rc.norm() < r.norm() || lambda < 1e-12 {
                    w = cand;
                    r = rc;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if r.norm() <= 1e3 * tol {
            return Ok(w + n);
        }
        Err(Error::NoConvergence { iterations: 200, residual: r.norm() })
    }

    /// Oriented extension `Ψ`.
    pub fn extension(&self, z: Complex64) -> Result<Complex64> {
        match self.orientation {
            Orientation::Upper => self.ba_extension_at(z.re, z.im),
            Orientation::Lower => Ok(self.ba_extension_at(z.re, -z.im)?.conj()),
        }
    }

    pub fn extension_jacobian(&self, z: Complex64) -> Result<Jacobian> {
        match self.orientation {
            Orientation::Upper => self.ba_jacobian(z.re, z.im),
            Orientation::Lower => {
                let [[a, b], [c, d]] = self.ba_jacobian(z.re, -z.im)?;
                Ok([[a, -b], [-c, d]])
            }
        }
    }

    pub fn extension_inverse(&self, zeta: Complex64) -> Result<Complex64> {
        match self.orientation {
            Orientation::Upper => self.ba_inverse(zeta),
            Orientation::Lower => Ok(self.ba_inverse(zeta.conj())?.conj()),
        }
    }

    /// Whether `z` lies in the closed domain of `Φ` for this orientation.
    pub fn owns(&self, z: Complex64) -> bool {
        match self.orientation {
            Orientation::Upper => z.norm() <= 1.0,
            Orientation::Lower => z.norm() >= 1.0,
        }
    }

    /// `Φ(z) = exp(2πi Ψ(log z / 2πi))`.
    pub fn phi(&self, z: Complex64) -> Result<Complex64> {
        if z == Complex64::new(0.0, 0.0) {
            return Ok(z);
        }
        let w = self.extension(log_coordinate(z))?;
        Ok(exp_coordinate(w))
    }

    /// Real Jacobian of `Φ` at `z ≠ 0`.
    pub fn phi_jacobian(&self, z: Complex64) -> Result<Jacobian> {
        let zeta = log_coordinate(z);
        let image = exp_coordinate(self.extension(zeta)?);
        let j = self.extension_jacobian(zeta)?;
        let two_pi_i = Complex64::new(0.0, 2.0 * PI);
        Ok(matmul(&matmul(&cmul_matrix(two_pi_i * image), &j), &cmul_matrix(1.0 / (two_pi_i * z))))
    }

    pub fn phi_inverse(&self, z: Complex64) -> Result<Complex64> {
        if z == Complex64::new(0.0, 0.0) {
            return Ok(z);
        }
        Ok(exp_coordinate(self.extension_inverse(log_coordinate(z))?))
    }

    /// `sup_x |ψ(x+δ) − ψ(x)|` over grid points.
    pub fn oscillation(&self, delta: f64) -> f64 {
        (0..self.m)
            .map(|i| {
                let x = i as f64 / self.m as f64;
                self.psi_increment(x, x + delta)
            })
            .fold(0.0, f64::max)
    }
}

impl crate::dyadic::Increments for HomeoExtension {
    fn cells(&self) -> usize {
        self.m
    }

    fn increment(&self, a: f64, b: f64) -> f64 {
        self.psi_increment(a, b)
    }
}

/// `log z / 2πi`: real part is the angle in turns, imaginary part `−log|z|/2π`.
pub fn log_coordinate(z: Complex64) -> Complex64 {
    Complex64::new(z.arg() / (2.0 * PI), -z.norm().ln() / (2.0 * PI))
}

pub fn exp_coordinate(w: Complex64) -> Complex64 {
    Complex64::from_polar((-2.0 * PI * w.im).exp(), 2.0 * PI * w.re)
}

/// Power-law fit `sup|ψ(x+δ)−ψ(x)| ≈ C δ^c` over the given lags.
#[derive(Debug, Clone, Serialize)]
pub struct HolderFit {
    pub constant: f64,
    pub exponent: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn holder_fit(homeo: &HomeoExtension, deltas: &[f64]) -> Result<HolderFit> {
    let points: Vec<(f64, f64)> = deltas.iter().map(|&d| (d, homeo.oscillation(d))).collect();
    if points.len() < 2 {
        return Err(Error::Insufficient("Hölder fit needs at least two lags".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = crate::stats::fit_line(&lx, &ly);
    Ok(HolderFit { constant: fit.intercept.exp(), exponent: fit.slope, r2: fit.r2, points })
}

#[derive(Debug, Clone)]
pub struct DilatationField {
    pub mu: GridField,
    /// Lattice indices whose forward Jacobian had nonpositive determinant.
    pub flagged: Vec<usize>,
    pub support_radius: f64,
}

impl DilatationField {
    /// `K = (1+|μ|)/(1−|μ|)` per node.
    pub fn distortion(&self) -> Vec<f64> {
        self.mu.values.iter().map(|m| distortion_at(*m).unwrap_or(f64::INFINITY)).collect()
    }
}

/// Per-node result of the inverse-dilatation computation.
#[derive(Debug, Clone, Copy)]
pub struct NodeDilatation {
    pub mu: Complex64,
    pub preimage: Complex64,
    pub forward: Jacobian,
}

/// Dilatation of `Φ⁻¹` at image point `z`, using `homeo` for the side of `z`.
pub fn inverse_dilatation_at(homeo: &HomeoExtension, z: Complex64) -> Result<Option<NodeDilatation>> {
    let r = z.norm();
    let (lo, hi) = ((-4.0 * PI).exp(), (4.0 * PI).exp());
    if r < lo || r > hi {
        return Ok(None);
    }
    let mut zeta = log_coordinate(z);
    if zeta.im == 0.0 {
        // Nodes on the circle take the one-sided limit from their own side.
        zeta.im = match homeo.orientation {
            Orientation::Upper => 1e-12,
            Orientation::Lower => -1e-12,
        };
    }
    let w_zeta = homeo.extension_inverse(zeta)?;
    let preimage = exp_coordinate(w_zeta);
    let forward = homeo.phi_jacobian(preimage)?;
    if !(det(&forward) > 0.0) {
        return Err(Error::SingularDistortion(det(&forward)));
    }
    let inv = invert(&forward).expect("positive determinant");
    Ok(Some(NodeDilatation { mu: dilatation_of(&inv), preimage, forward }))
}

/// Welding dilatation on `lattice`: `μ_{Φ₁⁻¹}` in `𝔻`, `μ_{Φ₂⁻¹}` outside,
/// zero beyond `support_radius`.
pub fn dilatation_field(
    upper: &HomeoExtension,
    lower: &HomeoExtension,
    lattice: Lattice,
    support_radius: f64,
) -> Result<DilatationField> {
    if upper.orientation != Orientation::Upper || lower.orientation != Orientation::Lower {
        return Err(Error::domain("dilatation field needs an upper and a lower extension"));
    }
    let results: Vec<Result<Option<Complex64>>> = (0..lattice.len())
        .into_par_iter()
        .map(|idx| {
            let z = lattice.node(idx);
            if z.norm() > support_radius {
                return Ok(Some(Complex64::new(0.0, 0.0)));
            }
            let side = if z.norm() < 1.0 { upper } else { lower };
            match inverse_dilatation_at(side, z) {
                Ok(Some(node)) if node.mu.norm() < 1.0 => Ok(Some(node.mu)),
                Ok(Some(_)) | Err(Error::SingularDistortion(_)) => Ok(None),
                Ok(None) => Ok(Some(Complex64::new(0.0, 0.0))),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut mu = GridField::zeros(lattice);
    let mut flagged = Vec::new();
    for (idx, res) in results.into_iter().enumerate() {
        match res? {
            Some(v) => {
                mu.values[idx] = v;
                mu.mask[idx] = v != Complex64::new(0.0, 0.0);
            }
            None => flagged.push(idx),
        }
    }
    Ok(DilatationField { mu, flagged, support_radius })
}
