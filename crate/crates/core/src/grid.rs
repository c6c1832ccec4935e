//! Complex lattice fields with a binary + JSON sidecar serialization.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square lattice `[−L, L)²` with `n` nodes per side; node `(i, j)` sits at
/// `(−L + i·h) + i(−L + j·h)` and is stored at `j·n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub half_width: f64,
    pub n: usize,
}

impl Lattice {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) || n < 4 || !n.is_power_of_two() {
            return Err(Error::domain(format!(
                "lattice needs L > 0 and a power-of-two node count, got L={half_width}, n={n}"
            )));
        }
        Ok(Lattice { half_width, n })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn node(&self, idx: usize) -> Complex64 {
        let (i, j) = (idx % self.n, idx / self.n);
        let h = self.h();
        Complex64::new(-self.half_width + i as f64 * h, -self.half_width + j as f64 * h)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Complex64> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub fn refine(&self) -> Self {
        Lattice { half_width: self.half_width, n: 2 * self.n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub lattice: Lattice,
    pub values: Vec<Complex64>,
    /// Support indicator; `false` nodes carry zero by convention.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format: String,
    pub half_width: f64,
    pub h: f64,
    pub n: usize,
    pub support_nodes: usize,
    pub meta: serde_json::Value,
}

const MAGIC: &[u8; 8] = b"GMCGRID1";

impl GridField {
    pub fn zeros(lattice: Lattice) -> Self {
        GridField {
            lattice,
            values: vec![Complex64::new(0.0, 0.0); lattice.len()],
            mask: vec![false; lattice.len()],
        }
    }

    pub fn from_fn<F: Fn(Complex64) -> Complex64>(lattice: Lattice, f: F) -> Self {
        let values: Vec<Complex64> = lattice.nodes().map(f).collect();
        let mask = values.iter().map(|v| *v != Complex64::new(0.0, 0.0)).collect();
        GridField { lattice, values, mask }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Discrete `L²` norm `(Σ|f|² h²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let h = self.lattice.h();
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * h * h).sqrt()
    }

    /// Bilinear interpolation; points outside the lattice clamp to the border.
    pub fn interpolate(&self, z: Complex64) -> Complex64 {
        let lat = self.lattice;
        let h = lat.h();
        let n = lat.n;
        let fx = ((z.re + lat.half_width) / h).clamp(0.0, (n - 1) as f64);
        let fy = ((z.im + lat.half_width) / h).clamp(0.0, (n - 1) as f64);
        let i = (fx.floor() as usize).min(n - 2);
        let j = (fy.floor() as usize).min(n - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| self.values[b * n + a];
        v(i, j) * ((1.0 - tx) * (1.0 - ty))
            + v(i + 1, j) * (tx * (1.0 - ty))
            + v(i, j + 1) * ((1.0 - tx) * ty)
            + v(i + 1, j + 1) * (tx * ty)
    }

    /// Writes `<stem>.grid` (binary) and `<stem>.json` (sidecar).
    pub fn write(&self, stem: &Path, meta: serde_json::Value) -> Result<()> {
        let mut bytes = Vec::with_capacity(40 + 16 * self.values.len());
        bytes.extend_from_slice(MAGIC);
        let l = self.lattice.half_width;
        for v in [-l, l, -l, l, self.lattice.h()] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&(self.lattice.n as u64).to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        std::fs::File::create(stem.with_extension("grid"))?.write_all(&bytes)?;
        let side = GridSidecar {
            format: "GMCGRID1: magic, box (xmin,xmax,ymin,ymax), h, n as u64, then n*n row-major (re,im) f64 pairs, little-endian".into(),
            half_width: l,
            h: self.lattice.h(),
            n: self.lattice.n,
            support_nodes: self.mask.iter().filter(|m| **m).count(),
            meta,
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(stem.with_extension("grid"))?.read_to_end(&mut bytes)?;
        if bytes.len() < 56 || &bytes[..8] != MAGIC {
            return Err(Error::Io("not a GMCGRID1 file".into()));
        }
        let f = |k: usize| f64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
        let lattice = Lattice::new(f(1), n)?;
        if bytes.len() != 56 + 16 * n * n {
            return Err(Error::Io("truncated GMCGRID1 payload".into()));
        }
        let values: Vec<Complex64> = bytes[56..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let mask = values.iter().map(|v| *v != Complex64::new(0.0, 0.0)).collect();
        Ok(GridField { lattice, values, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_layout_and_interpolation() {
        let lat = Lattice::new(2.0, 8).unwrap();
        assert_eq!(lat.node(0), Complex64::new(-2.0, -2.0));
        assert_eq!(lat.node(9), Complex64::new(-1.5, -1.5));
        let f = GridField::from_fn(lat, |z| z * 2.0 + Complex64::new(1.0, -1.0));
        let p = Complex64::new(0.3, -0.7);
        assert!((f.interpolate(p) - (p * 2.0 + Complex64::new(1.0, -1.0))).norm() < 1e-14);
    }

    #[test]
    fn binary_roundtrip() {
        let dir = std::env::temp_dir().join(format!("gmcgrid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let lat = Lattice::new(1.0, 16).unwrap();
        let f = GridField::from_fn(lat, |z| z.conj() * z.re);
        let stem = dir.join("field");
        f.write(&stem, serde_json::json!({"kind": "test"})).unwrap();
        let g = GridField::read(&stem).unwrap();
        assert_eq!(f.values, g.values);
        std::fs::remove_dir_all(dir).ok();
    }
}
