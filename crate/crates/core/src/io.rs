//! Artifact writers. Every artifact carries a [`Meta`] block: effective
//! config, seed, grid resolutions and the crate version.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covcheck::CovTable;
use crate::error::{Error, Result};
use crate::gmc::MeasureSample;
use crate::walk::WalkTrace;

pub const VERSION: &str = concat!("gmcweld ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub seed: u64,
    /// Named resolutions, e.g. `("grid_m", 4096)`.
    pub grids: Vec<(String, usize)>,
    pub config: serde_json::Value,
}

impl Meta {
    pub fn new(seed: u64, grids: Vec<(String, usize)>, config: serde_json::Value) -> Self {
        Meta { version: VERSION.into(), seed, grids, config }
    }

    fn comment_lines(&self) -> Result<String> {
        let json = serde_json::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        Ok(format!("# meta {json}\n"))
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    report: &'a T,
}

/// Pretty JSON `{"meta": …, "report": …}`. No timestamps, so equal inputs give equal bytes.
pub fn json_report<T: Serialize>(meta: &Meta, report: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Envelope { meta, report }).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Fixed 9-decimal rendering; negative zero prints as `0`.
fn coord(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    let r = if r == 0.0 { 0.0 } else { r };
    let s = format!("{r:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Closed curve as one `<path>`, `y` flipped so the picture is in the usual
/// orientation, viewBox fitted with a 5% margin.
pub fn svg_curve(curve: &[Complex64], meta: &Meta) -> Result<String> {
    if curve.len() < 2 || curve.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::domain("curve needs at least two finite points"));
    }
    let pts: Vec<(f64, f64)> = curve.iter().map(|z| (z.re, -z.im)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1e-9);
    let (vx, vy, vw, vh) = (x0 - pad, y0 - pad, x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);
    let mut d = String::with_capacity(pts.len() * 28);
    for (k, &(x, y)) in pts.iter().enumerate() {
        d.push_str(if k == 0 { "M" } else { " L" });
        d.push_str(&format!("{} {}", coord(x), coord(y)));
    }
    d.push_str(" Z");
    let meta_json = serde_json::to_string(meta).map_err(|e| Error::Io(e.to_string()))?;
    let meta_xml = meta_json.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">\n<metadata>{}</metadata>\n<path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{}\"/>\n</svg>\n",
        coord(vx),
        coord(vy),
        coord(vw),
        coord(vh),
        meta_xml,
        d,
        coord(vw / 500.0)
    ))
}

fn csv_table(kind: &str, meta: &Meta, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(format!("# {kind} v1\n{}{body}", meta.comment_lines()?))
}

/// Columns `m,Y,i,j,branch`.
pub fn walk_csv(trace: &WalkTrace, meta: &Meta) -> Result<String> {
    let rows = (0..trace.y.len()).map(|k| {
        let (i, j) = trace.ij[k];
        vec![
            trace.m(k).to_string(),
            format!("{:e}", trace.y[k]),
            i.to_string(),
            j.to_string(),
            format!("{:?}", trace.branch(k)),
        ]
    });
    csv_table("walk-trace", meta, &["m", "Y", "i", "j", "branch"], rows)
}

/// Columns `k,x,re,im`.
pub fn curve_csv(curve: &[Complex64], meta: &Meta) -> Result<String> {
    let m = curve.len();
    let rows = curve
        .iter()
        .enumerate()
        .map(|(k, z)| vec![k.to_string(), format!("{:e}", k as f64 / m as f64), format!("{:e}", z.re), format!("{:e}", z.im)]);
    csv_table("welding-curve", meta, &["k", "x", "re", "im"], rows)
}

/// Columns `i,x,mass,cumulative`.
pub fn measure_csv(tau: &MeasureSample, meta: &Meta) -> Result<String> {
    let m = tau.grid_size;
    let prefix = tau.prefix();
    let rows = (0..m).map(|i| {
        vec![
            i.to_string(),
            format!("{:e}", i as f64 / m as f64),
            format!("{:e}", tau.masses[i]),
            format!("{:e}", prefix[i + 1]),
        ]
    });
    csv_table("measure", meta, &["i", "x", "mass", "cumulative"], rows)
}

/// Columns `field,k,t,analytic,empirical,se,z,pass`.
pub fn covariance_csv(tables: &[&CovTable], meta: &Meta) -> Result<String> {
    let rows = tables.iter().flat_map(|t| {
        t.rows.iter().map(move |r| {
            vec![
                t.field.clone(),
                r.k.to_string(),
                format!("{:e}", r.t),
                format!("{:e}", r.analytic),
                format!("{:e}", r.empirical.mean),
                format!("{:e}", r.empirical.se),
                format!("{:.3}", r.z),
                r.pass.to_string(),
            ]
        })
    });
    csv_table("covariance", meta, &["field", "k", "t", "analytic", "empirical", "se", "z", "pass"], rows)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Meta {
        Meta::new(7, vec![("grid_m".into(), 8)], serde_json::json!({"gamma": 0.0}))
    }

    #[test]
    fn coordinates_round_to_nine_places() {
        assert_eq!(coord(1.0), "1");
        assert_eq!(coord(-0.0), "0");
        assert_eq!(coord(-1e-12), "0");
        assert_eq!(coord(0.1234567894), "0.123456789");
        assert_eq!(coord(-2.5), "-2.5");
    }

    #[test]
    fn svg_has_one_path_and_fitted_box() {
        let c: Vec<Complex64> =
            (0..64).map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 64.0)).collect();
        let s = svg_curve(&c, &meta()).unwrap();
        assert_eq!(s.matches("<path").count(), 1);
        assert!(s.contains("viewBox=\"-1.1 -1.1 2.2 2.2\""), "{s}");
        assert!(s.contains("gmcweld"));
    }

    #[test]
    fn csv_header_is_versioned() {
        let tau = MeasureSample::uniform(4);
        let s = measure_csv(&tau, &meta()).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# measure v1");
        assert!(lines[1].starts_with("# meta {"));
        assert_eq!(lines[2], "i,x,mass,cumulative");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn json_is_deterministic() {
        let a = json_report(&meta(), &vec![1.0, 2.0]).unwrap();
        let b = json_report(&meta(), &vec![1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["meta"]["seed"], 7);
    }
}
