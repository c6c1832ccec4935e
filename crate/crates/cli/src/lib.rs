//! Configuration and subcommand dispatch for the `gmcweld` binary.
//!
//! Config files are flat `key = value` lines; sections are dotted key
//! prefixes (`beltrami.grid = 512`). `#` starts a comment. Unknown keys are
//! rejected. Command-line overrides are applied after the file, in order.

use std::fmt;
use std::path::{Path, PathBuf};

use gmcweld::covcheck::{default_offsets, h_covariance, h_oracle_convergence, v_band_covariance, v_variance_offset, CovReport};
use gmcweld::events::{event_frequency, Ensemble, Event, EventConstants, EventSpec, Side};
use gmcweld::gmc::{build_measure, moment_slope, zeta_p, MeasureSample};
use gmcweld::io::{self, Meta};
use gmcweld::rng::replica_seed;
use gmcweld::stats::Estimate;
use gmcweld::walk::{
    increments_by_branch, occupation_stats, run_field_walk, run_walks, trace_violations, Branch, Init, WalkParams,
    WalkTrace,
};
use gmcweld::welding::{run_welding, WeldingConfig};
use gmcweld::whitenoise::{FieldSampler, StackSpec};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeltramiConfig {
    #[serde(rename = "box")]
    pub half_width: f64,
    pub grid: usize,
    pub n_list: Vec<u32>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventsConfig {
    #[serde(rename = "N")]
    pub big_n: u32,
    pub replicas: usize,
    pub eps: f64,
    pub x: usize,
    pub y: usize,
    pub constants: EventConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkModeKey {
    Abstract,
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkConfig {
    pub mode: WalkModeKey,
    #[serde(rename = "N")]
    pub big_n: u32,
    pub steps: usize,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub gamma: f64,
    pub rho: f64,
    pub grid_m: usize,
    pub depth: u32,
    pub seed: u64,
    /// Plumbing only; left out of the echoed config so reports do not depend on it.
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub beltrami: BeltramiConfig,
    pub events: EventsConfig,
    pub walk: WalkConfig,
    pub covcheck_replicas: usize,
    pub moments_replicas: usize,
    pub moments_p: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: 0.2,
            rho: 1.0 / 16.0,
            grid_m: 4096,
            depth: 10,
            seed: 1,
            out_dir: PathBuf::from("out"),
            beltrami: BeltramiConfig { half_width: 4.0, grid: 512, n_list: vec![1, 2, 4, 8, 16], tol: 1e-10, max_iter: 500 },
            events: EventsConfig { big_n: 1, replicas: 200, eps: 1.0, x: 0, y: 0, constants: EventConstants::default() },
            walk: WalkConfig { mode: WalkModeKey::Abstract, big_n: 200, steps: 400, replicas: 1000 },
            covcheck_replicas: 2000,
            moments_replicas: 200,
            moments_p: 2.0,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage(gmcweld::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Stage(e) => write!(f, "stage error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gmcweld::Error> for CliError {
    fn from(e: gmcweld::Error) -> Self {
        CliError::Stage(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) => 1,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| cfg_err(format!("`{key}`: cannot parse `{v}`")))
}

/// Accepts decimals and fractions such as `1/16`.
fn real(key: &str, v: &str) -> Result<f64, CliError> {
    if let Some((a, b)) = v.split_once('/') {
        let (a, b): (f64, f64) = (num(key, a.trim())?, num(key, b.trim())?);
        return Ok(a / b);
    }
    num(key, v)
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "gamma" => self.gamma = real(key, v)?,
            "rho" => self.rho = real(key, v)?,
            "grid_m" => self.grid_m = num(key, v)?,
            "depth" => self.depth = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "beltrami.box" => self.beltrami.half_width = real(key, v)?,
            "beltrami.grid" => self.beltrami.grid = num(key, v)?,
            "beltrami.n_list" => {
                self.beltrami.n_list = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_, _>>()?;
            }
            "beltrami.tol" => self.beltrami.tol = real(key, v)?,
            "beltrami.max_iter" => self.beltrami.max_iter = num(key, v)?,
            "events.N" => self.events.big_n = num(key, v)?,
            "events.replicas" => self.events.replicas = num(key, v)?,
            "events.eps" => self.events.eps = real(key, v)?,
            "events.x" => self.events.x = num(key, v)?,
            "events.y" => self.events.y = num(key, v)?,
            "walk.mode" => {
                self.walk.mode = match v {
                    "abstract" => WalkModeKey::Abstract,
                    "field" | "field-driven" => WalkModeKey::Field,
                    _ => return Err(cfg_err(format!("`walk.mode` must be `abstract` or `field`, got `{v}`"))),
                }
            }
            "walk.N" => self.walk.big_n = num(key, v)?,
            "walk.steps" => self.walk.steps = num(key, v)?,
            "walk.replicas" => self.walk.replicas = num(key, v)?,
            "covcheck.replicas" => self.covcheck_replicas = num(key, v)?,
            "moments.replicas" => self.moments_replicas = num(key, v)?,
            "moments.p" => self.moments_p = real(key, v)?,
            _ => match key.strip_prefix("events.") {
                Some(c) => {
                    let x = real(key, v)?;
                    self.events.constants.set(c, x).map_err(|_| cfg_err(format!("unknown key `{key}`")))?;
                }
                None => return Err(cfg_err(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let root2 = std::f64::consts::SQRT_2;
        if !(self.gamma >= 0.0 && self.gamma < root2) {
            return Err(cfg_err(format!("gamma = {} is out of range: need 0 ≤ gamma < √2 ≈ {root2:.6}", self.gamma)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(cfg_err(format!("rho = {} is out of range: need 0 < rho < 1", self.rho)));
        }
        if self.grid_m < 8 || !self.grid_m.is_power_of_two() {
            return Err(cfg_err(format!("grid_m = {} must be a power of two ≥ 8", self.grid_m)));
        }
        let b = &self.beltrami;
        if !(b.half_width > 2.0) || b.grid < 16 || !b.grid.is_power_of_two() {
            return Err(cfg_err("beltrami.box must exceed 2 and beltrami.grid must be a power of two ≥ 16"));
        }
        if b.n_list.is_empty() || b.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err("beltrami.n_list must be a nonempty increasing list"));
        }
        if !(b.tol > 0.0) || b.max_iter == 0 {
            return Err(cfg_err("beltrami.tol must be positive and beltrami.max_iter at least 1"));
        }
        let e = &self.events;
        if e.replicas < 100 || !(e.eps > 0.0) || e.x >= self.grid_m || e.y >= self.grid_m {
            return Err(cfg_err("events need replicas ≥ 100, eps > 0 and x, y < grid_m"));
        }
        let w = &self.walk;
        if w.steps == 0 || w.replicas < 100 {
            return Err(cfg_err("walk needs steps ≥ 1 and replicas ≥ 100"));
        }
        if self.covcheck_replicas < 2 || self.moments_replicas < 2 || !(self.moments_p > 0.0) {
            return Err(cfg_err("covcheck/moments need replicas ≥ 2 and moments.p > 0"));
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` in order; validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
            c.apply_text(&text)?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn meta(&self, grids: Vec<(&str, usize)>) -> Meta {
        let config = serde_json::to_value(self).expect("config serializes");
        Meta::new(self.seed, grids.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), config)
    }

    fn spec(&self) -> StackSpec {
        StackSpec::new(self.grid_m, self.rho, self.depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Sample,
    Weld,
    Events,
    Walk,
    Covcheck,
    Moments,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    io::write_text(dir, name, text).map_err(CliError::Stage)
}

/// Run one subcommand; returns the paths written.
pub fn dispatch(cmd: Subcommand, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let names = match cmd {
        Subcommand::Sample => sample(cfg)?,
        Subcommand::Weld => weld(cfg)?,
        Subcommand::Events => events(cfg)?,
        Subcommand::Walk => walk(cfg)?,
        Subcommand::Covcheck => covcheck(cfg)?,
        Subcommand::Moments => moments(cfg)?,
    };
    Ok(names.into_iter().map(|n| cfg.out_dir.join(n)).collect())
}

#[derive(Serialize)]
struct SampleReport {
    total_mass: f64,
    min_cell: f64,
    max_cell: f64,
    normalization: f64,
    top_field_variance: Estimate,
}

fn sample(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.spec().h_only();
    let stack = FieldSampler::new(spec).map_err(|e| e.at("fields"))?.sample(cfg.seed);
    let tau = build_measure(&stack, cfg.gamma, cfg.depth).map_err(|e| e.at("measure"))?;
    let sq: Vec<f64> = stack.top_h.iter().map(|h| h * h).collect();
    let report = SampleReport {
        total_mass: tau.total(),
        min_cell: tau.masses.iter().copied().fold(f64::INFINITY, f64::min),
        max_cell: tau.masses.iter().copied().fold(0.0, f64::max),
        normalization: tau.normalization,
        top_field_variance: Estimate::of(&sq),
    };
    let meta = cfg.meta(vec![("grid_m", cfg.grid_m)]);
    write(&cfg.out_dir, "sample.json", &io::json_report(&meta, &report)?)?;
    write(&cfg.out_dir, "measure.csv", &io::measure_csv(&tau, &meta)?)?;
    Ok(vec!["sample.json".into(), "measure.csv".into()])
}

fn weld(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let b = &cfg.beltrami;
    let wc = WeldingConfig {
        gamma: cfg.gamma,
        rho: cfg.rho,
        grid_m: cfg.grid_m,
        depth: cfg.depth,
        half_width: b.half_width,
        lattice_n: b.grid,
        n_list: b.n_list.clone(),
        tol: b.tol,
        max_iter: b.max_iter,
        ..WeldingConfig::default()
    };
    let res = run_welding(&wc, cfg.seed)?;
    let meta = cfg.meta(vec![("grid_m", cfg.grid_m), ("lattice_n", b.grid)]);
    write(&cfg.out_dir, "weld.json", &io::json_report(&meta, &res)?)?;
    write(&cfg.out_dir, "curve.svg", &io::svg_curve(&res.curve, &meta)?)?;
    write(&cfg.out_dir, "curve.csv", &io::curve_csv(&res.curve, &meta)?)?;
    let mut out = vec!["weld.json".to_string(), "curve.svg".into(), "curve.csv".into()];
    let meta_json = serde_json::to_value(&meta).expect("meta serializes");
    for (name, field) in [("final_map", &res.final_map), ("mu", &res.mu)] {
        if let Some(f) = field {
            f.write(&cfg.out_dir.join(name), meta_json.clone())?;
            out.push(format!("{name}.grid"));
            out.push(format!("{name}.json"));
        }
    }
    Ok(out)
}

fn events(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let e = &cfg.events;
    let n = e.big_n;
    if n == 0 || cfg.depth < 5 * n {
        return Err(cfg_err(format!("events need N ≥ 1 and depth ≥ 5N (N = {n}, depth = {})", cfg.depth)));
    }
    let t = n as f64;
    let battery = [
        Event::Shape { side: Side::First, t },
        Event::Size { t, s: t },
        Event::Centre { big_n: n },
        Event::Match { big_n: n },
        Event::AnnPrime { t, s: t, big_n: n },
        Event::ShapeRed { side: Side::First, t },
        Event::SizeRed { t, s: t, big_n: n },
        Event::Upp { side: Side::First, n },
        Event::Low { side: Side::First, n },
        Event::Frac { side: Side::First, n },
        Event::Scal { big_n: n },
    ];
    let specs: Vec<EventSpec> =
        battery.into_iter().map(|ev| EventSpec { constants: e.constants.clone(), ..EventSpec::new(ev) }).collect();
    let ens = Ensemble::new(cfg.spec().quarter(), cfg.gamma, e.x, e.y, e.eps, cfg.seed)?;
    let rates = event_frequency(&specs, &ens, e.replicas)?;
    let meta = cfg.meta(vec![("grid_m", cfg.grid_m)]);
    write(&cfg.out_dir, "events.json", &io::json_report(&meta, &rates)?)?;
    Ok(vec!["events.json".into()])
}

#[derive(Serialize)]
struct BranchMoments {
    branch: Branch,
    expected_mean: f64,
    expected_variance: f64,
    mean: Estimate,
    variance: Estimate,
}

#[derive(Serialize)]
struct WalkReport {
    params: WalkParams,
    init: Option<Init>,
    window: (usize, usize),
    occupation: Option<gmcweld::walk::OccupationStats>,
    invariant_violations: usize,
    increments: Vec<BranchMoments>,
}

fn walk(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let w = &cfg.walk;
    let base = WalkParams::new(cfg.gamma, cfg.rho, w.big_n).map_err(|e| e.at("walk"))?;
    let (params, init, traces): (WalkParams, Option<Init>, Vec<WalkTrace>) = match w.mode {
        WalkModeKey::Abstract => {
            let init = Init::Normal { mean: 0.0, sd: (2.0 * base.sigma2 * w.big_n as f64).sqrt() };
            (base, Some(init), run_walks(&base, init, w.steps, cfg.seed, w.replicas)?)
        }
        WalkModeKey::Field => {
            let params = base.field_driven();
            let ens = Ensemble::new(cfg.spec(), cfg.gamma, cfg.events.x, cfg.events.y, cfg.events.eps, cfg.seed)?;
            let traces = (0..w.replicas as u64)
                .into_par_iter()
                .map(|r| run_field_walk(&params, &ens.world(r)?, w.steps))
                .collect::<gmcweld::Result<Vec<_>>>()
                .map_err(|e| e.at("walk"))?;
            (params, None, traces)
        }
    };
    let n = w.big_n as usize;
    let window = (n, (3 * n).max(n + 1).min(n + w.steps));
    let occupation = occupation_stats(&traces, window, 0.05).ok();
    let violations = traces.iter().map(|t| trace_violations(t).len()).sum();
    let groups = increments_by_branch(&traces);
    let increments = [Branch::AdvanceS, Branch::AdvanceT, Branch::Both]
        .into_iter()
        .zip(groups.iter())
        .filter(|(_, g)| g.len() >= 2)
        .map(|(b, g)| {
            let (m, v) = b.moments(params.d, params.sigma2);
            let sq: Vec<f64> = g.iter().map(|x| (x - m) * (x - m)).collect();
            BranchMoments { branch: b, expected_mean: m, expected_variance: v, mean: Estimate::of(g), variance: Estimate::of(&sq) }
        })
        .collect();
    let report = WalkReport { params, init, window, occupation, invariant_violations: violations, increments };
    let meta = cfg.meta(vec![("grid_m", cfg.grid_m)]);
    write(&cfg.out_dir, "walk.json", &io::json_report(&meta, &report)?)?;
    write(&cfg.out_dir, "walk_trace_0.csv", &io::walk_csv(&traces[0], &meta)?)?;
    Ok(vec!["walk.json".into(), "walk_trace_0.csv".into()])
}

fn covcheck(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let r = cfg.covcheck_replicas;
    let m = cfg.grid_m;
    let h = h_covariance(cfg.spec(), &default_offsets(m), r, cfg.seed).map_err(|e| e.at("covcheck"))?;
    let reach = ((cfg.rho * cfg.rho * m as f64).floor() as usize).min(m / 2);
    let v_offsets: Vec<usize> = (0..=reach).collect();
    let v = v_band_covariance(m, cfg.rho, 1, 2, &v_offsets, r, replica_seed(cfg.seed, 1)).map_err(|e| e.at("covcheck"))?;
    let off = v_variance_offset(m, cfg.rho, 1, r, replica_seed(cfg.seed, 2)).map_err(|e| e.at("covcheck"))?;
    let cutoffs: Vec<f64> = (1..=cfg.depth.max(1)).map(|k| cfg.rho.powi(k as i32)).collect();
    let convergence = h_oracle_convergence(&[0.05, 0.1, 0.25, 0.5], &cutoffs)?;
    let report = CovReport { h, v_band: v, v_offset: off, convergence };
    let meta = cfg.meta(vec![("grid_m", m)]);
    write(&cfg.out_dir, "covcheck.json", &io::json_report(&meta, &report)?)?;
    write(&cfg.out_dir, "covcheck.csv", &io::covariance_csv(&[&report.h, &report.v_band], &meta)?)?;
    Ok(vec!["covcheck.json".into(), "covcheck.csv".into()])
}

#[derive(Serialize)]
struct MomentRow {
    p: f64,
    expected: f64,
    fit: gmcweld::gmc::MomentSlope,
}

fn moments(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let spec = cfg.spec().h_only();
    let sampler = FieldSampler::new(spec).map_err(|e| e.at("fields"))?;
    let ens: Vec<MeasureSample> = (0..cfg.moments_replicas as u64)
        .into_par_iter()
        .map(|r| build_measure(&sampler.sample(replica_seed(cfg.seed, r)), cfg.gamma, cfg.depth))
        .collect::<gmcweld::Result<_>>()
        .map_err(|e| e.at("measure"))?;
    let finest = (cfg.grid_m.trailing_zeros() as i32 - 2).max(2);
    let deltas: Vec<f64> = (2..=finest).map(|k| 2f64.powi(-k)).collect();
    let mut rows = Vec::new();
    for p in [1.0, cfg.moments_p] {
        let fit = moment_slope(&ens, p, &deltas, cfg.seed).map_err(|e| e.at("moments"))?;
        rows.push(MomentRow { p, expected: zeta_p(p, cfg.gamma), fit });
    }
    let meta = cfg.meta(vec![("grid_m", cfg.grid_m)]);
    write(&cfg.out_dir, "moments.json", &io::json_report(&meta, &rows)?)?;
    Ok(vec!["moments.json".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_keeps_defaults() {
        let mut c = RunConfig::default();
        c.apply_text("# nothing here\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.gamma, c.rho, c.grid_m, c.depth), (0.2, 0.0625, 4096, 10));
    }

    #[test]
    fn dotted_keys_and_fractions() {
        let mut c = RunConfig::default();
        c.apply_text("rho = 1/4\nbeltrami.n_list = 1, 3\nevents.shape.2 = 0.5\nwalk.mode = field\n").unwrap();
        assert_eq!(c.rho, 0.25);
        assert_eq!(c.beltrami.n_list, vec![1, 3]);
        assert_eq!(c.events.constants.shape[1], 0.5);
        assert_eq!(c.walk.mode, WalkModeKey::Field);
    }

    #[test]
    fn rejections() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("colour = red"), Err(CliError::Config(_))));
        assert!(matches!(c.set("events.bogus.1", "1"), Err(CliError::Config(_))));
        assert!(c.apply_text("gamma 0.3").is_err());
        c.set("gamma", "1.5").unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("√2"));
        assert_eq!(err.exit_code(), 2);
    }
}
