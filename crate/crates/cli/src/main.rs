use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gmcweld_cli::{dispatch, CliError, RunConfig, Subcommand};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Sample,
    Weld,
    Events,
    Walk,
    Covcheck,
    Moments,
}

/// GMC boundary measures, welding and scale-matching diagnostics.
#[derive(Parser)]
#[command(name = "gmcweld", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    grid_m: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Any config key, e.g. `--set beltrami.grid=256`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn overrides(a: &Args) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, v) in [
        ("gamma", &a.gamma),
        ("rho", &a.rho),
        ("grid_m", &a.grid_m),
        ("depth", &a.depth),
        ("seed", &a.seed),
        ("out_dir", &a.out_dir),
    ] {
        if let Some(v) = v {
            out.push((k.to_string(), v.clone()));
        }
    }
    for s in &a.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GMCWELD_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config(format!("GMCWELD_THREADS = `{v}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(a: Args) -> Result<(), CliError> {
    threads()?;
    let cfg = RunConfig::load(a.config.as_deref(), &overrides(&a)?)?;
    let cmd = match a.command {
        Cmd::Sample => Subcommand::Sample,
        Cmd::Weld => Subcommand::Weld,
        Cmd::Events => Subcommand::Events,
        Cmd::Walk => Subcommand::Walk,
        Cmd::Covcheck => Subcommand::Covcheck,
        Cmd::Moments => Subcommand::Moments,
    };
    for p in dispatch(cmd, &cfg)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmcweld: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
