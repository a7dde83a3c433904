use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rivercomp::config::RunConfig;
use rivercomp::pipeline::{error_record, run};
use rivercomp::Error;
use serde_json::{json, Map, Value};

/// Two competing species in a river: simulation, steady states, stability
/// and parameter sweeps.
#[derive(Parser)]
#[command(name = "rivercomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the time-dependent system and classify the outcome
    Simulate(Common),
    /// Single-species steady states and a coexistence solve
    Steady(Common),
    /// Principal eigenvalues at both single-species states
    Eigen(Common),
    /// Scan alpha2 over (d2/d1 alpha1, alpha1)
    Sweep(Common),
    /// Run a built-in figure preset
    Figure {
        /// Preset id, e.g. fig1, fig8, fig17
        id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Steady-state and spectral diagnostics with pass/fail per check
    Verify(Common),
}

#[derive(Args, Default)]
struct Common {
    /// JSON configuration file; flags override its values
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (overrides RIVERCOMP_WORKERS)
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    d1: Option<f64>,
    #[arg(long)]
    d2: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Harvesting fraction for both species
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    /// Growth rate expression in x (and y)
    #[arg(long)]
    r: Option<String>,
    /// Carrying capacity expression in x (and y)
    #[arg(long = "K", short = 'K')]
    capacity: Option<String>,
    /// Domain endpoints, e.g. --domain 0,1
    #[arg(long, value_delimiter = ',', num_args = 2)]
    domain: Option<Vec<f64>>,
    #[arg(long)]
    dim: Option<u8>,
    /// Cells per axis
    #[arg(long, short)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    u0: Option<String>,
    #[arg(long)]
    v0: Option<String>,
    /// Comma-separated snapshot times
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    /// 2D advection direction: x or diagonal
    #[arg(long)]
    advection_2d: Option<String>,
    #[arg(long)]
    eps_extinct: Option<f64>,
    #[arg(long)]
    eps_settle: Option<f64>,
    #[arg(long)]
    tol_steady: Option<f64>,
    #[arg(long)]
    tol_eigen: Option<f64>,
    #[arg(long)]
    sweep_points: Option<usize>,
    #[arg(long)]
    sweep_refine: Option<bool>,
    #[arg(long)]
    budget_seconds: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("d1", self.d1.map(|x| json!(x)));
        put("d2", self.d2.map(|x| json!(x)));
        put("alpha1", self.alpha1.map(|x| json!(x)));
        put("alpha2", self.alpha2.map(|x| json!(x)));
        put("mu", self.mu.map(|x| json!(x)));
        put("mu1", self.mu1.map(|x| json!(x)));
        put("mu2", self.mu2.map(|x| json!(x)));
        put("r", self.r.as_ref().map(|x| json!(x)));
        put("K", self.capacity.as_ref().map(|x| json!(x)));
        put("domain", self.domain.as_ref().map(|x| json!(x)));
        put("dim", self.dim.map(|x| json!(x)));
        put("n", self.n.map(|x| json!(x)));
        put("dt", self.dt.map(|x| json!(x)));
        put("t_end", self.t_end.map(|x| json!(x)));
        put("u0", self.u0.as_ref().map(|x| json!(x)));
        put("v0", self.v0.as_ref().map(|x| json!(x)));
        put("snapshot_times", self.snapshot_times.as_ref().map(|x| json!(x)));
        put("samples", self.samples.map(|x| json!(x)));
        put("advection_2d", self.advection_2d.as_ref().map(|x| json!(x)));
        put("eps_extinct", self.eps_extinct.map(|x| json!(x)));
        put("eps_settle", self.eps_settle.map(|x| json!(x)));
        put("tol_steady", self.tol_steady.map(|x| json!(x)));
        put("tol_eigen", self.tol_eigen.map(|x| json!(x)));
        put("sweep_points", self.sweep_points.map(|x| json!(x)));
        put("sweep_refine", self.sweep_refine.map(|x| json!(x)));
        put("budget_seconds", self.budget_seconds.map(|x| json!(x)));
        m
    }
}

fn report_error(e: &Error, dir: Option<&Path>) -> ExitCode {
    let record = error_record(e);
    eprintln!("{record}");
    if let Some(dir) = dir {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
        }
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mode, figure, common) = match cli.command {
        Command::Simulate(c) => ("simulate", None, c),
        Command::Steady(c) => ("steady", None, c),
        Command::Eigen(c) => ("eigen", None, c),
        Command::Sweep(c) => ("sweep", None, c),
        Command::Figure { id, common } => ("figure", Some(id), common),
        Command::Verify(c) => ("verify", None, c),
    };
    let mut overrides = common.overrides();
    overrides.insert("mode".into(), json!(mode));
    if let Some(id) = figure {
        overrides.insert("figure".into(), json!(id));
    }
    if let Some(dir) = &common.out {
        overrides.insert("output_dir".into(), json!(dir));
    }
    let parsed = match &common.config {
        Some(path) => RunConfig::from_file(path, &overrides),
        None => RunConfig::parse(None, &overrides),
    };
    let mut config = match parsed {
        Ok(c) => c,
        Err(e) => return report_error(&e, common.out.as_deref()),
    };
    if let Err(e) = config.apply_env() {
        return report_error(&e, common.out.as_deref());
    }
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("rivercomp-{mode}")));
    let output = match run(&config) {
        Ok(o) => o,
        Err(e) => return report_error(&e, Some(&dir)),
    };
    if let Err(e) = output.bundle.write_to(&dir) {
        return report_error(&e, None);
    }
    println!("{mode}: wrote {} files to {}", output.bundle.len(), dir.display());
    match output.failure {
        Some(e) => report_error(&e, Some(&dir)),
        None => ExitCode::SUCCESS,
    }
}
