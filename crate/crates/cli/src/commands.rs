//! Command definitions and their implementations. Exit codes: 0 success,
//! 1 runtime failure, 2 configuration error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use demp_core::schedule::{ScheduleKind, ScheduleSpec};
use demp_core::theory::{
    lemma2_bound, lemma2_polynomial, mu_estimate, simulate_absorbing, simulate_geometric, stability_limit,
    survival_closed_form, GeomWalkConfig, NoiseLaw, WalkConfig,
};
use thiserror::Error;

use crate::config::load_config;
use crate::runner::{load_data, run_id, train_seed, write_outputs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "demp", version, about = "Dead-neuron pruning experiments and random-walk simulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed (and sweep variant) of a TOML experiment config.
    Train(TrainArgs),
    /// Monte-Carlo checks of the random-walk results.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Dump a schedule as CSV (step, value) for steps 0..=T.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Output root; defaults to $DEMP_OUT, then the config's output_dir, then ./runs.
    #[arg(long, env = "DEMP_OUT")]
    pub out: Option<PathBuf>,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    pub seed_override: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// Survival of the absorbed Brownian walk against the erf law.
    Absorbing(AbsorbingArgs),
    /// Lyapunov exponent of the multiplicative walk.
    Geometric(GeometricArgs),
    /// Quadratic bound on the exponent for negative curvature.
    Lemma2(Lemma2Args),
}

#[derive(Debug, Args)]
pub struct OutputArg {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AbsorbingArgs {
    #[arg(long, default_value_t = 1.0)]
    pub w0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 100.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n_sub: u64,
    #[arg(long, default_value_t = 100_000)]
    pub trajectories: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the 27-cell grid w0 x eta x t instead of a single cell.
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LawArg {
    Uniform,
    Rademacher,
}

#[derive(Debug, Args)]
pub struct GeometricArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long)]
    pub eta: f64,
    /// Noise bound; alternatively give --sigma2.
    #[arg(long, conflicts_with = "sigma2")]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum, default_value_t = LawArg::Uniform)]
    pub law: LawArg,
    #[arg(long, default_value_t = 100_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 100)]
    pub trajectories: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Args)]
pub struct Lemma2Args {
    #[arg(long, allow_hyphen_values = true)]
    pub h: f64,
    #[arg(long)]
    pub sigma2: f64,
    /// Defaults to the midpoint of the admissible negative interval.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    OneCycle,
    Constant,
    WarmupOnly,
    DecayOnly,
}

impl From<KindArg> for ScheduleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::OneCycle => ScheduleKind::OneCycle,
            KindArg::Constant => ScheduleKind::Constant,
            KindArg::WarmupOnly => ScheduleKind::WarmupOnly,
            KindArg::DecayOnly => ScheduleKind::DecayOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum, default_value_t = KindArg::OneCycle)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: u64,
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[command(flatten)]
    pub output: OutputArg,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Theory(TheoryCommand::Absorbing(a)) => emit(&a.output, &cmd_absorbing(&a)?),
        Command::Theory(TheoryCommand::Geometric(a)) => emit(&a.output, &cmd_geometric(&a)?),
        Command::Theory(TheoryCommand::Lemma2(a)) => emit(&a.output, &cmd_lemma2(&a)?),
        Command::Schedule(a) => emit(&a.output, &cmd_schedule(&a)?),
    }
}

fn emit(out: &OutputArg, csv: &str) -> Result<(), CliError> {
    match &out.out {
        Some(p) => std::fs::write(p, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn output_root(args: &TrainArgs, configured: Option<&Path>) -> PathBuf {
    args.out.clone().or_else(|| configured.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Runs every (variant, seed) pair and returns the run directories. All runs
/// are attempted; any abort makes the command fail after the last run.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let (text, variants) = load_config(&args.config).map_err(|e| match e {
        crate::ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
        other => config_err(other),
    })?;
    let config_dir = args.config.parent().unwrap_or(Path::new("."));
    let mut dirs = Vec::new();
    let mut aborted = Vec::new();
    for variant in &variants {
        let root = output_root(args, variant.config.output_dir.as_deref());
        let (train, eval) = load_data(variant, config_dir).map_err(CliError::Runtime)?;
        let seeds = args.seed_override.map_or_else(|| variant.config.seeds.clone(), |s| vec![s]);
        for seed in seeds {
            let id = run_id(variant, seed);
            if !args.quiet {
                eprintln!("[{id}] training {} steps", variant.config.steps);
            }
            let outcome = train_seed(variant, seed, &train, eval.as_ref()).map_err(CliError::Runtime)?;
            let dir = write_outputs(variant, &text, seed, &outcome, &root).map_err(CliError::Runtime)?;
            if let Some(reason) = &outcome.aborted {
                eprintln!("[{id}] aborted: {reason}");
                aborted.push(id);
            } else if !args.quiet {
                eprintln!(
                    "[{id}] done: dead units {}, eval accuracy {}",
                    outcome.final_dead_count(),
                    outcome.final_eval_accuracy().map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
            dirs.push(dir);
        }
    }
    if aborted.is_empty() {
        Ok(dirs)
    } else {
        Err(CliError::Runtime(format!("aborted runs: {}", aborted.join(", "))))
    }
}

pub const ABSORBING_HEADER: &str = "w0,eta,t,mc_survival,closed_form,stderr";
pub const GEOMETRIC_HEADER: &str = "h,sigma2,eta,mu_mc,mu_stderr,P_of_eta,lyapunov";
pub const LEMMA2_HEADER: &str = "h,sigma2,eta,mu_mc,mu_stderr,P_of_eta,min_p,argmin,interval_lo,interval_hi";

pub const GRID_W0: [f64; 3] = [0.5, 1.0, 2.0];
pub const GRID_ETA: [f64; 3] = [0.005, 0.01, 0.05];
pub const GRID_T: [f64; 3] = [50.0, 100.0, 400.0];

pub fn cmd_absorbing(a: &AbsorbingArgs) -> Result<String, CliError> {
    let cells: Vec<(f64, f64, f64)> = if a.grid {
        GRID_W0
            .iter()
            .flat_map(|&w| GRID_ETA.iter().flat_map(move |&e| GRID_T.iter().map(move |&t| (w, e, t))))
            .collect()
    } else {
        vec![(a.w0, a.eta, a.t)]
    };
    let mut csv = format!("{ABSORBING_HEADER}\n");
    for (i, (w0, eta, t)) in cells.into_iter().enumerate() {
        let cfg = WalkConfig { w0, eta, t, n_sub: a.n_sub, trajectories: a.trajectories, seed: a.seed + i as u64 };
        let est = simulate_absorbing(&cfg).map_err(config_err)?;
        let exact = survival_closed_form(w0, eta, t).map_err(config_err)?;
        writeln!(csv, "{w0},{eta},{t},{},{exact},{}", est.survival, est.stderr).unwrap();
    }
    Ok(csv)
}

fn law(kind: LawArg, c: f64) -> NoiseLaw {
    match kind {
        LawArg::Uniform => NoiseLaw::Uniform { c },
        LawArg::Rademacher => NoiseLaw::Rademacher { c },
    }
}

pub fn cmd_geometric(a: &GeometricArgs) -> Result<String, CliError> {
    let noise = match (a.c, a.sigma2) {
        (Some(c), _) => law(a.law, c),
        (None, Some(s2)) if s2 >= 0.0 => match a.law {
            LawArg::Uniform => NoiseLaw::uniform_with_variance(s2),
            LawArg::Rademacher => NoiseLaw::rademacher_with_variance(s2),
        },
        (None, Some(s2)) => return Err(CliError::Config(format!("sigma2 = {s2} must be >= 0"))),
        (None, None) => return Err(CliError::Config("one of --c or --sigma2 is required".into())),
    };
    let cfg = GeomWalkConfig {
        h: a.h,
        eta: a.eta,
        noise,
        steps: a.steps,
        trajectories: a.trajectories,
        seed: a.seed,
    };
    let walk = simulate_geometric(&cfg).map_err(config_err)?;
    let mu = mu_estimate(&cfg, a.samples).map_err(config_err)?;
    let p = if a.h < 0.0 { lemma2_polynomial(a.h, noise.variance(), a.eta).to_string() } else { String::new() };
    Ok(format!(
        "{GEOMETRIC_HEADER}\n{},{},{},{},{},{p},{}\n",
        a.h,
        noise.variance(),
        a.eta,
        mu.mu,
        mu.stderr,
        walk.lyapunov
    ))
}

/// Noise is uniform with variance `sigma2`. The Monte-Carlo columns are left
/// empty when `eta` lies outside the walk's stability region.
pub fn cmd_lemma2(a: &Lemma2Args) -> Result<String, CliError> {
    let noise = NoiseLaw::uniform_with_variance(a.sigma2);
    let probe = lemma2_bound(a.h, a.sigma2, 0.0).map_err(config_err)?;
    let eta = match a.eta {
        Some(e) => e,
        None => probe.admissible_midpoint(noise.bound()).unwrap_or(probe.argmin),
    };
    let bound = lemma2_bound(a.h, a.sigma2, eta).map_err(config_err)?;
    let (mu, se) = if eta > 0.0 && eta < stability_limit(a.h, noise.bound()) {
        let cfg = GeomWalkConfig { h: a.h, eta, noise, steps: 1, trajectories: 1, seed: a.seed };
        let m = mu_estimate(&cfg, a.samples).map_err(config_err)?;
        (m.mu.to_string(), m.stderr.to_string())
    } else {
        (String::new(), String::new())
    };
    let (lo, hi) = bound.negative_interval.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
    Ok(format!(
        "{LEMMA2_HEADER}\n{},{},{eta},{mu},{se},{},{},{},{lo},{hi}\n",
        a.h, a.sigma2, bound.p_eta, bound.min_p, bound.argmin
    ))
}

pub fn cmd_schedule(a: &ScheduleArgs) -> Result<String, CliError> {
    let spec = ScheduleSpec { kind: a.kind.into(), peak: a.peak, total_steps: a.steps, warmup_fraction: a.warmup };
    let values = spec.values().map_err(config_err)?;
    let mut csv = String::from("step,value\n");
    for (t, v) in values.iter().enumerate() {
        writeln!(csv, "{t},{v}").unwrap();
    }
    Ok(csv)
}
