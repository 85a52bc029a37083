//! Command-line experiment runner for the costly-observation Mountain Car
//! testbed, plus the file formats it reads and writes.

pub mod analyze;
pub mod fit;
pub mod format;
pub mod manifest;
pub mod settings;
pub mod stats;
pub mod svg;
pub mod sweep;
pub mod train;
pub mod translog;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use costly_obs_core::analysis::{BracketRange, DEFAULT_SMOOTHING};
use costly_obs_core::dynamics::DynamicsTrainConfig;
use costly_obs_core::env::Variant;
use costly_obs_core::nn::OptimizerKind;

use settings::{RunFlags, RunSettings, Widths};

pub const OUT_ENV: &str = "COSTLY_OBS_OUT";
const DEFAULT_OUT: &str = "runs";

/// Bad flags or inputs the user must fix; exits with status 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "costly-obs", version, about = "Mountain Car with costly observations: train, fit, analyze, sweep")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one training job.
    Train(TrainArgs),
    /// Fit a dynamics model on a transition log.
    FitDynamics(FitArgs),
    /// Regenerate curves, histograms, ratios and regressions for runs.
    Analyze(AnalyzeArgs),
    /// Train across variants, observation costs and seeds.
    Sweep(SweepArgs),
    /// Three-variant pipeline: LOCF+counters, dynamics fit, dynamics variant, plain LOCF, then analysis.
    MakePaper(PaperArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Fully observed Mountain Car: three motions, no observation choice, no cost.
    #[arg(long)]
    pub vanilla: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub obs_cost: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (default: `$COSTLY_OBS_OUT/<variant>_cost<c>_seed<s>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DynamicsTrainConfig::default().epochs)]
    pub epochs: u32,
    #[arg(long, default_value_t = DynamicsTrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = DynamicsTrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value = "64,64")]
    pub hidden: Widths,
    /// Fraction of rows held out for the RMSE report.
    #[arg(long, default_value_t = DynamicsTrainConfig::default().holdout_fraction)]
    pub holdout: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FitArgs {
    pub fn config(&self) -> DynamicsTrainConfig {
        DynamicsTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            hidden: self.hidden.0.clone(),
            holdout_fraction: self.holdout,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Runs whose smoothed learning curves are overlaid into compare.csv/compare.svg.
    #[arg(long, num_args = 1..)]
    pub compare: Vec<PathBuf>,
    /// Output directory (default: the run directory, or the first compared run).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    pub window: usize,
    /// Brackets span the positions actually visited instead of [-1.2, 0.5].
    #[arg(long)]
    pub data_range: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-8")]
    pub obs_costs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct PaperArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, default_value_t = -8.0)]
    pub obs_cost: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Epochs for the dynamics model fitted between the runs.
    #[arg(long, default_value_t = DynamicsTrainConfig::default().epochs)]
    pub dyn_epochs: u32,
    #[command(flatten)]
    pub run: RunFlags,
}

fn out_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn train_settings(args: &TrainArgs) -> Result<RunSettings> {
    let mut s = args.run.resolve()?;
    if let Some(v) = args.variant {
        s.env.variant = v;
    }
    if args.vanilla {
        s.env.vanilla = true;
    }
    if let Some(c) = args.obs_cost {
        s.env.obs_cost = c;
    }
    if let Some(seed) = args.seed {
        s.dqn.seed = seed;
    }
    Ok(s)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<PathBuf> {
    let s = train_settings(args)?;
    s.check()?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| out_root(None).join(s.default_run_name()));
    let result = train::run_training(&s, &dir)?;
    let goals = result.stats.iter().filter(|e| e.reached_goal).count();
    writeln!(
        out,
        "{}: {} episodes, {} reached the goal",
        dir.display(),
        result.stats.len(),
        goals
    )?;
    Ok(dir)
}

pub fn cmd_fit_dynamics(args: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !args.log.is_file() {
        return Err(UsageError(format!("log file {} does not exist", args.log.display())).into());
    }
    if args.epochs == 0 {
        writeln!(err, "warning: --epochs 0 writes an untrained model")?;
    }
    let trained = fit::fit_dynamics(&args.log, &args.out, &args.config())?;
    writeln!(out, "{}", fit::rmse_line(&trained))?;
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    if args.run.is_none() && args.compare.is_empty() {
        return Err(UsageError("analyze needs --run DIR and/or --compare DIR...".into()).into());
    }
    if args.window == 0 {
        return Err(UsageError("--window must be positive".into()).into());
    }
    let range = if args.data_range {
        BracketRange::Data
    } else {
        BracketRange::Fixed
    };
    let target = args
        .out
        .clone()
        .or_else(|| args.run.clone())
        .or_else(|| args.compare.first().cloned())
        .expect("checked above");
    if let Some(run) = &args.run {
        analyze::analyze_run(run, &target, args.window, range)?;
        writeln!(out, "analysis written to {}", target.display())?;
    }
    if !args.compare.is_empty() {
        analyze::compare_runs(&args.compare, &target, args.window)?;
        writeln!(out, "comparison written to {}", target.join("compare.csv").display())?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<bool> {
    if args.variants.is_empty() || args.obs_costs.is_empty() || args.seeds.is_empty() {
        return Err(UsageError("sweep lists must not be empty".into()).into());
    }
    let base = args.run.resolve()?;
    let root = out_root(args.out.as_deref());
    let jobs = sweep::plan(&base, &args.variants, &args.obs_costs, &args.seeds, &root);
    for job in &jobs {
        job.settings.check()?;
    }
    let total = jobs.len();
    let mut done = 0;
    let mut lines = Vec::new();
    let rows = sweep::execute(jobs, args.parallel, |row| {
        done += 1;
        let status = match &row.outcome {
            Ok((m, g)) => format!("mean steps {m:.1}, goal rate {g:.2}"),
            Err(e) => format!("FAILED: {e}"),
        };
        lines.push(format!("[{done}/{total}] {}: {status}", row.job.dir.display()));
    });
    for l in lines {
        writeln!(out, "{l}")?;
    }
    let path = sweep::write_summary(&rows, &root)?;
    writeln!(out, "summary written to {}", path.display())?;
    Ok(rows.iter().all(|r| r.outcome.is_ok()))
}

pub fn cmd_make_paper(args: &PaperArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut base = args.run.resolve()?;
    if !base.transitions {
        return Err(UsageError("make-paper needs transition logs; drop --no-transitions".into()).into());
    }
    base.env.obs_cost = args.obs_cost;
    base.env.vanilla = false;
    base.dqn.seed = args.seed;
    let root = out_root(args.out.as_deref());

    let mut runs = Vec::new();
    let run_variant = |variant: Variant, model: Option<PathBuf>, out: &mut dyn Write| -> Result<PathBuf> {
        let mut s = base.clone();
        s.env.variant = variant;
        s.dynamics_model = model;
        s.check()?;
        let dir = root.join(s.default_run_name());
        writeln!(out, "training {}", dir.display())?;
        train::run_training(&s, &dir)?;
        Ok(dir)
    };

    let counters = run_variant(Variant::LocfWithCounters, None, out)?;
    runs.push(counters.clone());
    let model_path = root.join("dynamics.model");
    let fit = FitArgs {
        log: counters.join(train::TRANSITIONS_FILE),
        out: model_path.clone(),
        epochs: args.dyn_epochs,
        lr: DynamicsTrainConfig::default().lr,
        batch_size: DynamicsTrainConfig::default().batch_size,
        hidden: Widths(DynamicsTrainConfig::default().hidden),
        holdout: DynamicsTrainConfig::default().holdout_fraction,
        optimizer: OptimizerKind::Adam,
        seed: args.seed,
    };
    cmd_fit_dynamics(&fit, out, err)?;
    runs.push(run_variant(Variant::DynamicsWithCounters, Some(model_path), out)?);
    runs.push(run_variant(Variant::LocfNoCounters, None, out)?);

    for run in &runs {
        analyze::analyze_run(run, run, DEFAULT_SMOOTHING, BracketRange::Fixed)?;
    }
    analyze::compare_runs(&runs, &root, DEFAULT_SMOOTHING)?;
    writeln!(out, "comparison written to {}", root.join("compare.csv").display())?;
    Ok(())
}

/// Exit status for an error: 2 for usage problems, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<UsageError>()) {
        2
    } else {
        1
    }
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out).map(|_| 0),
        Command::FitDynamics(a) => cmd_fit_dynamics(a, out, err).map(|_| 0),
        Command::Analyze(a) => cmd_analyze(a, out).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(a, out).map(|ok| if ok { 0 } else { 1 }),
        Command::MakePaper(a) => cmd_make_paper(a, out, err).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "error: {e:#}");
            if code == 2 {
                let _ = writeln!(err, "run with --help for usage");
            }
            code
        }
    }
}
