//! Run configuration: defaults, then a `--config` key=value file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use costly_obs_core::agents::{BaselineAlgo, DqnConfig, LinearSchedule};
use costly_obs_core::env::{CostMode, EnvConfig, Variant};
use costly_obs_core::nn::OptimizerKind;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Dqn,
    Sarsa,
    QLearning,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Dqn => "dqn",
            Algo::Sarsa => "sarsa",
            Algo::QLearning => "q-learning",
        }
    }

    pub fn baseline(self) -> Option<BaselineAlgo> {
        match self {
            Algo::Dqn => None,
            Algo::Sarsa => Some(BaselineAlgo::Sarsa),
            Algo::QLearning => Some(BaselineAlgo::QLearning),
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub algo: Algo,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    /// Unset means the algorithm's own default (0.95 for DQN, 1 for the linear baselines).
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub linear_epsilon: f64,
    pub dynamics_model: Option<PathBuf>,
    pub transitions: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            algo: Algo::Dqn,
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            gamma: None,
            alpha: LinearSchedule::default().alpha,
            linear_epsilon: LinearSchedule::default().epsilon,
            dynamics_model: None,
            transitions: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, UsageError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(UsageError(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Comma-separated hidden layer widths; empty means no hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl std::str::FromStr for Widths {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        parse_hidden(s).map(Widths)
    }
}

pub fn parse_hidden(value: &str) -> Result<Vec<usize>, UsageError> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse("hidden", v)).collect()
}

impl RunSettings {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(match self.algo {
            Algo::Dqn => DqnConfig::default().gamma,
            _ => LinearSchedule::default().gamma,
        })
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            gamma: self.gamma(),
            step_cap: self.env.step_cap,
            ..self.dqn.clone()
        }
    }

    pub fn linear_schedule(&self) -> LinearSchedule {
        LinearSchedule {
            episodes: self.dqn.episodes,
            step_cap: self.env.step_cap,
            alpha: self.alpha,
            epsilon: self.linear_epsilon,
            gamma: self.gamma(),
            seed: self.dqn.seed,
        }
    }

    /// Applies one `key=value` setting; keys match the long flag names.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "variant" => {
                self.env.variant = value
                    .trim()
                    .parse::<Variant>()
                    .map_err(|e| UsageError(e.to_string()))?
            }
            "vanilla" => self.env.vanilla = parse_bool(k, value)?,
            "algo" => {
                self.algo = Algo::from_str(value.trim(), true)
                    .map_err(|_| UsageError(format!("unknown algo `{value}`")))?
            }
            "episodes" => self.dqn.episodes = parse(k, value)?,
            "step-cap" => self.env.step_cap = parse(k, value)?,
            "obs-cost" => self.env.obs_cost = parse(k, value)?,
            "cost-mode" => {
                self.env.cost_mode = value
                    .trim()
                    .parse::<CostMode>()
                    .map_err(|e| UsageError(e.to_string()))?
            }
            "seed" => self.dqn.seed = parse(k, value)?,
            "lr" => self.dqn.lr = parse(k, value)?,
            "gamma" => self.gamma = Some(parse(k, value)?),
            "epsilon-init" => self.dqn.epsilon_init = parse(k, value)?,
            "epsilon-decay" => self.dqn.epsilon_decay = parse(k, value)?,
            "epsilon-min" => self.dqn.epsilon_min = parse(k, value)?,
            "epsilon-per-step" => self.dqn.epsilon_per_step = parse_bool(k, value)?,
            "batch-size" => self.dqn.batch_size = parse(k, value)?,
            "replay-capacity" => self.dqn.replay_capacity = parse(k, value)?,
            "target-sync" => self.dqn.target_sync_interval = parse(k, value)?,
            "hidden" => self.dqn.hidden = parse_hidden(value)?,
            "optimizer" => {
                self.dqn.optimizer = value
                    .trim()
                    .parse::<OptimizerKind>()
                    .map_err(|e| UsageError(e.to_string()))?
            }
            "alpha" => self.alpha = parse(k, value)?,
            "linear-epsilon" => self.linear_epsilon = parse(k, value)?,
            "dynamics-model" => self.dynamics_model = Some(PathBuf::from(value.trim())),
            "transitions" => self.transitions = parse_bool(k, value)?,
            _ => return Err(UsageError(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
            .with_context(|| format!("config file {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("line {}: expected key=value", n + 1)))?;
            self.apply(key, value)
                .map_err(|e| UsageError(format!("line {}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    /// Flag combinations that cannot run.
    pub fn check(&self) -> Result<(), UsageError> {
        self.env.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.env.step_cap == 0 {
            return Err(UsageError("step-cap must be positive".into()));
        }
        match self.algo {
            Algo::Dqn => self
                .dqn_config()
                .validate()
                .map_err(|e| UsageError(e.to_string()))?,
            _ => {
                if self.env.variant.uses_imputer() && !self.env.vanilla {
                    return Err(UsageError(
                        "linear baselines run on the locf and locf-counters variants only".into(),
                    ));
                }
                if !(self.alpha >= 0.0 && (0.0..=1.0).contains(&self.linear_epsilon)) {
                    return Err(UsageError("alpha must be >= 0 and linear-epsilon in [0, 1]".into()));
                }
            }
        }
        let needs_model = self.env.variant.uses_imputer() && !self.env.vanilla;
        if needs_model && self.dynamics_model.is_none() {
            return Err(UsageError(
                "--variant dynamics-counters requires --dynamics-model PATH".into(),
            ));
        }
        Ok(())
    }

    /// Directory name used when none is given: `<variant>_cost<c>_seed<s>`.
    pub fn default_run_name(&self) -> String {
        let variant = if self.env.vanilla {
            "vanilla"
        } else {
            self.env.variant.name()
        };
        let algo = match self.algo {
            Algo::Dqn => String::new(),
            a => format!("{}_", a.name()),
        };
        format!("{algo}{variant}_cost{}_seed{}", self.env.obs_cost, self.dqn.seed)
    }
}

/// Hyperparameter flags shared by `train`, `sweep` and `make-paper`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub episodes: Option<u32>,
    #[arg(long)]
    pub step_cap: Option<u32>,
    /// `per-variable` charges each observed variable; `flat` charges once per observing step.
    #[arg(long)]
    pub cost_mode: Option<CostMode>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon_init: Option<f64>,
    #[arg(long)]
    pub epsilon_decay: Option<f64>,
    #[arg(long)]
    pub epsilon_min: Option<f64>,
    /// Decay epsilon after every step rather than every episode.
    #[arg(long)]
    pub epsilon_per_step: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    /// Steps between target-network syncs.
    #[arg(long)]
    pub target_sync: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    pub hidden: Option<Widths>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Linear baselines: step size shared across active tiles.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Linear baselines: exploration rate.
    #[arg(long)]
    pub linear_epsilon: Option<f64>,
    /// Dynamics model file for the `dynamics-counters` variant.
    #[arg(long, value_name = "PATH")]
    pub dynamics_model: Option<PathBuf>,
    /// Skip writing transitions.csv.
    #[arg(long)]
    pub no_transitions: bool,
}

impl RunFlags {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunSettings> {
        let mut s = RunSettings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        if let Some(v) = self.algo {
            s.algo = v;
        }
        if let Some(v) = self.episodes {
            s.dqn.episodes = v;
        }
        if let Some(v) = self.step_cap {
            s.env.step_cap = v;
        }
        if let Some(v) = self.cost_mode {
            s.env.cost_mode = v;
        }
        if let Some(v) = self.lr {
            s.dqn.lr = v;
        }
        if self.gamma.is_some() {
            s.gamma = self.gamma;
        }
        if let Some(v) = self.epsilon_init {
            s.dqn.epsilon_init = v;
        }
        if let Some(v) = self.epsilon_decay {
            s.dqn.epsilon_decay = v;
        }
        if let Some(v) = self.epsilon_min {
            s.dqn.epsilon_min = v;
        }
        if self.epsilon_per_step {
            s.dqn.epsilon_per_step = true;
        }
        if let Some(v) = self.batch_size {
            s.dqn.batch_size = v;
        }
        if let Some(v) = self.replay_capacity {
            s.dqn.replay_capacity = v;
        }
        if let Some(v) = self.target_sync {
            s.dqn.target_sync_interval = v;
        }
        if let Some(v) = &self.hidden {
            s.dqn.hidden = v.0.clone();
        }
        if let Some(v) = self.optimizer {
            s.dqn.optimizer = v;
        }
        if let Some(v) = self.alpha {
            s.alpha = v;
        }
        if let Some(v) = self.linear_epsilon {
            s.linear_epsilon = v;
        }
        if let Some(v) = &self.dynamics_model {
            s.dynamics_model = Some(v.clone());
        }
        if self.no_transitions {
            s.transitions = false;
        }
        Ok(s)
    }
}
