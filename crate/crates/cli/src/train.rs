use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use costly_obs_core::agents::{train_dqn, train_linear_baseline, EpisodeStats, LinearQ, TrainObserver};
use costly_obs_core::dynamics::DynamicsModelHandle;
use costly_obs_core::env::Imputer;

use crate::manifest::RunManifest;
use crate::settings::RunSettings;
use crate::stats;
use crate::translog::TransitionLogWriter;

pub const STATS_FILE: &str = "stats.csv";
pub const TRANSITIONS_FILE: &str = "transitions.csv";
pub const QNET_FILE: &str = "model.mlp";
pub const LINEAR_FILE: &str = "model.linear";
pub const LINEAR_TAG: &str = "linear-v1";

pub fn load_dynamics(path: &Path) -> Result<DynamicsModelHandle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DynamicsModelHandle::from_text(&text).with_context(|| format!("parsing dynamics model {}", path.display()))
}

/// `linear-v1`, then `tilings grid n_actions n_features`, then one line of weights.
pub fn linear_to_text(q: &LinearQ) -> String {
    let mut out = format!(
        "{LINEAR_TAG}\n{} {} {} {}\n",
        q.coder.tilings,
        q.coder.grid,
        q.n_actions,
        q.coder.n_features()
    );
    let weights: Vec<String> = q.weights.iter().map(|w| format!("{w:.16e}")).collect();
    out.push_str(&weights.join(" "));
    out.push('\n');
    out
}

pub struct RunResult {
    pub dir: PathBuf,
    pub stats: Vec<EpisodeStats>,
}

/// Runs one training job into `dir`: manifest first, then the transition
/// log as it streams, then `stats.csv` and the model.
pub fn run_training(settings: &RunSettings, dir: &Path) -> Result<RunResult> {
    settings.check()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    RunManifest::new(settings, dir).write(dir)?;

    let imputer = match (&settings.dynamics_model, settings.env.variant.uses_imputer() && !settings.env.vanilla) {
        (Some(path), true) => Some(load_dynamics(path)?),
        _ => None,
    };

    let mut log = if settings.transitions {
        Some(TransitionLogWriter::create(&dir.join(TRANSITIONS_FILE))?)
    } else {
        None
    };
    let mut none = ();
    let observer: &mut dyn TrainObserver = match log.as_mut() {
        Some(w) => w,
        None => &mut none,
    };

    let (stats, model_file, model_text) = match settings.algo.baseline() {
        None => {
            let out = train_dqn(
                &settings.env,
                &settings.dqn_config(),
                imputer.as_ref().map(|m| m as &dyn Imputer),
                observer,
            )?;
            (out.stats, QNET_FILE, out.qnet.serialize())
        }
        Some(algo) => {
            let out = train_linear_baseline(algo, &settings.env, &settings.linear_schedule(), observer)?;
            (out.stats, LINEAR_FILE, linear_to_text(&out.q))
        }
    };
    if let Some(w) = log {
        w.finish().context("writing transitions.csv")?;
    }
    fs::write(dir.join(STATS_FILE), stats::render(&stats)).context("writing stats.csv")?;
    fs::write(dir.join(model_file), model_text).with_context(|| format!("writing {model_file}"))?;
    Ok(RunResult {
        dir: dir.to_path_buf(),
        stats,
    })
}
