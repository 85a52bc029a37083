use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::settings::RunSettings;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub variant: String,
    pub vanilla: bool,
    pub obs_cost: f64,
    pub cost_mode: String,
    pub step_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub episodes: u32,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_init: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub epsilon_per_step: bool,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_interval: u64,
    pub hidden: Vec<usize>,
    pub optimizer: String,
    pub alpha: f64,
    pub linear_epsilon: f64,
}

/// Written once, before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub algo: String,
    pub variant: String,
    pub seed: u64,
    pub env: EnvSnapshot,
    pub agent: AgentSnapshot,
    pub dynamics_model: Option<String>,
    pub transitions_logged: bool,
    pub output_dir: String,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(s: &RunSettings, output_dir: &Path) -> Self {
        let variant = if s.env.vanilla {
            "vanilla".to_string()
        } else {
            s.env.variant.name().to_string()
        };
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            algo: s.algo.name().to_string(),
            variant,
            seed: s.dqn.seed,
            env: EnvSnapshot {
                variant: s.env.variant.name().to_string(),
                vanilla: s.env.vanilla,
                obs_cost: s.env.obs_cost,
                cost_mode: s.env.cost_mode.name().to_string(),
                step_cap: s.env.step_cap,
            },
            agent: AgentSnapshot {
                episodes: s.dqn.episodes,
                gamma: s.gamma(),
                lr: s.dqn.lr,
                epsilon_init: s.dqn.epsilon_init,
                epsilon_decay: s.dqn.epsilon_decay,
                epsilon_min: s.dqn.epsilon_min,
                epsilon_per_step: s.dqn.epsilon_per_step,
                batch_size: s.dqn.batch_size,
                replay_capacity: s.dqn.replay_capacity,
                target_sync_interval: s.dqn.target_sync_interval,
                hidden: s.dqn.hidden.clone(),
                optimizer: s.dqn.optimizer.name().to_string(),
                alpha: s.alpha,
                linear_epsilon: s.linear_epsilon,
            },
            dynamics_model: s.dynamics_model.as_ref().map(|p| p.display().to_string()),
            transitions_logged: s.transitions,
            output_dir: output_dir.display().to_string(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
