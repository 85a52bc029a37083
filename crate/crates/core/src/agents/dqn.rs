use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{CostlyObsEnv, EnvConfig, Imputer, ObsChoice, TransitionRecord};
use crate::error::{Error, Result};
use crate::nn::{BatchWorkspace, Gradients, MlpModel, OptimizerKind, OptimizerState, Workspace};
use crate::seeding::{stream_rng, Stream};

use super::policy::{greedy_index, select_action};
use super::replay::{Experience, ReplayBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub episodes: u32,
    /// Overrides the environment's step cap for training runs.
    pub step_cap: u32,
    pub lr: f64,
    pub epsilon_init: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Decay epsilon after every step instead of after every episode.
    pub epsilon_per_step: bool,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Hard-copy the online network into the target network every this many steps.
    pub target_sync_interval: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            episodes: 1_000,
            step_cap: 20_000,
            lr: 0.001,
            epsilon_init: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            epsilon_per_step: false,
            gamma: 0.95,
            batch_size: 64,
            replay_capacity: 50_000,
            target_sync_interval: 1_000,
            hidden: vec![64, 64],
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma must lie in (0, 1]"));
        }
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_init
            && self.epsilon_init <= 1.0)
        {
            return Err(Error::config("need 0 <= epsilon_min <= epsilon_init <= 1"));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::config("epsilon_decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(Error::config(format!(
                "batch_size {} must be in 1..=replay_capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if self.step_cap == 0 || self.target_sync_interval == 0 {
            return Err(Error::config("step_cap and target_sync_interval must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and non-negative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    /// Layer sizes of the Q-network for the given environment.
    pub fn network_sizes(&self, env: &EnvConfig) -> Vec<usize> {
        let mut sizes = vec![env.feature_width()];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(env.n_actions());
        sizes
    }

    /// Epsilon in effect for episode `n` (0-based) under per-episode decay.
    pub fn epsilon_for_episode(&self, n: u32) -> f64 {
        (self.epsilon_init * libm::pow(self.epsilon_decay, n as f64)).max(self.epsilon_min)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObsCounts {
    pub none: u64,
    pub position: u64,
    pub velocity: u64,
    pub both: u64,
}

impl ObsCounts {
    pub fn add(&mut self, obs: ObsChoice) {
        match obs {
            ObsChoice::None => self.none += 1,
            ObsChoice::Position => self.position += 1,
            ObsChoice::Velocity => self.velocity += 1,
            ObsChoice::Both => self.both += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.none + self.position + self.velocity + self.both
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode: u32,
    pub steps: u32,
    pub total_reward: f64,
    pub reached_goal: bool,
    /// Exploration rate in effect when the episode started.
    pub epsilon: f64,
    pub obs: ObsCounts,
}

/// Receives every transition and every finished episode during training.
pub trait TrainObserver {
    fn transition(&mut self, _record: &TransitionRecord) {}
    fn episode(&mut self, _stats: &EpisodeStats) {}
}

impl TrainObserver for () {}

impl<F: FnMut(&TransitionRecord)> TrainObserver for F {
    fn transition(&mut self, record: &TransitionRecord) {
        self(record)
    }
}

#[derive(Debug, Clone)]
pub struct DqnOutcome {
    pub qnet: MlpModel,
    pub stats: Vec<EpisodeStats>,
}

fn td_target(e: &Experience, target: &MlpModel, gamma: f64, ws: &mut Workspace) -> f64 {
    if e.terminal {
        return e.reward;
    }
    let q = target
        .forward_with(e.next_features.as_slice(), ws)
        .expect("feature width matches the target network");
    e.reward + gamma * q[greedy_index(q)]
}

/// `r + γ·max_a′ Q_target(s′, a′)`, or `r` for entries that reached the goal.
pub fn td_targets(batch: &[Experience], target: &MlpModel, gamma: f64) -> Vec<f64> {
    let mut ws = Workspace::for_model(target);
    batch
        .iter()
        .map(|e| td_target(e, target, gamma, &mut ws))
        .collect()
}

/// Trains a Q-network on the configured environment.
///
/// One gradient step on the mean squared TD error follows every environment
/// step once the buffer holds a full batch.
pub fn train_dqn(
    env_cfg: &EnvConfig,
    cfg: &DqnConfig,
    imputer: Option<&dyn Imputer>,
    observer: &mut dyn TrainObserver,
) -> Result<DqnOutcome> {
    cfg.validate()?;
    let env_cfg = EnvConfig {
        step_cap: cfg.step_cap,
        ..*env_cfg
    };
    let mut env = CostlyObsEnv::new(env_cfg, imputer)?;
    let mut env_rng = stream_rng(cfg.seed, Stream::Env);
    let mut agent_rng = stream_rng(cfg.seed, Stream::Agent);
    let mut init_rng = stream_rng(cfg.seed, Stream::Init);

    let sizes = cfg.network_sizes(&env_cfg);
    let mut qnet = MlpModel::init(&sizes, &mut init_rng)?;
    let mut target = qnet.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, &qnet);
    let mut grads = Gradients::zeros_like(&qnet);
    let mut ws = Workspace::for_model(&qnet);
    let mut bws = BatchWorkspace::new(&qnet, cfg.batch_size);
    let mut target_bws = BatchWorkspace::new(&qnet, cfg.batch_size);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let n_actions = env_cfg.n_actions();
    let width = env_cfg.feature_width();
    let mut x = Vec::with_capacity(cfg.batch_size * width);
    let mut x_next = Vec::with_capacity(cfg.batch_size * width);
    let mut y = vec![0.0; cfg.batch_size];
    let mut d_out = vec![0.0; cfg.batch_size * n_actions];

    let mut epsilon = cfg.epsilon_init;
    let mut total_steps: u64 = 0;
    let mut stats = Vec::with_capacity(cfg.episodes as usize);

    for episode in 0..cfg.episodes {
        let mut features = env.reset(episode, &mut env_rng);
        let mut ep = EpisodeStats {
            episode,
            steps: 0,
            total_reward: 0.0,
            reached_goal: false,
            epsilon,
            obs: ObsCounts::default(),
        };
        loop {
            let action = select_action(&qnet, features.as_slice(), epsilon, &mut ws, &mut agent_rng);
            let out = env.step(action)?;
            observer.transition(&out.record);
            ep.steps += 1;
            ep.total_reward += out.reward;
            ep.obs.add(out.record.action().obs);
            let terminal = out.done && !out.truncated;
            buffer.push(Experience {
                features,
                action,
                reward: out.reward,
                next_features: out.features,
                terminal,
                truncated: out.truncated,
            });
            features = out.features;
            total_steps += 1;

            if buffer.len() >= cfg.batch_size {
                buffer.sample_indices(cfg.batch_size, &mut agent_rng, &mut batch);
                grads.clear();
                x.clear();
                x_next.clear();
                for &i in &batch {
                    let e = buffer.get(i);
                    x.extend_from_slice(e.features.as_slice());
                    x_next.extend_from_slice(e.next_features.as_slice());
                }
                let q_next = target
                    .forward_batch(&x_next, cfg.batch_size, &mut target_bws)
                    .expect("feature width matches the target network");
                for (k, &i) in batch.iter().enumerate() {
                    let e = buffer.get(i);
                    y[k] = if e.terminal {
                        e.reward
                    } else {
                        let row = &q_next[k * n_actions..(k + 1) * n_actions];
                        e.reward + cfg.gamma * row[greedy_index(row)]
                    };
                }
                let q = qnet
                    .forward_batch(&x, cfg.batch_size, &mut bws)
                    .expect("feature width matches the Q-network");
                let scale = 2.0 / cfg.batch_size as f64;
                d_out.fill(0.0);
                for (k, &i) in batch.iter().enumerate() {
                    let a = buffer.get(i).action;
                    d_out[k * n_actions + a] = scale * (q[k * n_actions + a] - y[k]);
                }
                qnet.backprop_batch(&d_out, &mut bws, &mut grads);
                opt.step(&mut qnet, &grads, cfg.lr);
            }
            if total_steps.is_multiple_of(cfg.target_sync_interval) {
                target.clone_from(&qnet);
            }
            if cfg.epsilon_per_step {
                epsilon = (epsilon * cfg.epsilon_decay).max(cfg.epsilon_min);
            }
            if out.done {
                ep.reached_goal = terminal;
                break;
            }
        }
        if !cfg.epsilon_per_step {
            epsilon = (epsilon * cfg.epsilon_decay).max(cfg.epsilon_min);
        }
        observer.episode(&ep);
        stats.push(ep);
    }
    Ok(DqnOutcome { qnet, stats })
}
