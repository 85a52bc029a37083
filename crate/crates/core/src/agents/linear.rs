//! Linear action values over tile-coded belief features, trained with
//! on-policy SARSA or off-policy Q-learning.
//!
//! These baselines use the classic step-penalty reward: −1 per step plus the
//! environment's observation charge. They do not see the energy shaping.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{CostlyObsEnv, EnvConfig, Features};
use crate::error::{Error, Result};
use crate::physics::consts::{MAX_POSITION, MAX_SPEED, MIN_POSITION};
use crate::seeding::{stream_rng, Stream};

use super::dqn::{EpisodeStats, ObsCounts, TrainObserver};
use super::policy::greedy_index;

const STEP_PENALTY: f64 = -1.0;

/// Several offset grids over each consecutive pair of feature dimensions:
/// `(pos, vel)` and, for counter variants, `(pos_age, vel_age)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCoder {
    pub tilings: usize,
    pub grid: usize,
    bounds: Vec<(f64, f64)>,
}

impl TileCoder {
    pub fn new(tilings: usize, grid: usize, bounds: Vec<(f64, f64)>) -> Self {
        assert!(tilings > 0 && grid > 0, "tile coder needs tilings and cells");
        assert!(
            !bounds.is_empty() && bounds.len().is_multiple_of(2),
            "features are tiled in pairs"
        );
        Self {
            tilings,
            grid,
            bounds,
        }
    }

    /// Eight 8x8 tilings over the belief features of width 2 or 4.
    pub fn for_width(width: usize) -> Self {
        let mut bounds = vec![(MIN_POSITION, MAX_POSITION), (-MAX_SPEED, MAX_SPEED)];
        if width == 4 {
            // Scaled staleness counters lie in [0, 5].
            bounds.extend([(0.0, 5.0), (0.0, 5.0)]);
        }
        Self::new(8, 8, bounds)
    }

    fn pairs(&self) -> usize {
        self.bounds.len() / 2
    }

    fn tiles_per_tiling(&self) -> usize {
        (self.grid + 1) * (self.grid + 1)
    }

    pub fn n_features(&self) -> usize {
        self.pairs() * self.tilings * self.tiles_per_tiling()
    }

    pub fn n_active(&self) -> usize {
        self.pairs() * self.tilings
    }

    fn cell(&self, dim: usize, x: f64, offset: f64) -> usize {
        let (lo, hi) = self.bounds[dim];
        let scaled = (x - lo) / (hi - lo) * self.grid as f64 + offset;
        (libm::floor(scaled).max(0.0) as usize).min(self.grid)
    }

    /// Indices of the active tiles, one per (pair, tiling).
    pub fn active(&self, x: &[f64], out: &mut Vec<usize>) {
        assert_eq!(x.len(), self.bounds.len(), "feature width");
        out.clear();
        let per = self.tiles_per_tiling();
        for pair in 0..self.pairs() {
            let (a, b) = (2 * pair, 2 * pair + 1);
            for t in 0..self.tilings {
                // Asymmetric (1, 3) displacement, in fractions of a cell.
                let off_a = (t as f64 / self.tilings as f64) % 1.0;
                let off_b = ((3 * t) as f64 / self.tilings as f64) % 1.0;
                let ia = self.cell(a, x[a], off_a);
                let ib = self.cell(b, x[b], off_b);
                out.push((pair * self.tilings + t) * per + ia * (self.grid + 1) + ib);
            }
        }
    }
}

/// One weight vector per action over the tile features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQ {
    pub coder: TileCoder,
    pub n_actions: usize,
    pub weights: Vec<f64>,
}

impl LinearQ {
    pub fn new(coder: TileCoder, n_actions: usize) -> Self {
        let weights = vec![0.0; coder.n_features() * n_actions];
        Self {
            coder,
            n_actions,
            weights,
        }
    }

    pub fn value(&self, active: &[usize], action: usize) -> f64 {
        let base = action * self.coder.n_features();
        active.iter().map(|&i| self.weights[base + i]).sum()
    }

    pub fn values(&self, active: &[usize], out: &mut [f64]) {
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.value(active, a);
        }
    }

    fn nudge(&mut self, active: &[usize], action: usize, delta: f64) {
        let base = action * self.coder.n_features();
        for &i in active {
            self.weights[base + i] += delta;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAlgo {
    Sarsa,
    QLearning,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub episodes: u32,
    pub step_cap: u32,
    /// Overall step size, shared across the active tiles.
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for LinearSchedule {
    fn default() -> Self {
        Self {
            episodes: 500,
            step_cap: 20_000,
            alpha: 0.5,
            epsilon: 0.0,
            gamma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub q: LinearQ,
    pub stats: Vec<EpisodeStats>,
}

struct Chooser {
    active: Vec<usize>,
    values: Vec<f64>,
}

impl Chooser {
    fn choose<R: Rng + ?Sized>(&mut self, q: &LinearQ, f: &Features, epsilon: f64, rng: &mut R) -> usize {
        q.coder.active(f.as_slice(), &mut self.active);
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return rng.gen_range(0..q.n_actions);
        }
        q.values(&self.active, &mut self.values);
        greedy_index(&self.values)
    }
}

pub fn train_linear_baseline(
    algo: BaselineAlgo,
    env_cfg: &EnvConfig,
    schedule: &LinearSchedule,
    observer: &mut dyn TrainObserver,
) -> Result<BaselineOutcome> {
    if !(schedule.alpha >= 0.0 && (0.0..=1.0).contains(&schedule.epsilon)) {
        return Err(Error::config("alpha must be >= 0 and epsilon in [0, 1]"));
    }
    if env_cfg.variant.uses_imputer() && !env_cfg.vanilla {
        return Err(Error::config("linear baselines run on the LOCF variants only"));
    }
    let env_cfg = EnvConfig {
        step_cap: schedule.step_cap,
        ..*env_cfg
    };
    let mut env = CostlyObsEnv::new(env_cfg, None)?;
    let mut env_rng = stream_rng(schedule.seed, Stream::Env);
    let mut rng = stream_rng(schedule.seed, Stream::Agent);
    let coder = TileCoder::for_width(env_cfg.feature_width());
    let step = schedule.alpha / coder.n_active() as f64;
    let n_actions = env_cfg.n_actions();
    let mut q = LinearQ::new(coder, n_actions);
    let mut now = Chooser {
        active: Vec::new(),
        values: vec![0.0; n_actions],
    };
    let mut next = Chooser {
        active: Vec::new(),
        values: vec![0.0; n_actions],
    };
    let mut stats = Vec::with_capacity(schedule.episodes as usize);

    for episode in 0..schedule.episodes {
        let features = env.reset(episode, &mut env_rng);
        let mut action = now.choose(&q, &features, schedule.epsilon, &mut rng);
        let mut ep = EpisodeStats {
            episode,
            steps: 0,
            total_reward: 0.0,
            reached_goal: false,
            epsilon: schedule.epsilon,
            obs: ObsCounts::default(),
        };
        loop {
            let out = env.step(action)?;
            observer.transition(&out.record);
            let obs = out.record.action().obs;
            let reward = STEP_PENALTY + env_cfg.observation_charge(obs);
            ep.steps += 1;
            ep.total_reward += reward;
            ep.obs.add(obs);
            let terminal = out.done && !out.truncated;

            let current = q.value(&now.active, action);
            let next_action = next.choose(&q, &out.features, schedule.epsilon, &mut rng);
            let target = if terminal {
                reward
            } else {
                let bootstrap = match algo {
                    BaselineAlgo::Sarsa => q.value(&next.active, next_action),
                    BaselineAlgo::QLearning => {
                        q.values(&next.active, &mut next.values);
                        next.values[greedy_index(&next.values)]
                    }
                };
                reward + schedule.gamma * bootstrap
            };
            q.nudge(&now.active, action, step * (target - current));

            if out.done {
                ep.reached_goal = terminal;
                break;
            }
            core::mem::swap(&mut now, &mut next);
            action = next_action;
        }
        observer.episode(&ep);
        stats.push(ep);
    }
    Ok(BaselineOutcome { q, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Variant;

    #[test]
    fn one_active_tile_per_pair_and_tiling() {
        let coder = TileCoder::for_width(4);
        let mut active = Vec::new();
        coder.active(&[-0.5, 0.01, 0.3, 5.0], &mut active);
        assert_eq!(active.len(), 16);
        assert!(active.iter().all(|&i| i < coder.n_features()));
        let mut sorted = active.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }

    #[test]
    fn nearby_points_share_tiles() {
        let coder = TileCoder::for_width(2);
        let (mut a, mut b, mut far) = (Vec::new(), Vec::new(), Vec::new());
        coder.active(&[-0.5, 0.0], &mut a);
        coder.active(&[-0.49, 0.001], &mut b);
        coder.active(&[0.4, 0.06], &mut far);
        let shared = a.iter().filter(|i| b.contains(i)).count();
        assert!(shared >= 4);
        assert_eq!(a.iter().filter(|i| far.contains(i)).count(), 0);
    }

    #[test]
    fn zero_step_size_leaves_weights_untouched() {
        let schedule = LinearSchedule {
            episodes: 3,
            step_cap: 200,
            alpha: 0.0,
            epsilon: 0.1,
            ..LinearSchedule::default()
        };
        let env = EnvConfig {
            variant: Variant::LocfWithCounters,
            ..EnvConfig::default()
        };
        for algo in [BaselineAlgo::Sarsa, BaselineAlgo::QLearning] {
            let out = train_linear_baseline(algo, &env, &schedule, &mut ()).unwrap();
            assert!(out.q.weights.iter().all(|&w| w == 0.0));
            assert_eq!(out.stats.len(), 3);
        }
    }

    #[test]
    fn sarsa_improves_on_vanilla() {
        let schedule = LinearSchedule {
            episodes: 60,
            step_cap: 5_000,
            seed: 1,
            ..LinearSchedule::default()
        };
        let out = train_linear_baseline(BaselineAlgo::Sarsa, &EnvConfig::vanilla(5_000), &schedule, &mut ())
            .unwrap();
        let early = out.stats[0].steps;
        let late = out.stats[50..].iter().map(|s| s.steps).min().unwrap();
        assert!(late < early, "{early} -> {late}");
        assert!(out.stats[50..].iter().all(|s| s.reached_goal));
    }
}
