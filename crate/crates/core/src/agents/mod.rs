//! Learning agents: the energy-shaped DQN and the tile-coded linear
//! SARSA / Q-learning baselines.

mod dqn;
mod linear;
mod policy;
mod replay;

pub use dqn::{
    td_targets, train_dqn, DqnConfig, DqnOutcome, EpisodeStats, ObsCounts, TrainObserver,
};
pub use linear::{
    train_linear_baseline, BaselineAlgo, BaselineOutcome, LinearQ, LinearSchedule, TileCoder,
};
pub use policy::{greedy_index, select_action};
pub use replay::{Experience, ReplayBuffer};
