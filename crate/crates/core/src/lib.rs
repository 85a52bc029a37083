//! Mountain Car with costly observations.
//!
//! The agent pays to observe position and/or velocity; unobserved variables
//! are carried forward, optionally with staleness counters, or imputed by a
//! learned forward-dynamics model. This crate holds the allocation-only
//! algorithmic core: physics, the augmented environment, a small MLP engine,
//! the DQN and linear baselines, dynamics-model training and the statistics
//! used to analyze runs. File formats, IO and the command line live in the
//! `costly-obs` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agents;
pub mod analysis;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod nn;
pub mod physics;
pub mod seeding;

pub use error::{Error, Result};
