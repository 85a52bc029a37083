//! Mountain Car augmented with composite move-and-observe actions,
//! per-observation costs, energy-shaped reward and belief-state tracking.
//!
//! The agent never sees [`TrueState`]; it sees a [`BeliefState`] assembled
//! from the most recent observations, either carried forward unchanged or
//! advanced by an [`Imputer`], and optionally the age of each value.

use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::physics::{self, mechanical_energy, Motion, TrueState};

/// Number of composite actions (3 motions x 4 observation choices).
pub const N_ACTIONS: usize = 12;
/// Number of actions when the environment is fully observed.
pub const N_MOTIONS: usize = 3;
/// Staleness counters are capped at this age before scaling.
pub const AGE_FEATURE_CAP: u32 = 500;
pub const AGE_FEATURE_SCALE: f64 = 100.0;
/// Multiplier on the mechanical-energy difference.
pub const ENERGY_REWARD_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObsChoice {
    None,
    Position,
    Velocity,
    Both,
}

impl ObsChoice {
    pub const ALL: [ObsChoice; 4] = [
        ObsChoice::None,
        ObsChoice::Position,
        ObsChoice::Velocity,
        ObsChoice::Both,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn observes_position(self) -> bool {
        matches!(self, ObsChoice::Position | ObsChoice::Both)
    }

    pub fn observes_velocity(self) -> bool {
        matches!(self, ObsChoice::Velocity | ObsChoice::Both)
    }

    pub fn n_observed(self) -> u32 {
        self.observes_position() as u32 + self.observes_velocity() as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            ObsChoice::None => "none",
            ObsChoice::Position => "position",
            ObsChoice::Velocity => "velocity",
            ObsChoice::Both => "both",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompositeAction {
    pub motion: Motion,
    pub obs: ObsChoice,
}

impl CompositeAction {
    pub fn encode(self) -> usize {
        self.motion.code() * 4 + self.obs.code()
    }
}

/// Maps an action index onto `(motion, observation)` as `motion·4 + obs`.
pub fn decode_action(index: usize) -> Result<CompositeAction> {
    if index >= N_ACTIONS {
        return Err(Error::InvalidAction(index, N_ACTIONS));
    }
    Ok(CompositeAction {
        motion: Motion::from_code(index / 4).expect("index < 12"),
        obs: ObsChoice::from_code(index % 4).expect("remainder < 4"),
    })
}

/// What the agent knows. Ages are always tracked; whether they are exposed
/// to the agent depends on the [`Variant`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub pos: f64,
    pub vel: f64,
    pub pos_age: u32,
    pub vel_age: u32,
}

impl BeliefState {
    pub fn observed(s: TrueState) -> Self {
        Self {
            pos: s.position,
            vel: s.velocity,
            pos_age: 0,
            vel_age: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    LocfNoCounters,
    LocfWithCounters,
    DynamicsWithCounters,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::LocfNoCounters,
        Variant::LocfWithCounters,
        Variant::DynamicsWithCounters,
    ];

    pub fn has_counters(self) -> bool {
        !matches!(self, Variant::LocfNoCounters)
    }

    pub fn uses_imputer(self) -> bool {
        matches!(self, Variant::DynamicsWithCounters)
    }

    pub fn feature_width(self) -> usize {
        if self.has_counters() {
            4
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::LocfNoCounters => "locf",
            Variant::LocfWithCounters => "locf-counters",
            Variant::DynamicsWithCounters => "dynamics-counters",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "locf" | "locf-no-counters" => Ok(Variant::LocfNoCounters),
            "locf-counters" | "locf-with-counters" => Ok(Variant::LocfWithCounters),
            "dynamics-counters" | "dynamics" => Ok(Variant::DynamicsWithCounters),
            other => Err(Error::config(alloc::format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostMode {
    /// Each observed variable is charged separately (`Both` costs double).
    PerVariable,
    /// Any observation is charged once.
    Flat,
}

impl CostMode {
    pub fn name(self) -> &'static str {
        match self {
            CostMode::PerVariable => "per-variable",
            CostMode::Flat => "flat",
        }
    }
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-variable" => Ok(CostMode::PerVariable),
            "flat" => Ok(CostMode::Flat),
            other => Err(Error::config(alloc::format!("unknown cost mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub variant: Variant,
    /// Non-positive reward added per observation (see [`CostMode`]).
    pub obs_cost: f64,
    pub step_cap: u32,
    pub cost_mode: CostMode,
    /// Plain Mountain Car: three motion-only actions, the true state is
    /// always visible and nothing is charged. `variant` is ignored.
    pub vanilla: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            variant: Variant::LocfWithCounters,
            obs_cost: -8.0,
            step_cap: 20_000,
            cost_mode: CostMode::PerVariable,
            vanilla: false,
        }
    }
}

impl EnvConfig {
    pub fn vanilla(step_cap: u32) -> Self {
        Self {
            obs_cost: 0.0,
            step_cap,
            vanilla: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_cap == 0 {
            return Err(Error::config("step_cap must be positive"));
        }
        if !(self.obs_cost <= 0.0 && self.obs_cost.is_finite()) {
            return Err(Error::config("obs_cost must be finite and <= 0"));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        if self.vanilla {
            N_MOTIONS
        } else {
            N_ACTIONS
        }
    }

    pub fn feature_width(&self) -> usize {
        if self.vanilla {
            2
        } else {
            self.variant.feature_width()
        }
    }

    /// Maps an agent-facing action index to a composite action.
    pub fn decode(&self, index: usize) -> Result<CompositeAction> {
        if self.vanilla {
            let motion = Motion::from_code(index).ok_or(Error::InvalidAction(index, N_MOTIONS))?;
            Ok(CompositeAction {
                motion,
                obs: ObsChoice::Both,
            })
        } else {
            decode_action(index)
        }
    }

    /// Total cost charged for an observation choice (non-positive).
    pub fn observation_charge(&self, obs: ObsChoice) -> f64 {
        if self.vanilla {
            return 0.0;
        }
        let k = match self.cost_mode {
            CostMode::PerVariable => obs.n_observed(),
            CostMode::Flat => (obs != ObsChoice::None) as u32,
        };
        self.obs_cost * k as f64
    }
}

/// Predicts the next physical state from (possibly stale) beliefs.
pub trait Imputer {
    fn predict_next(&self, pos: f64, vel: f64, motion: Motion) -> (f64, f64);
}

/// Energy-difference shaping plus observation charges, computed on true states.
pub fn shaped_reward(prev: TrueState, next: TrueState, obs: ObsChoice, cfg: &EnvConfig) -> f64 {
    ENERGY_REWARD_SCALE * (mechanical_energy(next) - mechanical_energy(prev))
        + cfg.observation_charge(obs)
}

pub fn update_belief(
    b: BeliefState,
    true_next: TrueState,
    action: CompositeAction,
    variant: Variant,
    imputer: Option<&dyn Imputer>,
) -> Result<BeliefState> {
    let (carried_pos, carried_vel) = if variant.uses_imputer() {
        let imputer = imputer.ok_or(Error::MissingImputer)?;
        if action.obs == ObsChoice::Both {
            (b.pos, b.vel)
        } else {
            imputer.predict_next(b.pos, b.vel, action.motion)
        }
    } else {
        (b.pos, b.vel)
    };
    let (pos, pos_age) = if action.obs.observes_position() {
        (true_next.position, 0)
    } else {
        (carried_pos, b.pos_age.saturating_add(1))
    };
    let (vel, vel_age) = if action.obs.observes_velocity() {
        (true_next.velocity, 0)
    } else {
        (carried_vel, b.vel_age.saturating_add(1))
    };
    Ok(BeliefState {
        pos,
        vel,
        pos_age,
        vel_age,
    })
}

/// Fixed-capacity feature vector (2 or 4 entries).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    buf: [f64; 4],
    len: u8,
}

impl Features {
    pub fn from_slice(values: &[f64]) -> Self {
        assert!(values.len() <= 4, "at most four features");
        let mut buf = [0.0; 4];
        buf[..values.len()].copy_from_slice(values);
        Self {
            buf,
            len: values.len() as u8,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.buf[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn age_feature(age: u32) -> f64 {
    age.min(AGE_FEATURE_CAP) as f64 / AGE_FEATURE_SCALE
}

/// The agent-visible input vector for a belief.
pub fn featurize(b: &BeliefState, variant: Variant) -> Features {
    if variant.has_counters() {
        Features::from_slice(&[b.pos, b.vel, age_feature(b.pos_age), age_feature(b.vel_age)])
    } else {
        Features::from_slice(&[b.pos, b.vel])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    pub episode: u32,
    pub step: u32,
    pub belief_before: BeliefState,
    pub action_index: usize,
    pub reward: f64,
    pub belief_after: BeliefState,
    pub true_before: TrueState,
    pub true_after: TrueState,
    pub done: bool,
    /// Ended by the step cap rather than by reaching the goal.
    pub truncated: bool,
}

impl TransitionRecord {
    pub fn action(&self) -> CompositeAction {
        decode_action(self.action_index).expect("records hold valid indices")
    }

    pub fn reached_goal(&self) -> bool {
        self.done && !self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub features: Features,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub record: TransitionRecord,
}

/// Initial state and belief; the first state is observed for free.
pub fn env_reset<R: Rng + ?Sized>(rng: &mut R) -> (BeliefState, TrueState) {
    let s = physics::reset(rng);
    (BeliefState::observed(s), s)
}

/// One episode-scoped session. Not shareable mid-episode.
pub struct CostlyObsEnv<'a> {
    cfg: EnvConfig,
    imputer: Option<&'a dyn Imputer>,
    state: TrueState,
    belief: BeliefState,
    episode: u32,
    steps: u32,
    done: bool,
}

impl<'a> CostlyObsEnv<'a> {
    pub fn new(cfg: EnvConfig, imputer: Option<&'a dyn Imputer>) -> Result<Self> {
        cfg.validate()?;
        if !cfg.vanilla && cfg.variant.uses_imputer() && imputer.is_none() {
            return Err(Error::MissingImputer);
        }
        let s = TrueState::new(-0.5, 0.0);
        Ok(Self {
            cfg,
            imputer,
            state: s,
            belief: BeliefState::observed(s),
            episode: 0,
            steps: 0,
            // Force a reset before the first step.
            done: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn true_state(&self) -> TrueState {
        self.state
    }

    pub fn belief(&self) -> BeliefState {
        self.belief
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn features(&self) -> Features {
        if self.cfg.vanilla {
            featurize(&self.belief, Variant::LocfNoCounters)
        } else {
            featurize(&self.belief, self.cfg.variant)
        }
    }

    /// Starts episode `episode` and returns the agent's first features.
    pub fn reset<R: Rng + ?Sized>(&mut self, episode: u32, rng: &mut R) -> Features {
        let (b, s) = env_reset(rng);
        self.state = s;
        self.belief = b;
        self.episode = episode;
        self.steps = 0;
        self.done = false;
        self.features()
    }

    pub fn step(&mut self, index: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let action = self.cfg.decode(index)?;
        let (next, goal) = physics::step(self.state, action.motion);
        let reward = shaped_reward(self.state, next, action.obs, &self.cfg);
        let belief = if self.cfg.vanilla {
            BeliefState::observed(next)
        } else {
            update_belief(self.belief, next, action, self.cfg.variant, self.imputer)?
        };
        self.steps += 1;
        let truncated = !goal && self.steps >= self.cfg.step_cap;
        let done = goal || truncated;
        let record = TransitionRecord {
            episode: self.episode,
            step: self.steps - 1,
            belief_before: self.belief,
            action_index: action.encode(),
            reward,
            belief_after: belief,
            true_before: self.state,
            true_after: next,
            done,
            truncated,
        };
        self.state = next;
        self.belief = belief;
        self.done = done;
        Ok(StepOutcome {
            features: self.features(),
            reward,
            done,
            truncated,
            record,
        })
    }
}
