//! Ground-truth Mountain Car dynamics (classic-control formulation).

use rand::Rng;

/// Physical constants of the simulator.
pub mod consts {
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    /// Episodes end once the car's position reaches this value.
    pub const GOAL_POSITION: f64 = 0.5;
    pub const START_LOW: f64 = -0.6;
    pub const START_HIGH: f64 = -0.4;
}

use consts::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub position: f64,
    pub velocity: f64,
}

impl TrueState {
    pub const fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    pub fn is_valid(&self) -> bool {
        (MIN_POSITION..=MAX_POSITION).contains(&self.position)
            && (-MAX_SPEED..=MAX_SPEED).contains(&self.velocity)
    }

    /// Clamps both components into their valid ranges.
    pub fn clamped(self) -> Self {
        Self {
            position: self.position.clamp(MIN_POSITION, MAX_POSITION),
            velocity: self.velocity.clamp(-MAX_SPEED, MAX_SPEED),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Left,
    Coast,
    Right,
}

impl Motion {
    pub const ALL: [Motion; 3] = [Motion::Left, Motion::Coast, Motion::Right];

    pub fn force(self) -> f64 {
        match self {
            Motion::Left => -1.0,
            Motion::Coast => 0.0,
            Motion::Right => 1.0,
        }
    }

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Coast => "coast",
            Motion::Right => "right",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Samples a start state: position uniform in `[START_LOW, START_HIGH)`, at rest.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> TrueState {
    TrueState::new(rng.gen_range(START_LOW..START_HIGH), 0.0)
}

/// Advances the car one tick. Returns the next state and whether the goal was reached.
pub fn step(s: TrueState, m: Motion) -> (TrueState, bool) {
    let mut velocity = s.velocity + m.force() * FORCE - GRAVITY * libm::cos(3.0 * s.position);
    velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
    let position = (s.position + velocity).clamp(MIN_POSITION, MAX_POSITION);
    if position <= MIN_POSITION {
        velocity = 0.0;
    }
    let next = TrueState::new(position, velocity);
    (next, position >= GOAL_POSITION)
}

/// Potential plus kinetic energy, `sin(3p)·0.0025 + v²/2`.
pub fn mechanical_energy(s: TrueState) -> f64 {
    libm::sin(3.0 * s.position) * GRAVITY + 0.5 * s.velocity * s.velocity
}
