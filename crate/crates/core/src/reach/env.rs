//! Augmented-state safety MDP.
//!
//! The state is `s = (h, z)` with `h` the remaining time. A unit reward is
//! paid once, at the step where `h` falls in `[0, dt)`, if the trajectory
//! never entered an unsafe set. Each mechanism `m` has its own reward,
//! which ignores failures attributed to other mechanisms.
//!
//! Episodes are run with collapsed termination: on absorption the episode
//! ends and pays `0` to the mechanism that fired and `1` to every other one.
//! This gives the same returns as the literal process in which `z` freezes
//! while `h` keeps counting down (see [`literal_step`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Absorption status of an augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Live,
    /// Entered the unsafe set of the mechanism with this 0-based index.
    Absorbed(usize),
    /// Horizon expired while safe.
    TimeUp,
}

impl Status {
    pub fn label(self) -> String {
        match self {
            Status::Live => "live".into(),
            Status::Absorbed(m) => format!("absorbed:{}", m + 1),
            Status::TimeUp => "timeup".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    /// Remaining time (s).
    pub h: f64,
    /// Raw observation.
    pub z: Vec<f64>,
    /// Learner input: horizon feature followed by the scaled observation.
    pub normalized: Vec<f64>,
    pub status: Status,
}

/// Total reward plus one reward per mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub total: f64,
    pub mechanism: Vec<f64>,
}

impl RewardVector {
    pub fn zeros(m: usize) -> Self {
        Self {
            total: 0.0,
            mechanism: vec![0.0; m],
        }
    }

    pub fn add(&mut self, o: &RewardVector) {
        self.total += o.total;
        for (a, b) in self.mechanism.iter_mut().zip(&o.mechanism) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.total == 0.0 && self.mechanism.iter().all(|r| *r == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Horizon tau (s) used when the horizon is not sampled.
    pub horizon_s: f64,
    /// Decision step (s).
    pub decision_step_s: f64,
    /// Largest horizon; sets the scale of the horizon feature.
    pub horizon_max_s: f64,
    /// Draw the horizon uniformly from (0, horizon_max_s] at every reset.
    pub sample_horizon: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon_s: 300.0,
            decision_step_s: 10.0,
            horizon_max_s: 600.0,
            sample_horizon: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decision_step_s > 0.0) {
            return Err(Error::Config("episode.decision_step_s must be positive".into()));
        }
        if !(self.horizon_s > 0.0) || !(self.horizon_max_s > 0.0) {
            return Err(Error::Config("episode horizons must be positive".into()));
        }
        if !self.sample_horizon && self.horizon_s > self.horizon_max_s + 1e-9 {
            return Err(Error::Config("episode.horizon_s exceeds episode.horizon_max_s".into()));
        }
        Ok(())
    }

    /// Number of decision steps N(tau) = floor(tau / dt).
    pub fn steps(&self, tau: f64) -> usize {
        steps_remaining(tau, self.decision_step_s)
    }
}

/// floor(h / dt), robust to the rounding of repeated subtraction.
pub fn steps_remaining(h: f64, dt: f64) -> usize {
    if h < 0.0 {
        return 0;
    }
    (h / dt + 1e-9).floor() as usize
}

/// True when `h` lies in `[0, dt)`, up to the same rounding allowance.
pub fn in_last_window(h: f64, dt: f64) -> bool {
    h > -1e-9 * dt && h < dt * (1.0 - 1e-9)
}

/// Dynamics underneath the MDP.
pub trait Plant {
    /// Number of mechanisms M.
    fn mechanisms(&self) -> usize;
    fn observe(&self) -> Vec<f64>;
    /// Fixed affine scaling of the observation to roughly [-1, 1].
    fn normalize(&self, z: &[f64]) -> Vec<f64>;
    /// Draws a fresh initial condition.
    fn reset(&mut self, rng: &mut RandomStream) -> Result<()>;
    /// Mechanism whose unsafe set contains the current state, if any.
    fn violated(&self) -> Option<usize>;
    /// Applies `action` and advances `dt` seconds. Returns the first
    /// mechanism hit during the interval. Never fails: solver breakdowns are
    /// attributed to a mechanism by the plant.
    fn advance(&mut self, action: f64, dt: f64, rng: &mut RandomStream) -> Option<usize>;
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: AugmentedState,
    pub reward: RewardVector,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReachEnv<P> {
    pub plant: P,
    pub config: EpisodeConfig,
}

impl<P: Plant> ReachEnv<P> {
    pub fn new(plant: P, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { plant, config })
    }

    pub fn mechanisms(&self) -> usize {
        self.plant.mechanisms()
    }

    pub fn dt(&self) -> f64 {
        self.config.decision_step_s
    }

    /// Dimension of [`AugmentedState::normalized`].
    pub fn feature_dim(&self) -> usize {
        1 + self.plant.normalize(&self.plant.observe()).len()
    }

    /// Horizon feature: the number of remaining decisions scaled to [-1, 1].
    /// The value function depends on `h` only through this count.
    pub fn horizon_feature(&self, h: f64) -> f64 {
        let n_max = self.config.steps(self.config.horizon_max_s).max(1) as f64;
        let n = steps_remaining(h, self.dt()) as f64;
        2.0 * n.min(n_max) / n_max - 1.0
    }

    pub fn make_state(&self, h: f64, status: Status) -> AugmentedState {
        let z = self.plant.observe();
        let mut normalized = Vec::with_capacity(z.len() + 1);
        normalized.push(self.horizon_feature(h));
        normalized.extend(self.plant.normalize(&z));
        AugmentedState { h, z, normalized, status }
    }

    /// Starts an episode with horizon `config.horizon_s` (or a sampled one).
    pub fn reset(&mut self, rng: &mut RandomStream) -> Result<AugmentedState> {
        let h = if self.config.sample_horizon {
            // (0, tau_max]
            self.config.horizon_max_s * (1.0 - rng.uniform())
        } else {
            self.config.horizon_s
        };
        self.reset_with_horizon(h, rng)
    }

    pub fn reset_with_horizon(&mut self, h: f64, rng: &mut RandomStream) -> Result<AugmentedState> {
        self.plant.reset(rng)?;
        let status = match self.plant.violated() {
            Some(m) => Status::Absorbed(m),
            None => Status::Live,
        };
        Ok(self.make_state(h, status))
    }

    /// Whether a collapsed-mode episode is over at `s`.
    pub fn is_terminal(&self, s: &AugmentedState) -> bool {
        s.status != Status::Live || s.h < self.dt() * (1.0 - 1e-9)
    }

    /// Reward paid on entering `s` under collapsed termination.
    pub fn collapsed_reward(&self, s: &AugmentedState) -> RewardVector {
        collapsed_reward(s, self.mechanisms(), self.dt())
    }

    /// One decision step under collapsed termination.
    pub fn step(&mut self, s: &AugmentedState, action: f64, rng: &mut RandomStream) -> Result<Step> {
        if self.is_terminal(s) {
            return Err(Error::Config("step called on a terminal state".into()));
        }
        let a = action.clamp(-1.0, 1.0);
        let dt = self.dt();
        let hit = self.plant.advance(a, dt, rng);
        let status = match hit {
            Some(m) => Status::Absorbed(m),
            None => Status::Live,
        };
        let state = self.make_state(s.h - dt, status);
        let reward = self.collapsed_reward(&state);
        let done = self.is_terminal(&state);
        Ok(Step { state, reward, done })
    }
}

/// Literal reward: `r^(m) = 1` iff `h` is in `[0, dt)` and the state is not
/// absorbed by `m`; `r_total = 1` iff `h` is in `[0, dt)` and the state is
/// live.
pub fn reward(s: &AugmentedState, mechanisms: usize, dt: f64) -> RewardVector {
    let mut r = RewardVector::zeros(mechanisms);
    if !in_last_window(s.h, dt) {
        return r;
    }
    for (m, v) in r.mechanism.iter_mut().enumerate() {
        *v = if s.status == Status::Absorbed(m) { 0.0 } else { 1.0 };
    }
    r.total = if s.status == Status::Live { 1.0 } else { 0.0 };
    r
}

/// Collapsed-termination reward for a state just entered.
pub fn collapsed_reward(s: &AugmentedState, mechanisms: usize, dt: f64) -> RewardVector {
    match s.status {
        Status::Absorbed(fired) if s.h > -1e-9 * dt => RewardVector {
            total: 0.0,
            mechanism: (0..mechanisms).map(|m| if m == fired { 0.0 } else { 1.0 }).collect(),
        },
        Status::Live => reward(s, mechanisms, dt),
        _ => RewardVector::zeros(mechanisms),
    }
}

/// One step of the literal absorbing process: an absorbed state keeps its
/// observation and status while `h` counts down; a live state whose clock
/// runs out becomes `TimeUp`. States with `h < 0` are fixed points.
/// The plant is advanced only from live states with `h >= dt`.
pub fn literal_step<P: Plant>(
    env: &mut ReachEnv<P>,
    s: &AugmentedState,
    action: f64,
    rng: &mut RandomStream,
) -> (AugmentedState, RewardVector) {
    let dt = env.dt();
    let m = env.mechanisms();
    if s.h < -1e-9 * dt || s.status == Status::TimeUp {
        return (s.clone(), RewardVector::zeros(m));
    }
    let h = s.h - dt;
    let next = match s.status {
        Status::Absorbed(_) => AugmentedState { h, ..s.clone() },
        Status::Live if s.h < dt * (1.0 - 1e-9) => AugmentedState {
            h,
            status: Status::TimeUp,
            ..s.clone()
        },
        Status::Live => {
            let hit = env.plant.advance(action.clamp(-1.0, 1.0), dt, rng);
            let status = hit.map_or(Status::Live, Status::Absorbed);
            env.make_state(h, status)
        }
        Status::TimeUp => unreachable!(),
    };
    let r = reward(&next, m, dt);
    (next, r)
}

/// Risk from a safety value: `clip(1 - v, 0, 1)`.
pub fn risk_from_value(v: f64) -> f64 {
    (1.0 - v).clamp(0.0, 1.0)
}
