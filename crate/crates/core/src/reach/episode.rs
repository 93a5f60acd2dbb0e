//! Policies and episode rollouts.

use super::env::{literal_step, reward, AugmentedState, Plant, ReachEnv, RewardVector, Status};
use crate::error::Result;
use crate::rng::RandomStream;

/// Deterministic feedback policy on augmented states.
pub trait Policy {
    fn action(&self, s: &AugmentedState) -> f64;
}

/// The "no corrective action" baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn action(&self, _: &AugmentedState) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn action(&self, _: &AugmentedState) -> f64 {
        self.0
    }
}

impl<F: Fn(&AugmentedState) -> f64> Policy for F {
    fn action(&self, s: &AugmentedState) -> f64 {
        self(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Sum of rewards, including the one paid at the initial state.
    pub ret: RewardVector,
    /// Mechanism that absorbed the episode, if any.
    pub first_hit: Option<usize>,
    /// Decision steps taken.
    pub steps: usize,
    pub initial: AugmentedState,
    pub last: AugmentedState,
}

impl EpisodeOutcome {
    pub fn safe(&self) -> bool {
        self.first_hit.is_none()
    }
}

/// Runs one episode under collapsed termination.
pub fn run_episode<P: Plant>(
    env: &mut ReachEnv<P>,
    policy: &dyn Policy,
    rng: &mut RandomStream,
) -> Result<EpisodeOutcome> {
    let s0 = env.reset(rng)?;
    finish_episode(env, policy, s0, rng)
}

/// Runs one episode with a fixed horizon `h0`.
pub fn run_episode_with_horizon<P: Plant>(
    env: &mut ReachEnv<P>,
    policy: &dyn Policy,
    h0: f64,
    rng: &mut RandomStream,
) -> Result<EpisodeOutcome> {
    let s0 = env.reset_with_horizon(h0, rng)?;
    finish_episode(env, policy, s0, rng)
}

fn finish_episode<P: Plant>(
    env: &mut ReachEnv<P>,
    policy: &dyn Policy,
    s0: AugmentedState,
    rng: &mut RandomStream,
) -> Result<EpisodeOutcome> {
    let mut ret = env.collapsed_reward(&s0);
    let mut s = s0.clone();
    let mut steps = 0;
    while !env.is_terminal(&s) {
        let a = policy.action(&s);
        let st = env.step(&s, a, rng)?;
        ret.add(&st.reward);
        s = st.state;
        steps += 1;
    }
    let first_hit = match s.status {
        Status::Absorbed(m) => Some(m),
        _ => None,
    };
    Ok(EpisodeOutcome {
        ret,
        first_hit,
        steps,
        initial: s0,
        last: s,
    })
}

/// Return of the literal absorbing process, rolled out until the clock
/// passes zero.
pub fn run_literal_episode<P: Plant>(
    env: &mut ReachEnv<P>,
    policy: &dyn Policy,
    h0: f64,
    rng: &mut RandomStream,
) -> Result<RewardVector> {
    let dt = env.dt();
    let m = env.mechanisms();
    let mut s = env.reset_with_horizon(h0, rng)?;
    let mut ret = reward(&s, m, dt);
    while s.h > -1e-9 * dt && s.status != Status::TimeUp {
        let a = if s.status == Status::Live { policy.action(&s) } else { 0.0 };
        let (next, r) = literal_step(env, &s, a, rng);
        ret.add(&r);
        s = next;
    }
    Ok(ret)
}
