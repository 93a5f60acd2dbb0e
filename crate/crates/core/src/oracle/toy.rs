//! Scalar toy plant with an exactly computable safety value.
//!
//! `z' = z + (b u - c) dt + sigma sqrt(dt) xi`, unsafe when `z <= 0`
//! (mechanism 1) and, optionally, when `z >= upper` (mechanism 2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reach::{EpisodeConfig, Plant, ReachEnv};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub b: f64,
    pub c: f64,
    pub sigma: f64,
    pub dt: f64,
    pub tau_max: f64,
    /// Second unsafe boundary; `None` gives the one-sided toy.
    pub upper: Option<f64>,
    /// Initial state range sampled at reset (equal bounds fix it).
    pub z0_range: [f64; 2],
    /// Observation range mapped to [-1, 1].
    pub z_scale: [f64; 2],
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            b: 0.5,
            c: 0.3,
            sigma: 0.4,
            dt: 1.0,
            tau_max: 10.0,
            upper: None,
            z0_range: [0.0, 3.5],
            z_scale: [0.0, 4.0],
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.tau_max > 0.0 && self.sigma >= 0.0) {
            return Err(Error::Config("toy: dt, tau_max must be positive and sigma non-negative".into()));
        }
        if self.z0_range[0] > self.z0_range[1] || self.z_scale[0] >= self.z_scale[1] {
            return Err(Error::Config("toy: ranges must be ordered".into()));
        }
        if let Some(u) = self.upper {
            if !(u > 0.0) {
                return Err(Error::Config("toy.upper must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn mechanisms(&self) -> usize {
        if self.upper.is_some() {
            2
        } else {
            1
        }
    }

    /// Mechanism whose unsafe set contains `z`.
    pub fn unsafe_at(&self, z: f64) -> Option<usize> {
        if z <= 0.0 {
            Some(0)
        } else if self.upper.is_some_and(|u| z >= u) {
            Some(1)
        } else {
            None
        }
    }

    /// Deterministic part of the next state.
    pub fn drift(&self, z: f64, u: f64) -> f64 {
        z + (self.b * u.clamp(-1.0, 1.0) - self.c) * self.dt
    }

    /// Episode settings matching this toy.
    pub fn episode(&self, horizon: f64, sample_horizon: bool) -> EpisodeConfig {
        EpisodeConfig {
            horizon_s: horizon,
            decision_step_s: self.dt,
            horizon_max_s: self.tau_max,
            sample_horizon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyPlant {
    pub config: ToyConfig,
    pub z: f64,
}

impl ToyPlant {
    pub fn new(config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let z = config.z0_range[0];
        Ok(Self { config, z })
    }
}

impl Plant for ToyPlant {
    fn mechanisms(&self) -> usize {
        self.config.mechanisms()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.z]
    }

    fn normalize(&self, z: &[f64]) -> Vec<f64> {
        let [lo, hi] = self.config.z_scale;
        z.iter().map(|x| 2.0 * (x - lo) / (hi - lo) - 1.0).collect()
    }

    fn reset(&mut self, rng: &mut RandomStream) -> Result<()> {
        let [a, b] = self.config.z0_range;
        self.z = if a == b { a } else { rng.uniform_range(a, b) };
        Ok(())
    }

    fn violated(&self) -> Option<usize> {
        self.config.unsafe_at(self.z)
    }

    fn advance(&mut self, action: f64, dt: f64, rng: &mut RandomStream) -> Option<usize> {
        let xi = rng.normal();
        let c = &self.config;
        self.z += (c.b * action.clamp(-1.0, 1.0) - c.c) * dt + c.sigma * dt.sqrt() * xi;
        self.violated()
    }
}

pub type ToyEnv = ReachEnv<ToyPlant>;

/// Toy environment with a fixed horizon (or sampled horizons for training).
pub fn toy_env(config: ToyConfig, horizon: f64, sample_horizon: bool) -> Result<ToyEnv> {
    let episode = config.episode(horizon, sample_horizon);
    ReachEnv::new(ToyPlant::new(config)?, episode)
}

/// Toy environment started from a fixed `z0`.
pub fn toy_env_at(mut config: ToyConfig, z0: f64, horizon: f64) -> Result<ToyEnv> {
    config.z0_range = [z0, z0];
    toy_env(config, horizon, false)
}
