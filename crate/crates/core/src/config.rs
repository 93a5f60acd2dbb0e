//! Run configuration (TOML).
//!
//! Every section has complete defaults, unknown keys are rejected, and the
//! configuration hash is the SHA-256 of the canonical re-serialization of
//! the effective configuration (so omitted keys and explicit defaults hash
//! alike).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::Td3Config;
use crate::oracle::{GridSpec, ToyConfig};
use crate::powersys::{ScenarioConfig, SystemParams};
use crate::reach::{EpisodeConfig, PowerEnvConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Power,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub env: EnvKind,
    pub steps: u64,
    /// Environment steps between learning-curve evaluations (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Environment steps between checkpoints (0: only at the end).
    pub checkpoint_every: u64,
    /// Draw a fresh horizon at every training reset.
    pub sample_horizon: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            env: EnvKind::Power,
            steps: 200_000,
            eval_every: 10_000,
            eval_episodes: 100,
            checkpoint_every: 50_000,
            sample_horizon: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub episodes: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { episodes: 500 }
    }
}

/// Grid of the risk surfaces written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub taus: Vec<f64>,
    pub p_g_mw: Vec<f64>,
    pub r_motor: Vec<f64>,
    pub episodes: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            taus: vec![60.0, 120.0, 300.0, 600.0],
            p_g_mw: vec![500.0, 525.0, 550.0, 575.0, 600.0],
            r_motor: vec![0.0],
            episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for Monte Carlo (0 = all cores).
    pub workers: usize,
    pub system: SystemParams,
    pub scenario: ScenarioConfig,
    pub power: PowerEnvConfig,
    pub episode: EpisodeConfig,
    pub toy: ToyConfig,
    pub dp: GridSpec,
    pub td3: Td3Config,
    pub train: TrainSchedule,
    pub mc: McSection,
    pub evaluate: EvaluateSection,
}

impl RunConfig {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.scenario.validate(&self.system)?;
        self.power.validate()?;
        self.episode.validate()?;
        self.toy.validate()?;
        self.dp.validate(&self.toy)?;
        self.td3.validate()?;
        if self.mc.episodes == 0 {
            return Err(Error::Config("mc.episodes must be at least 1".into()));
        }
        if self.evaluate.episodes == 0 {
            return Err(Error::Config("evaluate.episodes must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(RunConfig::from_toml("").unwrap().hash(), c.hash());
    }

    #[test]
    fn disabled_disturbance_round_trips() {
        let mut c = RunConfig::default();
        c.scenario.disturbance = None;
        c.power.disturbance = None;
        let text = c.to_toml();
        assert!(text.contains("disturbance = false"), "{text}");
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let c2 = RunConfig::from_toml("[scenario]\ndisturbance = false\n").unwrap();
        assert!(c2.scenario.disturbance.is_none());
        assert!(RunConfig::from_toml("[scenario]\ndisturbance = true\n").is_err());
    }

    #[test]
    fn unknown_key_names_path() {
        let e = RunConfig::from_toml("[td3]\ngamma = 1.0\nlearning_rate = 3\n").unwrap_err();
        assert!(e.to_string().contains("td3"), "{e}");
        let e = RunConfig::from_toml("[system.ltc]\ntd = \"x\"\n").unwrap_err();
        assert!(e.to_string().contains("system.ltc.td"), "{e}");
    }

    #[test]
    fn invalid_value_rejected() {
        assert!(RunConfig::from_toml("[td3]\ngamma = 1.5\n").is_err());
    }
}
