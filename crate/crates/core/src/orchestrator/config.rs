use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, RewardWeights};
use crate::evolution::{EvolutionConfig, EvolutionConfigError};
use crate::physics::WorldConfig;
use crate::ppo::{PpoConfig, TrainingConfig, TrainingConfigError};

/// Resolved config stored in every run directory.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown preset {0:?} (expected desk or paper)")]
    UnknownPreset(String),
    #[error(transparent)]
    Evolution(#[from] EvolutionConfigError),
    #[error(transparent)]
    Training(#[from] TrainingConfigError),
    #[error("{} already holds a run; pass --resume to continue it", .0.display())]
    AlreadyInitialized(PathBuf),
    #[error("{} has not been initialized", .0.display())]
    NotInitialized(PathBuf),
    #[error("{} was written for a different configuration", .0.display())]
    Mismatch(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

/// The `[training]` section: vector-env width, horizon, budget, episode
/// settings and the PPO hyperparameters under `[training.ppo]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub num_envs: usize,
    pub horizon: usize,
    pub total_steps: u64,
    pub fitness_window_fraction: f64,
    pub allow_scaling_mismatch: bool,
    pub max_episode_steps: u32,
    pub target: [f64; 2],
    pub reset_noise: f64,
    pub ppo: PpoConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainingSection {
            num_envs: t.num_envs,
            horizon: t.horizon,
            total_steps: t.total_steps,
            fitness_window_fraction: t.fitness_window_fraction,
            allow_scaling_mismatch: t.allow_scaling_mismatch,
            max_episode_steps: t.env.max_episode_steps,
            target: t.env.target,
            reset_noise: t.env.reset_noise,
            ppo: t.ppo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub evolution: EvolutionConfig,
    pub training: TrainingSection,
    pub world: WorldConfig,
    pub reward: RewardWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => RunConfig {
                seed: 0,
                output_dir: PathBuf::from("runs/desk"),
                evolution: EvolutionConfig {
                    population_size: 8,
                    tournaments_per_generation: 4,
                    workers: 2,
                    max_generations: 3,
                    ..EvolutionConfig::default()
                },
                training: TrainingSection {
                    num_envs: 64,
                    horizon: 32,
                    total_steps: 200_000,
                    allow_scaling_mismatch: true,
                    ..TrainingSection::default()
                },
                world: WorldConfig::default(),
                reward: RewardWeights::default(),
            },
            Preset::Paper => RunConfig {
                seed: 0,
                output_dir: PathBuf::from("runs/paper"),
                evolution: EvolutionConfig {
                    population_size: 100,
                    tournaments_per_generation: 50,
                    workers: 10,
                    max_generations: 10,
                    ..EvolutionConfig::default()
                },
                training: TrainingSection {
                    num_envs: 8192,
                    horizon: 16,
                    // 3e7 rounded to a whole number of vector steps.
                    total_steps: 29_999_104,
                    allow_scaling_mismatch: false,
                    ..TrainingSection::default()
                },
                world: WorldConfig::default(),
                reward: RewardWeights::default(),
            },
        }
    }

    /// Preset values overlaid with the keys present in `text`.
    pub fn from_toml_over(base: &RunConfig, text: &str) -> Result<Self, ConfigError> {
        let mut merged = toml::Table::try_from(base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let overlay: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut merged, overlay);
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            ppo: t.ppo.clone(),
            env: EnvConfig {
                world: self.world.clone(),
                reward: self.reward.clone(),
                max_episode_steps: t.max_episode_steps,
                target: t.target,
                reset_noise: t.reset_noise,
            },
            num_envs: t.num_envs,
            horizon: t.horizon,
            total_steps: t.total_steps,
            fitness_window_fraction: t.fitness_window_fraction,
            allow_scaling_mismatch: t.allow_scaling_mismatch,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.evolution.validate()?;
        self.training_config().validate()?;
        Ok(())
    }

    pub(crate) fn without_output_dir(&self) -> RunConfig {
        RunConfig { output_dir: PathBuf::new(), ..self.clone() }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Desk, Preset::Paper] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
        let desk = RunConfig::preset(Preset::Desk);
        assert_eq!(desk.evolution.final_agent_count(), 20);
        assert_eq!(RunConfig::preset(Preset::Paper).evolution.final_agent_count(), 600);
    }

    #[test]
    fn overlay_keeps_unmentioned_keys() {
        let base = RunConfig::preset(Preset::Desk);
        let c = RunConfig::from_toml_over(&base, "seed = 9\n[training.ppo]\nclip_epsilon = 0.1\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.training.ppo.clip_epsilon, 0.1);
        assert_eq!(c.training.ppo.gae_lambda, base.training.ppo.gae_lambda);
        assert_eq!(c.evolution, base.evolution);
    }

    #[test]
    fn rejects_unknown_keys_and_small_populations() {
        let base = RunConfig::preset(Preset::Desk);
        assert!(matches!(RunConfig::from_toml_over(&base, "[world]\ngravty = 1.0\n"), Err(ConfigError::Parse(_))));
        let c = RunConfig::from_toml_over(&base, "[evolution]\npopulation_size = 2\n").unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("population_size"), "{err}");
    }
}
