//! Single TOML configuration file covering every subsystem.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected with the full key path.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::maps::GainMode;
use crate::orchestrator::WorkerConfig;
use crate::policy::{CoverageConfig, FeatureConfig, HeuristicConfig, PpoConfig, TrainConfig};
use crate::rewards::RewardConfig;
use crate::world::{DetectorConfig, MotionConfig, SensorConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Voxel edge length, meters.
    pub resolution: f64,
    /// Exploration gain decay rate, 1/m.
    pub decay_rate: f64,
    pub gain_mode: GainMode,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            resolution: 4.0,
            decay_rate: 0.05,
            gain_mode: GainMode::PerFrame,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Decision steps before the episode is cut off.
    pub max_steps: usize,
    /// Step budget of the terminal approach to a grounded target.
    pub navigate_max_steps: usize,
    /// Approach stops once this close to the grounded point, meters.
    pub arrival_radius: f64,
    /// Attraction score that makes the no-grounding variant commit to the map argmax.
    pub tg_trigger: f64,
    /// Take the most likely action instead of sampling.
    pub greedy: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 150,
            navigate_max_steps: 60,
            arrival_radius: 12.0,
            tg_trigger: 0.5,
            greedy: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Scene generator preset: open, trivial or standard.
    pub preset: String,
    pub scenes: usize,
    /// Seed of the first scene; scene `i` uses `seed + i`.
    pub seed: u64,
    pub variants: Vec<String>,
    /// Exploration weights swept for every variant; empty means the reward config's alpha.
    pub alphas: Vec<f64>,
    /// Worker threads for independent episodes.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            preset: "trivial".into(),
            scenes: 20,
            seed: 1000,
            variants: vec!["full".into(), "random-walk".into()],
            alphas: vec![],
            threads: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApexConfig {
    pub version: u32,
    pub seed: u64,
    pub sensor: SensorConfig,
    pub detector: DetectorConfig,
    pub motion: MotionConfig,
    pub maps: MapConfig,
    pub rewards: RewardConfig,
    pub heuristic: HeuristicConfig,
    pub features: FeatureConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub coverage: CoverageConfig,
    pub workers: WorkerConfig,
    pub episode: EpisodeConfig,
    pub bench: BenchConfig,
}

impl Default for ApexConfig {
    fn default() -> Self {
        ApexConfig {
            version: CONFIG_VERSION,
            seed: 0,
            sensor: SensorConfig::default(),
            detector: DetectorConfig::default(),
            motion: MotionConfig::default(),
            maps: MapConfig::default(),
            rewards: RewardConfig::default(),
            heuristic: HeuristicConfig::default(),
            features: FeatureConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainConfig::default(),
            coverage: CoverageConfig::default(),
            workers: WorkerConfig::default(),
            episode: EpisodeConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> ApexError {
    ApexError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ApexConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ApexConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(
                if path.is_empty() { "." } else { &path },
                e.into_inner().message().trim().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ApexError::io(path, e))?;
        ApexConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| config_err(".", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(
                "version",
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        self.rewards.validate()?;
        self.workers.validate()?;
        self.sensor
            .intrinsics()
            .map_err(|e| config_err("sensor", e.to_string()))?;
        if self.sensor.stride == 0 {
            return Err(config_err("sensor.stride", "must be >= 1"));
        }
        if !(self.sensor.max_range > 0.0) {
            return Err(config_err("sensor.max_range", "must be > 0"));
        }
        if !(self.maps.resolution > 0.0) {
            return Err(config_err("maps.resolution", "must be > 0"));
        }
        if !(self.maps.decay_rate >= 0.0) {
            return Err(config_err("maps.decay_rate", "must be >= 0"));
        }
        if !(self.motion.translation_step > 0.0) {
            return Err(config_err("motion.translation_step", "must be > 0"));
        }
        if self.features.pool == 0 || self.features.depth_pool == 0 {
            return Err(config_err("features.pool", "pool sizes must be >= 1"));
        }
        if !(self.detector.frac_ref > 0.0 && self.detector.range_ref > 0.0) {
            return Err(config_err("detector", "frac_ref and range_ref must be > 0"));
        }
        if !(0.0..1.0).contains(&self.ppo.clip) || self.ppo.epochs == 0 {
            return Err(config_err(
                "ppo",
                "clip must lie in [0, 1) and epochs must be >= 1",
            ));
        }
        for v in &self.bench.variants {
            crate::harness::Variant::parse(v).map_err(|e| match e {
                ApexError::Config { message, .. } => config_err("bench.variants", message),
                other => other,
            })?;
        }
        if !(self.train.finetune_alpha >= 0.0) {
            return Err(config_err("train.finetune_alpha", "must be >= 0"));
        }
        if let Some(a) = self.bench.alphas.iter().find(|a| !(**a >= 0.0)) {
            return Err(config_err(
                "bench.alphas",
                format!("alpha {a} must be >= 0"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ApexConfig::from_toml_str("").unwrap(),
            ApexConfig::default()
        );
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ApexConfig::default();
        assert_eq!(
            ApexConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = ApexConfig::from_toml_str("[rewards]\nalpah = 0.3\n").unwrap_err();
        match err {
            ApexError::Config { path, .. } => assert!(path.starts_with("rewards"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_types_report_their_path() {
        let err = ApexConfig::from_toml_str("[sensor]\nwidth = \"wide\"\n").unwrap_err();
        match err {
            ApexError::Config { path, .. } => assert_eq!(path, "sensor.width"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_checks_name_the_key() {
        let err = ApexConfig::from_toml_str("[rewards]\nd_thresh = -1.0\n").unwrap_err();
        assert!(matches!(err, ApexError::Config { ref path, .. } if path == "rewards.d_thresh"));
        let err = ApexConfig::from_toml_str("version = 9\n").unwrap_err();
        assert!(matches!(err, ApexError::Config { ref path, .. } if path == "version"));
        let err = ApexConfig::from_toml_str("[bench]\nvariants = [\"full\", \"w/o-magic\"]\n")
            .unwrap_err();
        assert!(matches!(err, ApexError::Config { ref path, .. } if path == "bench.variants"));
    }
}
