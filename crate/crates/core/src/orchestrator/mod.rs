//! Asynchronous agent runtime: a mapping worker (slow), an action worker
//! (fast) and a grounding worker (fast) sharing one map frame, followed by
//! the terminal approach to the grounded target.

pub mod control;
pub mod navigate;
pub mod runtime;
pub mod shared;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};

pub use control::{is_safe, AgentSpec, Controller, GroundingMode};
pub use navigate::{
    navigate_step, navigate_to_target, DistanceField, NavDecision, NavEnd, NavOutcome,
};
pub use runtime::run_episode;
pub use shared::{DetectionInfo, Observation, SharedMemory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    pub mapping_period_ms: u64,
    pub action_period_ms: u64,
    pub grounding_period_ms: u64,
    /// Extra delay between computing and publishing a map update.
    pub mapping_latency_ms: u64,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            mapping_period_ms: 100,
            action_period_ms: 20,
            grounding_period_ms: 20,
            mapping_latency_ms: 0,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: &str| ApexError::Config {
            path: format!("workers.{path}"),
            message: message.into(),
        };
        for (name, p) in [
            ("mapping_period_ms", self.mapping_period_ms),
            ("action_period_ms", self.action_period_ms),
            ("grounding_period_ms", self.grounding_period_ms),
        ] {
            if p == 0 {
                return Err(err(name, "must be > 0"));
            }
        }
        if self.mapping_period_ms < self.action_period_ms {
            return Err(err("mapping_period_ms", "must be >= action_period_ms"));
        }
        Ok(())
    }
}

/// How worker periods are realized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Simulated clock, single thread, bit-reproducible.
    #[default]
    Lockstep,
    /// One OS thread per worker on real time.
    WallClock,
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::config::ApexConfig;
    use crate::harness::record::{EventKind, Phase, Termination};
    use crate::policy::{FeatureConfig, PolicyParams};
    use crate::world::{generate_scene, Action, SceneParams};

    fn heuristic() -> AgentSpec {
        AgentSpec {
            controller: Controller::Heuristic {
                weights: (1.0, 0.2),
            },
            grounding: GroundingMode::Detector,
        }
    }

    #[test]
    fn worker_config_rules() {
        assert!(WorkerConfig::default().validate().is_ok());
        let bad = WorkerConfig {
            mapping_period_ms: 10,
            ..WorkerConfig::default()
        };
        assert!(
            matches!(bad.validate(), Err(ApexError::Config { ref path, .. }) if path == "workers.mapping_period_ms")
        );
        let zero = WorkerConfig {
            action_period_ms: 0,
            ..WorkerConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn lockstep_is_reproducible() {
        let cfg = ApexConfig::default();
        let scene = generate_scene(11, &SceneParams::trivial()).unwrap();
        let a = run_episode(&scene, &heuristic(), &cfg, ClockMode::Lockstep, 3).unwrap();
        let b = run_episode(&scene, &heuristic(), &cfg, ClockMode::Lockstep, 3).unwrap();
        assert_eq!(a, b);
        a.check_invariants().unwrap();
    }

    #[test]
    fn obstacle_version_advances_every_step() {
        let cfg = ApexConfig::default();
        let scene = generate_scene(12, &SceneParams::trivial()).unwrap();
        let rec = run_episode(&scene, &heuristic(), &cfg, ClockMode::Lockstep, 1).unwrap();
        assert!(rec.steps.len() > 2);
        for w in rec.steps.windows(2) {
            assert!(w[1].versions.obstacle > w[0].versions.obstacle);
            assert!(w[1].versions.attraction >= w[0].versions.attraction);
        }
        // Mapping runs every fifth action tick, so attraction versions repeat.
        assert!(rec
            .steps
            .windows(2)
            .any(|w| w[1].versions.attraction == w[0].versions.attraction));
    }

    #[test]
    fn detection_hands_over_to_navigation() {
        let cfg = ApexConfig::default();
        for seed in 20..30 {
            let scene = generate_scene(seed, &SceneParams::trivial()).unwrap();
            let rec = run_episode(&scene, &heuristic(), &cfg, ClockMode::Lockstep, seed).unwrap();
            let detections = rec
                .events
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Detected { .. }))
                .count();
            assert!(detections <= 1);
            if let Some(first) = rec.steps.iter().position(|s| s.phase == Phase::Navigate) {
                assert_eq!(detections, 1);
                assert!(rec.steps[first..]
                    .iter()
                    .all(|s| s.phase == Phase::Navigate));
            }
        }
    }

    #[test]
    fn untrained_policy_never_enters_known_obstacles() {
        let mut cfg = ApexConfig::default();
        cfg.features = FeatureConfig {
            proj_dim: 4,
            hidden: 8,
            ..FeatureConfig::default()
        };
        let k = cfg.sensor.intrinsics().unwrap();
        let params = Arc::new(PolicyParams::init(
            cfg.features.layout((k.width, k.height)),
            5,
        ));
        let agent = AgentSpec {
            controller: Controller::Learned {
                params,
                features: cfg.features.clone(),
                greedy: false,
            },
            grounding: GroundingMode::Detector,
        };
        let scene = generate_scene(4, &SceneParams::standard()).unwrap();
        let rec = run_episode(&scene, &agent, &cfg, ClockMode::Lockstep, 9).unwrap();
        assert!(rec.error.is_none());
        assert!(rec.steps.iter().all(|s| Action::ALL.contains(&s.action)));
    }

    #[test]
    fn wall_clock_episode_completes() {
        let mut cfg = ApexConfig::default();
        cfg.episode.max_steps = 10;
        cfg.workers.action_period_ms = 5;
        cfg.workers.grounding_period_ms = 5;
        cfg.workers.mapping_period_ms = 20;
        cfg.workers.mapping_latency_ms = 40;
        let scene = generate_scene(13, &SceneParams::trivial()).unwrap();
        let rec = run_episode(&scene, &heuristic(), &cfg, ClockMode::WallClock, 0).unwrap();
        assert_ne!(rec.termination, Termination::Errored, "{:?}", rec.error);
        assert!(rec.steps.iter().all(|s| s.latency > 0.0));
        rec.check_invariants().unwrap();
    }
}
