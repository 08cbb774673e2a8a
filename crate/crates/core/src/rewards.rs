//! Dense attraction/exploration rewards and sparse terminal rewards.

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::maps::{AttractionMap, ExplorationMap, VisibleVoxels};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the exploration term relative to attraction.
    pub alpha: f64,
    /// Linear distance-decay horizon of both dense terms, meters.
    pub d_thresh: f64,
    /// Exploration saturation level; also the exploration map's ε.
    pub saturation: f64,
    pub r_success: f64,
    pub r_penalty: f64,
    /// Episode success radius around the target center, meters.
    pub success_distance: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.2,
            d_thresh: 50.0,
            saturation: 5.0,
            r_success: 10.0,
            r_penalty: -10.0,
            success_distance: 20.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(ApexError::Config {
                path: format!("rewards.{key}"),
                message: message.into(),
            })
        };
        if !(self.alpha >= 0.0) {
            return bad("alpha", "must be >= 0");
        }
        if !(self.d_thresh > 0.0) {
            return bad("d_thresh", "must be > 0");
        }
        if !(self.saturation > 0.0) {
            return bad("saturation", "must be > 0");
        }
        if !(self.r_success > 0.0) {
            return bad("r_success", "must be > 0");
        }
        if !(self.r_penalty < 0.0) {
            return bad("r_penalty", "must be < 0");
        }
        if !(self.success_distance > 0.0) {
            return bad("success_distance", "must be > 0");
        }
        Ok(())
    }

    /// Linear decay weight `1 - d / d_thresh`, zero at and beyond the horizon.
    pub fn weight(&self, d: f64) -> f64 {
        if d < self.d_thresh {
            1.0 - d / self.d_thresh
        } else {
            0.0
        }
    }
}

/// Terminal outcome of a step as seen by the reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardEvent {
    None,
    Success,
    Collision,
    OutOfBounds,
}

pub fn attraction_reward(attr: &AttractionMap, visible: &VisibleVoxels, cfg: &RewardConfig) -> f64 {
    visible
        .iter()
        .filter(|v| v.distance < cfg.d_thresh)
        .map(|v| attr.score(v.index) * cfg.weight(v.distance))
        .sum()
}

/// Evaluate on the map as it was before this step's exploration update.
/// Over-saturated voxels contribute negatively.
pub fn exploration_reward(
    expl: &ExplorationMap,
    visible: &VisibleVoxels,
    cfg: &RewardConfig,
) -> f64 {
    visible
        .iter()
        .filter(|v| v.distance < cfg.d_thresh)
        .map(|v| (cfg.saturation - expl.value(v.index)) * cfg.weight(v.distance))
        .sum()
}

pub fn sparse_reward(event: RewardEvent, cfg: &RewardConfig) -> f64 {
    match event {
        RewardEvent::None => 0.0,
        RewardEvent::Success => cfg.r_success,
        RewardEvent::Collision | RewardEvent::OutOfBounds => cfg.r_penalty,
    }
}

pub fn total_reward(r_attr: f64, r_expl: f64, event: RewardEvent, cfg: &RewardConfig) -> f64 {
    r_attr + cfg.alpha * r_expl + sparse_reward(event, cfg)
}

/// Which reward terms are active; the two training stages differ only here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardMask {
    pub attraction: bool,
    pub exploration: bool,
    pub success: bool,
    pub penalty: bool,
}

impl RewardMask {
    pub const ALL: RewardMask = RewardMask {
        attraction: true,
        exploration: true,
        success: true,
        penalty: true,
    };

    /// Goal-agnostic stage: exploration and penalties only.
    pub const PRETRAIN: RewardMask = RewardMask {
        attraction: false,
        exploration: true,
        success: false,
        penalty: true,
    };

    pub fn total(&self, r_attr: f64, r_expl: f64, event: RewardEvent, cfg: &RewardConfig) -> f64 {
        let event = match event {
            RewardEvent::Success if !self.success => RewardEvent::None,
            RewardEvent::Collision | RewardEvent::OutOfBounds if !self.penalty => RewardEvent::None,
            e => e,
        };
        total_reward(
            if self.attraction { r_attr } else { 0.0 },
            if self.exploration { r_expl } else { 0.0 },
            event,
            cfg,
        )
    }
}
