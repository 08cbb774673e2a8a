//! One-step lookahead planner: score every motion by the dense rewards it
//! would earn from a synthetic view at the resulting pose.

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, GridSpec, Pose, Vec3};
use crate::maps::{MapFrame, ObstacleMap, VisibleVoxels};
use crate::raycast::{traverse, traverse_with, Ray};
use crate::rewards::{attraction_reward, exploration_reward, RewardConfig};
use crate::world::{kinematic, Action, AgentState, MotionConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Synthetic frustum resolution (rays per row and column).
    pub frustum_width: usize,
    pub frustum_height: usize,
    pub frustum_hfov_deg: f64,
    /// Ray length of the synthetic frustum, meters.
    pub frustum_depth: f64,
    /// Occupied voxels within this many cells (Chebyshev) of a landing
    /// position make it unsafe.
    pub clearance: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            frustum_width: 16,
            frustum_height: 12,
            frustum_hfov_deg: 90.0,
            frustum_depth: 50.0,
            clearance: 1,
        }
    }
}

/// Whether moving from `from` to `to` is unsafe on the given obstacle map:
/// leaves the grid, lands in or next to an occupied voxel, or the swept
/// segment crosses an occupied voxel.
pub fn is_unsafe(obst: &ObstacleMap, from: &Vec3, to: &Vec3, clearance: usize) -> bool {
    let g = obst.grid();
    let Some(land) = g.world_to_voxel(to) else {
        return true;
    };
    let c = clearance as i64;
    for dz in -c..=c {
        for dy in -c..=c {
            for dx in -c..=c {
                if let Some(n) = g.offset(land, dx, dy, dz) {
                    if obst.is_occupied(n) {
                        return true;
                    }
                }
            }
        }
    }
    if from == to {
        return false;
    }
    traverse(&Ray::new(*from, *to), g)
        .into_iter()
        .any(|v| obst.is_occupied(v))
}

/// Voxels seen from `pose` by a synthetic camera whose rays stop at the first
/// occupied voxel (which is included).
pub fn synthetic_visible(pose: &Pose, obst: &ObstacleMap, cfg: &HeuristicConfig) -> VisibleVoxels {
    let g: &GridSpec = obst.grid();
    let Ok(k) = CameraIntrinsics::from_hfov(
        cfg.frustum_width,
        cfg.frustum_height,
        cfg.frustum_hfov_deg.to_radians(),
    ) else {
        return VisibleVoxels::default();
    };
    let rot = pose.camera_to_world();
    let mut pairs = Vec::new();
    for v in 0..k.height {
        for u in 0..k.width {
            let dir = (rot * k.pixel_ray(u as f64, v as f64)).normalize();
            let end = pose.position + dir * cfg.frustum_depth;
            traverse_with(&Ray::new(pose.position, end), g, |cell| {
                pairs.push((cell, (g.voxel_center(cell) - pose.position).norm()));
                !obst.is_occupied(cell)
            });
        }
    }
    VisibleVoxels::from_pairs(g, pairs)
}

/// Predicted weighted dense reward of every action; `None` marks unsafe moves
/// and STOP.
pub fn score_actions(
    frame: &MapFrame,
    s: &AgentState,
    weights: (f64, f64),
    rcfg: &RewardConfig,
    hcfg: &HeuristicConfig,
    motion: &MotionConfig,
) -> [Option<f64>; Action::COUNT] {
    let mut out = [None; Action::COUNT];
    for a in Action::MOTIONS {
        let next = kinematic(&s.pose, a, motion);
        if is_unsafe(
            &frame.obstacle,
            &s.pose.position,
            &next.position,
            hcfg.clearance,
        ) {
            continue;
        }
        let vis = synthetic_visible(&next, &frame.obstacle, hcfg);
        let r_attr = attraction_reward(&frame.attraction, &vis, rcfg);
        let r_expl = exploration_reward(&frame.exploration, &vis, rcfg);
        out[a.index()] = Some(weights.0 * r_attr + weights.1 * r_expl);
    }
    out
}

/// Highest-scoring safe motion; ties go to the earlier action, and STOP is
/// returned only when every motion is unsafe.
pub fn heuristic_decide(
    frame: &MapFrame,
    s: &AgentState,
    weights: (f64, f64),
    rcfg: &RewardConfig,
    hcfg: &HeuristicConfig,
    motion: &MotionConfig,
) -> Action {
    let scores = score_actions(frame, s, weights, rcfg, hcfg, motion);
    let mut best: Option<(Action, f64)> = None;
    for a in Action::MOTIONS {
        if let Some(v) = scores[a.index()] {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((a, v));
            }
        }
    }
    best.map_or(Action::Stop, |(a, _)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelIndex;

    fn setup() -> (MapFrame, AgentState) {
        let grid = GridSpec::new(Vec3::new(-40.0, -40.0, 0.0), 4.0, [20, 20, 10]).unwrap();
        let frame = MapFrame::new(grid, 0.05, 5.0);
        let s = AgentState::new(Pose::new(Vec3::new(2.0, 2.0, 18.0), 0.0, 0.0));
        (frame, s)
    }

    #[test]
    fn blocked_forward_is_never_chosen() {
        let (mut frame, s) = setup();
        // Attraction straight ahead would otherwise make FORWARD the winner.
        for x in 12..20 {
            for y in 8..13 {
                frame
                    .attraction_mut()
                    .set(VoxelIndex::new(x, y, 4), 1.0, 1.0);
            }
        }
        let cfg = (
            RewardConfig::default(),
            HeuristicConfig::default(),
            MotionConfig::default(),
        );
        assert_eq!(
            heuristic_decide(&frame, &s, (1.0, 0.0), &cfg.0, &cfg.1, &cfg.2),
            Action::Forward
        );
        let ahead = frame
            .grid
            .world_to_voxel(&Vec3::new(7.0, 2.0, 18.0))
            .unwrap();
        frame.obstacle_mut().mark(ahead);
        let a = heuristic_decide(&frame, &s, (1.0, 0.0), &cfg.0, &cfg.1, &cfg.2);
        assert_ne!(a, Action::Forward);
        assert_ne!(a, Action::Stop);
    }

    #[test]
    fn equal_scores_pick_the_first_action() {
        let (frame, s) = setup();
        let cfg = (
            RewardConfig::default(),
            HeuristicConfig::default(),
            MotionConfig::default(),
        );
        // All-zero weights: every safe action scores 0.
        assert_eq!(
            heuristic_decide(&frame, &s, (0.0, 0.0), &cfg.0, &cfg.1, &cfg.2),
            Action::Forward
        );
    }

    #[test]
    fn fully_enclosed_agent_stops() {
        let (mut frame, s) = setup();
        let here = frame.grid.world_to_voxel(&s.pose.position).unwrap();
        frame.obstacle_mut().mark(here);
        let cfg = (
            RewardConfig::default(),
            HeuristicConfig::default(),
            MotionConfig::default(),
        );
        assert_eq!(
            heuristic_decide(&frame, &s, (1.0, 1.0), &cfg.0, &cfg.1, &cfg.2),
            Action::Stop
        );
    }
}
