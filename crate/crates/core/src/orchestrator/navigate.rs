//! Terminal approach to a grounded target point.
//!
//! The agent descends a distance field computed on its own obstacle map:
//! geodesic distance to the target through cells clear of known obstacles,
//! with unknown space treated as free. In open space this is the Euclidean
//! distance; behind a wall it routes around it.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::config::ApexConfig;
use crate::error::Result;
use crate::geometry::{GridSpec, Pose, Vec3};
use crate::maps::{MapFrame, ObstacleMap};
use crate::policy::is_unsafe;
use crate::world::pathing::{neighbor_steps, Entry};
use crate::world::{kinematic, perceive, step, Action, AgentState, MotionConfig, Scene, StepEvent};

/// Geodesic distance to a target over the cells of an obstacle map.
#[derive(Clone, Debug)]
pub struct DistanceField {
    grid: GridSpec,
    dist: Vec<f64>,
}

/// Occupied cells dilated by `clearance` (Chebyshev).
fn blocked_cells(obst: &ObstacleMap, clearance: usize) -> Vec<bool> {
    let g = obst.grid();
    let mut blocked = vec![false; g.num_cells()];
    let c = clearance as i64;
    for (i, &occ) in obst.cells().iter().enumerate() {
        if !occ {
            continue;
        }
        let v = g.unlinear(i);
        for dz in -c..=c {
            for dy in -c..=c {
                for dx in -c..=c {
                    if let Some(n) = g.offset(v, dx, dy, dz) {
                        blocked[g.linear(n)] = true;
                    }
                }
            }
        }
    }
    blocked
}

impl DistanceField {
    /// Seeds every clear cell whose center lies within `radius` of `target`
    /// with its straight-line distance, then relaxes over 26-neighbors.
    pub fn compute(obst: &ObstacleMap, target: &Vec3, clearance: usize, radius: f64) -> Self {
        let g = *obst.grid();
        let blocked = blocked_cells(obst, clearance);
        let mut dist = vec![f64::INFINITY; g.num_cells()];
        let mut heap = BinaryHeap::new();
        for (i, d) in dist.iter_mut().enumerate() {
            if blocked[i] {
                continue;
            }
            let e = (g.voxel_center(g.unlinear(i)) - target).norm();
            if e <= radius {
                *d = e;
                heap.push(Entry { cost: e, cell: i });
            }
        }
        let steps = neighbor_steps(g.resolution);
        while let Some(Entry { cost, cell }) = heap.pop() {
            if cost > dist[cell] {
                continue;
            }
            let v = g.unlinear(cell);
            for &(dx, dy, dz, w) in &steps {
                let Some(n) = g.offset(v, dx, dy, dz) else {
                    continue;
                };
                let j = g.linear(n);
                if blocked[j] {
                    continue;
                }
                let c = cost + w;
                if c < dist[j] {
                    dist[j] = c;
                    heap.push(Entry { cost: c, cell: j });
                }
            }
        }
        DistanceField { grid: g, dist }
    }

    /// Field value of the cell containing `p`; infinite outside the grid,
    /// in blocked cells and where the target is unreachable.
    pub fn at(&self, p: &Vec3) -> f64 {
        self.grid
            .world_to_voxel(p)
            .map_or(f64::INFINITY, |v| self.dist[self.grid.linear(v)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavDecision {
    /// Within the arrival radius; no step taken.
    Arrived,
    Move(Action),
    /// No safe translation makes progress.
    Trapped,
}

/// One greedy step toward `target`.
///
/// Candidates are a forward step along every heading reachable by yaw
/// actions, plus UP and DOWN. The safe candidate with the lowest (field
/// value, straight-line distance) wins if that strictly improves on the
/// current position. A heading other than the current one is reached by
/// yawing first, so the camera sees the space the agent is about to enter.
pub fn navigate_step(
    obst: &ObstacleMap,
    pose: &Pose,
    target: &Vec3,
    arrival_radius: f64,
    clearance: usize,
    motion: &MotionConfig,
) -> NavDecision {
    let euclid = |p: &Vec3| (p - target).norm();
    if euclid(&pose.position) <= arrival_radius {
        return NavDecision::Arrived;
    }
    let field = DistanceField::compute(
        obst,
        target,
        clearance,
        arrival_radius + obst.grid().resolution,
    );
    let key = |p: &Vec3| (field.at(p), euclid(p));
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);

    // Headings ordered by turn count so ties favor the shortest turn.
    let turns = (360.0 / motion.yaw_step_deg).round().max(1.0) as i64;
    let mut offsets = vec![0i64];
    for k in 1..=turns / 2 {
        offsets.push(k);
        if turns - k != k {
            offsets.push(-k);
        }
    }
    let step_rad = motion.yaw_step_deg.to_radians();
    // (action taken now, pose the step starts from, translation evaluated)
    let mut candidates = vec![
        (Action::Forward, *pose, Action::Forward),
        (Action::Up, *pose, Action::Up),
        (Action::Down, *pose, Action::Down),
    ];
    for &k in &offsets[1..] {
        let turn = if k > 0 {
            Action::YawLeft
        } else {
            Action::YawRight
        };
        let heading = Pose::new(pose.position, pose.yaw + k as f64 * step_rad, pose.pitch);
        candidates.push((turn, heading, Action::Forward));
    }

    let here = key(&pose.position);
    let mut best: Option<(Action, (f64, f64))> = None;
    for (now, from, a) in candidates {
        let to = kinematic(&from, a, motion).position;
        if is_unsafe(obst, &pose.position, &to, clearance) {
            continue;
        }
        let k = key(&to);
        if better(k, here) && best.map_or(true, |(_, b)| better(k, b)) {
            best = Some((now, k));
        }
    }
    best.map_or(NavDecision::Trapped, |(a, _)| NavDecision::Move(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavEnd {
    Arrived,
    Trapped,
    Budget,
    Collision,
    OutOfBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavOutcome {
    pub state: AgentState,
    pub end: NavEnd,
    /// Pose after every step taken.
    pub trajectory: Vec<Pose>,
}

/// Runs the approach to completion in `scene`: render, update the obstacle
/// map, take one greedy step, repeat.
pub fn navigate_to_target(
    scene: &Scene,
    target: &Vec3,
    frame: &mut MapFrame,
    s: AgentState,
    cfg: &ApexConfig,
    max_steps: usize,
) -> Result<NavOutcome> {
    let k = cfg.sensor.intrinsics()?;
    let grid = frame.grid;
    let mut state = s;
    let mut trajectory = Vec::new();
    loop {
        let p = perceive(scene, &state.pose, &cfg.sensor, &k, &grid)?;
        frame.obstacle_mut().update(&p.points);
        let decision = navigate_step(
            &frame.obstacle,
            &state.pose,
            target,
            cfg.episode.arrival_radius,
            cfg.heuristic.clearance,
            &cfg.motion,
        );
        let a = match decision {
            NavDecision::Arrived => {
                return Ok(NavOutcome {
                    state,
                    end: NavEnd::Arrived,
                    trajectory,
                })
            }
            NavDecision::Trapped => {
                return Ok(NavOutcome {
                    state,
                    end: NavEnd::Trapped,
                    trajectory,
                })
            }
            NavDecision::Move(a) => a,
        };
        if trajectory.len() >= max_steps {
            return Ok(NavOutcome {
                state,
                end: NavEnd::Budget,
                trajectory,
            });
        }
        let (next, ev) = step(scene, &state, a, &cfg.motion)?;
        state = next;
        trajectory.push(state.pose);
        match ev {
            StepEvent::Collision => {
                return Ok(NavOutcome {
                    state,
                    end: NavEnd::Collision,
                    trajectory,
                })
            }
            StepEvent::OutOfBounds => {
                return Ok(NavOutcome {
                    state,
                    end: NavEnd::OutOfBounds,
                    trajectory,
                })
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::world::SceneObject;

    fn scene(wall: Option<Aabb>) -> Scene {
        Scene {
            id: "nav".into(),
            seed: 0,
            goal: "crate".into(),
            bounds: Aabb::new(Vec3::new(-20.0, -60.0, -4.0), Vec3::new(100.0, 60.0, 36.0)),
            start: Pose::new(Vec3::new(0.0, 0.0, 14.0), 0.0, 0.0),
            obstacles: vec![Aabb::new(
                Vec3::new(-20.0, -60.0, -4.0),
                Vec3::new(100.0, 60.0, 0.0),
            )]
            .into_iter()
            .chain(wall)
            .collect(),
            objects: vec![SceneObject {
                id: 0,
                caption: "crate".into(),
                bbox: Aabb::new(Vec3::new(80.0, -3.0, 0.0), Vec3::new(86.0, 3.0, 5.0)),
                relevance: 1.0,
                is_target: true,
            }],
        }
    }

    fn frame_for(sc: &Scene, cfg: &ApexConfig) -> MapFrame {
        let grid = GridSpec::covering(&sc.bounds, cfg.maps.resolution).unwrap();
        MapFrame::new(grid, cfg.maps.decay_rate, cfg.rewards.saturation)
    }

    #[test]
    fn open_line_decreases_distance_every_step() {
        let cfg = ApexConfig::default();
        let sc = scene(None);
        let target = Vec3::new(79.0, 0.0, 3.0);
        let mut frame = frame_for(&sc, &cfg);
        let out = navigate_to_target(
            &sc,
            &target,
            &mut frame,
            AgentState::new(sc.start),
            &cfg,
            100,
        )
        .unwrap();
        assert_eq!(out.end, NavEnd::Arrived);
        let mut last = sc.start.position;
        for p in &out.trajectory {
            if p.position != last {
                let (d0, d1) = ((last - target).norm(), (p.position - target).norm());
                assert!(d1 < d0, "distance rose from {d0} to {d1}");
                last = p.position;
            }
        }
    }

    #[test]
    fn already_close_takes_no_steps() {
        let cfg = ApexConfig::default();
        let sc = scene(None);
        let target = sc.start.position + Vec3::new(3.0, 0.0, 0.0);
        let mut frame = frame_for(&sc, &cfg);
        let out = navigate_to_target(
            &sc,
            &target,
            &mut frame,
            AgentState::new(sc.start),
            &cfg,
            100,
        )
        .unwrap();
        assert_eq!(out.end, NavEnd::Arrived);
        assert!(out.trajectory.is_empty());
    }

    #[test]
    fn known_wall_is_circumvented() {
        let cfg = ApexConfig::default();
        // Wall across the direct line, open only for y > 20, taller than the ceiling.
        let wall = Aabb::new(Vec3::new(40.0, -60.0, 0.0), Vec3::new(44.0, 20.0, 36.0));
        let sc = scene(Some(wall));
        let target = Vec3::new(79.0, 0.0, 3.0);
        let mut frame = frame_for(&sc, &cfg);
        // Pre-load the whole wall into the obstacle map.
        let grid = frame.grid;
        for v in grid.iter() {
            if grid.voxel_box(v).intersects(&wall) {
                frame.obstacle_mut().mark(v);
            }
        }
        let out = navigate_to_target(
            &sc,
            &target,
            &mut frame,
            AgentState::new(sc.start),
            &cfg,
            200,
        )
        .unwrap();
        assert_eq!(out.end, NavEnd::Arrived, "{:?}", out.state);
        assert!(out.trajectory.iter().any(|p| p.position.y > 20.0));
        assert!(!out.state.collided);
    }
}
