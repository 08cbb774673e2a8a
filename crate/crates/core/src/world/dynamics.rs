use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{ApexError, Result};
use crate::geometry::{Aabb, Pose, Vec3};

/// Discrete action space. The declaration order is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
    YawLeft,
    YawRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Forward,
        Action::Backward,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::YawLeft,
        Action::YawRight,
        Action::Stop,
    ];

    /// Every action except STOP.
    pub const MOTIONS: [Action; 8] = [
        Action::Forward,
        Action::Backward,
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::YawLeft,
        Action::YawRight,
    ];

    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn is_translation(self) -> bool {
        !matches!(self, Action::YawLeft | Action::YawRight | Action::Stop)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Meters per translation action.
    pub translation_step: f64,
    /// Degrees per yaw action.
    pub yaw_step_deg: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            translation_step: 5.0,
            yaw_step_deg: 30.0,
        }
    }
}

/// Pose reached by `a` if nothing is in the way. Body-frame translations use
/// the yaw heading only; UP/DOWN move along world z.
pub fn kinematic(pose: &Pose, a: Action, cfg: &MotionConfig) -> Pose {
    let s = cfg.translation_step;
    let h = pose.heading();
    let left = Vec3::new(-h.y, h.x, 0.0);
    let delta = match a {
        Action::Forward => h * s,
        Action::Backward => -h * s,
        Action::Left => left * s,
        Action::Right => -left * s,
        Action::Up => Vec3::new(0.0, 0.0, s),
        Action::Down => Vec3::new(0.0, 0.0, -s),
        Action::YawLeft => {
            return Pose::new(
                pose.position,
                pose.yaw + cfg.yaw_step_deg.to_radians(),
                pose.pitch,
            )
        }
        Action::YawRight => {
            return Pose::new(
                pose.position,
                pose.yaw - cfg.yaw_step_deg.to_radians(),
                pose.pitch,
            )
        }
        Action::Stop => Vec3::zeros(),
    };
    Pose {
        position: pose.position + delta,
        ..*pose
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose,
    pub collided: bool,
    pub out_of_bounds: bool,
    pub stopped: bool,
    pub path_length: f64,
}

impl AgentState {
    pub fn new(pose: Pose) -> Self {
        AgentState {
            pose,
            collided: false,
            out_of_bounds: false,
            stopped: false,
            path_length: 0.0,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.collided || self.out_of_bounds || self.stopped
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    None,
    Collision,
    OutOfBounds,
    Stopped,
}

/// Parameter in `[0, 1)` at which segment `a -> b` first enters the open
/// interior of `bx`. Sliding along a face or touching an edge is not entry.
pub fn penetration(bx: &Aabb, a: &Vec3, b: &Vec3) -> Option<f64> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..3 {
        if d[i] == 0.0 {
            if !(a[i] > bx.min[i] && a[i] < bx.max[i]) {
                return None;
            }
        } else {
            let ta = (bx.min[i] - a[i]) / d[i];
            let tb = (bx.max[i] - a[i]) / d[i];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 < t1).then_some(t0)
}

/// Parameter in `(0, 1]` at which segment `a -> b` leaves the closed box
/// `bounds`, or `None` if it stays inside. `a` must lie inside.
pub fn exit_parameter(bounds: &Aabb, a: &Vec3, b: &Vec3) -> Option<f64> {
    if bounds.contains(b) {
        return None;
    }
    let d = b - a;
    let mut t = 1.0f64;
    for i in 0..3 {
        if d[i] > 0.0 {
            t = t.min((bounds.max[i] - a[i]) / d[i]);
        } else if d[i] < 0.0 {
            t = t.min((bounds.min[i] - a[i]) / d[i]);
        }
    }
    Some(t.max(0.0))
}

/// Advances the agent by one action with swept collision and bounds checks.
/// On contact the agent freezes at the contact point and the state becomes terminal.
pub fn step(
    scene: &Scene,
    s: &AgentState,
    a: Action,
    cfg: &MotionConfig,
) -> Result<(AgentState, StepEvent)> {
    if s.is_terminal() {
        return Err(ApexError::Usage(
            "cannot step a terminal agent state".into(),
        ));
    }
    let mut next = *s;
    if a == Action::Stop {
        next.stopped = true;
        return Ok((next, StepEvent::Stopped));
    }
    let target = kinematic(&s.pose, a, cfg);
    if !a.is_translation() {
        next.pose = target;
        return Ok((next, StepEvent::None));
    }

    let from = s.pose.position;
    let to = target.position;
    let hit = scene
        .solids()
        .filter_map(|(_, b)| penetration(b, &from, &to))
        .min_by(f64::total_cmp);
    let exit = exit_parameter(&scene.bounds, &from, &to);

    let (t, event) = match (hit, exit) {
        (Some(h), Some(e)) if e < h => (e, StepEvent::OutOfBounds),
        (Some(h), _) => (h, StepEvent::Collision),
        (None, Some(e)) => (e, StepEvent::OutOfBounds),
        (None, None) => (1.0, StepEvent::None),
    };
    let end = if t >= 1.0 { to } else { from + (to - from) * t };
    next.pose.position = end;
    next.path_length += (end - from).norm();
    match event {
        StepEvent::Collision => next.collided = true,
        StepEvent::OutOfBounds => next.out_of_bounds = true,
        _ => {}
    }
    Ok((next, event))
}
