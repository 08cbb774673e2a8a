use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ApexConfig;
use crate::maps::{MapFrame, ObstacleMap};
use crate::policy::{
    argmax, depth_inputs, heuristic_decide, is_unsafe, map_inputs, sample_action, FeatureConfig,
    FeatureSource, PolicyParams,
};
use crate::world::{kinematic, Action, AgentState, MotionConfig, Percept};

/// How the action worker picks search actions.
#[derive(Clone, Debug)]
pub enum Controller {
    /// Actor-critic policy reading either map crops or raw depth.
    Learned {
        params: Arc<PolicyParams>,
        features: FeatureConfig,
        greedy: bool,
    },
    /// One-step lookahead on the maps with reward weights `(attraction, exploration)`.
    Heuristic { weights: (f64, f64) },
    /// Uniform over the motions.
    RandomWalk,
}

/// Where the terminal approach gets its goal from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GroundingMode {
    /// The grounding worker's detector.
    Detector,
    /// No grounding worker; commit to the attraction-map argmax once its
    /// score reaches `trigger`.
    AttractionArgmax { trigger: f64 },
}

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub controller: Controller,
    pub grounding: GroundingMode,
}

/// Rotations and STOP are always safe; translations must pass the obstacle test.
pub fn is_safe(
    obst: &ObstacleMap,
    s: &AgentState,
    a: Action,
    motion: &MotionConfig,
    clearance: usize,
) -> bool {
    if !a.is_translation() {
        return true;
    }
    let to = kinematic(&s.pose, a, motion).position;
    !is_unsafe(obst, &s.pose.position, &to, clearance)
}

impl Controller {
    /// Chooses a search action from a map snapshot (whose obstacle map is the
    /// action worker's fresh one) and the latest percept. The result is
    /// always safe on that obstacle map.
    pub fn decide(
        &self,
        frame: &MapFrame,
        s: &AgentState,
        percept: &Percept,
        cfg: &ApexConfig,
        rng: &mut impl Rng,
    ) -> Action {
        let clearance = cfg.heuristic.clearance;
        let safe = |a: Action| is_safe(&frame.obstacle, s, a, &cfg.motion, clearance);
        match self {
            Controller::Learned {
                params,
                features,
                greedy,
            } => {
                let x = match features.source {
                    FeatureSource::Maps => map_inputs(frame, &s.pose, features),
                    FeatureSource::Depth => depth_inputs(
                        &percept.view.depth,
                        &s.pose,
                        &frame.grid,
                        cfg.sensor.max_range,
                        features,
                    ),
                };
                let probs = params.forward(&x).probs;
                let chosen = if *greedy {
                    argmax(&probs)
                } else {
                    sample_action(&probs, rng)
                };
                let a = Action::ALL[chosen];
                if safe(a) {
                    return a;
                }
                // Fall back to the most likely safe action.
                let mut order: Vec<usize> = (0..Action::COUNT).collect();
                order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
                order
                    .into_iter()
                    .map(|i| Action::ALL[i])
                    .find(|&a| safe(a))
                    .unwrap_or(Action::Stop)
            }
            Controller::Heuristic { weights } => heuristic_decide(
                frame,
                s,
                *weights,
                &cfg.rewards,
                &cfg.heuristic,
                &cfg.motion,
            ),
            Controller::RandomWalk => {
                let a = *Action::MOTIONS.choose(rng).expect("non-empty");
                if safe(a) {
                    return a;
                }
                let ok: Vec<Action> = Action::MOTIONS.into_iter().filter(|&a| safe(a)).collect();
                ok.choose(rng).copied().unwrap_or(Action::Stop)
            }
        }
    }
}
