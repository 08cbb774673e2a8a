//! Deterministic box world: scenes, rendering, perception oracles and dynamics.

pub mod dynamics;
pub mod generate;
pub mod pathing;
pub mod render;
pub mod scene;
pub mod sensing;

pub use dynamics::{kinematic, step, Action, AgentState, MotionConfig, StepEvent};
pub use generate::{generate_scene, SceneParams};
pub use pathing::{shortest_path_length, FreeSpace};
pub use render::{
    best_detection, detector_oracle, ground_target, render_depth, render_view, semantic_oracle,
    Detection, DetectorConfig, PixelRect, SensorConfig, View,
};
pub use scene::{Scene, SceneObject, Surface};
pub use sensing::{perceive, Percept};
