//! Action selection: the map-reading heuristic, the actor-critic network and
//! its PPO trainer, and offline attraction-map pregeneration.

pub mod checkpoint;
pub mod features;
pub mod heuristic;
pub mod network;
pub mod ppo;
pub mod pregen;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use features::{
    depth_inputs, extract_features, map_inputs, pose_features, FeatureConfig, FeatureSource,
    POSE_DIM,
};
pub use heuristic::{
    heuristic_decide, is_unsafe, score_actions, synthetic_visible, HeuristicConfig,
};
pub use network::{
    argmax, policy_forward, sample_action, ForwardPass, NetLayout, PolicyInput, PolicyParams,
};
pub use ppo::{
    compute_gae, ppo_update, surrogate_gradient, surrogate_loss, Adam, LossReport, PpoConfig,
    Transition,
};
pub use pregen::{
    coverage_path, pregenerate_attraction_map, pregenerate_for_scene, CoverageConfig,
};
pub use train::{
    build_tasks, evaluate, train, write_jsonl, Actor, EnvStep, EpisodeSummary, RolloutStats, Stage,
    TrainConfig, TrainEnv, TrainOutput, TrainRecord, TrainTask,
};
