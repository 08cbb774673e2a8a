//! Voxel-map object-goal navigation for aerial agents.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`] and [`raycast`]: camera model, voxel lattice, exact traversal.
//! * [`maps`]: attraction / exploration / obstacle voxel maps and their update laws.
//! * [`world`]: a deterministic box world with perception oracles and dynamics.
//! * [`rewards`]: dense and sparse reward terms.
//! * [`policy`]: heuristic planner, actor-critic network, PPO trainer.
//! * [`orchestrator`]: the three-worker asynchronous agent runtime.
//! * [`harness`]: metrics, benchmark suites and configuration.

pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod maps;
pub mod orchestrator;
pub mod policy;
pub mod raycast;
pub mod rewards;
pub mod world;

pub use error::{ApexError, Result};
pub use geometry::{Aabb, CameraIntrinsics, DepthImage, GridSpec, Pose, Vec3, VoxelIndex};
pub use maps::{AttractionMap, ExplorationMap, MapFrame, ObstacleMap};
pub use world::{Action, AgentState, Scene};
