use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::maps::{AttractionMap, ExplorationMap, MapFrame, ObstacleMap};
use crate::world::Percept;

/// A rendered frame published by the action worker.
#[derive(Debug)]
pub struct Observation {
    /// Strictly increasing per episode, starting at 1.
    pub seq: u64,
    /// Episode time of the render, seconds.
    pub t: f64,
    pub percept: Percept,
}

/// Result of the one grounding event an episode may have.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionInfo {
    pub point: Vec3,
    pub confidence: f64,
    pub t: f64,
    /// Observation the detection was made on.
    pub seq: u64,
}

/// State shared by the three workers.
///
/// Each field class has a single writer: the mapping worker publishes the
/// attraction and exploration maps together, the action worker publishes the
/// obstacle map and the observation slot, the grounding worker sets the
/// detection. Publication swaps `Arc`s under a short write lock, so a
/// snapshot sees every map either entirely before or entirely after an update.
#[derive(Debug)]
pub struct SharedMemory {
    frame: RwLock<MapFrame>,
    detection: RwLock<Option<DetectionInfo>>,
    observation: RwLock<Option<Arc<Observation>>>,
}

impl SharedMemory {
    pub fn new(frame: MapFrame) -> Self {
        SharedMemory {
            frame: RwLock::new(frame),
            detection: RwLock::new(None),
            observation: RwLock::new(None),
        }
    }

    /// Consistent view of the current maps and detection state.
    pub fn snapshot(&self) -> MapFrame {
        self.frame.read().clone()
    }

    pub fn publish_semantic(
        &self,
        attraction: Arc<AttractionMap>,
        exploration: Arc<ExplorationMap>,
    ) {
        let mut f = self.frame.write();
        f.attraction = attraction;
        f.exploration = exploration;
    }

    pub fn publish_obstacle(&self, obstacle: Arc<ObstacleMap>) {
        self.frame.write().obstacle = obstacle;
    }

    /// Records the detection unless one already happened; returns whether it did.
    pub fn set_detection(&self, info: DetectionInfo) -> bool {
        let mut d = self.detection.write();
        if d.is_some() {
            return false;
        }
        *d = Some(info);
        let mut f = self.frame.write();
        f.detected = true;
        f.target = Some(info.point);
        true
    }

    pub fn detection(&self) -> Option<DetectionInfo> {
        *self.detection.read()
    }

    pub fn is_detected(&self) -> bool {
        self.detection.read().is_some()
    }

    pub fn put_observation(&self, obs: Arc<Observation>) {
        *self.observation.write() = Some(obs);
    }

    pub fn latest_observation(&self) -> Option<Arc<Observation>> {
        self.observation.read().clone()
    }
}
