use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::geometry::{Aabb, Pose, Vec3};

/// A labeled object with its relevance to the goal description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub caption: String,
    #[serde(rename = "box")]
    pub bbox: Aabb,
    pub relevance: f64,
    pub is_target: bool,
}

/// Ground-truth world: solid obstacle boxes, labeled objects and a start pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub seed: u64,
    pub goal: String,
    pub bounds: Aabb,
    pub start: Pose,
    pub obstacles: Vec<Aabb>,
    pub objects: Vec<SceneObject>,
}

/// Which solid a ray hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Surface {
    Obstacle(usize),
    Object(usize),
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let targets: Vec<_> = self.objects.iter().filter(|o| o.is_target).collect();
        if targets.len() != 1 {
            return Err(ApexError::Input(format!(
                "scene `{}` has {} targets, expected exactly one",
                self.id,
                targets.len()
            )));
        }
        if targets[0].relevance != 1.0 {
            return Err(ApexError::Input(format!(
                "scene `{}`: target relevance must be 1.0",
                self.id
            )));
        }
        for o in &self.objects {
            if !(0.0..=1.0).contains(&o.relevance) {
                return Err(ApexError::Input(format!(
                    "object `{}` relevance outside [0, 1]",
                    o.caption
                )));
            }
            if !self.bounds.contains_box(&o.bbox) {
                return Err(ApexError::Input(format!(
                    "object `{}` leaves the scene bounds",
                    o.caption
                )));
            }
        }
        if let Some(b) = self.obstacles.iter().find(|b| !self.bounds.contains_box(b)) {
            return Err(ApexError::Input(format!(
                "obstacle {b:?} leaves the scene bounds"
            )));
        }
        if !self.bounds.contains(&self.start.position) {
            return Err(ApexError::Input(
                "start pose outside the scene bounds".into(),
            ));
        }
        Ok(())
    }

    pub fn target_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.is_target)
            .expect("validated scene has a target")
    }

    pub fn target(&self) -> &SceneObject {
        &self.objects[self.target_index()]
    }

    pub fn target_center(&self) -> Vec3 {
        self.target().bbox.center()
    }

    /// Every solid box with its label; obstacles first, then objects.
    pub fn solids(&self) -> impl Iterator<Item = (Surface, &Aabb)> {
        self.obstacles
            .iter()
            .enumerate()
            .map(|(i, b)| (Surface::Obstacle(i), b))
            .chain(
                self.objects
                    .iter()
                    .enumerate()
                    .map(|(i, o)| (Surface::Object(i), &o.bbox)),
            )
    }

    pub fn is_free(&self, p: &Vec3) -> bool {
        self.bounds.contains(p) && self.solids().all(|(_, b)| !b.strictly_contains(p))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ApexError::Input(format!("cannot encode scene: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text)
            .map_err(|e| ApexError::Input(format!("cannot parse scene: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| ApexError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ApexError::io(path, e))?;
        Scene::from_toml(&text).map_err(|e| ApexError::format(path, e.to_string()))
    }
}
