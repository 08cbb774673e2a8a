use std::collections::BTreeSet;

use super::render::{render_view, SensorConfig, View};
use super::scene::Scene;
use crate::error::Result;
use crate::geometry::{back_project, CameraIntrinsics, GridSpec, Pose, Vec3, VoxelIndex};
use crate::maps::{visible_from_points, VisibleVoxels};

/// One rendered frame plus everything the map updates derive from it.
#[derive(Clone, Debug)]
pub struct Percept {
    pub view: View,
    /// Back-projected surface points at the sensor stride.
    pub points: Vec<Vec3>,
    pub visible: VisibleVoxels,
    /// Voxels containing a surface point, sorted by linear index.
    pub hits: Vec<VoxelIndex>,
}

impl Percept {
    pub fn pose(&self) -> &Pose {
        &self.view.pose
    }

    /// Visible voxels and hit voxels, each once.
    pub fn observed_cells(&self, grid: &GridSpec) -> Vec<VoxelIndex> {
        let mut set: BTreeSet<usize> = self.hits.iter().map(|v| grid.linear(*v)).collect();
        set.extend(self.visible.iter().map(|v| grid.linear(v.index)));
        set.into_iter().map(|i| grid.unlinear(i)).collect()
    }
}

pub fn perceive(
    scene: &Scene,
    pose: &Pose,
    sensor: &SensorConfig,
    k: &CameraIntrinsics,
    grid: &GridSpec,
) -> Result<Percept> {
    let view = render_view(scene, pose, k, sensor.max_range);
    let points: Vec<Vec3> = back_project(&view.depth, k, pose, sensor.stride)?
        .into_iter()
        .map(|bp| bp.point)
        .collect();
    let visible = visible_from_points(&pose.position, &points, grid);
    let hits: BTreeSet<usize> = points
        .iter()
        .filter_map(|p| grid.world_to_voxel(p))
        .map(|v| grid.linear(v))
        .collect();
    Ok(Percept {
        view,
        points,
        visible,
        hits: hits.into_iter().map(|i| grid.unlinear(i)).collect(),
    })
}
