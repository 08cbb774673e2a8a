//! Attraction, exploration and obstacle voxel maps sharing one [`GridSpec`].
//!
//! Update laws:
//!
//! * attraction: each voxel is claimed by the object contributing the most
//!   masked pixels (ties go to the earlier object); the claim overwrites the
//!   stored score only if its closest pixel depth beats the stored depth.
//! * exploration: every visible voxel gains `exp(-decay * distance)`.
//! * obstacle: any voxel holding a back-projected point becomes occupied, forever.

mod io;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::geometry::{
    back_project, CameraIntrinsics, DepthImage, GridSpec, Pose, Vec3, VoxelIndex,
};
use crate::raycast::{traverse_with, Ray};

pub use io::{read_map_file, write_map_file, MapChannel, MapFile, MapMetadata};

/// One object reported by the captioner/segmenter.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticDetection {
    pub caption: String,
    pub score: f64,
    /// Pixel coordinates `(u, v)`.
    pub mask: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemanticObservation {
    pub objects: Vec<SemanticDetection>,
}

impl SemanticObservation {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// A voxel seen in the current frame and the distance from the camera to its center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibleVoxel {
    pub index: VoxelIndex,
    pub distance: f64,
    /// Number of rays that crossed the voxel in this frame.
    pub rays: u32,
}

/// Set of visible voxels, sorted by linear index, each listed once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisibleVoxels {
    pub voxels: Vec<VisibleVoxel>,
}

impl VisibleVoxels {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VisibleVoxel> {
        self.voxels.iter()
    }

    /// Builds a set from `(voxel, distance)` pairs; duplicates keep the first distance.
    pub fn from_pairs(grid: &GridSpec, pairs: impl IntoIterator<Item = (VoxelIndex, f64)>) -> Self {
        let mut map: BTreeMap<usize, VisibleVoxel> = BTreeMap::new();
        for (index, distance) in pairs {
            map.entry(grid.linear(index))
                .and_modify(|v| v.rays += 1)
                .or_insert(VisibleVoxel {
                    index,
                    distance,
                    rays: 1,
                });
        }
        VisibleVoxels {
            voxels: map.into_values().collect(),
        }
    }
}

/// Union of voxels crossed by rays from the camera to each sampled depth point.
pub fn visible_voxels(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    pose: &Pose,
    grid: &GridSpec,
    stride: usize,
) -> Result<VisibleVoxels> {
    let points: Vec<Vec3> = back_project(depth, k, pose, stride)?
        .into_iter()
        .map(|bp| bp.point)
        .collect();
    Ok(visible_from_points(&pose.position, &points, grid))
}

/// Union of voxels crossed by the segments `origin -> p` for every point.
pub fn visible_from_points(origin: &Vec3, points: &[Vec3], grid: &GridSpec) -> VisibleVoxels {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for p in points {
        traverse_with(&Ray::new(*origin, *p), grid, |v| {
            *counts.entry(grid.linear(v)).or_insert(0) += 1;
            true
        });
    }
    let voxels = counts
        .into_iter()
        .map(|(i, rays)| {
            let index = grid.unlinear(i);
            VisibleVoxel {
                index,
                distance: (grid.voxel_center(index) - origin).norm(),
                rays,
            }
        })
        .collect();
    VisibleVoxels { voxels }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractionMap {
    grid: GridSpec,
    score: Vec<f64>,
    depth: Vec<f64>,
    version: u64,
}

impl AttractionMap {
    pub fn new(grid: GridSpec) -> Self {
        AttractionMap {
            grid,
            score: vec![0.0; grid.num_cells()],
            depth: vec![f64::INFINITY; grid.num_cells()],
            version: 0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn score(&self, v: VoxelIndex) -> f64 {
        self.score[self.grid.linear(v)]
    }

    pub fn depth(&self, v: VoxelIndex) -> f64 {
        self.depth[self.grid.linear(v)]
    }

    pub fn scores(&self) -> &[f64] {
        &self.score
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    /// Direct cell write; used by tests and map loading.
    pub fn set(&mut self, v: VoxelIndex, score: f64, depth: f64) {
        let i = self.grid.linear(v);
        self.score[i] = score;
        self.depth[i] = depth;
    }

    pub(crate) fn from_parts(
        grid: GridSpec,
        score: Vec<f64>,
        depth: Vec<f64>,
        version: u64,
    ) -> Self {
        AttractionMap {
            grid,
            score,
            depth,
            version,
        }
    }

    pub fn update(
        &mut self,
        sem: &SemanticObservation,
        depth: &DepthImage,
        k: &CameraIntrinsics,
        pose: &Pose,
    ) -> Result<()> {
        attr_update(self, sem, depth, k, pose)
    }

    /// Copies stored `(score, depth)` for the given cells from a precomputed map.
    pub fn copy_cells_from(
        &mut self,
        source: &AttractionMap,
        cells: impl IntoIterator<Item = VoxelIndex>,
    ) {
        debug_assert_eq!(self.grid, source.grid);
        for v in cells {
            let i = self.grid.linear(v);
            self.score[i] = source.score[i];
            self.depth[i] = source.depth[i];
        }
        self.version += 1;
    }

    /// Highest-scoring cell; ties resolve to the lowest linear index.
    pub fn argmax(&self) -> Option<(VoxelIndex, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.score.iter().enumerate() {
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, s)| (self.grid.unlinear(i), s))
    }
}

/// Majority-ownership / closest-observation-first attraction update.
pub fn attr_update(
    map: &mut AttractionMap,
    sem: &SemanticObservation,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<()> {
    depth.check_matches(k)?;
    for obj in &sem.objects {
        if let Some(&(u, v)) = obj
            .mask
            .iter()
            .find(|&&(u, v)| u >= k.width || v >= k.height)
        {
            return Err(ApexError::Input(format!(
                "mask pixel ({u}, {v}) of `{}` lies outside the {}x{} image",
                obj.caption, k.width, k.height
            )));
        }
        if !(0.0..=1.0).contains(&obj.score) {
            return Err(ApexError::Input(format!(
                "score {} of `{}` outside [0, 1]",
                obj.score, obj.caption
            )));
        }
    }

    let grid = map.grid;
    let rot = pose.camera_to_world();
    // voxel -> per-object (pixel count, min depth)
    let mut tallies: BTreeMap<usize, Vec<(u32, f64)>> = BTreeMap::new();
    let n_obj = sem.objects.len();
    for (i, obj) in sem.objects.iter().enumerate() {
        for &(u, v) in &obj.mask {
            let Some(d) = depth.valid(u, v) else { continue };
            let p = pose.position + rot * (k.pixel_ray(u as f64, v as f64) * d);
            let Some(cell) = grid.world_to_voxel(&p) else {
                continue;
            };
            let slot = tallies
                .entry(grid.linear(cell))
                .or_insert_with(|| vec![(0, f64::INFINITY); n_obj]);
            slot[i].0 += 1;
            slot[i].1 = slot[i].1.min(d);
        }
    }

    for (cell, slot) in tallies {
        let mut winner = 0;
        for i in 1..slot.len() {
            if slot[i].0 > slot[winner].0 {
                winner = i;
            }
        }
        let d_new = slot[winner].1;
        if d_new < map.depth[cell] {
            map.score[cell] = sem.objects[winner].score;
            map.depth[cell] = d_new;
        }
    }
    map.version += 1;
    Ok(())
}

/// How overlapping rays within one frame contribute exploration gain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Each visible voxel gains once per frame.
    #[default]
    PerFrame,
    /// Each crossing ray contributes its own gain.
    PerRay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationMap {
    grid: GridSpec,
    gain: Vec<f64>,
    decay_rate: f64,
    saturation: f64,
    mode: GainMode,
    version: u64,
}

impl ExplorationMap {
    pub fn new(grid: GridSpec, decay_rate: f64, saturation: f64) -> Self {
        ExplorationMap {
            grid,
            gain: vec![0.0; grid.num_cells()],
            decay_rate,
            saturation,
            mode: GainMode::PerFrame,
            version: 0,
        }
    }

    pub fn with_mode(mut self, mode: GainMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    pub fn value(&self, v: VoxelIndex) -> f64 {
        self.gain[self.grid.linear(v)]
    }

    pub fn values(&self) -> &[f64] {
        &self.gain
    }

    pub fn set(&mut self, v: VoxelIndex, value: f64) {
        let i = self.grid.linear(v);
        self.gain[i] = value;
    }

    pub(crate) fn from_parts(
        grid: GridSpec,
        gain: Vec<f64>,
        decay_rate: f64,
        saturation: f64,
        version: u64,
    ) -> Self {
        ExplorationMap {
            grid,
            gain,
            decay_rate,
            saturation,
            mode: GainMode::PerFrame,
            version,
        }
    }

    /// Total accumulated gain over the grid.
    pub fn mass(&self) -> f64 {
        self.gain.iter().sum()
    }

    pub fn update(&mut self, visible: &VisibleVoxels) {
        expl_update(self, visible)
    }
}

pub fn expl_update(map: &mut ExplorationMap, visible: &VisibleVoxels) {
    for vv in visible.iter() {
        let i = map.grid.linear(vv.index);
        let once = (-map.decay_rate * vv.distance).exp();
        map.gain[i] += match map.mode {
            GainMode::PerFrame => once,
            GainMode::PerRay => once * vv.rays as f64,
        };
    }
    map.version += 1;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    grid: GridSpec,
    occupied: Vec<bool>,
    version: u64,
}

impl ObstacleMap {
    pub fn new(grid: GridSpec) -> Self {
        ObstacleMap {
            grid,
            occupied: vec![false; grid.num_cells()],
            version: 0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_occupied(&self, v: VoxelIndex) -> bool {
        self.occupied[self.grid.linear(v)]
    }

    pub fn mark(&mut self, v: VoxelIndex) {
        let i = self.grid.linear(v);
        self.occupied[i] = true;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    pub(crate) fn from_parts(grid: GridSpec, occupied: Vec<bool>, version: u64) -> Self {
        ObstacleMap {
            grid,
            occupied,
            version,
        }
    }

    pub fn update(&mut self, points: &[Vec3]) {
        obst_update(self, points)
    }
}

pub fn obst_update(map: &mut ObstacleMap, points: &[Vec3]) {
    for p in points {
        if let Some(v) = map.grid.world_to_voxel(p) {
            map.mark(v);
        }
    }
    map.version += 1;
}

/// Version triple identifying which published update each map reflects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapVersions {
    pub attraction: u64,
    pub exploration: u64,
    pub obstacle: u64,
}

/// The shared memory: three co-registered maps plus detection state.
///
/// Maps sit behind `Arc`s so a frame is a cheap snapshot. Writers go through
/// `Arc::make_mut`, which clones whenever a reader still holds the old map, so
/// an update is always applied to a private copy before it is published.
#[derive(Clone, Debug)]
pub struct MapFrame {
    pub grid: GridSpec,
    pub attraction: Arc<AttractionMap>,
    pub exploration: Arc<ExplorationMap>,
    pub obstacle: Arc<ObstacleMap>,
    pub detected: bool,
    pub target: Option<Vec3>,
}

impl MapFrame {
    pub fn new(grid: GridSpec, decay_rate: f64, saturation: f64) -> Self {
        MapFrame {
            grid,
            attraction: Arc::new(AttractionMap::new(grid)),
            exploration: Arc::new(ExplorationMap::new(grid, decay_rate, saturation)),
            obstacle: Arc::new(ObstacleMap::new(grid)),
            detected: false,
            target: None,
        }
    }

    pub fn from_maps(
        attraction: AttractionMap,
        exploration: ExplorationMap,
        obstacle: ObstacleMap,
    ) -> Result<Self> {
        let grid = *attraction.grid();
        if exploration.grid() != &grid || obstacle.grid() != &grid {
            return Err(ApexError::Input("maps do not share one grid".into()));
        }
        Ok(MapFrame {
            grid,
            attraction: Arc::new(attraction),
            exploration: Arc::new(exploration),
            obstacle: Arc::new(obstacle),
            detected: false,
            target: None,
        })
    }

    pub fn versions(&self) -> MapVersions {
        MapVersions {
            attraction: self.attraction.version(),
            exploration: self.exploration.version(),
            obstacle: self.obstacle.version(),
        }
    }

    pub fn attraction_mut(&mut self) -> &mut AttractionMap {
        Arc::make_mut(&mut self.attraction)
    }

    pub fn exploration_mut(&mut self) -> &mut ExplorationMap {
        Arc::make_mut(&mut self.exploration)
    }

    pub fn obstacle_mut(&mut self) -> &mut ObstacleMap {
        Arc::make_mut(&mut self.obstacle)
    }
}
