//! Egocentric map crops and raw-depth inputs for the policy network.

use serde::{Deserialize, Serialize};

use super::network::{NetLayout, PolicyInput, PolicyParams};
use crate::geometry::{is_valid_depth, DepthImage, GridSpec, Pose, Vec3};
use crate::maps::MapFrame;
use crate::world::{Action, AgentState};

/// What the extractors look at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Attraction, exploration and obstacle crops, one extractor each.
    #[default]
    Maps,
    /// Block-pooled depth image only, one extractor.
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub source: FeatureSource,
    /// Horizontal crop half-width in voxels; the crop is `2r + 1` cells wide.
    pub crop_radius: usize,
    /// Vertical half-height in voxels; `2r + 1` layers become channels.
    pub z_radius: usize,
    /// Horizontal mean-pool block size in cells.
    pub pool: usize,
    /// Depth-image pool block size in pixels.
    pub depth_pool: usize,
    pub proj_dim: usize,
    pub hidden: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            source: FeatureSource::Maps,
            crop_radius: 10,
            z_radius: 3,
            pool: 3,
            depth_pool: 8,
            proj_dim: 16,
            hidden: 64,
        }
    }
}

pub const POSE_DIM: usize = 5;

impl FeatureConfig {
    pub fn crop_side(&self) -> usize {
        2 * self.crop_radius + 1
    }

    pub fn layers(&self) -> usize {
        2 * self.z_radius + 1
    }

    pub fn blocks(&self) -> usize {
        self.crop_side().div_ceil(self.pool.max(1))
    }

    pub fn map_group_len(&self) -> usize {
        self.blocks() * self.blocks() * self.layers()
    }

    pub fn depth_group_len(&self, width: usize, height: usize) -> usize {
        let p = self.depth_pool.max(1);
        width.div_ceil(p) * height.div_ceil(p)
    }

    pub fn layout(&self, image: (usize, usize)) -> NetLayout {
        let inputs = match self.source {
            FeatureSource::Maps => vec![self.map_group_len(); 3],
            FeatureSource::Depth => vec![self.depth_group_len(image.0, image.1)],
        };
        NetLayout {
            inputs,
            proj_dim: self.proj_dim,
            pose_dim: POSE_DIM,
            hidden: self.hidden,
            actions: Action::COUNT,
        }
    }
}

/// Position scaled to `[-1, 1]` over the grid, then sin and cos of yaw.
pub fn pose_features(pose: &Pose, grid: &GridSpec) -> Vec<f64> {
    let ext = grid.bounds().extent();
    let rel = pose.position - grid.origin;
    vec![
        2.0 * rel.x / ext.x - 1.0,
        2.0 * rel.y / ext.y - 1.0,
        2.0 * rel.z / ext.z - 1.0,
        pose.yaw.sin(),
        pose.yaw.cos(),
    ]
}

/// Yaw-aligned crops centered on the agent: x forward, y left, z up.
/// Cells outside the grid read as zero.
pub fn map_inputs(frame: &MapFrame, pose: &Pose, cfg: &FeatureConfig) -> PolicyInput {
    let g = &frame.grid;
    let res = g.resolution;
    let r = cfg.crop_radius as f64;
    let zr = cfg.z_radius as f64;
    let side = cfg.crop_side();
    let pool = cfg.pool.max(1);
    let blocks = cfg.blocks();
    let layers = cfg.layers();
    let h = pose.heading();
    let left = Vec3::new(-h.y, h.x, 0.0);
    let sat = frame.exploration.saturation();

    let mut attr = vec![0.0; cfg.map_group_len()];
    let mut expl = vec![0.0; cfg.map_group_len()];
    let mut obst = vec![0.0; cfg.map_group_len()];
    let mut counts = vec![0u32; blocks * blocks];

    for i in 0..side {
        for j in 0..side {
            let b = (i / pool) * blocks + j / pool;
            counts[b] += 1;
            let planar = pose.position + h * ((i as f64 - r) * res) + left * ((j as f64 - r) * res);
            for k in 0..layers {
                let p = planar + Vec3::new(0.0, 0.0, (k as f64 - zr) * res);
                let Some(v) = g.world_to_voxel(&p) else {
                    continue;
                };
                let slot = b * layers + k;
                attr[slot] += frame.attraction.score(v);
                expl[slot] += frame.exploration.value(v) / sat;
                if frame.obstacle.is_occupied(v) {
                    obst[slot] += 1.0;
                }
            }
        }
    }
    for (b, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        for k in 0..layers {
            attr[b * layers + k] *= inv;
            expl[b * layers + k] *= inv;
            obst[b * layers + k] *= inv;
        }
    }
    PolicyInput {
        groups: vec![attr, expl, obst],
        pose: pose_features(pose, g),
    }
}

/// Depth pooled over square blocks, scaled by `max_range`; invalid pixels read as 1.
pub fn depth_inputs(
    depth: &DepthImage,
    pose: &Pose,
    grid: &GridSpec,
    max_range: f64,
    cfg: &FeatureConfig,
) -> PolicyInput {
    let p = cfg.depth_pool.max(1);
    let (w, h) = (depth.width(), depth.height());
    let bw = w.div_ceil(p);
    let mut sum = vec![0.0; cfg.depth_group_len(w, h)];
    let mut cnt = vec![0u32; sum.len()];
    for v in 0..h {
        for u in 0..w {
            let d = depth.get(u, v);
            let x = if is_valid_depth(d) {
                (d / max_range).min(1.0)
            } else {
                1.0
            };
            let b = (v / p) * bw + u / p;
            sum[b] += x;
            cnt[b] += 1;
        }
    }
    for (s, c) in sum.iter_mut().zip(&cnt) {
        *s /= *c as f64;
    }
    PolicyInput {
        groups: vec![sum],
        pose: pose_features(pose, grid),
    }
}

/// Projected feature vector for the map-based policy.
pub fn extract_features(
    frame: &MapFrame,
    s: &AgentState,
    params: &PolicyParams,
    cfg: &FeatureConfig,
) -> Vec<f64> {
    params.project(&map_inputs(frame, &s.pose, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> FeatureConfig {
        FeatureConfig {
            crop_radius: 3,
            z_radius: 1,
            pool: 2,
            proj_dim: 4,
            hidden: 6,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn all_zero_maps_reduce_to_the_bias_pathway() {
        let cfg = small();
        let grid = GridSpec::new(Vec3::zeros(), 2.0, [10, 10, 5]).unwrap();
        let frame = MapFrame::new(grid, 0.05, 5.0);
        let s = AgentState::new(Pose::new(Vec3::new(9.0, 9.0, 5.0), 0.3, 0.0));
        let params = PolicyParams::init(cfg.layout((64, 48)), 3);
        let f = extract_features(&frame, &s, &params, &cfg);
        let tensors = params.tensors();
        for k in 0..3 {
            let (_, off, len) = tensors[2 * k + 1];
            let bias = &params.data[off..off + len];
            for (a, b) in f[k * 4..(k + 1) * 4].iter().zip(bias) {
                assert_eq!(*a, b.tanh());
            }
        }
    }

    #[test]
    fn output_shape_follows_the_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let cfg = FeatureConfig {
                crop_radius: rng.gen_range(1..6),
                z_radius: rng.gen_range(0..3),
                pool: rng.gen_range(1..4),
                proj_dim: rng.gen_range(1..8),
                hidden: rng.gen_range(1..8),
                ..FeatureConfig::default()
            };
            let grid = GridSpec::new(Vec3::zeros(), 1.0, [8, 8, 4]).unwrap();
            let frame = MapFrame::new(grid, 0.05, 5.0);
            let s = AgentState::new(Pose::new(Vec3::new(4.0, 4.0, 2.0), 0.0, 0.0));
            let params = PolicyParams::init(cfg.layout((64, 48)), 0);
            let f = extract_features(&frame, &s, &params, &cfg);
            assert_eq!(f.len(), 3 * cfg.proj_dim + POSE_DIM);
            assert!(f.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn agent_outside_the_grid_reads_zero_padding() {
        let cfg = small();
        let grid = GridSpec::new(Vec3::zeros(), 1.0, [4, 4, 4]).unwrap();
        let mut frame = MapFrame::new(grid, 0.05, 5.0);
        for v in grid.iter() {
            frame.obstacle_mut().mark(v);
        }
        let far = map_inputs(
            &frame,
            &Pose::new(Vec3::new(100.0, 100.0, 2.0), 0.0, 0.0),
            &cfg,
        );
        assert!(far.groups[2].iter().all(|&x| x == 0.0));
        let near = map_inputs(&frame, &Pose::new(Vec3::new(2.5, 2.5, 2.5), 0.0, 0.0), &cfg);
        assert!(near.groups[2].iter().any(|&x| x > 0.0));
    }
}
