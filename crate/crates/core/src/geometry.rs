//! Frame conventions, pinhole projection and world-to-voxel discretization.
//!
//! World frame: right-handed, `+z` up. Yaw rotates about world `+z`, with yaw 0
//! facing world `+x`. Positive pitch tilts the camera up. Roll is always zero.
//!
//! Camera frame: `+x` right, `+y` down, `+z` forward (optical axis). Depth values
//! are z-depths in this frame, so a pixel `(u, v)` with depth `d` sits at
//! `((u - cx) d / fx, (v - cy) d / fy, d)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(TAU) - PI;
    if a >= PI {
        a -= TAU;
    }
    a
}

/// Agent/camera pose. Construct through [`Pose::new`] to keep the angle ranges valid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64) -> Self {
        Pose {
            position,
            yaw: normalize_angle(yaw),
            pitch: pitch.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        Vec3::new(cp * cy, cp * sy, sp)
    }

    /// Camera `+x` in world coordinates; always horizontal.
    pub fn right(&self) -> Vec3 {
        let (sy, cy) = self.yaw.sin_cos();
        Vec3::new(sy, -cy, 0.0)
    }

    /// Camera `+y` in world coordinates.
    pub fn down(&self) -> Vec3 {
        self.forward().cross(&self.right())
    }

    /// Horizontal unit heading (ignores pitch).
    pub fn heading(&self) -> Vec3 {
        let (sy, cy) = self.yaw.sin_cos();
        Vec3::new(cy, sy, 0.0)
    }

    /// Rotation taking camera-frame vectors to world-frame vectors.
    pub fn camera_to_world(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.right(), self.down(), self.forward()])
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
            && self.pitch.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn from_hfov(width: usize, height: usize, hfov: f64) -> Result<Self> {
        if !(hfov > 0.0 && hfov < PI) {
            return Err(ApexError::Input(format!(
                "horizontal fov {hfov} outside (0, pi)"
            )));
        }
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(ApexError::Input(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame direction through pixel `(u, v)`, scaled so its z component is 1.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Row-major depth image in meters; zero or non-finite entries are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ApexError::Dimension(format!(
                "depth buffer has {} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        self.data[v * self.width + u] = depth;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The depth at `(u, v)` if it is a usable measurement.
    pub fn valid(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.get(u, v);
        is_valid_depth(d).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| is_valid_depth(**d)).count()
    }

    pub fn check_matches(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(ApexError::Dimension(format!(
                "depth image is {}x{} but intrinsics describe {}x{}",
                self.width, self.height, k.width, k.height
            )));
        }
        Ok(())
    }
}

pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// One back-projected pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackProjected {
    pub point: Vec3,
    pub pixel: (usize, usize),
    pub depth: f64,
}

/// Lifts a single pixel with known depth into the world frame.
pub fn back_project_pixel(u: f64, v: f64, depth: f64, k: &CameraIntrinsics, pose: &Pose) -> Vec3 {
    pose.position + pose.camera_to_world() * (k.pixel_ray(u, v) * depth)
}

/// Back-projects every `stride`-th valid pixel (in both axes) into world points.
pub fn back_project(
    depth: &DepthImage,
    k: &CameraIntrinsics,
    pose: &Pose,
    stride: usize,
) -> Result<Vec<BackProjected>> {
    depth.check_matches(k)?;
    if stride == 0 {
        return Err(ApexError::Input("stride must be at least 1".into()));
    }
    if !pose.is_finite() {
        return Err(ApexError::Input("pose is not finite".into()));
    }
    let rot = pose.camera_to_world();
    let mut out = Vec::with_capacity(depth.width.div_ceil(stride) * depth.height.div_ceil(stride));
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let Some(d) = depth.valid(u, v) else { continue };
            let cam = k.pixel_ray(u as f64, v as f64) * d;
            out.push(BackProjected {
                point: pose.position + rot * cam,
                pixel: (u, v),
                depth: d,
            });
        }
    }
    Ok(out)
}

/// Continuous pixel coordinates and camera depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Nearest integer pixel.
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.round() as usize, self.v.round() as usize)
    }
}

/// Projects a world point into the image. Pixel `i` covers `[i - 0.5, i + 0.5)`,
/// so the accepted range is `[-0.5, width - 0.5)` horizontally (likewise vertically).
pub fn project(p: &Vec3, k: &CameraIntrinsics, pose: &Pose) -> Option<Projection> {
    let cam = pose.camera_to_world().transpose() * (p - pose.position);
    if !(cam.z > 1e-9) {
        return None;
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    let inside = u >= -0.5 && u < k.width as f64 - 0.5 && v >= -0.5 && v < k.height as f64 - 0.5;
    inside.then_some(Projection { u, v, depth: cam.z })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        VoxelIndex { x, y, z }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }
}

/// Regular voxel lattice. Voxel `(i, j, k)` covers the half-open box
/// `origin + [i, i+1) x [j, j+1) x [k, k+1)` scaled by `resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3]) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(ApexError::Input(format!(
                "grid resolution {resolution} must be positive"
            )));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(ApexError::Input(format!(
                "grid dims {dims:?} must be at least 1"
            )));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(ApexError::Input("grid origin is not finite".into()));
        }
        Ok(GridSpec {
            origin,
            resolution,
            dims,
        })
    }

    /// Smallest grid anchored at `bounds.min` that covers the box.
    pub fn covering(bounds: &Aabb, resolution: f64) -> Result<Self> {
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((ext[a] / resolution).ceil() as usize).max(1));
        Self::new(bounds.min, resolution, dims)
    }

    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear offset, x fastest.
    pub fn linear(&self, v: VoxelIndex) -> usize {
        v.x + self.dims[0] * (v.y + self.dims[1] * v.z)
    }

    pub fn unlinear(&self, i: usize) -> VoxelIndex {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        VoxelIndex { x, y, z }
    }

    pub fn contains_index(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.dims[0]
            && (y as usize) < self.dims[1]
            && (z as usize) < self.dims[2]
    }

    pub fn offset(&self, v: VoxelIndex, dx: i64, dy: i64, dz: i64) -> Option<VoxelIndex> {
        let (x, y, z) = (v.x as i64 + dx, v.y as i64 + dy, v.z as i64 + dz);
        self.contains_index(x, y, z)
            .then(|| VoxelIndex::new(x as usize, y as usize, z as usize))
    }

    pub fn voxel_center(&self, v: VoxelIndex) -> Vec3 {
        self.origin
            + Vec3::new(v.x as f64 + 0.5, v.y as f64 + 0.5, v.z as f64 + 0.5) * self.resolution
    }

    pub fn voxel_box(&self, v: VoxelIndex) -> Aabb {
        let min = self.origin + Vec3::new(v.x as f64, v.y as f64, v.z as f64) * self.resolution;
        Aabb::new(min, min + Vec3::repeat(self.resolution))
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.resolution;
        Aabb::new(self.origin, self.origin + ext)
    }

    /// Floor-discretizes `p`; `None` outside the grid.
    pub fn world_to_voxel(&self, p: &Vec3) -> Option<VoxelIndex> {
        world_to_voxel(p, self)
    }

    pub fn iter(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (0..self.num_cells()).map(|i| self.unlinear(i))
    }
}

pub fn world_to_voxel(p: &Vec3, g: &GridSpec) -> Option<VoxelIndex> {
    let rel = (p - g.origin) / g.resolution;
    let mut idx = [0i64; 3];
    for a in 0..3 {
        let f = rel[a].floor();
        if !f.is_finite() || f < 0.0 || f >= g.dims[a] as f64 {
            return None;
        }
        idx[a] = f as i64;
    }
    Some(VoxelIndex::new(
        idx[0] as usize,
        idx[1] as usize,
        idx[2] as usize,
    ))
}

/// Axis-aligned box, closed on all faces for intersection purposes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Aabb {
            min: a.inf(&b),
            max: a.sup(&b),
        }
    }

    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Aabb::new(center - half, center + half)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn half_diagonal(&self) -> f64 {
        self.extent().norm() * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn strictly_contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] < other.max[a] && other.min[a] < self.max[a])
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let clamped = p.sup(&self.min).inf(&self.max);
        (p - clamped).norm()
    }

    /// Slab test for the line `origin + t * dir`. Returns the parameter interval
    /// `[t_enter, t_exit]` where the line is inside the box, if any.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[a];
                let (mut ta, mut tb) = (
                    (self.min[a] - origin[a]) * inv,
                    (self.max[a] - origin[a]) * inv,
                );
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// First parameter in `[0, 1]` at which the segment `a -> b` touches the box
    /// from outside. A segment that starts inside yields `Some(0.0)`.
    pub fn segment_entry(&self, a: &Vec3, b: &Vec3) -> Option<f64> {
        let (t0, t1) = self.ray_interval(a, &(b - a))?;
        if t1 < 0.0 || t0 > 1.0 {
            return None;
        }
        Some(t0.max(0.0))
    }
}
