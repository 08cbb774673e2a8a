//! Exact voxel traversal of line segments (incremental grid stepping), plus the
//! sampled-point traversal kept as a reference for testing.

use crate::geometry::{GridSpec, Vec3, VoxelIndex};

/// Segment from `origin` to `endpoint`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub endpoint: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, endpoint: Vec3) -> Self {
        Ray { origin, endpoint }
    }

    pub fn length(&self) -> f64 {
        (self.endpoint - self.origin).norm()
    }

    pub fn reversed(&self) -> Ray {
        Ray::new(self.endpoint, self.origin)
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + (self.endpoint - self.origin) * t
    }
}

/// Ordered in-bounds voxels crossed by the open segment, origin first.
///
/// Cells touched only along a face, edge or corner (zero crossing length) are
/// skipped; at an exact edge/corner crossing every tied axis steps at once.
pub fn traverse(r: &Ray, g: &GridSpec) -> Vec<VoxelIndex> {
    let mut out = Vec::new();
    traverse_with(r, g, |v| {
        out.push(v);
        true
    });
    out
}

/// Visitor form of [`traverse`]; stop early by returning `false`.
pub fn traverse_with(r: &Ray, g: &GridSpec, mut visit: impl FnMut(VoxelIndex) -> bool) {
    let inv = 1.0 / g.resolution;
    let o = (r.origin - g.origin) * inv;
    let e = (r.endpoint - g.origin) * inv;
    let d = e - o;
    let n = g.dims.map(|x| x as f64);

    if d == Vec3::zeros() {
        if let Some(v) = g.world_to_voxel(&r.origin) {
            visit(v);
        }
        return;
    }

    // Clip the parameter range [0, 1] to the grid box [0, n).
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if !(o[a] >= 0.0 && o[a] < n[a]) {
                return;
            }
        } else {
            let ta = -o[a] / d[a];
            let tb = (n[a] - o[a]) / d[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if !(t0 < t1) {
        return;
    }

    let p0 = o + d * t0;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    for a in 0..3 {
        let mut c = p0[a].floor();
        // Starting exactly on a plane while moving backwards: the open segment
        // lies in the lower cell.
        if d[a] < 0.0 && c == p0[a] {
            c -= 1.0;
        }
        cell[a] = (c as i64).clamp(0, g.dims[a] as i64 - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (cell[a] as f64 + 1.0 - o[a]) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 - o[a]) / d[a];
        }
    }

    loop {
        if !visit(VoxelIndex::new(
            cell[0] as usize,
            cell[1] as usize,
            cell[2] as usize,
        )) {
            return;
        }
        let t_next = t_max[0].min(t_max[1]).min(t_max[2]);
        if t_next >= t1 {
            return;
        }
        for a in 0..3 {
            if t_max[a] == t_next {
                cell[a] += step[a];
                if cell[a] < 0 || cell[a] >= g.dims[a] as i64 {
                    return;
                }
                let plane = if step[a] > 0 {
                    cell[a] as f64 + 1.0
                } else {
                    cell[a] as f64
                };
                t_max[a] = (plane - o[a]) / d[a];
            }
        }
    }
}

/// Voxels of points sampled every `interval` meters from the origin, plus the
/// endpoint; de-duplicated in first-hit order. Out-of-grid samples are dropped.
pub fn sample_traverse(r: &Ray, g: &GridSpec, interval: f64) -> Vec<VoxelIndex> {
    assert!(interval > 0.0, "sampling interval must be positive");
    let len = r.length();
    let mut ts: Vec<f64> = Vec::new();
    if len > 0.0 {
        let n = (len / interval).floor() as usize;
        ts.extend((0..=n).map(|k| (k as f64 * interval / len).min(1.0)));
    } else {
        ts.push(0.0);
    }
    if ts.last() != Some(&1.0) {
        ts.push(1.0);
    }

    let mut out: Vec<VoxelIndex> = Vec::new();
    for t in ts {
        if let Some(v) = g.world_to_voxel(&r.at(t)) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}
