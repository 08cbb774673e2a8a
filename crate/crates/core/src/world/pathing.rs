//! Shortest obstacle-free paths over the voxel lattice, used as the optimal
//! path length for SPL and as a feasibility check for generated scenes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::scene::Scene;
use crate::error::Result;
use crate::geometry::{GridSpec, Vec3, VoxelIndex};

/// Free-space occupancy of a scene at a given resolution.
#[derive(Clone, Debug)]
pub struct FreeSpace {
    pub grid: GridSpec,
    free: Vec<bool>,
}

impl FreeSpace {
    /// A voxel is free when its cell does not overlap the interior of any solid.
    pub fn of(scene: &Scene, resolution: f64) -> Result<Self> {
        let grid = GridSpec::covering(&scene.bounds, resolution)?;
        let solids: Vec<_> = scene.solids().map(|(_, b)| *b).collect();
        let free = grid
            .iter()
            .map(|v| {
                let cell = grid.voxel_box(v);
                solids.iter().all(|b| !b.intersects(&cell))
            })
            .collect();
        Ok(FreeSpace { grid, free })
    }

    pub fn is_free(&self, v: VoxelIndex) -> bool {
        self.free[self.grid.linear(v)]
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Length of the shortest 26-connected path from `start` to any free voxel
    /// whose center lies within `radius` of `goal`, plus the offset from
    /// `start` to its voxel center. `None` when unreachable.
    pub fn shortest_path(&self, start: &Vec3, goal: &Vec3, radius: f64) -> Option<f64> {
        let g = &self.grid;
        let s = g.world_to_voxel(start)?;
        let offset = (g.voxel_center(s) - start).norm();
        if (start - goal).norm() <= radius {
            return Some(0.0);
        }
        let is_goal = |v: VoxelIndex| (g.voxel_center(v) - goal).norm() <= radius;

        let mut dist = vec![f64::INFINITY; g.num_cells()];
        let mut heap = BinaryHeap::new();
        dist[g.linear(s)] = 0.0;
        heap.push(Entry {
            cost: 0.0,
            cell: g.linear(s),
        });
        let steps = neighbor_steps(g.resolution);
        while let Some(Entry { cost, cell }) = heap.pop() {
            if cost > dist[cell] {
                continue;
            }
            let v = g.unlinear(cell);
            if is_goal(v) && self.free[cell] {
                return Some(offset + cost);
            }
            for &(dx, dy, dz, w) in &steps {
                let Some(n) = g.offset(v, dx, dy, dz) else {
                    continue;
                };
                let j = g.linear(n);
                if !self.free[j] {
                    continue;
                }
                let c = cost + w;
                if c < dist[j] {
                    dist[j] = c;
                    heap.push(Entry { cost: c, cell: j });
                }
            }
        }
        None
    }
}

pub(crate) fn neighbor_steps(res: f64) -> Vec<(i64, i64, i64, f64)> {
    let mut out = Vec::with_capacity(26);
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out.push((
                        dx,
                        dy,
                        dz,
                        res * ((dx * dx + dy * dy + dz * dz) as f64).sqrt(),
                    ));
                }
            }
        }
    }
    out
}

/// Min-heap entry keyed by cost.
#[derive(PartialEq)]
pub(crate) struct Entry {
    pub(crate) cost: f64,
    pub(crate) cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Convenience wrapper: shortest path from the scene start to the target.
pub fn shortest_path_length(
    scene: &Scene,
    resolution: f64,
    success_distance: f64,
) -> Result<Option<f64>> {
    let fs = FreeSpace::of(scene, resolution)?;
    Ok(fs.shortest_path(
        &scene.start.position,
        &scene.target_center(),
        success_distance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Pose};
    use crate::world::scene::SceneObject;
    use approx::assert_abs_diff_eq;

    fn corridor(gap: bool) -> Scene {
        let mut obstacles = vec![Aabb::new(
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(12.0, 40.0, 8.0),
        )];
        if !gap {
            obstacles[0].min.y = -10.0;
        }
        Scene {
            id: "c".into(),
            seed: 0,
            goal: "box".into(),
            bounds: Aabb::new(Vec3::new(-10.0, -10.0, 0.0), Vec3::new(30.0, 40.0, 8.0)),
            start: Pose::new(Vec3::new(1.0, 21.0, 3.0), 0.0, 0.0),
            obstacles,
            objects: vec![SceneObject {
                id: 0,
                caption: "box".into(),
                bbox: Aabb::new(Vec3::new(26.0, 20.0, 0.0), Vec3::new(28.0, 22.0, 2.0)),
                relevance: 1.0,
                is_target: true,
            }],
        }
    }

    #[test]
    fn straight_line_in_open_space() {
        let mut sc = corridor(true);
        sc.obstacles.clear();
        // Start at a voxel center; goal radius covers only the target's cells.
        sc.start.position = Vec3::new(1.0, 21.0, 3.0);
        let fs = FreeSpace::of(&sc, 2.0).unwrap();
        let len = fs
            .shortest_path(&sc.start.position, &Vec3::new(25.0, 21.0, 3.0), 0.5)
            .unwrap();
        assert_abs_diff_eq!(len, 24.0, epsilon = 1e-9);
    }

    #[test]
    fn wall_with_side_gap_forces_a_detour() {
        let sc = corridor(true);
        let fs = FreeSpace::of(&sc, 2.0).unwrap();
        let len = fs
            .shortest_path(&sc.start.position, &sc.target_center(), 3.0)
            .unwrap();
        assert!(len > 40.0, "detour expected, got {len}");
        assert!(shortest_path_length(&corridor(false), 2.0, 3.0)
            .unwrap()
            .is_none());
    }
}
