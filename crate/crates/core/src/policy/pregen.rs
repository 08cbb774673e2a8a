//! Offline attraction maps built by flying a coverage pattern through a scene.
//! Training looks cells up here instead of calling the semantic oracle online.

use serde::{Deserialize, Serialize};

use crate::config::ApexConfig;
use crate::error::{ApexError, Result};
use crate::geometry::{CameraIntrinsics, GridSpec, Pose, Vec3};
use crate::maps::{attr_update, AttractionMap};
use crate::world::{render_view, semantic_oracle, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub altitudes: Vec<f64>,
    /// Lawnmower lane and waypoint spacing, meters.
    pub spacing: f64,
    /// Evenly spaced headings rendered at every waypoint.
    pub headings: usize,
    /// Distance kept from the scene boundary, meters.
    pub margin: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            altitudes: vec![12.0],
            spacing: 20.0,
            headings: 12,
            margin: 5.0,
        }
    }
}

/// Boustrophedon waypoints over the scene footprint, each rendered at every
/// heading. Waypoints inside solids are skipped.
pub fn coverage_path(scene: &Scene, cfg: &CoverageConfig, pitch: f64) -> Vec<Pose> {
    let b = scene.bounds;
    let (x0, x1) = (b.min.x + cfg.margin, b.max.x - cfg.margin);
    let (y0, y1) = (b.min.y + cfg.margin, b.max.y - cfg.margin);
    let nx = ((x1 - x0) / cfg.spacing).floor().max(0.0) as usize + 1;
    let ny = ((y1 - y0) / cfg.spacing).floor().max(0.0) as usize + 1;
    let mut out = Vec::new();
    for &z in &cfg.altitudes {
        for j in 0..ny {
            let y = y0 + j as f64 * cfg.spacing;
            for i in 0..nx {
                let i = if j % 2 == 0 { i } else { nx - 1 - i };
                let p = Vec3::new(x0 + i as f64 * cfg.spacing, y, z);
                if !scene.is_free(&p) {
                    continue;
                }
                for h in 0..cfg.headings.max(1) {
                    let yaw = std::f64::consts::TAU * h as f64 / cfg.headings.max(1) as f64;
                    out.push(Pose::new(p, yaw, pitch));
                }
            }
        }
    }
    out
}

/// Runs the semantic oracle and the attraction update at every pose of `path`.
pub fn pregenerate_attraction_map(
    scene: &Scene,
    path: &[Pose],
    k: &CameraIntrinsics,
    grid: &GridSpec,
    max_range: f64,
) -> Result<AttractionMap> {
    if path.is_empty() {
        return Err(ApexError::Input("coverage path is empty".into()));
    }
    let mut map = AttractionMap::new(*grid);
    for pose in path {
        let view = render_view(scene, pose, k, max_range);
        let sem = semantic_oracle(scene, &view);
        attr_update(&mut map, &sem, &view.depth, k, pose)?;
    }
    Ok(map)
}

/// Coverage flight and pregeneration with the sensor and map settings of `cfg`.
pub fn pregenerate_for_scene(scene: &Scene, cfg: &ApexConfig) -> Result<AttractionMap> {
    let k = cfg.sensor.intrinsics()?;
    let grid = GridSpec::covering(&scene.bounds, cfg.maps.resolution)?;
    let path = coverage_path(scene, &cfg.coverage, cfg.sensor.pitch());
    pregenerate_attraction_map(scene, &path, &k, &grid, cfg.sensor.max_range)
}
