//! Depth rendering and the perception oracles that stand in for the
//! captioner, segmenter and open-vocabulary detector.

use serde::{Deserialize, Serialize};

use super::scene::{Scene, Surface};
use crate::error::{ApexError, Result};
use crate::geometry::{
    back_project_pixel, is_valid_depth, CameraIntrinsics, DepthImage, Pose, Vec3,
};
use crate::maps::{SemanticDetection, SemanticObservation};

/// Onboard depth camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Hits beyond this range are reported as invalid pixels.
    pub max_range: f64,
    /// Pixel subsampling used for back-projection and ray casting.
    pub stride: usize,
    /// Fixed gimbal pitch; negative looks down.
    pub pitch_deg: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            width: 64,
            height: 48,
            hfov_deg: 90.0,
            max_range: 120.0,
            stride: 4,
            pitch_deg: -20.0,
        }
    }
}

impl SensorConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_hfov(self.width, self.height, self.hfov_deg.to_radians())
    }

    pub fn pitch(&self) -> f64 {
        self.pitch_deg.to_radians()
    }
}

/// A rendered frame: depth plus the first-hit surface of every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub pose: Pose,
    pub depth: DepthImage,
    pub labels: Vec<Option<Surface>>,
}

impl View {
    pub fn label(&self, u: usize, v: usize) -> Option<Surface> {
        self.labels[v * self.depth.width() + u]
    }
}

/// Casts one ray per pixel against every box; depth is the camera z-depth of
/// the nearest hit, or 0 when nothing is hit within `max_range`.
pub fn render_view(scene: &Scene, pose: &Pose, k: &CameraIntrinsics, max_range: f64) -> View {
    let rot = pose.camera_to_world();
    let solids: Vec<_> = scene.solids().collect();
    let mut depth = DepthImage::new(k.width, k.height);
    let mut labels = vec![None; k.pixel_count()];
    for v in 0..k.height {
        for u in 0..k.width {
            // Direction with unit camera-z, so the ray parameter is the z-depth.
            let dir = rot * k.pixel_ray(u as f64, v as f64);
            let mut best = f64::INFINITY;
            let mut hit = None;
            for (surface, b) in &solids {
                if let Some((t0, _)) = b.ray_interval(&pose.position, &dir) {
                    if t0 > 0.0 && t0 < best {
                        best = t0;
                        hit = Some(*surface);
                    }
                }
            }
            if best <= max_range {
                depth.set(u, v, best);
                labels[v * k.width + u] = hit;
            }
        }
    }
    View {
        pose: *pose,
        depth,
        labels,
    }
}

pub fn render_depth(
    scene: &Scene,
    pose: &Pose,
    k: &CameraIntrinsics,
    max_range: f64,
) -> DepthImage {
    render_view(scene, pose, k, max_range).depth
}

/// Captions, relevance scores and exact visibility masks of every object
/// that is the first hit of at least one pixel.
pub fn semantic_oracle(scene: &Scene, view: &View) -> SemanticObservation {
    let w = view.depth.width();
    let mut masks: Vec<Vec<(usize, usize)>> = vec![Vec::new(); scene.objects.len()];
    for (i, label) in view.labels.iter().enumerate() {
        if let Some(Surface::Object(o)) = label {
            masks[*o].push((i % w, i / w));
        }
    }
    let objects = masks
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(i, mask)| SemanticDetection {
            caption: scene.objects[i].caption.clone(),
            score: scene.objects[i].relevance,
            mask,
        })
        .collect();
    SemanticObservation { objects }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl PixelRect {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.u_min + self.u_max) as f64 / 2.0,
            (self.v_min + self.v_max) as f64 / 2.0,
        )
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: PixelRect,
    pub confidence: f64,
}

/// Confidence model of the detector oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Visible image fraction at which the size term saturates.
    pub frac_ref: f64,
    /// Range scale of the exponential confidence decay, meters.
    pub range_ref: f64,
    /// Grounding fires when the best confidence exceeds this.
    pub conf_thresh: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            frac_ref: 0.004,
            range_ref: 50.0,
            conf_thresh: 0.35,
        }
    }
}

impl DetectorConfig {
    pub fn confidence(&self, visible_fraction: f64, range: f64) -> f64 {
        (visible_fraction / self.frac_ref).min(1.0) * (-range / self.range_ref).exp()
    }
}

/// Reports the target (and only the target) when any of its pixels is visible.
pub fn detector_oracle(scene: &Scene, view: &View, cfg: &DetectorConfig) -> Vec<Detection> {
    let target = scene.target_index();
    let w = view.depth.width();
    let mut rect: Option<PixelRect> = None;
    let mut count = 0usize;
    for (i, label) in view.labels.iter().enumerate() {
        if *label != Some(Surface::Object(target)) {
            continue;
        }
        let (u, v) = (i % w, i / w);
        count += 1;
        rect = Some(match rect {
            None => PixelRect {
                u_min: u,
                v_min: v,
                u_max: u,
                v_max: v,
            },
            Some(r) => PixelRect {
                u_min: r.u_min.min(u),
                v_min: r.v_min.min(v),
                u_max: r.u_max.max(u),
                v_max: r.v_max.max(v),
            },
        });
    }
    let Some(bbox) = rect else { return Vec::new() };
    let fraction = count as f64 / view.labels.len() as f64;
    let range = (scene.target_center() - view.pose.position).norm();
    vec![Detection {
        bbox,
        confidence: cfg.confidence(fraction, range),
    }]
}

/// Highest-confidence detection, if it clears the threshold.
pub fn best_detection(detections: &[Detection], conf_thresh: f64) -> Option<Detection> {
    detections
        .iter()
        .copied()
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
        .filter(|d| d.confidence > conf_thresh)
}

/// Back-projects the box-center pixel at the median valid depth inside the box.
pub fn ground_target(
    best: &Detection,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<Vec3> {
    depth.check_matches(k)?;
    let r = best.bbox;
    if r.u_max >= k.width || r.v_max >= k.height {
        return Err(ApexError::Input(format!(
            "detection box {r:?} outside the image"
        )));
    }
    let mut depths: Vec<f64> = Vec::new();
    for v in r.v_min..=r.v_max {
        for u in r.u_min..=r.u_max {
            let d = depth.get(u, v);
            if is_valid_depth(d) {
                depths.push(d);
            }
        }
    }
    if depths.is_empty() {
        return Err(ApexError::Grounding(
            "no valid depth inside the detection box".into(),
        ));
    }
    depths.sort_by(f64::total_cmp);
    let median = depths[(depths.len() - 1) / 2];
    let (u, v) = r.center();
    Ok(back_project_pixel(u, v, median, k, pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::world::scene::SceneObject;
    use approx::assert_abs_diff_eq;

    fn bare_scene() -> Scene {
        Scene {
            id: "t".into(),
            seed: 0,
            goal: "a tent".into(),
            bounds: Aabb::new(Vec3::new(-50.0, -50.0, -10.0), Vec3::new(50.0, 50.0, 50.0)),
            start: Pose::new(Vec3::zeros(), 0.0, 0.0),
            obstacles: vec![],
            objects: vec![SceneObject {
                id: 0,
                caption: "tent".into(),
                bbox: Aabb::new(Vec3::new(40.0, 40.0, 0.0), Vec3::new(41.0, 41.0, 1.0)),
                relevance: 1.0,
                is_target: true,
            }],
        }
    }

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::from_hfov(33, 25, 60f64.to_radians()).unwrap()
    }

    #[test]
    fn nothing_in_view_renders_invalid() {
        let mut scene = bare_scene();
        scene.objects[0].bbox = Aabb::new(Vec3::new(-41.0, -1.0, -1.0), Vec3::new(-40.0, 1.0, 1.0));
        let k = cam();
        let view = render_view(&scene, &Pose::new(Vec3::zeros(), 0.0, 0.0), &k, 100.0);
        assert_eq!(view.depth.valid_count(), 0);
        assert!(semantic_oracle(&scene, &view).is_empty());
        assert!(detector_oracle(&scene, &view, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn wall_at_five_meters_on_the_optical_axis() {
        let mut scene = bare_scene();
        scene.obstacles.push(Aabb::new(
            Vec3::new(5.0, -20.0, -20.0),
            Vec3::new(6.0, 20.0, 20.0),
        ));
        let k = cam();
        let depth = render_depth(&scene, &Pose::new(Vec3::zeros(), 0.0, 0.0), &k, 100.0);
        assert_abs_diff_eq!(depth.get(16, 12), 5.0, epsilon = 1e-9);
        // Planar wall: every pixel reports z-depth 5.
        assert!(depth.as_slice().iter().all(|d| (d - 5.0).abs() < 1e-9));
    }

    #[test]
    fn hits_beyond_max_range_are_invalid() {
        let mut scene = bare_scene();
        scene.obstacles.push(Aabb::new(
            Vec3::new(30.0, -20.0, -20.0),
            Vec3::new(31.0, 20.0, 20.0),
        ));
        let depth = render_depth(&scene, &Pose::new(Vec3::zeros(), 0.0, 0.0), &cam(), 20.0);
        assert_eq!(depth.valid_count(), 0);
    }

    #[test]
    fn occluded_target_is_not_reported() {
        let mut scene = bare_scene();
        scene.objects[0].bbox = Aabb::new(Vec3::new(20.0, -1.0, -1.0), Vec3::new(22.0, 1.0, 1.0));
        scene.obstacles.push(Aabb::new(
            Vec3::new(10.0, -5.0, -5.0),
            Vec3::new(11.0, 5.0, 5.0),
        ));
        let view = render_view(&scene, &Pose::new(Vec3::zeros(), 0.0, 0.0), &cam(), 100.0);
        assert!(semantic_oracle(&scene, &view).is_empty());
        assert!(detector_oracle(&scene, &view, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn confidence_saturates_when_large_and_close() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.confidence(cfg.frac_ref, 0.0), 1.0);
        assert_eq!(cfg.confidence(0.9, 0.0), 1.0);
        assert_abs_diff_eq!(
            cfg.confidence(cfg.frac_ref / 2.0, cfg.range_ref),
            0.5 * (-1.0f64).exp()
        );
    }

    #[test]
    fn grounding_face_on_the_optical_axis() {
        let mut scene = bare_scene();
        scene.objects[0].bbox = Aabb::new(Vec3::new(10.0, -1.0, -1.0), Vec3::new(12.0, 1.0, 1.0));
        let k = cam();
        let pose = Pose::new(Vec3::zeros(), 0.0, 0.0);
        let view = render_view(&scene, &pose, &k, 100.0);
        let dets = detector_oracle(&scene, &view, &DetectorConfig::default());
        assert_eq!(dets.len(), 1);
        let p = ground_target(&dets[0], &view.depth, &k, &pose).unwrap();
        assert!((p - Vec3::new(10.0, 0.0, 0.0)).norm() < 0.5);
    }

    #[test]
    fn grounding_over_invalid_depth_fails() {
        let k = cam();
        let depth = DepthImage::new(k.width, k.height);
        let det = Detection {
            bbox: PixelRect {
                u_min: 2,
                v_min: 2,
                u_max: 5,
                v_max: 5,
            },
            confidence: 0.9,
        };
        let err = ground_target(&det, &depth, &k, &Pose::new(Vec3::zeros(), 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, ApexError::Grounding(_)));
    }

    #[test]
    fn best_detection_respects_the_threshold() {
        let r = PixelRect {
            u_min: 0,
            v_min: 0,
            u_max: 1,
            v_max: 1,
        };
        let dets = [
            Detection {
                bbox: r,
                confidence: 0.3,
            },
            Detection {
                bbox: r,
                confidence: 0.6,
            },
        ];
        assert_eq!(best_detection(&dets, 0.5).unwrap().confidence, 0.6);
        assert!(best_detection(&dets, 0.6).is_none());
    }
}
