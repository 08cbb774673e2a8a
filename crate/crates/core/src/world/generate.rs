use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pathing::FreeSpace;
use super::scene::{Scene, SceneObject};
use crate::error::{ApexError, Result};
use crate::geometry::{Aabb, Pose, Vec3};

/// Knobs of the procedural box-world generator. Ranges are `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub half_extent: f64,
    pub ceiling: f64,
    /// Thickness of the ground slab below z = 0.
    pub ground_depth: f64,
    pub obstacles: usize,
    pub obstacle_footprint: [f64; 2],
    pub obstacle_height: [f64; 2],
    pub target_footprint: [f64; 2],
    pub target_height: [f64; 2],
    /// Related objects placed around the target.
    pub context_objects: usize,
    pub context_radius: [f64; 2],
    pub context_relevance: [f64; 2],
    /// Unrelated objects scattered anywhere.
    pub distractors: usize,
    pub distractor_relevance: [f64; 2],
    pub object_footprint: [f64; 2],
    pub object_height: [f64; 2],
    pub start_distance: [f64; 2],
    pub start_altitude: [f64; 2],
    /// Free space kept around the start position.
    pub start_clearance: f64,
    pub feasibility_resolution: f64,
    pub success_distance: f64,
    pub max_retries: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams::standard()
    }
}

impl SceneParams {
    /// No obstacles and few objects; used for goal-agnostic pretraining.
    pub fn open() -> Self {
        SceneParams {
            obstacles: 0,
            context_objects: 2,
            distractors: 4,
            ..SceneParams::standard()
        }
    }

    /// Target close to the start with a ring of related objects around it.
    pub fn trivial() -> Self {
        SceneParams {
            obstacles: 4,
            context_objects: 4,
            distractors: 4,
            start_distance: [40.0, 65.0],
            ..SceneParams::standard()
        }
    }

    pub fn standard() -> Self {
        SceneParams {
            half_extent: 80.0,
            ceiling: 45.0,
            ground_depth: 3.0,
            obstacles: 10,
            obstacle_footprint: [6.0, 16.0],
            obstacle_height: [8.0, 30.0],
            target_footprint: [4.0, 8.0],
            target_height: [3.0, 6.0],
            context_objects: 3,
            context_radius: [12.0, 30.0],
            context_relevance: [0.5, 0.9],
            distractors: 6,
            distractor_relevance: [0.0, 0.3],
            object_footprint: [3.0, 7.0],
            object_height: [2.0, 5.0],
            start_distance: [60.0, 110.0],
            start_altitude: [8.0, 14.0],
            start_clearance: 6.0,
            feasibility_resolution: 4.0,
            success_distance: 20.0,
            max_retries: 200,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "open" => Ok(SceneParams::open()),
            "trivial" => Ok(SceneParams::trivial()),
            "standard" => Ok(SceneParams::standard()),
            other => Err(ApexError::Config {
                path: "scene.preset".into(),
                message: format!("unknown preset `{other}` (expected open, trivial or standard)"),
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            ("obstacle_footprint", self.obstacle_footprint),
            ("obstacle_height", self.obstacle_height),
            ("target_footprint", self.target_footprint),
            ("target_height", self.target_height),
            ("context_radius", self.context_radius),
            ("context_relevance", self.context_relevance),
            ("distractor_relevance", self.distractor_relevance),
            ("object_footprint", self.object_footprint),
            ("object_height", self.object_height),
            ("start_distance", self.start_distance),
            ("start_altitude", self.start_altitude),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return Err(ApexError::Config {
                    path: format!("scene.{name}"),
                    message: format!("invalid range [{lo}, {hi}]"),
                });
            }
        }
        for (name, [lo, hi]) in [
            ("context_relevance", self.context_relevance),
            ("distractor_relevance", self.distractor_relevance),
        ] {
            if hi > 1.0 || lo < 0.0 {
                return Err(ApexError::Config {
                    path: format!("scene.{name}"),
                    message: "relevance must lie in [0, 1]".into(),
                });
            }
        }
        if self.half_extent <= 0.0
            || self.ceiling <= self.start_altitude[1]
            || self.ground_depth <= 0.0
        {
            return Err(ApexError::Config {
                path: "scene".into(),
                message: "bounds too small for the start altitude".into(),
            });
        }
        Ok(())
    }
}

const TARGETS: &[&str] = &[
    "red tent",
    "white pickup truck",
    "blue shipping container",
    "yellow school bus",
    "wooden cabin",
    "orange traffic barrier",
    "green tractor",
    "satellite dish",
];
const CONTEXT: &[&str] = &[
    "campfire",
    "picnic table",
    "parked bicycle",
    "gravel path",
    "fence segment",
    "stack of crates",
    "water tank",
    "mailbox",
];
const DISTRACTORS: &[&str] = &[
    "boulder",
    "oak tree",
    "hay bale",
    "park bench",
    "lamp post",
    "dirt mound",
    "shrub",
    "log pile",
];

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates a scene from `seed`; identical seeds and params give identical scenes.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_retries.max(1) {
        if let Some(scene) = attempt(seed, params, &mut rng)? {
            return Ok(scene);
        }
    }
    Err(ApexError::Generation(format!(
        "no feasible layout for seed {seed} after {} attempts",
        params.max_retries.max(1)
    )))
}

fn attempt(seed: u64, p: &SceneParams, rng: &mut ChaCha8Rng) -> Result<Option<Scene>> {
    let h = p.half_extent;
    let bounds = Aabb::new(
        Vec3::new(-h, -h, -p.ground_depth),
        Vec3::new(h, h, p.ceiling),
    );
    let ground = Aabb::new(Vec3::new(-h, -h, -p.ground_depth), Vec3::new(h, h, 0.0));
    let margin = 2.0;

    // Footprint (x-y) rectangles already taken, inflated for spacing.
    let mut taken: Vec<Aabb> = Vec::new();
    let fits = |b: &Aabb, taken: &[Aabb]| taken.iter().all(|t| !flat(t).intersects(&flat(b)));
    let place = |rng: &mut ChaCha8Rng, center_xy: (f64, f64), fp: [f64; 2], ht: [f64; 2]| {
        let sx = uniform(rng, fp) / 2.0;
        let sy = uniform(rng, fp) / 2.0;
        let hz = uniform(rng, ht);
        Aabb::new(
            Vec3::new(center_xy.0 - sx, center_xy.1 - sy, 0.0),
            Vec3::new(center_xy.0 + sx, center_xy.1 + sy, hz),
        )
    };

    let inner = h - 10.0;
    let tc = (rng.gen_range(-inner..inner), rng.gen_range(-inner..inner));
    let target_box = place(rng, tc, p.target_footprint, p.target_height);
    taken.push(target_box.inflate(margin));
    let target_caption = *TARGETS.choose(rng).expect("non-empty");

    let mut objects = vec![SceneObject {
        id: 0,
        caption: target_caption.to_string(),
        bbox: target_box,
        relevance: 1.0,
        is_target: true,
    }];

    let push_object = |rng: &mut ChaCha8Rng,
                       taken: &mut Vec<Aabb>,
                       objects: &mut Vec<SceneObject>,
                       center: (f64, f64),
                       caption: &str,
                       relevance: f64| {
        let b = place(rng, center, p.object_footprint, p.object_height);
        if bounds.contains_box(&b) && fits(&b, taken) {
            taken.push(b.inflate(margin));
            objects.push(SceneObject {
                id: objects.len() as u32,
                caption: caption.to_string(),
                bbox: b,
                relevance,
                is_target: false,
            });
        }
    };

    for _ in 0..p.context_objects {
        let r = uniform(rng, p.context_radius);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let c = (tc.0 + r * phi.cos(), tc.1 + r * phi.sin());
        let caption = *CONTEXT.choose(rng).expect("non-empty");
        let rel = uniform(rng, p.context_relevance);
        push_object(rng, &mut taken, &mut objects, c, caption, rel);
    }
    for _ in 0..p.distractors {
        let c = (rng.gen_range(-inner..inner), rng.gen_range(-inner..inner));
        let caption = *DISTRACTORS.choose(rng).expect("non-empty");
        let rel = uniform(rng, p.distractor_relevance);
        push_object(rng, &mut taken, &mut objects, c, caption, rel);
    }

    let mut obstacles = vec![ground];
    for _ in 0..p.obstacles {
        let c = (rng.gen_range(-h..h), rng.gen_range(-h..h));
        let b = place(rng, c, p.obstacle_footprint, p.obstacle_height);
        // Keep obstacles clear of the target so it stays reachable and visible.
        if bounds.contains_box(&b)
            && fits(&b, &taken)
            && b.distance_to(&target_box.center()) > p.context_radius[0]
        {
            taken.push(b.inflate(margin));
            obstacles.push(b);
        }
    }

    let d = uniform(rng, p.start_distance);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let alt = uniform(rng, p.start_altitude);
    let target_center = target_box.center();
    let sp = Vec3::new(
        target_center.x + d * phi.cos(),
        target_center.y + d * phi.sin(),
        alt,
    );
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let start = Pose::new(sp, yaw, 0.0);

    let keep_out = Aabb::from_center(sp, Vec3::repeat(p.start_clearance));
    if !bounds.inflate(-p.start_clearance).contains(&sp)
        || (sp - target_center).norm() < p.start_distance[0]
        || obstacles
            .iter()
            .chain(objects.iter().map(|o| &o.bbox))
            .any(|b| b.intersects(&keep_out))
    {
        return Ok(None);
    }

    let scene = Scene {
        id: format!("scene-{seed}"),
        seed,
        goal: format!("Find the {target_caption}."),
        bounds,
        start,
        obstacles,
        objects,
    };
    scene.validate()?;
    let fs = FreeSpace::of(&scene, p.feasibility_resolution)?;
    if fs
        .shortest_path(&sp, &target_center, p.success_distance)
        .is_none()
    {
        return Ok(None);
    }
    Ok(Some(scene))
}

fn flat(b: &Aabb) -> Aabb {
    Aabb::new(
        Vec3::new(b.min.x, b.min.y, 0.0),
        Vec3::new(b.max.x, b.max.y, 1.0),
    )
}
