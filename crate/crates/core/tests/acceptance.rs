//! Acceptance criteria 1 to 10. Every test prints one PASS/FAIL line to stderr
//! (outside the test harness capture) and then asserts the same verdict.
//!
//! Tests take a shared lock so that timing-sensitive criteria never overlap a
//! training run on the same cores.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::thread;
use std::time::Instant;

use apex_core::config::ApexConfig;
use apex_core::geometry::{back_project, back_project_pixel, project};
use apex_core::harness::{
    compute_metrics, run_benchmark, spl_term, suite_scenes, EpisodeRecord, LoadedPolicy, Phase,
    Policies, StepRecord, SuiteRow, Termination, Variant,
};
use apex_core::maps::{
    attr_update, visible_voxels, SemanticDetection, SemanticObservation, VisibleVoxels,
};
use apex_core::orchestrator::{run_episode, ClockMode, SharedMemory, WorkerConfig};
use apex_core::policy::{
    build_tasks, evaluate, ppo_update, surrogate_loss, train, Actor, Adam, NetLayout, PolicyInput,
    PolicyParams, PpoConfig, RolloutStats, Stage, Transition,
};
use apex_core::raycast::{sample_traverse, traverse, Ray};
use apex_core::rewards::{
    attraction_reward, exploration_reward, total_reward, RewardConfig, RewardEvent,
};
use apex_core::world::{generate_scene, SceneParams};
use apex_core::{
    Aabb, Action, AttractionMap, CameraIntrinsics, DepthImage, ExplorationMap, GridSpec, MapFrame,
    ObstacleMap, Pose, Vec3, VoxelIndex,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line and returns the verdict.
fn verdict(n: u32, title: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} [{tag}] {title}: {detail}"
    );
    pass
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_in(r: &mut ChaCha8Rng, b: &Aabb) -> Vec3 {
    Vec3::new(
        r.gen_range(b.min.x..b.max.x),
        r.gen_range(b.min.y..b.max.y),
        r.gen_range(b.min.z..b.max.z),
    )
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn c01_projection_round_trip() {
    let _g = serial();
    let started = Instant::now();
    let mut r = rng(1);
    let cameras = [
        ApexConfig::default().sensor.intrinsics().unwrap(),
        CameraIntrinsics::from_hfov(320, 240, 90f64.to_radians()).unwrap(),
        CameraIntrinsics::new(410.0, 395.0, 158.3, 121.7, 317, 241).unwrap(),
    ];
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for i in 0..10_000 {
        let k = &cameras[i % cameras.len()];
        let pose = Pose::new(
            Vec3::new(
                r.gen_range(-200.0..200.0),
                r.gen_range(-200.0..200.0),
                r.gen_range(-50.0..100.0),
            ),
            r.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            r.gen_range(-1.4..1.4),
        );
        let u = r.gen_range(-0.5..k.width as f64 - 0.5);
        let v = r.gen_range(-0.5..k.height as f64 - 0.5);
        let d = r.gen_range(0.05..300.0);
        let p = back_project_pixel(u, v, d, k, &pose);
        let err = match project(&p, k, &pose) {
            Some(q) => (q.u - u)
                .abs()
                .max((q.v - v).abs())
                .max((q.depth - d).abs()),
            None => f64::INFINITY,
        };
        worst = worst.max(err);
        if !(err <= 1e-6) {
            failures += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = failures == 0 && secs < 5.0;
    assert!(verdict(
        1,
        "projection round trip",
        pass,
        &format!(
            "10000 triples, {failures} beyond 1e-6, max error {worst:.2e}, {secs:.2} s (limit 5 s)"
        ),
    ));
}

// ---------------------------------------------------------------- criterion 2

/// Length of the part of `r` inside the voxel, meters (independent slab clip).
fn chord(r: &Ray, cell: &Aabb) -> f64 {
    let d = r.endpoint - r.origin;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if r.origin[a] < cell.min[a] || r.origin[a] >= cell.max[a] {
                return 0.0;
            }
            continue;
        }
        let (mut ta, mut tb) = (
            (cell.min[a] - r.origin[a]) / d[a],
            (cell.max[a] - r.origin[a]) / d[a],
        );
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    ((t1 - t0).max(0.0)) * d.norm()
}

#[test]
fn c02_traversal_against_sampling() {
    let _g = serial();
    let started = Instant::now();
    let mut r = rng(2);
    let grid = GridSpec::new(Vec3::new(-3.2, -1.7, 0.3), 0.5, [16, 16, 16]).unwrap();
    let fine = grid.resolution / 64.0;
    let (mut coarse_violations, mut fine_violations, mut flagged) = (0usize, 0usize, 0usize);
    let rays = 10_000;
    for _ in 0..rays {
        let ray = Ray::new(
            uniform_in(&mut r, &grid.bounds()),
            uniform_in(&mut r, &grid.bounds()),
        );
        let exact = traverse(&ray, &grid);
        let coarse = sample_traverse(&ray, &grid, grid.resolution / 8.0);
        if coarse.iter().any(|v| !exact.contains(v)) {
            coarse_violations += 1;
        }
        let sampled = sample_traverse(&ray, &grid, fine);
        // Cells the fine sampling skipped are excusable only when the ray's
        // chord through them is shorter than the sampling interval.
        let missed: Vec<VoxelIndex> = exact
            .iter()
            .copied()
            .filter(|v| !sampled.contains(v))
            .collect();
        let grazing = missed
            .iter()
            .all(|v| chord(&ray, &grid.voxel_box(*v)) < fine);
        let kept: Vec<VoxelIndex> = exact
            .iter()
            .copied()
            .filter(|v| !missed.contains(v))
            .collect();
        if !grazing || kept != sampled {
            fine_violations += 1;
        } else if !missed.is_empty() {
            flagged += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let rate = flagged as f64 / rays as f64;
    let pass = coarse_violations == 0 && fine_violations == 0 && rate < 0.001 && secs < 30.0;
    assert!(verdict(
        2,
        "exact traversal vs sampled traversal",
        pass,
        &format!(
            "{rays} rays: {coarse_violations} superset violations at res/8, {fine_violations} non-grazing mismatches at res/64, \
             {flagged} rays flagged grazing ({:.2}%, limit 0.1%), {secs:.2} s (limit 30 s)",
            100.0 * rate
        ),
    ));
}

// ---------------------------------------------------------------- criterion 3

struct Frame {
    k: CameraIntrinsics,
    pose: Pose,
    depth: DepthImage,
    sem: SemanticObservation,
}

fn random_frame(r: &mut ChaCha8Rng, grid: &GridSpec) -> Frame {
    let k = CameraIntrinsics::from_hfov(24, 18, 90f64.to_radians()).unwrap();
    let inner = grid.bounds().inflate(-2.0);
    let pose = Pose::new(
        uniform_in(r, &inner),
        r.gen_range(-3.1..3.1),
        r.gen_range(-0.8..0.8),
    );
    let n_obj = r.gen_range(1..=4);
    let base: Vec<f64> = (0..n_obj).map(|_| r.gen_range(1.5..9.0)).collect();
    let mut masks = vec![Vec::new(); n_obj];
    let mut data = vec![0.0; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            let owner = r.gen_bool(0.7).then(|| r.gen_range(0..n_obj));
            let d = match owner {
                Some(j) => base[j] + r.gen_range(-1.5..1.5),
                None => r.gen_range(0.5..14.0),
            };
            if r.gen_bool(0.92) {
                data[v * k.width + u] = d;
            }
            if let Some(j) = owner {
                masks[j].push((u, v));
            }
        }
    }
    let sem = SemanticObservation {
        objects: masks
            .into_iter()
            .enumerate()
            .map(|(j, mask)| SemanticDetection {
                caption: format!("object {j}"),
                score: r.gen_range(0.0..=1.0),
                mask,
            })
            .collect(),
    };
    Frame {
        depth: DepthImage::from_vec(k.width, k.height, data).unwrap(),
        k,
        pose,
        sem,
    }
}

/// Per-voxel brute force: for every cell scan every masked pixel.
fn attraction_oracle(prior: &AttractionMap, f: &Frame) -> AttractionMap {
    let grid = *prior.grid();
    let mut pts: Vec<Vec<(Vec3, f64)>> = Vec::new();
    for obj in &f.sem.objects {
        pts.push(
            obj.mask
                .iter()
                .filter_map(|&(u, v)| f.depth.valid(u, v).map(|d| (u, v, d)))
                .map(|(u, v, d)| (back_project_pixel(u as f64, v as f64, d, &f.k, &f.pose), d))
                .collect(),
        );
    }
    let mut out = prior.clone();
    for cell in grid.iter() {
        let mut best: Option<(usize, u32, f64)> = None;
        for (j, obj_pts) in pts.iter().enumerate() {
            let mut count = 0u32;
            let mut dmin = f64::INFINITY;
            for (p, d) in obj_pts {
                if grid.world_to_voxel(p) == Some(cell) {
                    count += 1;
                    dmin = dmin.min(*d);
                }
            }
            if count > 0 && best.map_or(true, |(_, c, _)| count > c) {
                best = Some((j, count, dmin));
            }
        }
        if let Some((j, _, d)) = best {
            if d < prior.depth(cell) {
                out.set(cell, f.sem.objects[j].score, d);
            }
        }
    }
    out
}

#[test]
fn c03_map_update_laws() {
    let _g = serial();
    let grid = GridSpec::new(Vec3::zeros(), 1.0, [12, 12, 12]).unwrap();
    let (lambda, eps) = (0.05, 5.0);
    let mut r = rng(3);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail = |law: &'static str| *failures.entry(law).or_insert(0) += 1;
    let (mut rejected_farther, mut majority_contests) = (0usize, 0usize);

    let frames = 1000;
    let per_episode = 10;
    let mut expl = ExplorationMap::new(grid, lambda, eps);
    let mut obst = ObstacleMap::new(grid);
    for i in 0..frames {
        if i % per_episode == 0 {
            expl = ExplorationMap::new(grid, lambda, eps);
            obst = ObstacleMap::new(grid);
        }
        let f = random_frame(&mut r, &grid);

        // Attraction: random prior, oracle equality and closest-first.
        let mut prior = AttractionMap::new(grid);
        for cell in grid.iter() {
            if r.gen_bool(0.5) {
                prior.set(cell, r.gen_range(0.0..=1.0), r.gen_range(0.5..12.0));
            }
        }
        let expected = attraction_oracle(&prior, &f);
        let mut got = prior.clone();
        attr_update(&mut got, &f.sem, &f.depth, &f.k, &f.pose).unwrap();
        if got.scores() != expected.scores() || got.depths() != expected.depths() {
            fail("majority ownership oracle");
        }
        // Count cells where several objects competed, for the report.
        let mut owners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (j, obj) in f.sem.objects.iter().enumerate() {
            for &(u, v) in &obj.mask {
                if let Some(d) = f.depth.valid(u, v) {
                    if let Some(c) = grid
                        .world_to_voxel(&back_project_pixel(u as f64, v as f64, d, &f.k, &f.pose))
                    {
                        owners.entry(grid.linear(c)).or_default().push(j);
                    }
                }
            }
        }
        for (cell, js) in &owners {
            if js.iter().any(|j| *j != js[0]) {
                majority_contests += 1;
            }
            let c = grid.unlinear(*cell);
            let changed = got.score(c) != prior.score(c) || got.depth(c) != prior.depth(c);
            if changed && !(got.depth(c) < prior.depth(c)) {
                fail("closest observation first");
            }
            if !changed {
                rejected_farther += 1;
            }
        }
        for c in grid.iter() {
            if !owners.contains_key(&grid.linear(c))
                && (got.score(c) != prior.score(c) || got.depth(c) != prior.depth(c))
            {
                fail("unobserved cell mutated");
            }
        }

        // Exploration: exact increment on visible cells, nothing elsewhere.
        let visible = visible_voxels(&f.depth, &f.k, &f.pose, &grid, 1).unwrap();
        let before = expl.values().to_vec();
        expl.update(&visible);
        let mut gain = vec![0.0; grid.num_cells()];
        for vv in visible.iter() {
            let d = (grid.voxel_center(vv.index) - f.pose.position).norm();
            if (vv.distance - d).abs() > 1e-12 {
                fail("visible distance");
            }
            gain[grid.linear(vv.index)] = (-lambda * d).exp();
        }
        for (i, (&b, &a)) in before.iter().zip(expl.values()).enumerate() {
            if (a - b - gain[i]).abs() > 1e-9 {
                fail("exploration increment");
            }
            if a < b {
                fail("exploration monotonicity");
            }
        }

        // Obstacles: every endpoint cell marked, marks never cleared, nothing spurious.
        let points: Vec<Vec3> = back_project(&f.depth, &f.k, &f.pose, 1)
            .unwrap()
            .into_iter()
            .map(|b| b.point)
            .collect();
        let was = obst.cells().to_vec();
        obst.update(&points);
        let hit: Vec<usize> = points
            .iter()
            .filter_map(|p| grid.world_to_voxel(p))
            .map(|c| grid.linear(c))
            .collect();
        if hit.iter().any(|&i| !obst.cells()[i]) {
            fail("obstacle endpoint marked");
        }
        for (i, (&w, &n)) in was.iter().zip(obst.cells()).enumerate() {
            if w && !n {
                fail("obstacle monotonicity");
            }
            if !w && n && !hit.contains(&i) {
                fail("obstacle spurious mark");
            }
        }
    }
    let total: usize = failures.values().sum();
    let pass = total == 0 && majority_contests > 0 && rejected_farther > 0;
    assert!(verdict(
        3,
        "map update laws",
        pass,
        &format!(
            "{frames} frames, {total} failures {failures:?}; {majority_contests} contested cells, \
             {rejected_farther} observed cells kept by closest-first"
        ),
    ));
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn c04_reward_oracle_equivalence() {
    let _g = serial();
    let mut r = rng(4);
    let grid = GridSpec::new(Vec3::zeros(), 1.0, [8, 8, 8]).unwrap();
    let (mut worst, mut failures, mut affine_failures) = (0.0f64, 0usize, 0usize);
    for _ in 0..500 {
        let cfg = RewardConfig {
            d_thresh: r.gen_range(5.0..60.0),
            saturation: r.gen_range(0.5..6.0),
            ..RewardConfig::default()
        };
        let mut attr = AttractionMap::new(grid);
        let mut expl = ExplorationMap::new(grid, 0.05, cfg.saturation);
        for c in grid.iter() {
            if r.gen_bool(0.3) {
                attr.set(c, r.gen_range(0.0..=1.0), r.gen_range(0.5..20.0));
            }
            expl.set(c, r.gen_range(0.0..2.0 * cfg.saturation));
        }
        let mut pairs = Vec::new();
        for c in grid.iter() {
            if r.gen_bool(0.2) {
                let d = match r.gen_range(0..10) {
                    0 => cfg.d_thresh,
                    _ => r.gen_range(0.0..1.3 * cfg.d_thresh),
                };
                pairs.push((c, d));
            }
        }
        let visible = VisibleVoxels::from_pairs(&grid, pairs.iter().copied());

        // Brute force over the whole grid, membership by linear search.
        let (mut ba, mut be) = (0.0, 0.0);
        for c in grid.iter() {
            if let Some(&(_, d)) = pairs.iter().find(|(v, _)| *v == c) {
                if d < cfg.d_thresh {
                    let w = 1.0 - d / cfg.d_thresh;
                    ba += attr.score(c) * w;
                    be += (cfg.saturation - expl.value(c)) * w;
                }
            }
        }
        let ra = attraction_reward(&attr, &visible, &cfg);
        let re = exploration_reward(&expl, &visible, &cfg);
        let err = (ra - ba).abs().max((re - be).abs());
        worst = worst.max(err);
        if !(err <= 1e-9) {
            failures += 1;
        }

        for ev in [
            RewardEvent::None,
            RewardEvent::Success,
            RewardEvent::Collision,
            RewardEvent::OutOfBounds,
        ] {
            let spar = match ev {
                RewardEvent::None => 0.0,
                RewardEvent::Success => cfg.r_success,
                _ => cfg.r_penalty,
            };
            let at = |alpha: f64| {
                total_reward(
                    ra,
                    re,
                    ev,
                    &RewardConfig {
                        alpha,
                        ..cfg.clone()
                    },
                )
            };
            let exact = [0.0, 0.2, 1.0]
                .iter()
                .all(|&alpha| at(alpha) == ra + alpha * re + spar);
            let slope = at(1.0) - at(0.0);
            let collinear =
                ((at(0.2) - at(0.0)) - 0.2 * slope).abs() <= 1e-12 * (1.0 + slope.abs());
            if !exact || !collinear {
                affine_failures += 1;
            }
        }
    }
    let pass = failures == 0 && affine_failures == 0;
    assert!(verdict(
        4,
        "reward oracle equivalence",
        pass,
        &format!("500 instances, {failures} beyond 1e-9 (max error {worst:.2e}), {affine_failures} affine-in-alpha failures"),
    ));
}

// ---------------------------------------------------------------- criterion 5

fn random_input(r: &mut ChaCha8Rng, layout: &NetLayout) -> PolicyInput {
    PolicyInput {
        groups: layout
            .inputs
            .iter()
            .map(|&n| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect(),
        pose: (0..layout.pose_dim)
            .map(|_| r.gen_range(-1.0..1.0))
            .collect(),
    }
}

fn random_layout(r: &mut ChaCha8Rng) -> NetLayout {
    NetLayout {
        inputs: (0..r.gen_range(1..=3))
            .map(|_| r.gen_range(1..=6))
            .collect(),
        proj_dim: r.gen_range(1..=4),
        pose_dim: r.gen_range(0..=3),
        hidden: r.gen_range(2..=6),
        actions: r.gen_range(2..=9),
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn c05_gradient_check() {
    let _g = serial();
    let mut r = rng(5);
    let h = 1e-6;
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for config in 0..50 {
        let layout = random_layout(&mut r);
        let params = PolicyParams::init(layout.clone(), 500 + config);
        let x = random_input(&mut r, &layout);
        let a = r.gen_range(0..layout.actions);
        let analytic_lp = params.grad_log_prob(&x, a);
        let analytic_v = params.grad_value(&x);
        let mut numeric_lp = vec![0.0; params.len()];
        let mut numeric_v = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.data[i] += h;
            minus.data[i] -= h;
            let (fp, fm) = (plus.forward(&x), minus.forward(&x));
            numeric_lp[i] = (fp.log_probs[a] - fm.log_probs[a]) / (2.0 * h);
            numeric_v[i] = (fp.value - fm.value) / (2.0 * h);
        }
        let err =
            relative_error(&analytic_lp, &numeric_lp).max(relative_error(&analytic_v, &numeric_v));
        worst = worst.max(err);
        if !(err < 1e-4) {
            failures += 1;
        }
    }
    assert!(verdict(
        5,
        "gradient check",
        failures == 0,
        &format!("50 random networks, {failures} with relative error >= 1e-4, max {worst:.2e}"),
    ));
}

// ---------------------------------------------------------------- criterion 6

struct Pretrained {
    params: PolicyParams,
    random: RolloutStats,
    trained: RolloutStats,
    seconds: f64,
}

/// Pretraining on four open scenes, shared by criteria 6 and 7.
fn pretrained() -> &'static Pretrained {
    static CELL: OnceLock<Pretrained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ApexConfig::default();
        let scenes = (0..4)
            .map(|i| generate_scene(500 + i, &SceneParams::open()).unwrap())
            .collect();
        let tasks = build_tasks(scenes, Stage::Pretrain, &cfg).unwrap();
        let random = evaluate(&tasks, Stage::Pretrain, &cfg, Actor::Random, 25, 1).unwrap();
        let started = Instant::now();
        let out = train(&tasks, Stage::Pretrain, &cfg, None, |_| {}).unwrap();
        let seconds = started.elapsed().as_secs_f64();
        let actor = Actor::Policy {
            params: &out.params,
            greedy: false,
        };
        let trained = evaluate(&tasks, Stage::Pretrain, &cfg, actor, 25, 1).unwrap();
        Pretrained {
            params: out.params,
            random,
            trained,
            seconds,
        }
    })
}

fn synthetic_batch(r: &mut ChaCha8Rng, params: &PolicyParams, n: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let input = random_input(r, &params.layout);
            let fw = params.forward(&input);
            let action = r.gen_range(0..params.layout.actions);
            Transition {
                log_prob: fw.log_probs[action],
                value: fw.value,
                input,
                action,
                reward: 0.0,
                done: false,
                advantage: r.gen_range(-1.0..1.0),
                ret: r.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

#[test]
fn c06_trainer_sanity() {
    let _g = serial();
    let mut r = rng(6);
    let layout = NetLayout {
        inputs: vec![6, 4],
        proj_dim: 3,
        pose_dim: 2,
        hidden: 8,
        actions: 9,
    };
    let mut params = PolicyParams::init(layout, 6);
    let batch = synthetic_batch(&mut r, &params, 64);
    let cfg = PpoConfig {
        epochs: 1,
        minibatch: batch.len(),
        learning_rate: 1e-4,
        value_coeff: 0.0,
        entropy_coeff: 0.0,
        max_grad_norm: 0.0,
        ..PpoConfig::default()
    };
    let before = surrogate_loss(&batch, &params, &cfg).policy;
    let mut opt = Adam::new(params.len());
    ppo_update(&batch, &mut params, &mut opt, &cfg, &mut r).unwrap();
    let after = surrogate_loss(&batch, &params, &cfg).policy;
    let decreased = after < before;

    let pre = pretrained();
    let (base, trained) = (pre.random.collision_rate, pre.trained.collision_rate);
    let halved = trained <= 0.5 * base && base > 0.0;
    let pass = decreased && halved;
    assert!(verdict(
        6,
        "trainer sanity",
        pass,
        &format!(
            "surrogate {before:.6} -> {after:.6}; collision rate random {base:.3} -> pretrained {trained:.3} \
             (needs <= {:.3}) after 200 iterations in {:.0} s",
            0.5 * base,
            pre.seconds
        ),
    ));
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn c07_desk_scale_navigation() {
    let _g = serial();
    let mut cfg = ApexConfig::default();
    let pre = pretrained();
    let scenes = (0..16)
        .map(|i| generate_scene(2000 + i, &SceneParams::trivial()).unwrap())
        .collect();
    let tasks = build_tasks(scenes, Stage::Finetune, &cfg).unwrap();
    let finetuned = train(
        &tasks,
        Stage::Finetune,
        &cfg,
        Some(pre.params.clone()),
        |_| {},
    )
    .unwrap();
    let policies = Policies {
        maps: Some(LoadedPolicy {
            params: Arc::new(finetuned.params),
            features: cfg.features.clone(),
        }),
        depth: None,
    };
    cfg.bench.preset = "trivial".into();
    cfg.bench.scenes = 50;
    cfg.bench.seed = 1000;
    cfg.bench.variants = vec!["full".into(), "random-walk".into(), "w/o-TG".into()];
    let suite = suite_scenes(&cfg.bench).unwrap();
    let out = run_benchmark(&cfg, &suite, &policies, ClockMode::Lockstep, None).unwrap();
    let sr = |name: &str| {
        out.rows
            .iter()
            .find(|row| row.variant == name)
            .unwrap()
            .metrics
            .sr
    };
    let (full, walk, no_tg) = (sr("full"), sr("random-walk"), sr("w/o-TG"));
    let pass = full >= 60.0 && full > walk && full > no_tg;
    assert!(verdict(
        7,
        "desk-scale navigation",
        pass,
        &format!("50 trivial scenes, SR full {full:.1}% (needs >= 60), random-walk {walk:.1}%, w/o-TG {no_tg:.1}%"),
    ));
}

// ---------------------------------------------------------------- criterion 8

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn wall_clock_latencies(mapping_latency_ms: u64) -> Vec<f64> {
    let mut cfg = ApexConfig::default();
    cfg.workers = WorkerConfig {
        action_period_ms: 20,
        mapping_period_ms: 100,
        grounding_period_ms: 20,
        mapping_latency_ms,
    };
    let policies = Policies::default();
    let agent = Variant::WithoutRlAd
        .agent(&policies, cfg.rewards.alpha, &cfg)
        .unwrap();
    let mut out = Vec::new();
    for seed in 11..15 {
        let scene = generate_scene(seed, &SceneParams::trivial()).unwrap();
        let rec = run_episode(&scene, &agent, &cfg, ClockMode::WallClock, seed).unwrap();
        assert!(rec.error.is_none(), "{:?}", rec.error);
        out.extend(rec.steps.iter().map(|s| s.latency));
    }
    out
}

/// Checksum sentinel: every published map carries one value in all cells and
/// the same value in the exploration map. A torn read would mix values.
fn torn_reads(reader_iterations: usize, readers: usize) -> (usize, usize) {
    let grid = GridSpec::new(Vec3::zeros(), 1.0, [8, 8, 8]).unwrap();
    let mem = SharedMemory::new(MapFrame::new(grid, 0.05, 5.0));
    let stop = std::sync::atomic::AtomicBool::new(false);
    let per_reader = reader_iterations / readers;
    thread::scope(|s| {
        let mem = &mem;
        let stop = &stop;
        s.spawn(move || {
            let mut attr = Arc::new(AttractionMap::new(grid));
            let mut expl = Arc::new(ExplorationMap::new(grid, 0.05, 5.0));
            let mut k = 0u64;
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                k += 1;
                let value = (k % 1000) as f64 / 1000.0;
                let a = Arc::make_mut(&mut attr);
                let e = Arc::make_mut(&mut expl);
                for c in grid.iter() {
                    a.set(c, value, k as f64);
                    e.set(c, k as f64);
                }
                mem.publish_semantic(Arc::clone(&attr), Arc::clone(&expl));
            }
            k
        });
        let handles: Vec<_> = (0..readers)
            .map(|_| {
                s.spawn(move || {
                    let mut bad = 0usize;
                    for _ in 0..per_reader {
                        let snap = mem.snapshot();
                        let sentinel = snap.attraction.depths()[0];
                        let score = snap.attraction.scores()[0];
                        let consistent =
                            snap.attraction.depths().iter().all(|&d| {
                                d == sentinel || (d.is_infinite() && sentinel.is_infinite())
                            }) && snap.attraction.scores().iter().all(|&x| x == score)
                                && snap.exploration.values().iter().all(|&x| {
                                    x == if sentinel.is_finite() { sentinel } else { 0.0 }
                                });
                        if !consistent {
                            bad += 1;
                        }
                    }
                    bad
                })
            })
            .collect();
        let bad = handles.into_iter().map(|h| h.join().unwrap()).sum();
        stop.store(true, std::sync::atomic::Ordering::Relaxed);
        (bad, per_reader * readers)
    })
}

#[test]
fn c08_async_decoupling() {
    let _g = serial();
    let short = wall_clock_latencies(500);
    let long = wall_clock_latencies(5000);
    let mean_short = short.iter().sum::<f64>() / short.len() as f64;
    let (med_short, med_long) = (median(short.clone()), median(long.clone()));
    let ratio = med_long.max(med_short) / med_long.min(med_short);
    let (bad, iterations) = torn_reads(100_000, 8);
    let pass = mean_short < 0.050 && ratio < 2.0 && bad == 0;
    assert!(verdict(
        8,
        "asynchronous decoupling",
        pass,
        &format!(
            "mapping latency 500 ms: mean step {:.1} ms (limit 50), median {:.1} ms over {} steps; 5000 ms: median {:.1} ms \
             over {} steps; ratio {ratio:.2} (limit 2); torn reads {bad} over {iterations} reader iterations",
            1e3 * mean_short,
            1e3 * med_short,
            short.len(),
            1e3 * med_long,
            long.len()
        ),
    ));
}

// ---------------------------------------------------------------- criterion 9

const ALPHAS: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 0.8, 1.0];
const REFERENCE_ALPHA: f64 = 0.2;

fn alpha_sweep() -> (Vec<SuiteRow>, Vec<EpisodeRecord>) {
    let mut cfg = ApexConfig::default();
    cfg.bench.preset = "trivial".into();
    cfg.bench.scenes = 12;
    cfg.bench.seed = 3000;
    cfg.bench.variants = vec!["w/o-RL-AD".into()];
    cfg.bench.alphas = ALPHAS.to_vec();
    let suite = suite_scenes(&cfg.bench).unwrap();
    let out = run_benchmark(
        &cfg,
        &suite,
        &Policies::default(),
        ClockMode::Lockstep,
        None,
    )
    .unwrap();
    (out.rows, out.records)
}

#[test]
fn c09_alpha_sweep() {
    let _g = serial();
    let (rows, records) = alpha_sweep();
    let (rows2, records2) = alpha_sweep();
    let complete =
        rows.len() == ALPHAS.len() && rows.iter().zip(ALPHAS).all(|(row, a)| row.alpha == a);
    let deterministic = rows == rows2 && records == records2;
    let mut table = String::from("\n      alpha     SR    OSR    SPL      NE");
    for row in &rows {
        let m = &row.metrics;
        let mark = if row.alpha == REFERENCE_ALPHA {
            "  (reference optimum)"
        } else {
            ""
        };
        table += &format!(
            "\n     {:>6.2} {:>6.1} {:>6.1} {:>6.1} {:>7.2}{mark}",
            row.alpha, m.sr, m.osr, m.spl, m.ne
        );
    }
    let best = rows.iter().max_by(|a, b| {
        a.metrics
            .sr
            .total_cmp(&b.metrics.sr)
            .then(b.alpha.total_cmp(&a.alpha))
    });
    let pass = complete && deterministic;
    assert!(verdict(
        9,
        "alpha sweep",
        pass,
        &format!(
            "{} alphas x {} scenes, complete {complete}, identical on rerun {deterministic}; best SR here at alpha {:?}, \
             reference optimum {REFERENCE_ALPHA}{table}",
            rows.len(),
            records.len() / ALPHAS.len().max(1),
            best.map(|b| b.alpha)
        ),
    ));
}

// --------------------------------------------------------------- criterion 10

fn hand_record(
    id: &str,
    final_distance: f64,
    min_distance: f64,
    shortest: f64,
    path: f64,
) -> EpisodeRecord {
    let start = Pose::new(Vec3::zeros(), 0.0, 0.0);
    let end = Pose::new(Vec3::new(path, 0.0, 0.0), 0.0, 0.0);
    EpisodeRecord {
        scene_id: id.into(),
        seed: 0,
        variant: "hand".into(),
        alpha: 0.2,
        success_distance: 20.0,
        target: Vec3::new(path + final_distance, 0.0, 0.0),
        start,
        steps: vec![StepRecord {
            index: 0,
            t: 0.0,
            pose: end,
            action: Action::Forward,
            phase: Phase::Search,
            r_attr: 0.0,
            r_expl: 0.0,
            reward: 0.0,
            versions: Default::default(),
            latency: 0.0,
            distance: final_distance,
        }],
        events: vec![],
        termination: Termination::Stopped,
        final_distance,
        min_distance,
        shortest_path: shortest,
        path_length: path,
        safe_distance: path,
        error: None,
    }
}

#[test]
fn c10_metrics() {
    let _g = serial();
    let mut checks: Vec<(&str, bool)> = vec![
        (
            "shortest-path success term 1.0",
            spl_term(true, 80.0, 80.0) == 1.0,
        ),
        (
            "double-length success term 0.5",
            spl_term(true, 80.0, 160.0) == 0.5,
        ),
        ("failure term 0", spl_term(false, 80.0, 80.0) == 0.0),
    ];
    let suite = [
        hand_record("optimal", 10.0, 10.0, 80.0, 80.0),
        hand_record("double", 15.0, 12.0, 50.0, 100.0),
        hand_record("passed-by", 35.0, 5.0, 60.0, 90.0),
        hand_record("lost", 70.0, 40.0, 60.0, 30.0),
    ];
    let m = compute_metrics(&suite, 20.0).unwrap();
    checks.push(("hand suite SR 50", m.sr == 50.0));
    checks.push(("hand suite OSR 75", m.osr == 75.0));
    checks.push(("hand suite SPL 37.5", m.spl == 37.5));
    checks.push(("hand suite NE 32.5", m.ne == 32.5));

    // OSR >= SR on random suites and on real ones.
    let mut r = rng(10);
    let mut osr_ok = true;
    for _ in 0..200 {
        let n = r.gen_range(1..20);
        let recs: Vec<EpisodeRecord> = (0..n)
            .map(|i| {
                let fin: f64 = r.gen_range(0.0..80.0);
                let min = fin.min(r.gen_range(0.0..80.0));
                let shortest = r.gen_range(0.0..100.0);
                hand_record(
                    &format!("r{i}"),
                    fin,
                    min,
                    shortest,
                    shortest + r.gen_range(0.0..100.0),
                )
            })
            .collect();
        let m = compute_metrics(&recs, 20.0).unwrap();
        osr_ok &= m.osr >= m.sr;
    }
    let mut cfg = ApexConfig::default();
    cfg.bench.scenes = 6;
    cfg.bench.variants = vec!["w/o-RL-AD".into(), "random-walk".into()];
    let real = run_benchmark(
        &cfg,
        &suite_scenes(&cfg.bench).unwrap(),
        &Policies::default(),
        ClockMode::Lockstep,
        None,
    )
    .unwrap();
    osr_ok &= real
        .rows
        .iter()
        .all(|row| row.metrics.osr >= row.metrics.sr);
    checks.push(("OSR >= SR on every suite", osr_ok));

    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| *name)
        .collect();
    assert!(verdict(
        10,
        "metrics",
        failed.is_empty(),
        &format!(
            "{} checks, failed: {failed:?}; hand suite {m:?}",
            checks.len()
        ),
    ));
}
