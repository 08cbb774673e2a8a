//! The three workers and the two schedulers that drive them.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::control::{AgentSpec, GroundingMode};
use super::navigate::{navigate_step, NavDecision};
use super::shared::{DetectionInfo, Observation, SharedMemory};
use super::ClockMode;
use crate::config::ApexConfig;
use crate::error::{ApexError, Result};
use crate::geometry::{CameraIntrinsics, GridSpec, Vec3};
use crate::harness::record::{EpisodeRecord, Event, EventKind, Phase, StepRecord, Termination};
use crate::maps::{attr_update, AttractionMap, ExplorationMap, MapFrame, ObstacleMap};
use crate::rewards::{attraction_reward, exploration_reward};
use crate::world::{
    best_detection, detector_oracle, ground_target, perceive, semantic_oracle,
    shortest_path_length, step, AgentState, Scene, StepEvent,
};

enum Tick {
    Continue,
    Done(Termination),
}

struct ActionWorker<'a> {
    scene: &'a Scene,
    agent: &'a AgentSpec,
    cfg: &'a ApexConfig,
    k: CameraIntrinsics,
    grid: GridSpec,
    state: AgentState,
    obstacle: Arc<ObstacleMap>,
    rng: ChaCha8Rng,
    phase: Phase,
    goal: Option<Vec3>,
    search_steps: usize,
    nav_steps: usize,
    seq: u64,
    steps: Vec<StepRecord>,
    events: Vec<Event>,
}

impl<'a> ActionWorker<'a> {
    /// Render, update obstacles, publish the observation, read a snapshot,
    /// decide and step.
    fn tick(&mut self, mem: &SharedMemory, t: f64, timed: bool) -> Result<Tick> {
        let started = Instant::now();
        let cfg = self.cfg;
        let percept = perceive(
            self.scene,
            &self.state.pose,
            &cfg.sensor,
            &self.k,
            &self.grid,
        )?;
        Arc::make_mut(&mut self.obstacle).update(&percept.points);
        mem.publish_obstacle(Arc::clone(&self.obstacle));
        self.seq += 1;
        let obs = Arc::new(Observation {
            seq: self.seq,
            t,
            percept,
        });
        mem.put_observation(Arc::clone(&obs));
        let snap = mem.snapshot();

        if self.phase == Phase::Search {
            self.check_goal(mem, &snap, t);
        }

        let visible = &obs.percept.visible;
        let r_attr = attraction_reward(&snap.attraction, visible, &cfg.rewards);
        let r_expl = exploration_reward(&snap.exploration, visible, &cfg.rewards);

        let action = match self.phase {
            Phase::Search => {
                if self.search_steps >= cfg.episode.max_steps {
                    return Ok(Tick::Done(Termination::MaxSteps));
                }
                self.agent
                    .controller
                    .decide(&snap, &self.state, &obs.percept, cfg, &mut self.rng)
            }
            Phase::Navigate => {
                let goal = self.goal.expect("navigation has a goal");
                let d = navigate_step(
                    &snap.obstacle,
                    &self.state.pose,
                    &goal,
                    cfg.episode.arrival_radius,
                    cfg.heuristic.clearance,
                    &cfg.motion,
                );
                match d {
                    NavDecision::Arrived => {
                        self.events.push(Event {
                            t,
                            kind: EventKind::Arrived,
                        });
                        return Ok(Tick::Done(Termination::Arrived));
                    }
                    NavDecision::Trapped => {
                        self.events.push(Event {
                            t,
                            kind: EventKind::Trapped,
                        });
                        return Ok(Tick::Done(Termination::Trapped));
                    }
                    NavDecision::Move(a) => {
                        if self.nav_steps >= cfg.episode.navigate_max_steps {
                            return Ok(Tick::Done(Termination::NavigateBudget));
                        }
                        a
                    }
                }
            }
        };

        let (next, ev) = step(self.scene, &self.state, action, &cfg.motion)?;
        self.state = next;
        match self.phase {
            Phase::Search => self.search_steps += 1,
            Phase::Navigate => self.nav_steps += 1,
        }
        self.steps.push(StepRecord {
            index: self.steps.len(),
            t,
            pose: next.pose,
            action,
            phase: self.phase,
            r_attr,
            r_expl,
            reward: r_attr + cfg.rewards.alpha * r_expl,
            versions: snap.versions(),
            latency: if timed {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            distance: (next.pose.position - self.scene.target_center()).norm(),
        });
        Ok(match ev {
            StepEvent::None => Tick::Continue,
            StepEvent::Collision => {
                self.events.push(Event {
                    t,
                    kind: EventKind::Collision,
                });
                Tick::Done(Termination::Collision)
            }
            StepEvent::OutOfBounds => {
                self.events.push(Event {
                    t,
                    kind: EventKind::OutOfBounds,
                });
                Tick::Done(Termination::OutOfBounds)
            }
            StepEvent::Stopped => {
                self.events.push(Event {
                    t,
                    kind: EventKind::Stopped,
                });
                Tick::Done(Termination::Stopped)
            }
        })
    }

    /// Switches to the approach once a goal is available.
    fn check_goal(&mut self, mem: &SharedMemory, snap: &MapFrame, t: f64) {
        match self.agent.grounding {
            GroundingMode::Detector => {
                if let Some(d) = mem.detection() {
                    self.events.push(Event {
                        t: d.t.max(self.events.last().map_or(0.0, |e| e.t)),
                        kind: EventKind::Detected {
                            point: d.point,
                            confidence: d.confidence,
                            seq: d.seq,
                        },
                    });
                    self.goal = Some(d.point);
                    self.phase = Phase::Navigate;
                }
            }
            GroundingMode::AttractionArgmax { trigger } => {
                if let Some((v, score)) = snap.attraction.argmax() {
                    if score >= trigger {
                        let point = self.grid.voxel_center(v);
                        self.events.push(Event {
                            t,
                            kind: EventKind::Committed { point, score },
                        });
                        self.goal = Some(point);
                        self.phase = Phase::Navigate;
                    }
                }
            }
        }
    }
}

struct MappingWorker<'a> {
    scene: &'a Scene,
    k: CameraIntrinsics,
    attraction: Arc<AttractionMap>,
    exploration: Arc<ExplorationMap>,
    last_seq: u64,
}

impl MappingWorker<'_> {
    /// Applies the latest unseen observation to private copies of the maps.
    /// Returns whether there is something to publish.
    fn compute(&mut self, mem: &SharedMemory) -> Result<bool> {
        let Some(obs) = mem.latest_observation() else {
            return Ok(false);
        };
        if obs.seq == self.last_seq {
            return Ok(false);
        }
        self.last_seq = obs.seq;
        let view = &obs.percept.view;
        let sem = semantic_oracle(self.scene, view);
        attr_update(
            Arc::make_mut(&mut self.attraction),
            &sem,
            &view.depth,
            &self.k,
            &view.pose,
        )?;
        Arc::make_mut(&mut self.exploration).update(&obs.percept.visible);
        Ok(true)
    }

    fn publish(&self, mem: &SharedMemory) {
        mem.publish_semantic(Arc::clone(&self.attraction), Arc::clone(&self.exploration));
    }
}

struct GroundingWorker<'a> {
    scene: &'a Scene,
    cfg: &'a ApexConfig,
    k: CameraIntrinsics,
    last_seq: u64,
}

impl GroundingWorker<'_> {
    fn tick(&mut self, mem: &SharedMemory, t: f64) -> Result<()> {
        if mem.is_detected() {
            return Ok(());
        }
        let Some(obs) = mem.latest_observation() else {
            return Ok(());
        };
        if obs.seq == self.last_seq {
            return Ok(());
        }
        self.last_seq = obs.seq;
        let view = &obs.percept.view;
        let dets = detector_oracle(self.scene, view, &self.cfg.detector);
        let Some(best) = best_detection(&dets, self.cfg.detector.conf_thresh) else {
            return Ok(());
        };
        match ground_target(&best, &view.depth, &self.k, &view.pose) {
            Ok(point) => {
                mem.set_detection(DetectionInfo {
                    point,
                    confidence: best.confidence,
                    t,
                    seq: obs.seq,
                });
                Ok(())
            }
            Err(ApexError::Grounding(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".into()
    }
}

/// Runs `f`, turning both errors and panics into a diagnostic string.
fn guarded<T>(who: &str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(format!("{who} worker failed: {e}")),
        Err(p) => Err(format!("{who} worker panicked: {}", panic_message(p))),
    }
}

/// Runs one episode with the three workers and returns its record.
pub fn run_episode(
    scene: &Scene,
    agent: &AgentSpec,
    cfg: &ApexConfig,
    mode: ClockMode,
    seed: u64,
) -> Result<EpisodeRecord> {
    cfg.workers.validate()?;
    scene.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let grid = GridSpec::covering(&scene.bounds, cfg.maps.resolution)?;
    let shortest = shortest_path_length(scene, cfg.maps.resolution, cfg.rewards.success_distance)?
        .ok_or_else(|| ApexError::Input(format!("target of `{}` is unreachable", scene.id)))?;

    let attraction = Arc::new(AttractionMap::new(grid));
    let exploration = Arc::new(
        ExplorationMap::new(grid, cfg.maps.decay_rate, cfg.rewards.saturation)
            .with_mode(cfg.maps.gain_mode),
    );
    let obstacle = Arc::new(ObstacleMap::new(grid));
    let mem = SharedMemory::new(MapFrame {
        grid,
        attraction: Arc::clone(&attraction),
        exploration: Arc::clone(&exploration),
        obstacle: Arc::clone(&obstacle),
        detected: false,
        target: None,
    });

    let mut start = scene.start;
    start.pitch = cfg.sensor.pitch();
    let mut action = ActionWorker {
        scene,
        agent,
        cfg,
        k,
        grid,
        state: AgentState::new(start),
        obstacle,
        rng: ChaCha8Rng::seed_from_u64(seed),
        phase: Phase::Search,
        goal: None,
        search_steps: 0,
        nav_steps: 0,
        seq: 0,
        steps: Vec::new(),
        events: Vec::new(),
    };
    let mut mapping = MappingWorker {
        scene,
        k,
        attraction,
        exploration,
        last_seq: 0,
    };
    let grounding_on = agent.grounding == GroundingMode::Detector;
    let mut grounding = GroundingWorker {
        scene,
        cfg,
        k,
        last_seq: 0,
    };

    let (termination, error) = match mode {
        ClockMode::Lockstep => lockstep(
            &mem,
            cfg,
            &mut action,
            &mut mapping,
            grounding_on.then_some(&mut grounding),
        ),
        ClockMode::WallClock => wall_clock(
            &mem,
            cfg,
            &mut action,
            &mut mapping,
            grounding_on.then_some(&mut grounding),
        ),
    };

    let mut events = action.events;
    if let Some(msg) = &error {
        events.push(Event {
            t: events.last().map_or(0.0, |e| e.t),
            kind: EventKind::Error {
                message: msg.clone(),
            },
        });
    }
    let target = scene.target_center();
    let dist = |p: &Vec3| (p - target).norm();
    let final_distance = dist(&action.state.pose.position);
    let min_distance = action
        .steps
        .iter()
        .map(|s| s.distance)
        .fold(dist(&start.position), f64::min);
    Ok(EpisodeRecord {
        scene_id: scene.id.clone(),
        seed,
        variant: "custom".into(),
        alpha: cfg.rewards.alpha,
        success_distance: cfg.rewards.success_distance,
        target,
        start,
        steps: action.steps,
        events,
        termination,
        final_distance,
        min_distance,
        shortest_path: shortest,
        path_length: action.state.path_length,
        // Collisions end the episode and freeze the agent at contact.
        safe_distance: action.state.path_length,
        error,
    })
}

/// Simulated clock in whole milliseconds. Events at equal times run in the
/// order: mapping publication, mapping start, grounding, action.
fn lockstep(
    mem: &SharedMemory,
    cfg: &ApexConfig,
    action: &mut ActionWorker,
    mapping: &mut MappingWorker,
    mut grounding: Option<&mut GroundingWorker>,
) -> (Termination, Option<String>) {
    let w = &cfg.workers;
    let (pa, pm, pg, lat) = (
        w.action_period_ms,
        w.mapping_period_ms,
        w.grounding_period_ms,
        w.mapping_latency_ms,
    );
    let mut t: u64 = 0;
    let mut pending: Option<u64> = None;
    loop {
        let secs = t as f64 / 1000.0;
        if pending.is_some_and(|tp| tp <= t) {
            mapping.publish(mem);
            pending = None;
        }
        if t % pm == 0 && pending.is_none() && !mem.is_detected() {
            match guarded("mapping", || mapping.compute(mem)) {
                Ok(true) if lat == 0 => mapping.publish(mem),
                Ok(true) => pending = Some(t + lat),
                Ok(false) => {}
                Err(e) => return (Termination::Errored, Some(e)),
            }
        }
        if let Some(g) = grounding.as_deref_mut() {
            if t % pg == 0 {
                if let Err(e) = guarded("grounding", || g.tick(mem, secs)) {
                    return (Termination::Errored, Some(e));
                }
            }
        }
        if t % pa == 0 {
            match guarded("action", || action.tick(mem, secs, false)) {
                Ok(Tick::Continue) => {}
                Ok(Tick::Done(term)) => return (term, None),
                Err(e) => return (Termination::Errored, Some(e)),
            }
        }
        let next = |p: u64| (t / p + 1) * p;
        let mut nt = next(pa).min(next(pm)).min(next(pg));
        if let Some(tp) = pending {
            nt = nt.min(tp);
        }
        t = nt;
    }
}

/// Sleeps until `deadline` or until `stop` is raised.
fn sleep_until(deadline: Instant, stop: &AtomicBool) {
    loop {
        if stop.load(Ordering::Acquire) {
            return;
        }
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(2)));
    }
}

/// Raises the stop flag when dropped, so other workers exit even if the
/// owning worker unwinds.
struct StopOnDrop<'a>(&'a AtomicBool);

impl Drop for StopOnDrop<'_> {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Release);
    }
}

/// Three OS threads on real periods. No worker waits on another: each
/// sleeps to its own next deadline and only touches shared memory through
/// short lock-protected swaps.
fn wall_clock(
    mem: &SharedMemory,
    cfg: &ApexConfig,
    action: &mut ActionWorker,
    mapping: &mut MappingWorker,
    grounding: Option<&mut GroundingWorker>,
) -> (Termination, Option<String>) {
    let w = &cfg.workers;
    let ms = Duration::from_millis;
    let (pa, pm, pg, lat) = (
        ms(w.action_period_ms),
        ms(w.mapping_period_ms),
        ms(w.grounding_period_ms),
        ms(w.mapping_latency_ms),
    );
    let stop = AtomicBool::new(false);
    let origin = Instant::now();
    let clock = || origin.elapsed().as_secs_f64();

    thread::scope(|s| {
        let stop = &stop;
        let map_h = s.spawn(move || -> std::result::Result<(), String> {
            let mut next = Instant::now();
            while !stop.load(Ordering::Acquire) && !mem.is_detected() {
                if guarded("mapping", || mapping.compute(mem))? {
                    sleep_until(Instant::now() + lat, stop);
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    mapping.publish(mem);
                }
                next += pm;
                sleep_until(next, stop);
            }
            Ok(())
        });
        let gnd_h = grounding.map(|g| {
            s.spawn(move || -> std::result::Result<(), String> {
                let mut next = Instant::now();
                while !stop.load(Ordering::Acquire) && !mem.is_detected() {
                    guarded("grounding", || g.tick(mem, clock()))?;
                    next += pg;
                    sleep_until(next, stop);
                }
                Ok(())
            })
        });
        let act_h = s.spawn(move || -> std::result::Result<Termination, String> {
            let _guard = StopOnDrop(stop);
            let mut next = Instant::now();
            loop {
                match guarded("action", || action.tick(mem, clock(), true))? {
                    Tick::Continue => {}
                    Tick::Done(term) => return Ok(term),
                }
                next += pa;
                sleep_until(next, stop);
            }
        });

        let join = |r: thread::Result<std::result::Result<(), String>>| match r {
            Ok(r) => r,
            Err(p) => Err(panic_message(p)),
        };
        let act = match act_h.join() {
            Ok(r) => r,
            Err(p) => Err(panic_message(p)),
        };
        let map = join(map_h.join());
        let gnd = gnd_h.map_or(Ok(()), |h| join(h.join()));
        match (act, map, gnd) {
            (Ok(term), Ok(()), Ok(())) => (term, None),
            (Ok(_), Err(e), _) | (Ok(_), _, Err(e)) | (Err(e), _, _) => {
                (Termination::Errored, Some(e))
            }
        }
    })
}
