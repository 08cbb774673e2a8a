//! Rollout collection over parallel environments and the two-stage curriculum.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{depth_inputs, map_inputs, FeatureSource};
use super::network::{argmax, sample_action, PolicyInput, PolicyParams};
use super::ppo::{compute_gae, ppo_update, Adam, LossReport, Transition};
use super::pregen::pregenerate_for_scene;
use crate::config::ApexConfig;
use crate::error::{ApexError, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, GridSpec};
use crate::maps::{AttractionMap, ExplorationMap, MapFrame, ObstacleMap};
use crate::rewards::{
    attraction_reward, exploration_reward, RewardConfig, RewardEvent, RewardMask,
};
use crate::world::{perceive, step, Action, AgentState, Percept, Scene, StepEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Goal-agnostic: exploration reward and penalties only.
    Pretrain,
    /// Adds attraction reward and the success bonus.
    Finetune,
}

impl Stage {
    pub fn mask(self) -> RewardMask {
        match self {
            Stage::Pretrain => RewardMask::PRETRAIN,
            Stage::Finetune => RewardMask::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Parallel environments.
    pub envs: usize,
    /// Transitions collected per environment per iteration.
    pub steps_per_env: usize,
    /// Consecutive episodes on one scene before an environment moves on.
    pub episodes_per_task: usize,
    pub max_episode_steps: usize,
    /// Divide rewards by the running standard deviation of discounted returns.
    pub scale_rewards: bool,
    /// Exploration weight used while finetuning in place of `rewards.alpha`.
    /// The exploration sum runs over every traversed voxel and the attraction
    /// sum only over object voxels, so at `rewards.alpha` the attraction term
    /// would be negligible.
    pub finetune_alpha: f64,
    /// Collect environments on separate threads. Results do not depend on it.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            envs: 4,
            steps_per_env: 128,
            episodes_per_task: 10,
            max_episode_steps: 60,
            scale_rewards: true,
            finetune_alpha: 0.002,
            parallel: true,
        }
    }
}

/// A training scene and, for finetuning, its pregenerated attraction map.
#[derive(Clone, Debug)]
pub struct TrainTask {
    pub scene: Scene,
    pub attraction: Option<AttractionMap>,
}

/// Wraps scenes as training tasks, pregenerating attraction maps for finetuning.
pub fn build_tasks(scenes: Vec<Scene>, stage: Stage, cfg: &ApexConfig) -> Result<Vec<TrainTask>> {
    scenes
        .into_iter()
        .map(|scene| {
            let attraction = match stage {
                Stage::Pretrain => None,
                Stage::Finetune => Some(pregenerate_for_scene(&scene, cfg)?),
            };
            Ok(TrainTask { scene, attraction })
        })
        .collect()
}

/// Outcome of one step in a training environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub r_attr: f64,
    pub r_expl: f64,
    pub event: RewardEvent,
    pub done: bool,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub length: usize,
    pub collided: bool,
    pub success: bool,
    pub exploration_mass: f64,
}

/// Single-agent environment used for training and quick evaluation. Attraction
/// comes from a pregenerated map looked up at observed cells.
pub struct TrainEnv<'a> {
    cfg: &'a ApexConfig,
    k: CameraIntrinsics,
    task: &'a TrainTask,
    stage: Stage,
    rewards: RewardConfig,
    grid: GridSpec,
    pub frame: MapFrame,
    pub state: AgentState,
    depth: DepthImage,
    steps: usize,
    ret: f64,
}

impl<'a> TrainEnv<'a> {
    pub fn new(cfg: &'a ApexConfig, task: &'a TrainTask, stage: Stage) -> Result<Self> {
        let k = cfg.sensor.intrinsics()?;
        let grid = GridSpec::covering(&task.scene.bounds, cfg.maps.resolution)?;
        if let Some(a) = &task.attraction {
            if a.grid() != &grid {
                return Err(ApexError::Dimension(format!(
                    "pregenerated map grid does not match scene `{}`",
                    task.scene.id
                )));
            }
        }
        let mut env = TrainEnv {
            cfg,
            k,
            task,
            stage,
            rewards: RewardConfig {
                alpha: match stage {
                    Stage::Pretrain => cfg.rewards.alpha,
                    Stage::Finetune => cfg.train.finetune_alpha,
                },
                ..cfg.rewards.clone()
            },
            grid,
            frame: fresh_frame(cfg, grid),
            state: AgentState::new(task.scene.start),
            depth: DepthImage::new(k.width, k.height),
            steps: 0,
            ret: 0.0,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn reset(&mut self) -> Result<()> {
        self.frame = fresh_frame(self.cfg, self.grid);
        let mut start = self.task.scene.start;
        start.pitch = self.cfg.sensor.pitch();
        self.state = AgentState::new(start);
        self.steps = 0;
        self.ret = 0.0;
        let p = self.observe()?;
        self.frame.exploration_mut().update(&p.visible);
        Ok(())
    }

    /// Renders at the current pose and applies obstacle and attraction updates.
    fn observe(&mut self) -> Result<Percept> {
        let p = perceive(
            &self.task.scene,
            &self.state.pose,
            &self.cfg.sensor,
            &self.k,
            &self.grid,
        )?;
        self.frame.obstacle_mut().update(&p.points);
        if let Some(pre) = &self.task.attraction {
            let cells = p.observed_cells(&self.grid);
            self.frame.attraction_mut().copy_cells_from(pre, cells);
        }
        self.depth = p.view.depth.clone();
        Ok(p)
    }

    pub fn input(&self) -> PolicyInput {
        match self.cfg.features.source {
            FeatureSource::Maps => map_inputs(&self.frame, &self.state.pose, &self.cfg.features),
            FeatureSource::Depth => depth_inputs(
                &self.depth,
                &self.state.pose,
                &self.grid,
                self.cfg.sensor.max_range,
                &self.cfg.features,
            ),
        }
    }

    pub fn distance_to_target(&self) -> f64 {
        (self.state.pose.position - self.task.scene.target_center()).norm()
    }

    pub fn step(&mut self, a: Action) -> Result<EnvStep> {
        let rc = &self.rewards.clone();
        let (next, ev) = step(&self.task.scene, &self.state, a, &self.cfg.motion)?;
        self.state = next;
        self.steps += 1;
        let p = self.observe()?;
        let r_attr = attraction_reward(&self.frame.attraction, &p.visible, rc);
        let r_expl = exploration_reward(&self.frame.exploration, &p.visible, rc);
        self.frame.exploration_mut().update(&p.visible);

        let near = self.distance_to_target() <= rc.success_distance;
        let event = match ev {
            StepEvent::Collision => RewardEvent::Collision,
            StepEvent::OutOfBounds => RewardEvent::OutOfBounds,
            _ if near && (self.stage == Stage::Finetune || ev == StepEvent::Stopped) => {
                RewardEvent::Success
            }
            _ => RewardEvent::None,
        };
        let reward = self.stage.mask().total(r_attr, r_expl, event, rc);
        self.ret += reward;
        let done = event != RewardEvent::None || ev == StepEvent::Stopped;
        let truncated = !done && self.steps >= self.cfg.train.max_episode_steps;
        Ok(EnvStep {
            reward,
            r_attr,
            r_expl,
            event,
            done,
            truncated,
        })
    }

    pub fn summary(&self, last: &EnvStep) -> EpisodeSummary {
        EpisodeSummary {
            ret: self.ret,
            length: self.steps,
            collided: matches!(
                last.event,
                RewardEvent::Collision | RewardEvent::OutOfBounds
            ),
            success: last.event == RewardEvent::Success,
            exploration_mass: self.frame.exploration.mass(),
        }
    }
}

fn fresh_frame(cfg: &ApexConfig, grid: GridSpec) -> MapFrame {
    MapFrame::from_maps(
        AttractionMap::new(grid),
        ExplorationMap::new(grid, cfg.maps.decay_rate, cfg.rewards.saturation)
            .with_mode(cfg.maps.gain_mode),
        ObstacleMap::new(grid),
    )
    .expect("maps built on one grid")
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy, Debug)]
pub enum Actor<'a> {
    /// Uniform over all actions, STOP included.
    Random,
    Policy {
        params: &'a PolicyParams,
        greedy: bool,
    },
}

impl Actor<'_> {
    fn act(&self, input: &PolicyInput, rng: &mut ChaCha8Rng) -> (usize, f64, f64) {
        match self {
            Actor::Random => (
                rng.gen_range(0..Action::COUNT),
                -(Action::COUNT as f64).ln(),
                0.0,
            ),
            Actor::Policy { params, greedy } => {
                let fw = params.forward(input);
                let a = if *greedy {
                    argmax(&fw.probs)
                } else {
                    sample_action(&fw.probs, rng)
                };
                (a, fw.log_probs[a], fw.value)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub episodes: usize,
    pub collision_rate: f64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub mean_exploration_mass: f64,
}

impl RolloutStats {
    fn from_episodes(eps: &[EpisodeSummary]) -> Self {
        let n = eps.len();
        if n == 0 {
            return RolloutStats::default();
        }
        let nf = n as f64;
        RolloutStats {
            episodes: n,
            collision_rate: eps.iter().filter(|e| e.collided).count() as f64 / nf,
            success_rate: eps.iter().filter(|e| e.success).count() as f64 / nf,
            mean_return: eps.iter().map(|e| e.ret).sum::<f64>() / nf,
            mean_length: eps.iter().map(|e| e.length as f64).sum::<f64>() / nf,
            mean_exploration_mass: eps.iter().map(|e| e.exploration_mass).sum::<f64>() / nf,
        }
    }
}

/// Runs `episodes_per_task` complete episodes on every task.
pub fn evaluate(
    tasks: &[TrainTask],
    stage: Stage,
    cfg: &ApexConfig,
    actor: Actor<'_>,
    episodes_per_task: usize,
    seed: u64,
) -> Result<RolloutStats> {
    let mut eps = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
        let mut env = TrainEnv::new(cfg, task, stage)?;
        for _ in 0..episodes_per_task {
            env.reset()?;
            loop {
                let (a, _, _) = actor.act(&env.input(), &mut rng);
                let out = env.step(Action::ALL[a])?;
                if out.done || out.truncated {
                    eps.push(env.summary(&out));
                    break;
                }
            }
        }
    }
    Ok(RolloutStats::from_episodes(&eps))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub episodes: usize,
    /// Mean raw return of episodes finished this iteration.
    pub mean_reward: Option<f64>,
    pub mean_step_reward: f64,
    pub collision_rate: Option<f64>,
    pub success_rate: Option<f64>,
    pub exploration_mass: Option<f64>,
    pub losses: LossReport,
}

pub struct TrainOutput {
    pub params: PolicyParams,
    pub log: Vec<TrainRecord>,
}

/// Welford running variance of discounted returns, used for reward scaling.
#[derive(Clone, Copy, Debug, Default)]
struct RunningStd {
    n: f64,
    mean: f64,
    m2: f64,
}

impl RunningStd {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2.0 {
            1.0
        } else {
            (self.m2 / self.n).sqrt().max(1e-8)
        }
    }
}

struct Worker<'a> {
    env: TrainEnv<'a>,
    tasks: Vec<&'a TrainTask>,
    task_pos: usize,
    episodes_on_task: usize,
    rng: ChaCha8Rng,
    discounted: f64,
}

struct Rollout {
    transitions: Vec<Transition>,
    raw_rewards: Vec<f64>,
    episodes: Vec<EpisodeSummary>,
    /// Time-limit cuts: transition index and the value of the state reached.
    truncations: Vec<(usize, f64)>,
    bootstrap: f64,
}

impl<'a> Worker<'a> {
    fn collect(
        &mut self,
        params: &PolicyParams,
        steps: usize,
        episodes_per_task: usize,
    ) -> Result<Rollout> {
        let actor = Actor::Policy {
            params,
            greedy: false,
        };
        let mut out = Rollout {
            transitions: Vec::with_capacity(steps),
            raw_rewards: Vec::with_capacity(steps),
            episodes: Vec::new(),
            truncations: Vec::new(),
            bootstrap: 0.0,
        };
        for _ in 0..steps {
            let input = self.env.input();
            let (a, log_prob, value) = actor.act(&input, &mut self.rng);
            let st = self.env.step(Action::ALL[a])?;
            out.raw_rewards.push(st.reward);
            out.transitions.push(Transition {
                input,
                action: a,
                log_prob,
                reward: st.reward,
                value,
                done: st.done,
                advantage: 0.0,
                ret: 0.0,
            });
            if st.done || st.truncated {
                out.episodes.push(self.env.summary(&st));
                if st.truncated {
                    let v = params.forward(&self.env.input()).value;
                    out.truncations.push((out.transitions.len() - 1, v));
                    out.transitions.last_mut().expect("just pushed").done = true;
                }
                self.episodes_on_task += 1;
                if self.episodes_on_task >= episodes_per_task {
                    self.episodes_on_task = 0;
                    self.task_pos = (self.task_pos + 1) % self.tasks.len();
                    self.env =
                        TrainEnv::new(self.env.cfg, self.tasks[self.task_pos], self.env.stage)?;
                } else {
                    self.env.reset()?;
                }
            }
        }
        out.bootstrap = params.forward(&self.env.input()).value;
        Ok(out)
    }
}

/// Trains one curriculum stage. `on_record` sees every log line as it is produced.
pub fn train(
    tasks: &[TrainTask],
    stage: Stage,
    cfg: &ApexConfig,
    init: Option<PolicyParams>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutput> {
    if tasks.is_empty() {
        return Err(ApexError::Input("no training scenes".into()));
    }
    let tc = &cfg.train;
    let k = cfg.sensor.intrinsics()?;
    let layout = cfg.features.layout((k.width, k.height));
    let mut params = match (stage, init) {
        (_, Some(p)) => {
            if p.layout != layout {
                return Err(ApexError::Dimension(
                    "initial parameters do not match the feature layout".into(),
                ));
            }
            p
        }
        (Stage::Finetune, None) => {
            return Err(ApexError::Usage(
                "finetuning needs pretrained parameters".into(),
            ));
        }
        (Stage::Pretrain, None) => PolicyParams::init(layout, cfg.seed),
    };
    if stage == Stage::Finetune && tasks.iter().any(|t| t.attraction.is_none()) {
        return Err(ApexError::Usage(
            "finetuning needs a pregenerated attraction map for every scene".into(),
        ));
    }

    let n_env = tc.envs.max(1);
    let mut workers = Vec::with_capacity(n_env);
    for w in 0..n_env {
        let mine: Vec<&TrainTask> = if tasks.len() >= n_env {
            tasks.iter().skip(w).step_by(n_env).collect()
        } else {
            vec![&tasks[w % tasks.len()]]
        };
        workers.push(Worker {
            env: TrainEnv::new(cfg, mine[0], stage)?,
            tasks: mine,
            task_pos: 0,
            episodes_on_task: 0,
            rng: ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_mul(1_000_003).wrapping_add(w as u64 + 1),
            ),
            discounted: 0.0,
        });
    }

    let mut opt = Adam::new(params.len());
    let mut stats = RunningStd::default();
    let mut log = Vec::with_capacity(tc.iterations);
    for it in 0..tc.iterations {
        let rollouts: Vec<Result<Rollout>> = if tc.parallel && n_env > 1 {
            let p = &params;
            std::thread::scope(|s| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .map(|w| s.spawn(move || w.collect(p, tc.steps_per_env, tc.episodes_per_task)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        } else {
            workers
                .iter_mut()
                .map(|w| w.collect(&params, tc.steps_per_env, tc.episodes_per_task))
                .collect()
        };

        // Scale with statistics from previous iterations, then fold this one in.
        let scale = if tc.scale_rewards {
            1.0 / stats.std()
        } else {
            1.0
        };
        let mut batch = Vec::new();
        let mut episodes = Vec::new();
        let mut reward_sum = 0.0;
        let mut reward_n = 0usize;
        for (w, r) in workers.iter_mut().zip(rollouts) {
            let mut r = r?;
            for (tr, raw) in r.transitions.iter().zip(&r.raw_rewards) {
                w.discounted = w.discounted * cfg.ppo.gamma + raw;
                stats.push(w.discounted);
                if tr.done {
                    w.discounted = 0.0;
                }
                reward_sum += raw;
                reward_n += 1;
            }
            for tr in &mut r.transitions {
                tr.reward *= scale;
            }
            // Values are already in scaled units.
            for &(i, v) in &r.truncations {
                r.transitions[i].reward += cfg.ppo.gamma * v;
            }
            compute_gae(
                &mut r.transitions,
                r.bootstrap,
                cfg.ppo.gamma,
                cfg.ppo.gae_lambda,
            );
            batch.extend(r.transitions);
            episodes.extend(r.episodes);
        }
        let mean_step_reward = reward_sum / reward_n.max(1) as f64;
        if !mean_step_reward.is_finite() {
            return Err(ApexError::Numeric(format!(
                "mean reward diverged at iteration {it}"
            )));
        }

        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (it as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let losses = ppo_update(&batch, &mut params, &mut opt, &cfg.ppo, &mut rng)?;
        let st = RolloutStats::from_episodes(&episodes);
        let some = |x: f64| (!episodes.is_empty()).then_some(x);
        let rec = TrainRecord {
            iteration: it,
            stage,
            episodes: episodes.len(),
            mean_reward: some(st.mean_return),
            mean_step_reward,
            collision_rate: some(st.collision_rate),
            success_rate: some(st.success_rate),
            exploration_mass: some(st.mean_exploration_mass),
            losses: losses.last().copied().unwrap_or_default(),
        };
        on_record(&rec);
        log.push(rec);
    }
    Ok(TrainOutput { params, log })
}

/// Writes records as one JSON object per line.
pub fn write_jsonl<T: Serialize>(out: &mut impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
