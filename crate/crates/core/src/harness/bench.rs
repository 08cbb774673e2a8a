//! Benchmark suites: scenes × agent variants × exploration weights.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsSummary};
use super::record::{write_episode_log, write_records, EpisodeRecord};
use crate::config::{ApexConfig, BenchConfig};
use crate::error::{ApexError, Result};
use crate::orchestrator::{run_episode, AgentSpec, ClockMode, Controller, GroundingMode};
use crate::policy::{FeatureConfig, FeatureSource, PolicyParams};
use crate::world::{generate_scene, Scene, SceneParams};

/// Agent configurations compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Map-reading policy with detector grounding.
    Full,
    /// Policy reading raw depth instead of the maps.
    WithoutMap,
    /// Heuristic lookahead instead of the learned policy.
    WithoutRlAd,
    /// No detector; commits to the attraction-map argmax.
    WithoutTg,
    /// Uniform random motions with detector grounding.
    RandomWalk,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::WithoutMap,
        Variant::WithoutRlAd,
        Variant::WithoutTg,
        Variant::RandomWalk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutMap => "w/o-3D-Map",
            Variant::WithoutRlAd => "w/o-RL-AD",
            Variant::WithoutTg => "w/o-TG",
            Variant::RandomWalk => "random-walk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ApexError::Config {
                path: "variant".into(),
                message: format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ),
            })
    }

    /// Whether the variant needs a trained policy, and reading which input.
    pub fn policy_source(self) -> Option<FeatureSource> {
        match self {
            Variant::Full | Variant::WithoutTg => Some(FeatureSource::Maps),
            Variant::WithoutMap => Some(FeatureSource::Depth),
            Variant::WithoutRlAd | Variant::RandomWalk => None,
        }
    }

    pub fn agent(self, policies: &Policies, alpha: f64, cfg: &ApexConfig) -> Result<AgentSpec> {
        let learned = |p: &Option<LoadedPolicy>, what: &str| -> Result<Controller> {
            let p = p.as_ref().ok_or_else(|| {
                ApexError::Usage(format!(
                    "variant `{}` needs a trained {what} policy",
                    self.name()
                ))
            })?;
            Ok(Controller::Learned {
                params: Arc::clone(&p.params),
                features: p.features.clone(),
                greedy: cfg.episode.greedy,
            })
        };
        let (controller, grounding) = match self {
            Variant::Full => (learned(&policies.maps, "map")?, GroundingMode::Detector),
            Variant::WithoutMap => (learned(&policies.depth, "depth")?, GroundingMode::Detector),
            Variant::WithoutRlAd => (
                Controller::Heuristic {
                    weights: (1.0, alpha),
                },
                GroundingMode::Detector,
            ),
            Variant::WithoutTg => (
                learned(&policies.maps, "map")?,
                GroundingMode::AttractionArgmax {
                    trigger: cfg.episode.tg_trigger,
                },
            ),
            Variant::RandomWalk => (Controller::RandomWalk, GroundingMode::Detector),
        };
        Ok(AgentSpec {
            controller,
            grounding,
        })
    }
}

/// A trained policy together with the feature settings it was trained on.
#[derive(Clone, Debug)]
pub struct LoadedPolicy {
    pub params: Arc<PolicyParams>,
    pub features: FeatureConfig,
}

#[derive(Clone, Debug, Default)]
pub struct Policies {
    pub maps: Option<LoadedPolicy>,
    pub depth: Option<LoadedPolicy>,
}

/// Metrics of one (variant, alpha) cell of the suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub variant: String,
    pub alpha: f64,
    #[serde(flatten)]
    pub metrics: MetricsSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<SuiteRow>,
    pub records: Vec<EpisodeRecord>,
}

pub fn scene_params(preset: &str) -> Result<SceneParams> {
    SceneParams::preset(preset).map_err(|e| match e {
        ApexError::Config { message, .. } => ApexError::Config {
            path: "bench.preset".into(),
            message,
        },
        other => other,
    })
}

/// Scene `i` of the suite is generated from seed `bench.seed + i`.
pub fn suite_scenes(bench: &BenchConfig) -> Result<Vec<Scene>> {
    let params = scene_params(&bench.preset)?;
    (0..bench.scenes as u64)
        .map(|i| generate_scene(bench.seed + i, &params))
        .collect()
}

/// Groups records by (variant, alpha) in order of first appearance.
pub fn summarize(records: &[EpisodeRecord], success_distance: f64) -> Result<Vec<SuiteRow>> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in records {
        if !keys
            .iter()
            .any(|(v, a)| *v == r.variant && a.to_bits() == r.alpha.to_bits())
        {
            keys.push((r.variant.clone(), r.alpha));
        }
    }
    keys.into_iter()
        .map(|(variant, alpha)| {
            let group: Vec<EpisodeRecord> = records
                .iter()
                .filter(|r| r.variant == variant && r.alpha.to_bits() == alpha.to_bits())
                .cloned()
                .collect();
            Ok(SuiteRow {
                metrics: compute_metrics(&group, success_distance)?,
                variant,
                alpha,
            })
        })
        .collect()
}

fn file_stem(variant: &str, alpha: f64, scene: &str) -> String {
    let v: String = variant
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{v}_a{alpha}_{scene}")
}

pub fn write_summary_csv(out: &mut impl Write, rows: &[SuiteRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "variant,alpha,episodes,sr,osr,spl,ne,mean_step_latency,safe_distance"
    )?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{:.4}",
            r.variant,
            r.alpha,
            m.episodes,
            m.sr,
            m.osr,
            m.spl,
            m.ne,
            m.mean_step_latency,
            m.safe_distance
        )?;
    }
    Ok(())
}

/// Writes `records.jsonl`, `summary.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &BenchOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ApexError::io(dir, e))?;
    write_records(&dir.join("records.jsonl"), &out.records)?;
    let csv = dir.join("summary.csv");
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &out.rows).expect("writing to memory");
    fs::write(&csv, buf).map_err(|e| ApexError::io(&csv, e))?;
    let json = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.rows)
        .map_err(|e| ApexError::format(&json, e.to_string()))?;
    fs::write(&json, text).map_err(|e| ApexError::io(&json, e))
}

/// Runs every (variant, alpha, scene) episode. Episodes are spread over
/// `cfg.bench.threads` threads; the output order does not depend on it.
/// With `out`, each episode's flight log goes to `out/episodes/` and the
/// merged records and summaries to `out/`.
pub fn run_benchmark(
    cfg: &ApexConfig,
    scenes: &[Scene],
    policies: &Policies,
    mode: ClockMode,
    out: Option<&Path>,
) -> Result<BenchOutput> {
    if scenes.is_empty() {
        return Err(ApexError::Input("benchmark suite has no scenes".into()));
    }
    let variants = cfg
        .bench
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>>>()?;
    let alphas = if cfg.bench.alphas.is_empty() {
        vec![cfg.rewards.alpha]
    } else {
        cfg.bench.alphas.clone()
    };

    struct Job {
        variant: Variant,
        cfg: ApexConfig,
        agent: AgentSpec,
        scene: usize,
    }
    let mut jobs = Vec::new();
    for &variant in &variants {
        for &alpha in &alphas {
            let mut c = cfg.clone();
            c.rewards.alpha = alpha;
            let agent = variant.agent(policies, alpha, &c)?;
            for scene in 0..scenes.len() {
                jobs.push(Job {
                    variant,
                    cfg: c.clone(),
                    agent: agent.clone(),
                    scene,
                });
            }
        }
    }

    let run = |job: &Job| -> Result<EpisodeRecord> {
        let scene = &scenes[job.scene];
        let mut rec = run_episode(scene, &job.agent, &job.cfg, mode, scene.seed)?;
        rec.variant = job.variant.name().to_string();
        Ok(rec)
    };
    let threads = cfg.bench.threads.max(1).min(jobs.len());
    let mut results: Vec<Option<Result<EpisodeRecord>>> = (0..jobs.len()).map(|_| None).collect();
    if threads <= 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run(job));
        }
    } else {
        let chunk = jobs.len().div_ceil(threads);
        std::thread::scope(|s| {
            for (slots, js) in results.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
                let run = &run;
                s.spawn(move || {
                    for (slot, job) in slots.iter_mut().zip(js) {
                        *slot = Some(run(job));
                    }
                });
            }
        });
    }
    let records = results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = out {
        let eps = dir.join("episodes");
        fs::create_dir_all(&eps).map_err(|e| ApexError::io(&eps, e))?;
        for r in &records {
            let path = eps.join(format!(
                "{}.jsonl",
                file_stem(&r.variant, r.alpha, &r.scene_id)
            ));
            let mut buf = Vec::new();
            write_episode_log(&mut buf, r).expect("writing to memory");
            fs::write(&path, buf).map_err(|e| ApexError::io(&path, e))?;
        }
    }
    let rows = summarize(&records, cfg.rewards.success_distance)?;
    let output = BenchOutput { rows, records };
    if let Some(dir) = out {
        write_outputs(dir, &output)?;
    }
    Ok(output)
}
