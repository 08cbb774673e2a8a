//! Per-episode records and their line-delimited JSON encoding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};
use crate::geometry::{Pose, Vec3};
use crate::maps::MapVersions;
use crate::world::Action;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Search,
    Navigate,
}

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Reached the arrival radius of the grounded or committed goal.
    Arrived,
    /// The approach found no safe improving move.
    Trapped,
    /// The search controller chose STOP.
    Stopped,
    Collision,
    OutOfBounds,
    /// Search step budget exhausted.
    MaxSteps,
    /// Approach step budget exhausted.
    NavigateBudget,
    /// A worker failed; see `error`.
    Errored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Detected {
        point: Vec3,
        confidence: f64,
        seq: u64,
    },
    Committed {
        point: Vec3,
        score: f64,
    },
    Collision,
    OutOfBounds,
    Stopped,
    Arrived,
    Trapped,
    Error {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Episode time, seconds.
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    /// Episode time at which the step started, seconds.
    pub t: f64,
    /// Pose after the step.
    pub pose: Pose,
    pub action: Action,
    pub phase: Phase,
    pub r_attr: f64,
    pub r_expl: f64,
    /// `r_attr + alpha * r_expl` of the observation the action was chosen on.
    pub reward: f64,
    /// Map versions of the snapshot the decision read.
    pub versions: MapVersions,
    /// Wall time from render to completed step, seconds; 0 under the simulated clock.
    pub latency: f64,
    /// Distance to the target center after the step, meters.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene_id: String,
    pub seed: u64,
    pub variant: String,
    pub alpha: f64,
    pub success_distance: f64,
    pub target: Vec3,
    pub start: Pose,
    pub steps: Vec<StepRecord>,
    pub events: Vec<Event>,
    pub termination: Termination,
    pub final_distance: f64,
    /// Closest distance to the target center over the start and every step.
    pub min_distance: f64,
    /// Optimal path length from the free-space oracle, meters.
    pub shortest_path: f64,
    pub path_length: f64,
    /// Path length flown before the first collision.
    pub safe_distance: f64,
    pub error: Option<String>,
}

impl EpisodeRecord {
    pub fn is_success(&self, success_distance: f64) -> bool {
        self.final_distance <= success_distance
    }

    pub fn is_oracle_success(&self, success_distance: f64) -> bool {
        self.min_distance <= success_distance
    }

    pub fn final_position(&self) -> Vec3 {
        self.steps
            .last()
            .map_or(self.start.position, |s| s.pose.position)
    }

    /// Path length covers the straight line to the final position, and
    /// step and event times never decrease.
    pub fn check_invariants(&self) -> Result<()> {
        let straight = (self.final_position() - self.start.position).norm();
        if self.path_length < straight - 1e-6 {
            return Err(ApexError::Input(format!(
                "{}: path length {} shorter than straight line {}",
                self.scene_id, self.path_length, straight
            )));
        }
        if self.steps.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(ApexError::Input(format!(
                "{}: step times decrease",
                self.scene_id
            )));
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(ApexError::Input(format!(
                "{}: event times decrease",
                self.scene_id
            )));
        }
        Ok(())
    }
}

/// One record per line.
pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| ApexError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| ApexError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ApexError::io(path, e))?;
    }
    w.flush().map_err(|e| ApexError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = File::open(path).map_err(|e| ApexError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ApexError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| ApexError::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Event(&'a Event),
    Summary {
        scene_id: &'a str,
        seed: u64,
        variant: &'a str,
        alpha: f64,
        termination: Termination,
        success: bool,
        final_distance: f64,
        min_distance: f64,
        shortest_path: f64,
        path_length: f64,
        safe_distance: f64,
        steps: usize,
        error: Option<&'a str>,
    },
}

/// Flight log of one episode: a line per step, a line per event, then a
/// summary line with the termination cause.
pub fn write_episode_log(out: &mut impl Write, rec: &EpisodeRecord) -> std::io::Result<()> {
    let mut line = |l: &LogLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, l)?;
        out.write_all(b"\n")
    };
    for s in &rec.steps {
        line(&LogLine::Step(s))?;
    }
    for e in &rec.events {
        line(&LogLine::Event(e))?;
    }
    line(&LogLine::Summary {
        scene_id: &rec.scene_id,
        seed: rec.seed,
        variant: &rec.variant,
        alpha: rec.alpha,
        termination: rec.termination,
        success: rec.is_success(rec.success_distance),
        final_distance: rec.final_distance,
        min_distance: rec.min_distance,
        shortest_path: rec.shortest_path,
        path_length: rec.path_length,
        safe_distance: rec.safe_distance,
        steps: rec.steps.len(),
        error: rec.error.as_deref(),
    })
}
