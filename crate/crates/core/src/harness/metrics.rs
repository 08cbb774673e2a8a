use serde::{Deserialize, Serialize};

use super::record::EpisodeRecord;
use crate::error::{ApexError, Result};

/// Aggregate navigation metrics. Rates are percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub episodes: usize,
    pub sr: f64,
    pub osr: f64,
    pub spl: f64,
    /// Mean final distance to the target center, meters.
    pub ne: f64,
    /// Mean action-step latency over all steps, seconds.
    pub mean_step_latency: f64,
    /// Mean collision-free path length, meters.
    pub safe_distance: f64,
}

/// Order-independent mean: sums the sorted values.
fn mean(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.into_iter().sum::<f64>() / n
}

/// SPL contribution of one episode. A zero optimal length counts 1 for a
/// success and 0 otherwise.
pub fn spl_term(success: bool, shortest: f64, actual: f64) -> f64 {
    if !success {
        0.0
    } else if shortest <= 0.0 {
        1.0
    } else {
        shortest / shortest.max(actual)
    }
}

pub fn compute_metrics(records: &[EpisodeRecord], success_distance: f64) -> Result<MetricsSummary> {
    if records.is_empty() {
        return Err(ApexError::Input("no episode records".into()));
    }
    if let Some(r) = records
        .iter()
        .find(|r| !r.shortest_path.is_finite() || r.shortest_path < 0.0)
    {
        return Err(ApexError::Input(format!(
            "record `{}` has no finite shortest-path length",
            r.scene_id
        )));
    }
    let pct = |xs: Vec<f64>| 100.0 * mean(xs);
    let success: Vec<bool> = records
        .iter()
        .map(|r| r.is_success(success_distance))
        .collect();
    Ok(MetricsSummary {
        episodes: records.len(),
        sr: pct(success.iter().map(|&s| f64::from(u8::from(s))).collect()),
        osr: pct(records
            .iter()
            .map(|r| f64::from(u8::from(r.is_oracle_success(success_distance))))
            .collect()),
        spl: pct(records
            .iter()
            .zip(&success)
            .map(|(r, &s)| spl_term(s, r.shortest_path, r.path_length))
            .collect()),
        ne: mean(records.iter().map(|r| r.final_distance).collect()),
        mean_step_latency: mean(
            records
                .iter()
                .flat_map(|r| r.steps.iter().map(|s| s.latency))
                .collect(),
        ),
        safe_distance: mean(records.iter().map(|r| r.safe_distance).collect()),
    })
}
