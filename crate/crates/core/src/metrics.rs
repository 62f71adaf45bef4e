//! Subtask success, SPL, distance-to-goal and batch summaries under the
//! multi-agent conventions: path length sums the largest per-round
//! displacement across agents, distances take the minimum across agents.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Success radius around the goal footprint.
pub const D_SUCCESS_M: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

/// One line of the record log. Field names are stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    pub scenario: String,
    pub subtask: usize,
    pub query: String,
    pub agents: usize,
    pub success: bool,
    pub stop_called: bool,
    /// Geodesic to the goal at subtask start, minimum over agents.
    pub d_geo: f64,
    /// Sum over rounds of the largest single-agent displacement.
    pub d_agent: f64,
    pub dtg_final: f64,
    pub spl: f64,
    pub steps: usize,
    pub scorer_fallbacks: usize,
    pub detector_errors: usize,
}

impl SubtaskRecord {
    pub fn check(&self) -> Result<(), MetricsError> {
        if !(self.d_agent >= 0.0) {
            return Err(MetricsError::InvalidRecord(format!("d_agent {} < 0", self.d_agent)));
        }
        if self.success && !(self.stop_called && self.dtg_final <= D_SUCCESS_M) {
            return Err(MetricsError::InvalidRecord(
                "success requires STOP within the success radius".into(),
            ));
        }
        Ok(())
    }
}

/// `S * d_geo / max(d_geo, d_agent)`.
pub fn spl(success: bool, d_geo: f64, d_agent: f64) -> Result<f64, MetricsError> {
    if !(d_geo > 0.0) || !d_geo.is_finite() {
        return Err(MetricsError::InvalidRecord(format!("d_geo must be positive and finite, got {d_geo}")));
    }
    if !(d_agent >= 0.0) {
        return Err(MetricsError::InvalidRecord(format!("d_agent must be non-negative, got {d_agent}")));
    }
    Ok(if success { d_geo / d_geo.max(d_agent) } else { 0.0 })
}

/// `sum over rounds of max_i displacement_i`. Each inner slice holds one
/// round's per-agent displacements.
pub fn accumulate_multiagent_path<R: AsRef<[f64]>>(rounds: &[R]) -> f64 {
    rounds
        .iter()
        .map(|r| r.as_ref().iter().copied().fold(0.0, f64::max))
        .sum()
}

/// Axis-aligned goal footprint in the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Footprint {
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min[0] - x).max(0.0).max(x - self.max[0]);
        let dy = (self.min[1] - y).max(0.0).max(y - self.max[1]);
        dx.hypot(dy)
    }
}

/// Minimum over agents of the Euclidean distance to the nearest footprint point.
pub fn dtg(positions: &[(f64, f64)], goals: &[Footprint]) -> f64 {
    positions
        .iter()
        .flat_map(|&(x, y)| goals.iter().map(move |g| g.distance(x, y)))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeCategory {
    Perfect,
    Partial,
    CompleteFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario: String,
    pub records: Vec<SubtaskRecord>,
}

impl EpisodeResult {
    pub fn category(&self) -> EpisodeCategory {
        let ok = self.records.iter().filter(|r| r.success).count();
        if ok == self.records.len() && ok > 0 {
            EpisodeCategory::Perfect
        } else if ok == 0 {
            EpisodeCategory::CompleteFailure
        } else {
            EpisodeCategory::Partial
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub attempts: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DtgBuckets {
    pub below_1_5: usize,
    pub from_1_5_to_3_0: usize,
    pub above_3_0: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: usize,
    pub subtasks: usize,
    pub successes: usize,
    pub sr: f64,
    pub spl: f64,
    pub dtg_mean: f64,
    pub dtg_median: f64,
    /// Mean final DTG over failed subtasks (`null` when none failed).
    pub failure_dtg_mean: Option<f64>,
    /// Mean rounds over successful subtasks.
    pub mean_steps_to_success: Option<f64>,
    pub categories: BTreeMap<EpisodeCategory, usize>,
    pub failure_buckets: DtgBuckets,
    pub per_label: BTreeMap<String, LabelStats>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.subtasks == 0
    }

    pub fn category_fraction(&self, c: EpisodeCategory) -> f64 {
        if self.episodes == 0 {
            return 0.0;
        }
        self.categories.get(&c).copied().unwrap_or(0) as f64 / self.episodes as f64
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        if self.is_empty() {
            s.push_str("no subtasks were run\n");
            return s;
        }
        let _ = writeln!(s, "episodes            {}", self.episodes);
        let _ = writeln!(s, "subtasks            {}", self.subtasks);
        let _ = writeln!(s, "subtask SR          {:.3}", self.sr);
        let _ = writeln!(s, "SPL                 {:.3}", self.spl);
        let _ = writeln!(s, "DTG mean / median   {:.3} / {:.3} m", self.dtg_mean, self.dtg_median);
        match self.failure_dtg_mean {
            Some(d) => {
                let _ = writeln!(s, "DTG on failures     {d:.3} m");
            }
            None => s.push_str("DTG on failures     -\n"),
        }
        match self.mean_steps_to_success {
            Some(d) => {
                let _ = writeln!(s, "steps to success    {d:.1}");
            }
            None => s.push_str("steps to success    -\n"),
        }
        for c in [EpisodeCategory::Perfect, EpisodeCategory::Partial, EpisodeCategory::CompleteFailure] {
            let _ = writeln!(s, "{:<20}{:.1}%", format!("{c:?}"), 100.0 * self.category_fraction(c));
        }
        let b = &self.failure_buckets;
        let _ = writeln!(
            s,
            "failures by DTG     <1.5 m: {}  1.5-3.0 m: {}  >3.0 m: {}",
            b.below_1_5, b.from_1_5_to_3_0, b.above_3_0
        );
        s.push_str("label               SR      n\n");
        for (label, st) in &self.per_label {
            let _ = writeln!(
                s,
                "{label:<20}{:.3}   {}",
                st.successes as f64 / st.attempts.max(1) as f64,
                st.attempts
            );
        }
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub fn summarize(results: &[EpisodeResult]) -> Report {
    let records: Vec<&SubtaskRecord> = results.iter().flat_map(|e| &e.records).collect();
    if records.is_empty() {
        return Report {
            episodes: results.len(),
            ..Report::default()
        };
    }
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let spls: Vec<f64> = records.iter().map(|r| r.spl).collect();
    let mut dtgs: Vec<f64> = records.iter().map(|r| r.dtg_final).collect();
    let fail_dtgs: Vec<f64> = records.iter().filter(|r| !r.success).map(|r| r.dtg_final).collect();
    let steps: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.steps as f64).collect();

    let mut buckets = DtgBuckets::default();
    for &d in &fail_dtgs {
        if d < 1.5 {
            buckets.below_1_5 += 1;
        } else if d <= 3.0 {
            buckets.from_1_5_to_3_0 += 1;
        } else {
            buckets.above_3_0 += 1;
        }
    }
    let mut per_label: BTreeMap<String, LabelStats> = BTreeMap::new();
    for r in &records {
        let e = per_label.entry(r.query.clone()).or_default();
        e.attempts += 1;
        e.successes += usize::from(r.success);
    }
    let mut categories = BTreeMap::new();
    for e in results {
        *categories.entry(e.category()).or_insert(0) += 1;
    }
    Report {
        episodes: results.len(),
        subtasks: n,
        successes,
        sr: successes as f64 / n as f64,
        spl: mean(&spls),
        dtg_mean: mean(&dtgs),
        dtg_median: median(&mut dtgs),
        failure_dtg_mean: (!fail_dtgs.is_empty()).then(|| mean(&fail_dtgs)),
        mean_steps_to_success: (!steps.is_empty()).then(|| mean(&steps)),
        categories,
        failure_buckets: buckets,
        per_label,
    }
}
