//! Detection and frontier-scoring contracts, multi-view confirmation and the
//! utility blend that combines scorer output with value-map evidence.

pub mod external;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{PixelMask, RgbImage};
use crate::simulator::Observation;

pub use external::{EchoServer, ExternalDetector, ExternalScorer, FaultMode};
pub use oracle::{AdversarialScorer, OracleDetector, OracleScorer, UniformScorer, UnavailableDetector, UnavailableScorer};

/// Detection confidence threshold (strict).
pub const TAU_DET: f64 = 0.30;
/// Consecutive hits needed to confirm a goal.
pub const N_CONFIRM: u32 = 2;
/// Score used when no scorer answer is available.
pub const FALLBACK_SCORE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out")]
    Timeout,
    #[error("protocol error: {reason} (payload: {raw})")]
    Protocol { reason: String, raw: String },
    #[error("length mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalQuery {
    pub text: String,
    pub query_id: u32,
}

impl GoalQuery {
    pub fn new(text: impl Into<String>, query_id: u32) -> Option<Self> {
        let text = text.into();
        (!text.trim().is_empty()).then_some(Self { text, query_id })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// `[x1, y1, x2, y2]`, upper corner exclusive.
    pub bbox: [u32; 4],
    pub confidence: f64,
    pub mask: PixelMask,
}

impl Detection {
    /// Builds a detection whose box is the mask's bounding box. `None` for an
    /// empty mask.
    pub fn from_mask(mask: PixelMask, confidence: f64) -> Option<Self> {
        let bbox = mask.bbox()?;
        Some(Self {
            bbox,
            confidence: confidence.clamp(0.0, 1.0),
            mask,
        })
    }
}

/// Open-vocabulary detector. Implementations must be callable from several
/// agents at once.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;
    /// Detections sorted by confidence, highest first.
    fn detect(&self, obs: &Observation, query: &GoalQuery) -> Result<Vec<Detection>, PerceptionError>;
}

/// Named reasoning stages forwarded to the scorer. Only the scorer knows what
/// they mean; the pipeline consumes the numeric scores.
pub const REASONING_STAGES: [&str; 3] = ["scene_caption", "room_type", "frontier_ranking"];

#[derive(Clone, Debug)]
pub struct ScoreRequest<'a> {
    pub agent_id: usize,
    pub query: &'a GoalQuery,
    /// Frontier centroids in world meters.
    pub frontiers: &'a [(f64, f64)],
    /// Opaque summary of what the agent has seen so far.
    pub history: &'a str,
    pub stages: &'a [&'a str],
    pub rgb: Option<&'a RgbImage>,
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    /// One score in `[0, 1]` per frontier.
    fn score_frontiers(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError>;
}

/// Scores from `scorer`, or [`FALLBACK_SCORE`] everywhere when it fails or
/// answers with the wrong shape. The error is returned for logging.
pub fn score_or_fallback(scorer: &dyn Scorer, req: &ScoreRequest<'_>) -> (Vec<f64>, Option<PerceptionError>) {
    let n = req.frontiers.len();
    match scorer.score_frontiers(req) {
        Ok(s) if s.len() == n => (s.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { FALLBACK_SCORE }).collect(), None),
        Ok(s) => (vec![FALLBACK_SCORE; n], Some(PerceptionError::Shape(s.len(), n))),
        Err(e) => (vec![FALLBACK_SCORE; n], Some(e)),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfirmationState {
    pub query_id: u32,
    pub consecutive_hits: u32,
    pub last_confirmed: Option<Detection>,
}

impl ConfirmationState {
    pub fn new(query_id: u32) -> Self {
        Self {
            query_id,
            ..Self::default()
        }
    }
}

/// Advances the confirmation counter with one frame of detections. A frame
/// is a hit when its best confidence strictly exceeds `tau_det`; a miss
/// resets the counter.
pub fn confirm(
    state: &ConfirmationState,
    detections: &[Detection],
    tau_det: f64,
    n_confirm: u32,
) -> (ConfirmationState, bool) {
    let best = detections
        .iter()
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let mut next = state.clone();
    match best {
        Some(d) if d.confidence > tau_det => {
            next.consecutive_hits = state.consecutive_hits.saturating_add(1);
            let confirmed = next.consecutive_hits >= n_confirm;
            if confirmed {
                next.last_confirmed = Some(d.clone());
            }
            (next, confirmed)
        }
        _ => {
            next.consecutive_hits = 0;
            (next, false)
        }
    }
}

/// `U_i = (1 - w) s_i + w v_i`.
pub fn blend_utility(scores: &[f64], values: &[f64], w: f64) -> Result<Vec<f64>, PerceptionError> {
    if scores.len() != values.len() {
        return Err(PerceptionError::Shape(scores.len(), values.len()));
    }
    Ok(scores
        .iter()
        .zip(values)
        .map(|(s, v)| (1.0 - w) * s + w * v)
        .collect())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
