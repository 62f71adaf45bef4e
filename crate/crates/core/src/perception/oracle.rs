//! Simulator-backed detector and scorers, plus trivial and always-failing ones.

use std::sync::Arc;

use super::{Detection, Detector, GoalQuery, PerceptionError, ScoreRequest, Scorer, FALLBACK_SCORE};
use crate::geometry::Sensor;
use crate::image::PixelMask;
use crate::simulator::{Observation, World};

/// Pixels an instance must cover before the oracle reports it.
pub const MIN_DETECTION_PIXELS: usize = 12;
/// Length scale of the geodesic oracle score.
pub const ORACLE_TAU_S_M: f64 = 5.0;

/// Ground-truth detector. Confidence is the instance's visibility fraction:
/// visible pixels over the pixels its box would cover without occluders.
pub struct OracleDetector {
    world: Arc<World>,
    sensor: Sensor,
    min_pixels: usize,
}

impl OracleDetector {
    pub fn new(world: Arc<World>, sensor: Sensor) -> Self {
        Self {
            world,
            sensor,
            min_pixels: MIN_DETECTION_PIXELS,
        }
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&self, obs: &Observation, query: &GoalQuery) -> Result<Vec<Detection>, PerceptionError> {
        let (w, h) = (obs.depth.width, obs.depth.height);
        let origin = [obs.pose.x, obs.pose.y, self.sensor.extrinsics.sensor_height_m];
        let mut out = Vec::new();
        for obj in self.world.objects_with_label(&query.text) {
            let visible: Vec<u32> = obs
                .instance
                .iter()
                .enumerate()
                .filter(|(_, &id)| id == obj.id)
                .map(|(i, _)| i as u32)
                .collect();
            if visible.len() < self.min_pixels {
                continue;
            }
            let mut unoccluded = 0usize;
            for v in 0..h {
                for u in 0..w {
                    let d = self.world.pixel_ray(&obs.pose, &self.sensor, u, v);
                    if obj.ray_entry(origin, d).is_some_and(|t| t <= self.sensor.max_depth) {
                        unoccluded += 1;
                    }
                }
            }
            let conf = visible.len() as f64 / unoccluded.max(visible.len()) as f64;
            if let Some(d) = Detection::from_mask(PixelMask::new(w, h, visible), conf) {
                out.push(d);
            }
        }
        out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(out)
    }
}

/// Scores frontiers by `exp(-d / tau_s)` where `d` is the true geodesic from
/// the frontier to the nearest goal instance.
pub struct OracleScorer {
    world: Arc<World>,
}

impl OracleScorer {
    pub fn new(world: Arc<World>) -> Self {
        Self { world }
    }

    fn geodesic_score(&self, label: &str, p: (f64, f64)) -> f64 {
        let field = self.world.goal_field(label);
        let g = self.world.geometry;
        let c = g.world_to_cell(p.0, p.1);
        // Frontier centroids can sit inside the body-radius margin of a wall.
        let d = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter_map(|(dx, dy)| field.get(c.offset(dx, dy)).copied())
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            (-d / ORACLE_TAU_S_M).exp()
        } else {
            0.0
        }
    }
}

impl Scorer for OracleScorer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score_frontiers(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError> {
        Ok(req
            .frontiers
            .iter()
            .map(|&p| self.geodesic_score(&req.query.text, p))
            .collect())
    }
}

/// `1 - oracle`: steers toward the frontier farthest from the goal.
pub struct AdversarialScorer(OracleScorer);

impl AdversarialScorer {
    pub fn new(world: Arc<World>) -> Self {
        Self(OracleScorer::new(world))
    }
}

impl Scorer for AdversarialScorer {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn score_frontiers(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError> {
        Ok(self.0.score_frontiers(req)?.into_iter().map(|s| 1.0 - s).collect())
    }
}

pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn name(&self) -> &str {
        "uniform"
    }

    fn score_frontiers(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError> {
        Ok(vec![FALLBACK_SCORE; req.frontiers.len()])
    }
}

/// Always fails; exercises the fallback path.
pub struct UnavailableScorer;

impl Scorer for UnavailableScorer {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn score_frontiers(&self, _req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError> {
        Err(PerceptionError::Unavailable("scorer disabled".into()))
    }
}

pub struct UnavailableDetector;

impl Detector for UnavailableDetector {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn detect(&self, _obs: &Observation, _query: &GoalQuery) -> Result<Vec<Detection>, PerceptionError> {
        Err(PerceptionError::Unavailable("detector disabled".into()))
    }
}
