//! Bayesian value map over the BEV grid.
//!
//! Each cell carries a belief `mu` and a variance `sigma2`. A frame's
//! confidence `c` is spread over the camera's visible cone with weight
//! `m in [0, 1]` and fused with observation variance `1 - m`. Frontiers are
//! scored optimistically with an upper confidence bound over a disk around
//! their centroid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::Frontier;
use crate::geometry::{DepthImage, Pose, Sensor};
use crate::grid::{line_cells, Cell, Grid, MapGeometry};

pub const MU0: f64 = 0.5;
pub const SIGMA2_0: f64 = 0.5;
pub const UCB_BETA: f64 = 1.7;
/// Disk radius used to aggregate beliefs around a frontier centroid.
pub const UCB_RADIUS_M: f64 = 0.5;
/// Width of the linear taper at the cone edge, in cells.
pub const CONE_FEATHER_CELLS: usize = 2;
const EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ValueMapError {
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("invalid value-map parameter: {0}")]
    InvalidParameter(String),
    #[error("mask geometry does not match the value map")]
    Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueMap {
    pub geometry: MapGeometry,
    pub mu: Grid<f64>,
    pub sigma2: Grid<f64>,
}

/// Per-cell observation weight `m`. `support` lists the non-zero cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeMask {
    pub geometry: MapGeometry,
    pub m: Grid<f64>,
    pub support: Vec<Cell>,
}

impl ConeMask {
    pub fn empty(geometry: MapGeometry) -> Self {
        Self {
            geometry,
            m: geometry.grid(0.0),
            support: Vec::new(),
        }
    }

    /// Mask with the given weights; zero entries are not part of the support.
    pub fn from_weights(geometry: MapGeometry, weights: &[(Cell, f64)]) -> Self {
        let mut mask = Self::empty(geometry);
        for &(c, w) in weights {
            if w > 0.0 && mask.m.set(c, w.min(1.0)) {
                mask.support.push(c);
            }
        }
        mask.support.sort_unstable();
        mask.support.dedup();
        mask
    }

    pub fn full(geometry: MapGeometry, weight: f64) -> Self {
        let weights: Vec<(Cell, f64)> = geometry.grid(()).cells().map(|c| (c, weight)).collect();
        Self::from_weights(geometry, &weights)
    }
}

/// Cells seen by a frame: every valid return plus the free-space rays from
/// the camera to the farthest return of each image column, tapered to zero
/// over the outermost cells.
pub fn build_cone_mask(depth: &DepthImage, sensor: &Sensor, pose: &Pose, geometry: MapGeometry) -> ConeMask {
    let Ok(world) = sensor.to_world(depth, pose) else {
        return ConeMask::empty(geometry);
    };
    let mut seen = geometry.grid(false);
    let origin = geometry.world_to_cell(pose.x, pose.y);
    let (w, h) = (depth.width, depth.height);
    for u in 0..w {
        let mut far: Option<(f64, Cell)> = None;
        for v in 0..h {
            let i = v * w + u;
            if !world.valid[i] {
                continue;
            }
            let p = world.points[i];
            let cell = geometry.world_to_cell(p.x, p.y);
            seen.set(cell, true);
            let r = (p.x - pose.x).hypot(p.y - pose.y);
            if far.is_none_or(|(best, _)| r > best) {
                far = Some((r, cell));
            }
        }
        if let Some((_, end)) = far {
            for c in line_cells(origin, end) {
                seen.set(c, true);
            }
        }
    }
    let Some(bounds) = bounding_box(&seen) else {
        return ConeMask::empty(geometry);
    };
    // Chessboard distance to the nearest unseen cell, capped at feather + 1.
    let cap = CONE_FEATHER_CELLS as u32 + 1;
    let mut dist = seen.map(|&s| if s { cap } else { 0 });
    chamfer(&mut dist, bounds);
    let mut mask = ConeMask::empty(geometry);
    for y in bounds.1..=bounds.3 {
        for x in bounds.0..=bounds.2 {
            let cell = Cell::new(x, y);
            let d = dist[cell];
            if d > 0 {
                mask.m[cell] = f64::from(d) / f64::from(cap);
                mask.support.push(cell);
            }
        }
    }
    mask.support.sort_unstable();
    mask
}

/// Inclusive `(x0, y0, x1, y1)` bounds of the `true` cells.
fn bounding_box(g: &Grid<bool>) -> Option<(i32, i32, i32, i32)> {
    let mut b: Option<(i32, i32, i32, i32)> = None;
    for (c, &v) in g.iter() {
        if v {
            b = Some(match b {
                None => (c.x, c.y, c.x, c.y),
                Some((x0, y0, x1, y1)) => (x0.min(c.x), y0.min(c.y), x1.max(c.x), y1.max(c.y)),
            });
        }
    }
    b
}

/// Two-pass chessboard distance transform on pre-capped values; the map
/// border counts as unseen.
fn chamfer(d: &mut Grid<u32>, (x0, y0, x1, y1): (i32, i32, i32, i32)) {
    let at = |d: &Grid<u32>, x: i32, y: i32| d.get(Cell::new(x, y)).copied().unwrap_or(0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = Cell::new(x, y);
            if d[c] == 0 {
                continue;
            }
            let m = [(-1, 0), (-1, -1), (0, -1), (1, -1)]
                .iter()
                .map(|&(dx, dy)| at(d, x + dx, y + dy) + 1)
                .min()
                .unwrap();
            d[c] = d[c].min(m);
        }
    }
    for y in (y0..=y1).rev() {
        for x in (x0..=x1).rev() {
            let c = Cell::new(x, y);
            if d[c] == 0 {
                continue;
            }
            let m = [(1, 0), (1, 1), (0, 1), (-1, 1)]
                .iter()
                .map(|&(dx, dy)| at(d, x + dx, y + dy) + 1)
                .min()
                .unwrap();
            d[c] = d[c].min(m);
        }
    }
}

impl ValueMap {
    pub fn new(geometry: MapGeometry) -> Self {
        Self {
            geometry,
            mu: geometry.grid(MU0),
            sigma2: geometry.grid(SIGMA2_0),
        }
    }

    /// Fuses confidence `c` over the mask. Cells with `m = 0` are untouched;
    /// when prior and observation variances are both zero the cell takes the
    /// observation `c * m`.
    pub fn bayes_update(&mut self, confidence: f64, mask: &ConeMask) -> Result<(), ValueMapError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ValueMapError::Confidence(confidence));
        }
        if mask.geometry != self.geometry {
            return Err(ValueMapError::Shape);
        }
        for &cell in &mask.support {
            let m = mask.m[cell];
            if m <= 0.0 {
                continue;
            }
            let obs_var = 1.0 - m;
            let mu = self.mu[cell];
            let var = self.sigma2[cell];
            let denom = var + obs_var;
            let (mu_new, var_new) = if denom < EPS {
                (confidence * m, 0.0)
            } else {
                ((obs_var * mu + var * confidence * m) / denom, var * obs_var / denom)
            };
            self.mu[cell] = mu_new.clamp(0.0, 1.0);
            self.sigma2[cell] = var_new.max(0.0);
        }
        Ok(())
    }

    /// Element-wise max belief, min variance.
    pub fn fuse(&mut self, other: &ValueMap) -> Result<(), ValueMapError> {
        if other.geometry != self.geometry {
            return Err(ValueMapError::Shape);
        }
        for (a, b) in self.mu.as_mut_slice().iter_mut().zip(other.mu.as_slice()) {
            *a = a.max(*b);
        }
        for (a, b) in self.sigma2.as_mut_slice().iter_mut().zip(other.sigma2.as_slice()) {
            *a = a.min(*b);
        }
        Ok(())
    }

    /// Median belief and variance over in-bounds cells whose centers lie
    /// within `radius_m` of `center`; the prior when the disk is empty.
    pub fn disk_medians(&self, center: Cell, radius_m: f64) -> (f64, f64) {
        let r = radius_m / self.geometry.cell_size;
        let ri = r.floor() as i32;
        let mut mus = Vec::new();
        let mut vars = Vec::new();
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if f64::from(dx * dx + dy * dy) > r * r + 1e-9 {
                    continue;
                }
                let c = center.offset(dx, dy);
                if let (Some(&mu), Some(&var)) = (self.mu.get(c), self.sigma2.get(c)) {
                    mus.push(mu);
                    vars.push(var);
                }
            }
        }
        if mus.is_empty() {
            return (MU0, SIGMA2_0);
        }
        (median(&mut mus), median(&mut vars))
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn ucb_score(vm: &ValueMap, frontier: &Frontier, radius_m: f64, beta: f64) -> Result<f64, ValueMapError> {
    if !(radius_m > 0.0) {
        return Err(ValueMapError::InvalidParameter(format!("radius {radius_m} must be positive")));
    }
    let (mu, var) = vm.disk_medians(frontier.centroid, radius_m);
    Ok(mu + beta * var.sqrt())
}

/// Min-max normalization; a degenerate range maps every score to 0.5.
pub fn normalize_values(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Value-map summary of a frontier set: raw UCB scores and their normalization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontierValues {
    pub ucb: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn frontier_values(vm: &ValueMap, frontiers: &[Frontier], radius_m: f64, beta: f64) -> FrontierValues {
    let ucb: Vec<f64> = frontiers
        .iter()
        .map(|f| ucb_score(vm, f, radius_m, beta).unwrap_or(MU0 + beta * SIGMA2_0.sqrt()))
        .collect();
    let normalized = normalize_values(&ucb);
    FrontierValues { ucb, normalized }
}
