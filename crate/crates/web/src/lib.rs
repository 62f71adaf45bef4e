//! WebAssembly bindings for the demo page. Every type renders into an RGBA
//! buffer that the page copies into a canvas.

use std::sync::Arc;

use goalnav::coordination::{SubtaskRun, Team, TeamConfig};
use goalnav::grid::{Cell, Grid, MapGeometry};
use goalnav::metrics::SubtaskRecord;
use goalnav::perception::{OracleDetector, OracleScorer};
use goalnav::planner::{descend, fmm_solve, DistanceField};
use goalnav::simulator::{generate, label_color, GeneratorConfig, World};
use goalnav::valuemap::{ConeMask, ValueMap, SIGMA2_0, UCB_BETA};
use wasm_bindgen::prelude::*;

fn world_for(seed: u32) -> Result<World, String> {
    let scenario = generate(&GeneratorConfig::default(), u64::from(seed)).map_err(|e| e.to_string())?;
    World::from_scenario(&scenario).map_err(|e| e.to_string())
}

fn put(buf: &mut [u8], w: usize, h: usize, c: Cell, rgb: [u8; 3]) {
    if c.x < 0 || c.y < 0 || c.x as usize >= w || c.y as usize >= h {
        return;
    }
    // North-up: row 0 of the canvas is the largest y.
    let i = ((h - 1 - c.y as usize) * w + c.x as usize) * 4;
    buf[i..i + 3].copy_from_slice(&rgb);
    buf[i + 3] = 255;
}

fn heat(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [(255.0 * v) as u8, (80.0 + 100.0 * (1.0 - (2.0 * v - 1.0).abs())) as u8, (255.0 * (1.0 - v)) as u8]
}

/// Fast-marching distance field over a generated floor plan. Click a goal,
/// then trace the descent path from any start.
#[wasm_bindgen]
pub struct FmmDemo {
    trav: Grid<bool>,
    field: Option<DistanceField>,
    path: Vec<Cell>,
}

impl FmmDemo {
    pub fn try_new(seed: u32) -> Result<FmmDemo, String> {
        let world = world_for(seed)?;
        Ok(Self {
            trav: world.feasible().clone(),
            field: None,
            path: Vec::new(),
        })
    }

    pub fn goal_set(&self) -> bool {
        self.field.is_some()
    }

    pub fn path_len(&self) -> usize {
        self.path.len()
    }
}

#[wasm_bindgen]
impl FmmDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<FmmDemo, JsError> {
        Self::try_new(seed).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> u32 {
        self.trav.width() as u32
    }

    pub fn height(&self) -> u32 {
        self.trav.height() as u32
    }

    /// Solves from canvas pixel `(px, py)`; false when that cell is blocked.
    pub fn set_goal(&mut self, px: u32, py: u32) -> bool {
        let c = self.canvas_cell(px, py);
        if !self.trav.get(c).copied().unwrap_or(false) {
            return false;
        }
        self.field = fmm_solve(&self.trav, &[c]).ok();
        self.path.clear();
        self.field.is_some()
    }

    /// Descends from `(px, py)` to the goal; returns the path length in cells
    /// (0 when unreachable).
    pub fn trace_from(&mut self, px: u32, py: u32) -> u32 {
        let c = self.canvas_cell(px, py);
        self.path = self
            .field
            .as_ref()
            .and_then(|f| descend(f, c, self.trav.len()).ok())
            .unwrap_or_default();
        self.path.len().saturating_sub(1) as u32
    }

    pub fn rgba(&self) -> Vec<u8> {
        let (w, h) = (self.trav.width(), self.trav.height());
        let mut buf = vec![0u8; w * h * 4];
        let max = self
            .field
            .as_ref()
            .map(|f| f.grid().as_slice().iter().copied().filter(|v| v.is_finite()).fold(1.0, f64::max))
            .unwrap_or(1.0);
        for (c, &free) in self.trav.iter() {
            let rgb = match (&self.field, free) {
                (_, false) => [30, 30, 30],
                (None, true) => [235, 235, 235],
                (Some(f), true) => {
                    let t = f.arrival(c);
                    if t.is_finite() {
                        heat(t / max)
                    } else {
                        [120, 120, 120]
                    }
                }
            };
            put(&mut buf, w, h, c, rgb);
        }
        for &c in &self.path {
            put(&mut buf, w, h, c, [255, 255, 255]);
        }
        buf
    }
}

impl FmmDemo {
    fn canvas_cell(&self, px: u32, py: u32) -> Cell {
        Cell::new(px as i32, self.trav.height() as i32 - 1 - py as i32)
    }
}

/// Bayesian value map driven by clicks: each click observes a cone from the
/// map center toward the click with the chosen confidence.
#[wasm_bindgen]
pub struct ValueMapDemo {
    vm: ValueMap,
    show_ucb: bool,
}

#[wasm_bindgen]
impl ValueMapDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32) -> ValueMapDemo {
        let n = size.clamp(16, 256) as usize;
        Self {
            vm: ValueMap::new(MapGeometry::new(n, n, 0.0, 0.0, 0.05)),
            show_ucb: false,
        }
    }

    pub fn size(&self) -> u32 {
        self.vm.geometry.width as u32
    }

    pub fn set_show_ucb(&mut self, on: bool) {
        self.show_ucb = on;
    }

    /// Observes a 40 degree cone from the center toward canvas pixel
    /// `(px, py)` with confidence `c`; returns the belief at that pixel.
    pub fn observe(&mut self, px: u32, py: u32, c: f64) -> f64 {
        let n = self.vm.geometry.width as i32;
        let center = Cell::new(n / 2, n / 2);
        let target = Cell::new(px as i32, n - 1 - py as i32);
        let heading = f64::from(target.y - center.y).atan2(f64::from(target.x - center.x));
        let half = 20f64.to_radians();
        let mut weights = Vec::new();
        for (cell, _) in self.vm.mu.iter() {
            let (dx, dy) = (f64::from(cell.x - center.x), f64::from(cell.y - center.y));
            let r = dx.hypot(dy);
            if r < 1.0 {
                continue;
            }
            let off = (dy.atan2(dx) - heading + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                - std::f64::consts::PI;
            if off.abs() <= half {
                weights.push((cell, (1.0 - (off / half).powi(2)).max(0.05)));
            }
        }
        let mask = ConeMask::from_weights(self.vm.geometry, &weights);
        let _ = self.vm.bayes_update(c.clamp(0.0, 1.0), &mask);
        self.vm.mu.get(target).copied().unwrap_or(f64::NAN)
    }

    pub fn reset(&mut self) {
        self.vm = ValueMap::new(self.vm.geometry);
    }

    pub fn rgba(&self) -> Vec<u8> {
        let n = self.vm.geometry.width;
        let mut buf = vec![0u8; n * n * 4];
        let top = 1.0 + UCB_BETA * SIGMA2_0.sqrt();
        for (c, &mu) in self.vm.mu.iter() {
            let v = if self.show_ucb {
                (mu + UCB_BETA * self.vm.sigma2[c].sqrt()) / top
            } else {
                mu
            };
            put(&mut buf, n, n, c, heat(v));
        }
        buf
    }
}

/// A live oracle-guided team episode on a generated floor plan.
#[wasm_bindgen]
pub struct EpisodeDemo {
    world: Arc<World>,
    team: Team,
    scorer: OracleScorer,
    detector: OracleDetector,
    subtask: usize,
    run: Option<SubtaskRun>,
    records: Vec<SubtaskRecord>,
}

impl EpisodeDemo {
    pub fn try_new(seed: u32, agents: u32) -> Result<EpisodeDemo, String> {
        let world = Arc::new(world_for(seed)?);
        let cfg = TeamConfig {
            agents: agents.clamp(1, 4) as usize,
            ..TeamConfig::default()
        };
        let team = Team::new(world.clone(), cfg.clone()).map_err(|e| e.to_string())?;
        Ok(Self {
            scorer: OracleScorer::new(world.clone()),
            detector: OracleDetector::new(world.clone(), cfg.sensor),
            world,
            team,
            subtask: 0,
            run: None,
            records: Vec::new(),
        })
    }

    pub fn records(&self) -> &[SubtaskRecord] {
        &self.records
    }
}

#[wasm_bindgen]
impl EpisodeDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, agents: u32) -> Result<EpisodeDemo, JsError> {
        Self::try_new(seed, agents).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> u32 {
        self.world.geometry.width as u32
    }

    pub fn height(&self) -> u32 {
        self.world.geometry.height as u32
    }

    pub fn finished(&self) -> bool {
        self.subtask >= self.world.subtasks.len()
    }

    /// Runs up to `rounds` lockstep rounds; a subtask ends on the first STOP
    /// or when its budget runs out. Returns a one-line status.
    pub fn step(&mut self, rounds: u32) -> String {
        for _ in 0..rounds {
            if self.finished() {
                break;
            }
            if let Err(e) = self.advance() {
                return format!("error: {e}");
            }
        }
        self.status()
    }

    pub fn status(&self) -> String {
        let done = self.records.iter().filter(|r| r.success).count();
        match self.world.subtasks.get(self.subtask) {
            Some(l) => format!(
                "subtask {}/{}: find {l} | round {} | {done} found so far",
                self.subtask + 1,
                self.world.subtasks.len(),
                self.run.as_ref().map_or(0, SubtaskRun::rounds)
            ),
            None => format!("episode done: {done}/{} subtasks succeeded", self.records.len()),
        }
    }

    pub fn rgba(&self) -> Vec<u8> {
        let g = self.world.geometry;
        let (w, h) = (g.width, g.height);
        let mut buf = vec![0u8; w * h * 4];
        let map = &self.team.shared;
        for (c, &explored) in map.explored.iter() {
            let rgb = match (explored, map.obstacle[c]) {
                (false, _) => [70, 70, 80],
                (true, true) => [20, 20, 20],
                (true, false) => [230, 230, 225],
            };
            put(&mut buf, w, h, c, rgb);
        }
        if let Some(label) = self.world.subtasks.get(self.subtask) {
            for o in self.world.objects_with_label(label) {
                let a = g.world_to_cell(o.min[0], o.min[1]);
                let b = g.world_to_cell(o.max[0] - 1e-6, o.max[1] - 1e-6);
                for y in a.y..=b.y {
                    for x in a.x..=b.x {
                        if x == a.x || x == b.x || y == a.y || y == b.y {
                            put(&mut buf, w, h, Cell::new(x, y), label_color(label));
                        }
                    }
                }
            }
        }
        let colors = [[220, 40, 40], [30, 90, 220], [20, 160, 60], [200, 120, 0]];
        for (i, a) in self.team.agents.iter().enumerate() {
            for p in &a.trajectory {
                put(&mut buf, w, h, g.world_to_cell(p.x, p.y), colors[i % colors.len()]);
            }
            let c = a.cell();
            for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                put(&mut buf, w, h, c.offset(dx, dy), colors[i % colors.len()]);
            }
        }
        buf
    }
}

impl EpisodeDemo {
    fn advance(&mut self) -> Result<(), goalnav::coordination::CoordinationError> {
        let mut run = match self.run.take() {
            Some(r) => r,
            None => {
                let label = self.world.subtasks[self.subtask].clone();
                self.team.start_subtask(self.subtask, &label)?
            }
        };
        if self.team.step_subtask(&mut run, &self.scorer, &self.detector, &mut ())? {
            self.records.push(self.team.finish_subtask(&run));
            self.subtask += 1;
        } else {
            self.run = Some(run);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmm_demo_traces_a_path() {
        let mut d = FmmDemo::try_new(1).unwrap();
        let (w, h) = (d.width(), d.height());
        assert!(!d.set_goal(0, 0), "border cell is wall");
        let mut goal = None;
        'outer: for y in h / 4..h {
            for x in w / 4..w {
                if d.set_goal(x, y) {
                    goal = Some((x, y));
                    break 'outer;
                }
            }
        }
        assert!(goal.is_some() && d.goal_set());
        let (gx, gy) = goal.unwrap();
        assert!(d.trace_from(gx + 3, gy) > 0 || d.path_len() <= 1);
        assert_eq!(d.rgba().len(), (w * h * 4) as usize);
    }

    #[test]
    fn value_map_demo_converges_toward_confidence() {
        let mut d = ValueMapDemo::new(64);
        let mut mu = 0.5;
        for _ in 0..30 {
            mu = d.observe(60, 32, 0.9);
        }
        assert!(mu > 0.8, "{mu}");
        d.set_show_ucb(true);
        assert_eq!(d.rgba().len(), 64 * 64 * 4);
        d.reset();
        assert_eq!(d.observe(60, 32, 0.5), 0.5);
    }

    #[test]
    fn episode_demo_runs_to_completion() {
        let mut d = EpisodeDemo::try_new(0, 2).unwrap();
        let mut guard = 0;
        while !d.finished() && guard < 10_000 {
            d.step(50);
            guard += 50;
        }
        assert!(d.finished());
        assert!(d.status().starts_with("episode done"));
        assert!(d.records().iter().any(|r| r.success));
        assert_eq!(d.rgba().len(), (d.width() * d.height() * 4) as usize);
    }
}
