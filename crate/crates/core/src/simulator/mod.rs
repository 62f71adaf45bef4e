//! Deterministic voxel-world simulator: depth and label rendering by ray
//! marching, discrete-action kinematics with collision truncation, and
//! ground-truth geodesics for metrics and oracles.

pub mod procedural;
pub mod scenario;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{normalize_angle, DepthImage, Pose, Sensor};
use crate::grid::{dilate, line_cells, Cell, Grid, MapGeometry};
use crate::image::RgbImage;
use crate::planner::{fmm_solve_seeded, Action, FORWARD_STEP_M};

pub use procedural::{generate, generate_set, GeneratorConfig, VOCABULARY};
pub use scenario::{load_dir, ObjectSpec, Scenario, ScenarioError, SpawnSpec, WallSpec};

pub const SIM_CELL_M: f64 = 0.05;
/// Collision radius of the agent body.
pub const AGENT_RADIUS_M: f64 = 0.08;
/// Depth rays that hit a pierced object continue through everything for
/// this far, modelling reflective surfaces whose depth reads behind them.
pub const PIERCE_SKIP_M: f64 = 0.6;
/// Goal region used for ground-truth geodesics: cells within this distance
/// of the object footprint seed the field with their Euclidean offset.
const GOAL_BAND_M: f64 = 1.0;
const FORWARD_SUBSTEP_M: f64 = 0.01;

/// Instance id for floor hits and missing returns.
pub const ID_NONE: u16 = 0;
pub const ID_WALL: u16 = 1;
const FIRST_OBJECT_ID: u16 = 2;

const WALL_RGB: [u8; 3] = [170, 170, 170];
const FLOOR_RGB: [u8; 3] = [90, 80, 70];

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("goal '{label}' unreachable from spawn {spawn}")]
    Unreachable { label: String, spawn: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldObject {
    pub id: u16,
    pub label: String,
    /// Voxelized box, snapped outward to the cell lattice.
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub pierced: bool,
}

impl WorldObject {
    /// Planar distance from a point to the footprint rectangle.
    pub fn distance_2d(&self, x: f64, y: f64) -> f64 {
        let dx = (self.min[0] - x).max(0.0).max(x - self.max[0]);
        let dy = (self.min[1] - y).max(0.0).max(y - self.max[1]);
        dx.hypot(dy)
    }

    /// Ray-box entry parameter, if the ray hits the box at `t >= 0`.
    pub fn ray_entry(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for i in 0..3 {
            if d[i].abs() < 1e-12 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
            } else {
                let a = (self.min[i] - o[i]) / d[i];
                let b = (self.max[i] - o[i]) / d[i];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t0 <= t1).then_some(t0)
    }
}

/// One rendered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// Instance id of the first surface hit per pixel ([`ID_NONE`] for floor
    /// or no return within range).
    pub instance: Vec<u16>,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub pose: Pose,
    pub collided: bool,
    pub displacement: f64,
}

#[derive(Clone, Debug)]
pub struct World {
    pub name: String,
    pub geometry: MapGeometry,
    pub height_m: f64,
    nz: usize,
    voxels: Vec<u16>,
    /// Occupied z-bin range per column, `lo > hi` when empty.
    col_range: Vec<(u16, u16)>,
    /// Chebyshev distance (cells) to the nearest occupied column.
    clearance: Vec<u16>,
    pub objects: Vec<WorldObject>,
    pub spawns: Vec<Pose>,
    pub subtasks: Vec<String>,
    blocked: Grid<bool>,
    feasible: Grid<bool>,
    goal_fields: BTreeMap<String, Grid<f64>>,
}

/// Two-pass chamfer transform; exact for the Chebyshev metric.
fn chebyshev_clearance(occupied: &[bool], nx: usize, ny: usize) -> Vec<u16> {
    let mut d: Vec<u16> = occupied.iter().map(|&o| if o { 0 } else { u16::MAX - 1 }).collect();
    let at = |x: usize, y: usize| y * nx + x;
    for y in 0..ny {
        for x in 0..nx {
            let mut v = d[at(x, y)];
            if x > 0 {
                v = v.min(d[at(x - 1, y)] + 1);
            }
            if y > 0 {
                v = v.min(d[at(x, y - 1)] + 1);
                if x > 0 {
                    v = v.min(d[at(x - 1, y - 1)] + 1);
                }
                if x + 1 < nx {
                    v = v.min(d[at(x + 1, y - 1)] + 1);
                }
            }
            d[at(x, y)] = v;
        }
    }
    for y in (0..ny).rev() {
        for x in (0..nx).rev() {
            let mut v = d[at(x, y)];
            if x + 1 < nx {
                v = v.min(d[at(x + 1, y)] + 1);
            }
            if y + 1 < ny {
                v = v.min(d[at(x, y + 1)] + 1);
                if x + 1 < nx {
                    v = v.min(d[at(x + 1, y + 1)] + 1);
                }
                if x > 0 {
                    v = v.min(d[at(x - 1, y + 1)] + 1);
                }
            }
            d[at(x, y)] = v;
        }
    }
    d
}

/// Cell index span `[lo, hi]` covering `[a, b]` on a lattice of pitch `cs`.
fn span(a: f64, b: f64, cs: f64) -> (i64, i64) {
    let lo = (a / cs + 1e-9).floor() as i64;
    let hi = ((b / cs - 1e-9).ceil() as i64 - 1).max(lo);
    (lo, hi)
}

pub fn label_color(label: &str) -> [u8; 3] {
    // FNV-1a; keep channels bright so labels never collide with wall/floor.
    let mut h: u32 = 0x811c_9dc5;
    for b in label.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    let c = |s: u32| 40 + ((h >> s) & 0xff) as u8 % 216;
    [c(0), c(8), c(16)]
}

impl World {
    pub fn from_scenario(s: &Scenario) -> Result<Self, SimError> {
        s.check_fields()?;
        let cs = SIM_CELL_M;
        let nx = (s.width_m / cs).round().max(1.0) as usize;
        let ny = (s.depth_m / cs).round().max(1.0) as usize;
        let nz = (s.wall_height_m / cs - 1e-9).ceil() as usize;
        if nz > u16::MAX as usize {
            return Err(SimError::Invalid("wall height too large".into()));
        }
        let geometry = MapGeometry::new(nx, ny, 0.0, 0.0, cs);
        let mut w = World {
            name: s.name.clone(),
            geometry,
            height_m: nz as f64 * cs,
            nz,
            voxels: vec![ID_NONE; nx * ny * nz],
            col_range: vec![(u16::MAX, 0); nx * ny],
            clearance: Vec::new(),
            objects: Vec::new(),
            spawns: Vec::new(),
            subtasks: s.subtasks.clone(),
            blocked: geometry.grid(false),
            feasible: geometry.grid(false),
            goal_fields: BTreeMap::new(),
        };

        let mut walls = s.walls.clone();
        if s.enclose {
            let (x1, y1) = (s.width_m, s.depth_m);
            let t = cs;
            for (a, b) in [
                ([0.0, t / 2.0], [x1, t / 2.0]),
                ([0.0, y1 - t / 2.0], [x1, y1 - t / 2.0]),
                ([t / 2.0, 0.0], [t / 2.0, y1]),
                ([x1 - t / 2.0, 0.0], [x1 - t / 2.0, y1]),
            ] {
                walls.push(WallSpec {
                    from: a,
                    to: b,
                    thickness_m: t,
                });
            }
        }
        for wall in &walls {
            for c in w.wall_cells(wall) {
                w.fill_column(c, 0, nz - 1, ID_WALL);
            }
        }

        for (k, o) in s.objects.iter().enumerate() {
            let id = FIRST_OBJECT_ID
                .checked_add(k as u16)
                .ok_or_else(|| SimError::Invalid("too many objects".into()))?;
            let (x0, x1) = span(o.min[0], o.max[0], cs);
            let (y0, y1) = span(o.min[1], o.max[1], cs);
            let (z0, z1) = span(o.min[2].max(0.0), o.max[2], cs);
            let z1 = z1.min(nz as i64 - 1);
            if x1 < 0 || y1 < 0 || x0 >= nx as i64 || y0 >= ny as i64 || z0 > z1 {
                return Err(SimError::Invalid(format!("object '{}' lies outside the world", o.label)));
            }
            let (x0, x1) = (x0.max(0), x1.min(nx as i64 - 1));
            let (y0, y1) = (y0.max(0), y1.min(ny as i64 - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    w.fill_column(Cell::new(x as i32, y as i32), z0 as usize, z1 as usize, id);
                }
            }
            w.objects.push(WorldObject {
                id,
                label: o.label.clone(),
                min: [x0 as f64 * cs, y0 as f64 * cs, z0 as f64 * cs],
                max: [(x1 + 1) as f64 * cs, (y1 + 1) as f64 * cs, (z1 + 1) as f64 * cs],
                pierced: o.pierced,
            });
        }

        let blocked: Vec<bool> = w.col_range.iter().map(|&(lo, hi)| lo <= hi).collect();
        w.clearance = chebyshev_clearance(&blocked, nx, ny);
        w.blocked = Grid::from_vec(nx, ny, blocked);
        let inflated = dilate(&w.blocked, AGENT_RADIUS_M / cs);
        w.feasible = inflated.map(|&b| !b);

        for (i, sp) in s.spawns.iter().enumerate() {
            let pose = Pose::new(sp.x, sp.y, sp.theta_deg.to_radians());
            if !w.is_feasible(pose.x, pose.y) {
                return Err(SimError::Invalid(format!("spawn {i} at ({}, {}) is not free floor", sp.x, sp.y)));
            }
            w.spawns.push(pose);
        }

        let labels: std::collections::BTreeSet<String> = s.subtasks.iter().cloned().collect();
        for label in labels {
            let field = w.compute_goal_field(&label);
            w.goal_fields.insert(label, field);
        }
        for label in &s.subtasks {
            for (i, sp) in w.spawns.iter().enumerate() {
                if !w.geodesic(sp, label).is_finite() {
                    return Err(SimError::Unreachable {
                        label: label.clone(),
                        spawn: i,
                    });
                }
            }
        }
        Ok(w)
    }

    fn wall_cells(&self, wall: &WallSpec) -> Vec<Cell> {
        let g = self.geometry;
        let half = (wall.thickness_m / 2.0).max(g.cell_size / 2.0);
        let (ax, ay) = (wall.from[0], wall.from[1]);
        let (bx, by) = (wall.to[0], wall.to[1]);
        let (lx, ly) = (bx - ax, by - ay);
        let len2 = lx * lx + ly * ly;
        let pad = half + g.cell_size;
        let c0 = g.world_to_cell(ax.min(bx) - pad, ay.min(by) - pad);
        let c1 = g.world_to_cell(ax.max(bx) + pad, ay.max(by) + pad);
        let mut out = Vec::new();
        for y in c0.y.max(0)..=c1.y.min(g.height as i32 - 1) {
            for x in c0.x.max(0)..=c1.x.min(g.width as i32 - 1) {
                let c = Cell::new(x, y);
                let (px, py) = g.cell_center(c);
                let t = if len2 > 0.0 {
                    (((px - ax) * lx + (py - ay) * ly) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d = (px - ax - t * lx).hypot(py - ay - t * ly);
                if d <= half + 1e-9 {
                    out.push(c);
                }
            }
        }
        // Thin or diagonal walls: keep them watertight.
        out.extend(
            line_cells(g.world_to_cell(ax, ay), g.world_to_cell(bx, by))
                .into_iter()
                .filter(|&c| g.contains(c)),
        );
        out
    }

    fn fill_column(&mut self, c: Cell, z0: usize, z1: usize, id: u16) {
        let col = c.y as usize * self.geometry.width + c.x as usize;
        for z in z0..=z1 {
            self.voxels[col * self.nz + z] = id;
        }
        let r = &mut self.col_range[col];
        r.0 = r.0.min(z0 as u16);
        r.1 = r.1.max(z1 as u16);
    }

    pub fn height_bins(&self) -> usize {
        self.nz
    }

    /// Instance id of the voxel at `(cell, z)`.
    pub fn voxel(&self, c: Cell, z: usize) -> u16 {
        if !self.geometry.contains(c) || z >= self.nz {
            return ID_NONE;
        }
        self.voxels[(c.y as usize * self.geometry.width + c.x as usize) * self.nz + z]
    }

    /// Columns holding any occupied voxel.
    pub fn blocked(&self) -> &Grid<bool> {
        &self.blocked
    }

    /// Cells where the agent center may stand.
    pub fn feasible(&self) -> &Grid<bool> {
        &self.feasible
    }

    pub fn is_feasible(&self, x: f64, y: f64) -> bool {
        self.feasible
            .get(self.geometry.world_to_cell(x, y))
            .copied()
            .unwrap_or(false)
    }

    pub fn object(&self, id: u16) -> Option<&WorldObject> {
        id.checked_sub(FIRST_OBJECT_ID)
            .and_then(|k| self.objects.get(k as usize))
    }

    pub fn objects_with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a WorldObject> + 'a {
        self.objects.iter().filter(move |o| o.label == label)
    }

    /// Planar distance from a point to the nearest instance of `label`.
    pub fn distance_to_label(&self, x: f64, y: f64, label: &str) -> f64 {
        self.objects_with_label(label)
            .map(|o| o.distance_2d(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    fn compute_goal_field(&self, label: &str) -> Grid<f64> {
        let g = self.geometry;
        let seeds: Vec<(Cell, f64)> = self
            .feasible
            .iter()
            .filter(|(_, &ok)| ok)
            .filter_map(|(c, _)| {
                let (x, y) = g.cell_center(c);
                let d = self.distance_to_label(x, y, label);
                (d <= GOAL_BAND_M).then_some((c, d / g.cell_size))
            })
            .collect();
        match fmm_solve_seeded(&self.feasible, &seeds, None) {
            Ok(f) => f.grid().map(|&t| t * g.cell_size),
            Err(_) => g.grid(f64::INFINITY),
        }
    }

    /// Geodesic distance field (meters) to the nearest instance of `label`
    /// over cells the agent can occupy. Cached for subtask labels.
    pub fn goal_field(&self, label: &str) -> std::borrow::Cow<'_, Grid<f64>> {
        match self.goal_fields.get(label) {
            Some(f) => std::borrow::Cow::Borrowed(f),
            None => std::borrow::Cow::Owned(self.compute_goal_field(label)),
        }
    }

    /// Ground-truth geodesic from `from` to the nearest instance of `label`;
    /// `+inf` when disconnected or the label is absent.
    pub fn geodesic(&self, from: &Pose, label: &str) -> f64 {
        let c = self.geometry.world_to_cell(from.x, from.y);
        self.goal_field(label).get(c).copied().unwrap_or(f64::INFINITY)
    }

    /// Geodesic between two points over agent-feasible space.
    pub fn geodesic_between(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let g = self.geometry;
        let cb = g.world_to_cell(b.0, b.1);
        let ca = g.world_to_cell(a.0, a.1);
        match fmm_solve_seeded(&self.feasible, &[(cb, 0.0)], Some(ca)) {
            Ok(f) => f.arrival_m(ca, g.cell_size),
            Err(_) => f64::INFINITY,
        }
    }

    /// Applies one discrete action. Forward motion advances in small
    /// sub-steps and stops at the last collision-free position.
    pub fn step(&self, pose: &Pose, action: Action) -> StepOutcome {
        match action {
            Action::Stop => StepOutcome {
                pose: *pose,
                collided: false,
                displacement: 0.0,
            },
            Action::MoveForward => {
                let (fx, fy) = pose.forward();
                let n = (FORWARD_STEP_M / FORWARD_SUBSTEP_M).round() as usize;
                let mut moved = 0;
                for k in 1..=n {
                    let s = k as f64 * FORWARD_SUBSTEP_M;
                    if !self.is_feasible(pose.x + fx * s, pose.y + fy * s) {
                        break;
                    }
                    moved = k;
                }
                let s = moved as f64 * FORWARD_SUBSTEP_M;
                StepOutcome {
                    pose: Pose {
                        x: pose.x + fx * s,
                        y: pose.y + fy * s,
                        theta: pose.theta,
                    },
                    collided: moved < n,
                    displacement: s,
                }
            }
            turn => StepOutcome {
                pose: Pose {
                    theta: normalize_angle(pose.theta + turn.turn()),
                    ..*pose
                },
                collided: false,
                displacement: 0.0,
            },
        }
    }

    /// Renders depth, label colors and instance ids from `pose`.
    pub fn render(&self, pose: &Pose, sensor: &Sensor) -> Observation {
        let intr = &sensor.intrinsics;
        let (w, h) = (intr.width(), intr.height());
        let mut depth = DepthImage::new(w, h);
        let mut rgb = RgbImage::new(w, h);
        let mut instance = vec![ID_NONE; w * h];
        let origin = [pose.x, pose.y, sensor.extrinsics.sensor_height_m];
        let (se, ce) = sensor.extrinsics.elevation_rad.sin_cos();
        let (sy, cy) = pose.theta.sin_cos();
        for v in 0..h {
            for u in 0..w {
                // Same as `pixel_ray`, with the trigonometry hoisted.
                let cam = intr.ray(u as f64, v as f64);
                let (gy, gz) = (ce * cam.y - se * cam.z, se * cam.y + ce * cam.z);
                let d = [cy * cam.x - sy * gy, sy * cam.x + cy * gy, gz];
                let Some(hit) = self.cast(origin, d, sensor.max_depth) else {
                    continue;
                };
                let i = v * w + u;
                instance[i] = hit.id;
                if hit.depth >= sensor.min_depth && hit.depth <= sensor.max_depth {
                    depth.data[i] = hit.depth as f32;
                }
                let color = match hit.id {
                    ID_NONE => FLOOR_RGB,
                    ID_WALL => WALL_RGB,
                    id => self.object(id).map_or(WALL_RGB, |o| label_color(&o.label)),
                };
                rgb.set(u, v, color);
            }
        }
        Observation {
            rgb,
            depth,
            instance,
            pose: *pose,
        }
    }

    /// World-frame direction of pixel `(u, v)`, scaled so the ray parameter
    /// equals camera depth.
    pub fn pixel_ray(&self, pose: &Pose, sensor: &Sensor, u: usize, v: usize) -> [f64; 3] {
        let cam = sensor.intrinsics.ray(u as f64, v as f64);
        let geo = sensor.extrinsics.rotate(cam);
        let (dx, dy) = pose.rotate(geo.x, geo.y);
        [dx, dy, geo.z]
    }

    /// First surface along `o + t·d` for `t <= max_t`. Floor hits report
    /// [`ID_NONE`]. Pierced objects label the pixel but their depth reads
    /// [`PIERCE_SKIP_M`] of space further on.
    pub fn cast(&self, o: [f64; 3], d: [f64; 3], max_t: f64) -> Option<RayHit> {
        self.cast_impl(o, d, max_t, true)
    }

    fn cast_impl(&self, o: [f64; 3], d: [f64; 3], max_t: f64, skip_empty: bool) -> Option<RayHit> {
        let g = self.geometry;
        let cs = g.cell_size;
        let t_floor = if d[2] < -1e-12 { -o[2] / d[2] } else { f64::INFINITY };
        let t_cap = max_t.min(t_floor);
        let mut cx = ((o[0] - g.origin_x) / cs).floor() as i64;
        let mut cy = ((o[1] - g.origin_y) / cs).floor() as i64;
        let step_x: i64 = if d[0] > 0.0 { 1 } else { -1 };
        let step_y: i64 = if d[1] > 0.0 { 1 } else { -1 };
        let inv = |v: f64| if v.abs() < 1e-12 { f64::INFINITY } else { 1.0 / v.abs() };
        let (dtx, dty) = (cs * inv(d[0]), cs * inv(d[1]));
        let frac = |p: f64, c: i64, s: i64| {
            let base = c as f64 * cs;
            if s > 0 {
                base + cs - p
            } else {
                p - base
            }
        };
        let mut tx = if dtx.is_finite() { frac(o[0] - g.origin_x, cx, step_x) * inv(d[0]) } else { f64::INFINITY };
        let mut ty = if dty.is_finite() { frac(o[1] - g.origin_y, cy, step_y) * inv(d[1]) } else { f64::INFINITY };
        let mut t0 = 0.0;
        let mut pierced: Option<(u16, f64)> = None;
        let top = self.nz as f64 * cs;
        loop {
            if cx < 0 || cy < 0 || cx >= g.width as i64 || cy >= g.height as i64 {
                return None;
            }
            let col = cy as usize * g.width + cx as usize;
            let k = i64::from(self.clearance[col]);
            if skip_empty && k >= 2 {
                // Every column within k-1 cells is empty: jump to the box exit.
                let (ox, oy) = (o[0] - g.origin_x, o[1] - g.origin_y);
                let r = k - 1;
                let exit = |c: i64, s: i64, oc: f64, dc: f64| {
                    if dc.abs() < 1e-12 {
                        f64::INFINITY
                    } else {
                        let b = if s > 0 { c + r + 1 } else { c - r };
                        (b as f64 * cs - oc) / dc
                    }
                };
                let (ex, ey) = (exit(cx, step_x, ox, d[0]), exit(cy, step_y, oy, d[1]));
                let t_exit = ex.min(ey);
                if t_exit >= t_cap {
                    break;
                }
                let clamp = |v: f64, c: i64| ((v / cs).floor() as i64).clamp(c - r, c + r);
                let (px, py) = (ox + d[0] * t_exit, oy + d[1] * t_exit);
                if ex <= ey {
                    cx += step_x * (r + 1);
                    cy = clamp(py, cy);
                } else {
                    cy += step_y * (r + 1);
                    cx = clamp(px, cx);
                }
                let next = |c: i64, s: i64, oc: f64, dc: f64| {
                    if dc.abs() < 1e-12 {
                        f64::INFINITY
                    } else {
                        let b = if s > 0 { c + 1 } else { c };
                        (b as f64 * cs - oc) / dc
                    }
                };
                tx = next(cx, step_x, ox, d[0]);
                ty = next(cy, step_y, oy, d[1]);
                t0 = t_exit;
                continue;
            }
            let t1 = tx.min(ty);
            let t_end = t1.min(t_cap);
            let (lo, hi) = self.col_range[col];
            if lo <= hi && t_end >= t0 {
                let za = o[2] + d[2] * t0;
                let zb = o[2] + d[2] * t_end;
                let (zmin, zmax) = (za.min(zb), za.max(zb));
                if zmin < top && zmax >= 0.0 {
                    let b0 = ((zmin / cs).floor().max(0.0) as usize).max(lo as usize);
                    let b1 = ((zmax / cs).floor() as usize).min(self.nz - 1).min(hi as usize);
                    if b0 <= b1 {
                        let descending = d[2] < 0.0;
                        for k in 0..=(b1 - b0) {
                            let b = if descending { b1 - k } else { b0 + k };
                            let id = self.voxels[col * self.nz + b];
                            if id == ID_NONE {
                                continue;
                            }
                            let t_in = if d[2] < -1e-12 {
                                ((b + 1) as f64 * cs - o[2]) / d[2]
                            } else if d[2] > 1e-12 {
                                (b as f64 * cs - o[2]) / d[2]
                            } else {
                                t0
                            };
                            let t_hit = t_in.max(t0);
                            if let Some((_, until)) = pierced {
                                if t_hit < until {
                                    continue;
                                }
                            }
                            let obj_pierced = self.object(id).is_some_and(|ob| ob.pierced);
                            if obj_pierced && pierced.is_none() {
                                pierced = Some((id, t_hit + PIERCE_SKIP_M));
                                continue;
                            }
                            return Some(RayHit {
                                depth: t_hit,
                                id: pierced.map_or(id, |(pid, _)| pid),
                            });
                        }
                    }
                }
            }
            if t1 >= t_cap {
                break;
            }
            t0 = t1;
            if tx < ty {
                cx += step_x;
                tx += dtx;
            } else {
                cy += step_y;
                ty += dty;
            }
        }
        if t_floor <= max_t {
            return Some(RayHit {
                depth: t_floor,
                id: pierced.map_or(ID_NONE, |(pid, _)| pid),
            });
        }
        pierced.map(|(id, _)| RayHit {
            depth: f64::INFINITY,
            id,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Ray parameter at the hit (camera depth for pixel rays).
    pub depth: f64,
    pub id: u16,
}
