//! Geodesic planning on the BEV grid.
//!
//! [`fmm_solve`] propagates first-order upwind arrival times (unit speed on
//! traversable cells) from a goal set with a binary heap. Short-term goals are
//! read off the field by steepest-neighbor descent from the agent, and
//! [`select_action`] turns the bearing to that waypoint into one of the six
//! discrete actions.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose};
use crate::grid::{dilate, line_cells, Cell, Grid, NEIGHBORS4, NEIGHBORS8};
use crate::mapping::SemanticBevMap;

pub const FORWARD_STEP_M: f64 = 0.25;
pub const COARSE_TURN_RAD: f64 = 30.0 * PI / 180.0;
pub const FINE_TURN_RAD: f64 = 10.0 * PI / 180.0;
/// Short-term goal clip, in descent steps (1.25 m at 5 cm cells).
pub const STG_MAX_CELLS: usize = 25;
/// Obstacle inflation radius in cells (agent half-width).
pub const INFLATION_CELLS: f64 = 2.0;
/// How far a goal on an obstacle may be moved onto free space.
pub const GOAL_DILATION_M: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner parameter: {0}")]
    InvalidParameter(String),
    #[error("agent cell {0:?} cannot reach the goal")]
    Unreachable(Cell),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Stop,
    MoveForward,
    TurnLeft,
    TurnRight,
    TurnLeftS,
    TurnRightS,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Stop,
        Action::MoveForward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::TurnLeftS,
        Action::TurnRightS,
    ];

    /// Heading change in radians (counter-clockwise positive).
    pub fn turn(self) -> f64 {
        match self {
            Action::TurnLeft => COARSE_TURN_RAD,
            Action::TurnRight => -COARSE_TURN_RAD,
            Action::TurnLeftS => FINE_TURN_RAD,
            Action::TurnRightS => -FINE_TURN_RAD,
            Action::Stop | Action::MoveForward => 0.0,
        }
    }
}

/// Arrival-time field in cell units. `+inf` marks unreachable cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    arrival: Grid<f64>,
    goals: Vec<Cell>,
    /// False when propagation stopped early; unsettled cells then read `+inf`.
    complete: bool,
}

impl DistanceField {
    pub fn arrival(&self, cell: Cell) -> f64 {
        self.arrival.get(cell).copied().unwrap_or(f64::INFINITY)
    }

    pub fn arrival_m(&self, cell: Cell, cell_size: f64) -> f64 {
        self.arrival(cell) * cell_size
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.arrival
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn is_reachable(&self, cell: Cell) -> bool {
        self.arrival(cell).is_finite()
    }
}

/// Heap key: non-negative arrival times order like their bit patterns, and
/// ties break on the cell index for determinism.
fn key(t: f64, idx: usize) -> Reverse<(u64, u32)> {
    Reverse((t.to_bits(), idx as u32))
}

const FAR: u8 = 0;
const TRIAL: u8 = 1;
const KNOWN: u8 = 2;

/// Upwind solution of `|grad T| = 1` at a cell from its settled neighbors.
fn eikonal_update(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi - lo >= 1.0 {
        lo + 1.0
    } else {
        (lo + hi + (2.0 - (hi - lo) * (hi - lo)).sqrt()) / 2.0
    }
}

pub fn fmm_solve(traversable: &Grid<bool>, goals: &[Cell]) -> Result<DistanceField, PlannerError> {
    let seeds: Vec<(Cell, f64)> = goals.iter().map(|&c| (c, 0.0)).collect();
    fmm_solve_seeded(traversable, &seeds, None)
}

/// FMM from seeds with initial arrival values. Seeds need not be
/// traversable. With `stop_at`, propagation halts once that cell settles;
/// everything settled so far is exact and the rest reads `+inf`.
pub fn fmm_solve_seeded(
    traversable: &Grid<bool>,
    seeds: &[(Cell, f64)],
    stop_at: Option<Cell>,
) -> Result<DistanceField, PlannerError> {
    fmm_solve_until(traversable, seeds, stop_at.as_slice())
}

/// Like [`fmm_solve_seeded`], halting once every in-bounds cell of `targets`
/// has settled. An empty target list runs to completion.
pub fn fmm_solve_until(
    traversable: &Grid<bool>,
    seeds: &[(Cell, f64)],
    targets: &[Cell],
) -> Result<DistanceField, PlannerError> {
    let (w, h) = (traversable.width(), traversable.height());
    let mut t = vec![f64::INFINITY; w * h];
    let mut state = vec![FAR; w * h];
    let mut heap = BinaryHeap::new();
    let mut goals = Vec::new();
    for &(cell, t0) in seeds {
        let Some(i) = traversable.index(cell) else {
            continue;
        };
        if !(t0 >= 0.0) {
            return Err(PlannerError::InvalidParameter(format!(
                "seed value {t0} at {cell:?} must be non-negative"
            )));
        }
        if t0 < t[i] {
            t[i] = t0;
            state[i] = TRIAL;
            heap.push(key(t0, i));
        }
        goals.push(cell);
    }
    if goals.is_empty() {
        return Err(PlannerError::InvalidParameter("goal set is empty or out of bounds".into()));
    }
    goals.sort_unstable();
    goals.dedup();
    let trav = traversable.as_slice();
    let mut pending: Vec<usize> = targets.iter().filter_map(|&c| traversable.index(c)).collect();
    pending.sort_unstable();
    pending.dedup();
    let early = !pending.is_empty();
    let mut complete = true;

    while let Some(Reverse((bits, idx))) = heap.pop() {
        let i = idx as usize;
        let ti = f64::from_bits(bits);
        if state[i] == KNOWN || ti > t[i] {
            continue;
        }
        state[i] = KNOWN;
        if early {
            if let Ok(k) = pending.binary_search(&i) {
                pending.remove(k);
                if pending.is_empty() {
                    complete = false;
                    break;
                }
            }
        }
        let (x, y) = (i % w, i / w);
        for (dx, dy) in NEIGHBORS4 {
            let (nx, ny) = (x as i64 + i64::from(dx), y as i64 + i64::from(dy));
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if state[n] == KNOWN || !trav[n] {
                continue;
            }
            let known = |j: usize| if state[j] == KNOWN { t[j] } else { f64::INFINITY };
            let (nx, ny) = (nx as usize, ny as usize);
            let a = f64::min(
                if nx > 0 { known(n - 1) } else { f64::INFINITY },
                if nx + 1 < w { known(n + 1) } else { f64::INFINITY },
            );
            let b = f64::min(
                if ny > 0 { known(n - w) } else { f64::INFINITY },
                if ny + 1 < h { known(n + w) } else { f64::INFINITY },
            );
            let cand = eikonal_update(a, b);
            if cand < t[n] {
                t[n] = cand;
                state[n] = TRIAL;
                heap.push(key(cand, n));
            }
        }
    }
    if !complete {
        for (v, s) in t.iter_mut().zip(&state) {
            if *s != KNOWN {
                *v = f64::INFINITY;
            }
        }
    }
    Ok(DistanceField {
        arrival: Grid::from_vec(w, h, t),
        goals,
        complete,
    })
}

/// Whether unknown map cells may be planned through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnknownPolicy {
    /// Frontier exploration: plan into the unknown.
    Traversable,
    /// Goal approach: only known free space.
    Blocked,
}

/// Traversable cells of `map` after inflating obstacles by `inflation` cells.
pub fn traversable_grid(map: &SemanticBevMap, policy: UnknownPolicy, inflation: f64) -> Grid<bool> {
    let inflated = dilate(&map.obstacle, inflation);
    let data = inflated
        .as_slice()
        .iter()
        .zip(map.explored.as_slice())
        .map(|(&blocked, &explored)| !blocked && (explored || policy == UnknownPolicy::Traversable))
        .collect();
    Grid::from_vec(map.geometry.width, map.geometry.height, data)
}

/// Re-opens inflated (but not actually occupied) cells within `radius` of
/// `center`, so an agent pressed against a wall can still plan out.
pub fn clear_inflation_around(trav: &mut Grid<bool>, map: &SemanticBevMap, center: Cell, radius: f64) {
    let r = radius.ceil() as i32;
    for dy in -r..=r {
        for dx in -r..=r {
            let c = center.offset(dx, dy);
            if c.distance(center) <= radius && map.geometry.contains(c) && !map.obstacle[c] {
                trav[c] = true;
            }
        }
    }
}

/// Planning goals for a goal support. Traversable support cells are kept;
/// each blocked one is replaced by the nearest traversable cell within
/// `max_radius` cells. `None` when no support cell can be placed.
pub fn dilate_goal(support: &[Cell], trav: &Grid<bool>, max_radius: f64) -> Option<Vec<Cell>> {
    let r = max_radius.floor() as i32;
    let mut offsets: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| f64::from(dx * dx + dy * dy) <= max_radius * max_radius + 1e-9)
        .collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    let mut out: Vec<Cell> = support
        .iter()
        .filter_map(|&s| {
            offsets
                .iter()
                .map(|&(dx, dy)| s.offset(dx, dy))
                .find(|&c| trav.get(c).copied().unwrap_or(false))
        })
        .collect();
    if out.is_empty() {
        return None;
    }
    out.sort_unstable();
    out.dedup();
    Some(out)
}

/// Steepest-neighbor descent from `start`, at most `max_steps` moves.
/// Diagonal moves may not cut between two unreachable cells.
pub fn descend(field: &DistanceField, start: Cell, max_steps: usize) -> Result<Vec<Cell>, PlannerError> {
    let mut cur = start;
    let mut t_cur = field.arrival(cur);
    if !t_cur.is_finite() {
        return Err(PlannerError::Unreachable(start));
    }
    let mut path = vec![cur];
    while path.len() <= max_steps && t_cur > 0.0 {
        let mut best: Option<(f64, Cell, f64)> = None;
        for (dx, dy) in NEIGHBORS8 {
            let n = cur.offset(dx, dy);
            let tn = field.arrival(n);
            if !(tn < t_cur) {
                continue;
            }
            if dx != 0 && dy != 0
                && !(field.is_reachable(cur.offset(dx, 0)) && field.is_reachable(cur.offset(0, dy)))
            {
                continue;
            }
            let len = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let slope = (t_cur - tn) / len;
            if best.is_none_or(|(s, _, _)| slope > s) {
                best = Some((slope, n, tn));
            }
        }
        let Some((_, n, tn)) = best else {
            break;
        };
        cur = n;
        t_cur = tn;
        path.push(cur);
    }
    Ok(path)
}

/// Short-term goal: where descent from the agent ends (goal, local minimum,
/// or the step clip).
pub fn extract_stg(field: &DistanceField, agent: Cell, max_cells: usize) -> Result<Cell, PlannerError> {
    descend(field, agent, max_cells).map(|p| *p.last().expect("path starts at agent"))
}

/// Like [`extract_stg`], but backs off to the farthest descent cell whose
/// straight segment from the agent stays on `trav`, so the agent does not
/// cut corners the path bends around.
pub fn extract_stg_visible(
    field: &DistanceField,
    trav: &Grid<bool>,
    agent: Cell,
    max_cells: usize,
) -> Result<Cell, PlannerError> {
    let path = descend(field, agent, max_cells)?;
    Ok(stg_along_path(&path, trav, max_cells))
}

/// Farthest cell among the first `max_cells` moves of `path` (which starts
/// at the agent) that the agent can reach in a straight line on `trav`.
pub fn stg_along_path(path: &[Cell], trav: &Grid<bool>, max_cells: usize) -> Cell {
    let Some(&agent) = path.first() else {
        panic!("path must start at the agent");
    };
    let clipped = &path[..path.len().min(max_cells + 1)];
    let clear = |c: Cell| {
        line_cells(agent, c)
            .into_iter()
            .skip(1)
            .all(|p| trav.get(p).copied().unwrap_or(false))
    };
    clipped
        .iter()
        .rev()
        .find(|&&c| clear(c))
        .copied()
        .unwrap_or(clipped[clipped.len().min(2) - 1])
}

/// Heading error to a world point: zero straight ahead, positive to the left.
pub fn relative_bearing(agent: &Pose, target: (f64, f64)) -> f64 {
    let dx = target.0 - agent.x;
    let dy = target.1 - agent.y;
    normalize_angle((-dx).atan2(dy) - agent.theta)
}

pub fn select_action(agent: &Pose, stg: (f64, f64), stop_eligible: bool) -> Action {
    if stop_eligible {
        return Action::Stop;
    }
    if (stg.0 - agent.x).hypot(stg.1 - agent.y) < 1e-9 {
        return Action::TurnLeft;
    }
    let rel = relative_bearing(agent, stg);
    let mag = rel.abs();
    if mag > COARSE_TURN_RAD / 2.0 {
        if rel > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    } else if mag > FINE_TURN_RAD / 2.0 {
        if rel > 0.0 {
            Action::TurnLeftS
        } else {
            Action::TurnRightS
        }
    } else {
        Action::MoveForward
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(n: usize) -> Grid<bool> {
        Grid::new(n, n, true)
    }

    #[test]
    fn empty_goal_set_is_rejected() {
        assert!(matches!(fmm_solve(&open(5), &[]), Err(PlannerError::InvalidParameter(_))));
        assert!(fmm_solve(&open(5), &[Cell::new(9, 9)]).is_err());
    }

    #[test]
    fn open_grid_offset_three_four() {
        // Classic first-order FMM from a point source; the expected value
        // comes from an independent reference implementation of the scheme.
        let f = fmm_solve(&open(101), &[Cell::new(50, 50)]).unwrap();
        let t = f.arrival(Cell::new(53, 54));
        assert!((t - 5.530_022_892_636_349).abs() < 1e-9, "{t}");
        assert!(t >= 5.0);
        assert_eq!(f.arrival(Cell::new(50, 50)), 0.0);
    }

    #[test]
    fn corridor_is_exact() {
        let mut g = Grid::new(40, 3, false);
        for x in 0..40 {
            g[Cell::new(x, 1)] = true;
        }
        let f = fmm_solve(&g, &[Cell::new(39, 1)]).unwrap();
        assert_eq!(f.arrival(Cell::new(0, 1)), 39.0);
        assert!(!f.is_reachable(Cell::new(0, 0)));
    }

    #[test]
    fn sealed_goal_is_unreachable() {
        let mut g = open(9);
        for i in 2..=6 {
            g[Cell::new(i, 2)] = false;
            g[Cell::new(i, 6)] = false;
            g[Cell::new(2, i)] = false;
            g[Cell::new(6, i)] = false;
        }
        let f = fmm_solve(&g, &[Cell::new(4, 4)]).unwrap();
        assert!(f.is_reachable(Cell::new(5, 5)));
        for c in [Cell::new(0, 0), Cell::new(8, 4), Cell::new(4, 8)] {
            assert!(f.arrival(c).is_infinite());
        }
    }

    #[test]
    fn goals_on_obstacles_still_seed() {
        let mut g = open(5);
        g[Cell::new(2, 2)] = false;
        let f = fmm_solve(&g, &[Cell::new(2, 2)]).unwrap();
        assert_eq!(f.arrival(Cell::new(2, 2)), 0.0);
        assert_eq!(f.arrival(Cell::new(2, 3)), 1.0);
    }

    #[test]
    fn early_stop_settles_the_path() {
        let g = open(60);
        let full = fmm_solve(&g, &[Cell::new(5, 5)]).unwrap();
        let part = fmm_solve_seeded(&g, &[(Cell::new(5, 5), 0.0)], Some(Cell::new(20, 9))).unwrap();
        assert!(!part.is_complete());
        assert_eq!(part.arrival(Cell::new(20, 9)), full.arrival(Cell::new(20, 9)));
        assert!(part.arrival(Cell::new(59, 59)).is_infinite());
        let a = descend(&full, Cell::new(20, 9), 100).unwrap();
        let b = descend(&part, Cell::new(20, 9), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stg_examples() {
        let g = open(101);
        let goal = Cell::new(80, 50);
        let f = fmm_solve(&g, &[goal]).unwrap();
        assert_eq!(extract_stg(&f, Cell::new(70, 50), STG_MAX_CELLS).unwrap(), goal);
        assert_eq!(extract_stg(&f, Cell::new(20, 50), STG_MAX_CELLS).unwrap(), Cell::new(45, 50));
        assert_eq!(extract_stg(&f, goal, STG_MAX_CELLS).unwrap(), goal);
    }

    #[test]
    fn unreachable_agent_signals_replan() {
        let mut g = open(10);
        for y in 0..10 {
            g[Cell::new(5, y)] = false;
        }
        let f = fmm_solve(&g, &[Cell::new(8, 5)]).unwrap();
        assert_eq!(extract_stg(&f, Cell::new(1, 1), 25), Err(PlannerError::Unreachable(Cell::new(1, 1))));
    }

    #[test]
    fn descent_is_strictly_decreasing() {
        let mut g = open(50);
        for y in 0..40 {
            g[Cell::new(25, y)] = false;
        }
        let f = fmm_solve(&g, &[Cell::new(45, 5)]).unwrap();
        let path = descend(&f, Cell::new(5, 5), 500).unwrap();
        assert_eq!(*path.last().unwrap(), Cell::new(45, 5));
        for w in path.windows(2) {
            assert!(f.arrival(w[1]) < f.arrival(w[0]));
        }
    }

    #[test]
    fn action_selection() {
        let agent = Pose::new(0.0, 0.0, 0.0);
        assert_eq!(select_action(&agent, (0.0, 1.0), false), Action::MoveForward);
        // Target to the left (-x when facing +y): +90 degrees, coarse left turn.
        assert!((relative_bearing(&agent, (-1.0, 0.0)) - PI / 2.0).abs() < 1e-12);
        assert_eq!(select_action(&agent, (-1.0, 0.0), false), Action::TurnLeft);
        assert_eq!(select_action(&agent, (1.0, 0.0), false), Action::TurnRight);
        let fine = (-(10f64.to_radians()).sin(), (10f64.to_radians()).cos());
        assert_eq!(select_action(&agent, fine, false), Action::TurnLeftS);
        let tiny = (4f64.to_radians().sin(), 4f64.to_radians().cos());
        assert_eq!(select_action(&agent, tiny, false), Action::MoveForward);
        assert_eq!(select_action(&agent, (0.0, 0.5), true), Action::Stop);
    }

    #[test]
    fn goal_dilation() {
        let mut trav = open(30);
        for y in 10..20 {
            for x in 10..20 {
                trav[Cell::new(x, y)] = false;
            }
        }
        let goals = dilate_goal(&[Cell::new(10, 15)], &trav, 12.0).unwrap();
        assert_eq!(goals, vec![Cell::new(9, 15)]);
        // A support deep inside a blocked region farther than the radius.
        let mut sealed = Grid::new(40, 40, false);
        sealed[Cell::new(0, 0)] = true;
        assert_eq!(dilate_goal(&[Cell::new(30, 30)], &sealed, 12.0), None);
    }
}
