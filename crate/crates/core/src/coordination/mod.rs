//! Team loop: every round each agent observes and updates its own map, the
//! maps are max-pooled into a shared map, frontiers on the shared map are
//! handed out by sequential greedy allocation, and each agent plans one
//! action with FMM on the shared map.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontier::{extract_frontiers, Frontier, MAX_FRONTIERS, MIN_FRONTIER_SIZE};
use crate::geometry::{Pose, Sensor};
use crate::grid::{Cell, Grid, NEIGHBORS8};
use crate::mapping::{project_goal_mask, BevGoal, HeightBand, MappingError, SemanticBevMap, VoxelGrid, VOXEL_HEIGHT_M};
use crate::metrics::{dtg, spl, Footprint, SubtaskRecord, D_SUCCESS_M};
use crate::perception::{
    blend_utility, confirm, score_or_fallback, ConfirmationState, Detection, Detector, GoalQuery, ScoreRequest, Scorer,
    FALLBACK_SCORE, N_CONFIRM, REASONING_STAGES, TAU_DET,
};
use crate::planner::{
    clear_inflation_around, descend, dilate_goal, extract_stg_visible, fmm_solve_until, stg_along_path, select_action, traversable_grid, Action,
    DistanceField, UnknownPolicy, GOAL_DILATION_M, INFLATION_CELLS, STG_MAX_CELLS,
};
use crate::simulator::{Observation, World};
use crate::valuemap::{build_cone_mask, frontier_values, ValueMap, UCB_BETA, UCB_RADIUS_M};

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("map fusion: {0}")]
    Fusion(#[from] MappingError),
    #[error("world has {spawns} spawn points but {agents} agents were requested")]
    NotEnoughSpawns { spawns: usize, agents: usize },
    #[error("invalid team configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamConfig {
    pub agents: usize,
    /// Rounds per subtask; each agent takes at most one action per round.
    pub budget: usize,
    /// Value-map weight in the utility blend.
    pub w: f64,
    pub beta: f64,
    pub tau_det: f64,
    pub n_confirm: u32,
    /// Use value-map evidence in frontier utilities.
    pub value_map: bool,
    /// Query the scorer; when off every frontier scores the fallback value.
    pub vlm_reasoning: bool,
    /// Fuse value maps across agents each round (max belief, min variance).
    pub share_value_map: bool,
    /// Keep the current frontier unless its utility falls this far below the best.
    pub hysteresis: f64,
    /// Map distance to the goal support at which an agent calls STOP.
    pub stop_radius_m: f64,
    /// Radius marked explored around the agent each round.
    pub footprint_radius_m: f64,
    pub sensor: Sensor,
}

impl Default for TeamConfig {
    fn default() -> Self {
        Self {
            agents: 2,
            budget: 500,
            w: 0.35,
            beta: UCB_BETA,
            tau_det: TAU_DET,
            n_confirm: N_CONFIRM,
            value_map: true,
            vlm_reasoning: true,
            share_value_map: false,
            hysteresis: 0.15,
            stop_radius_m: 0.9,
            footprint_radius_m: 0.65,
            sensor: Sensor::standard(),
        }
    }
}

impl TeamConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        let bad = |m: String| Err(CoordinationError::Config(m));
        if self.agents == 0 {
            return bad("at least one agent is required".into());
        }
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.w) {
            return bad(format!("w must lie in [0, 1], got {}", self.w));
        }
        if !(self.beta >= 0.0) || !(0.0..1.0).contains(&self.tau_det) || self.n_confirm == 0 {
            return bad("beta must be >= 0, tau_det in [0, 1), n_confirm >= 1".into());
        }
        if !(self.stop_radius_m > 0.0 && self.stop_radius_m <= D_SUCCESS_M) {
            return bad(format!("stop radius must lie in (0, {D_SUCCESS_M}]"));
        }
        Ok(())
    }
}

/// Element-wise max over maps; boolean layers fuse as OR.
pub fn fuse_maps(maps: &[&SemanticBevMap]) -> Result<SemanticBevMap, MappingError> {
    let first = maps
        .first()
        .ok_or_else(|| MappingError::InvalidParameter("no maps to fuse".into()))?;
    let mut out = (*first).clone();
    for m in &maps[1..] {
        fuse_into(&mut out, m)?;
    }
    Ok(out)
}

pub fn fuse_into(acc: &mut SemanticBevMap, other: &SemanticBevMap) -> Result<(), MappingError> {
    if !acc.same_geometry(other) {
        return Err(MappingError::Shape("fused maps differ in geometry or channel count".into()));
    }
    for (a, b) in acc.obstacle.as_mut_slice().iter_mut().zip(other.obstacle.as_slice()) {
        *a |= *b;
    }
    for (a, b) in acc.explored.as_mut_slice().iter_mut().zip(other.explored.as_slice()) {
        *a |= *b;
    }
    for (la, lb) in acc.semantic.iter_mut().zip(&other.semantic) {
        for (a, b) in la.as_mut_slice().iter_mut().zip(lb.as_slice()) {
            *a = a.max(*b);
        }
    }
    Ok(())
}

/// Frontier index per agent (`None` when nothing is left).
pub type Allocation = Vec<Option<usize>>;

/// Sequential greedy allocation in agent order: each agent takes its best
/// remaining frontier, which is then removed. Non-finite utilities mark
/// frontiers the agent cannot use.
pub fn allocate_frontiers(utilities: &[Vec<f64>]) -> Allocation {
    allocate_frontiers_sticky(utilities, &vec![None; utilities.len()], 0.0)
}

/// Greedy allocation where an agent keeps its previous frontier while that
/// frontier is still free and within `hysteresis` of its best option.
pub fn allocate_frontiers_sticky(utilities: &[Vec<f64>], previous: &[Option<usize>], hysteresis: f64) -> Allocation {
    let k = utilities.iter().map(Vec::len).max().unwrap_or(0);
    let mut taken = vec![false; k];
    let mut out = Vec::with_capacity(utilities.len());
    for (i, u) in utilities.iter().enumerate() {
        let usable = |j: usize| !taken[j] && u.get(j).is_some_and(|v| v.is_finite());
        let mut best: Option<usize> = None;
        for j in 0..k {
            if usable(j) && best.is_none_or(|b| u[j] > u[b]) {
                best = Some(j);
            }
        }
        let choice = match (previous.get(i).copied().flatten(), best) {
            (Some(p), Some(b)) if p < k && usable(p) && u[p] >= u[b] - hysteresis => Some(p),
            _ => best,
        };
        if let Some(j) = choice {
            taken[j] = true;
        }
        out.push(choice);
    }
    out
}

pub fn is_disjoint(a: &Allocation) -> bool {
    let mut seen: Vec<usize> = a.iter().flatten().copied().collect();
    let n = seen.len();
    seen.sort_unstable();
    seen.dedup();
    seen.len() == n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Goal,
    Frontier,
    /// Nearest unexplored cell, for agents left without a frontier.
    Explore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub kind: TargetKind,
    pub cell: Cell,
}

#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: usize,
    pub pose: Pose,
    pub voxels: VoxelGrid,
    pub map: SemanticBevMap,
    pub value_map: ValueMap,
    pub confirmation: ConfirmationState,
    pub current_goal: Option<BevGoal>,
    pub target: Option<Target>,
    pub steps_taken: usize,
    pub trajectory: Vec<Pose>,
    last_rgb: Option<crate::image::RgbImage>,
}

impl AgentState {
    pub fn new(id: usize, pose: Pose, world: &World, channels: usize) -> Self {
        let g = world.geometry;
        Self {
            id,
            pose,
            voxels: VoxelGrid::new(g, VOXEL_HEIGHT_M, 1).expect("world geometry is valid"),
            map: SemanticBevMap::new(g, channels),
            value_map: ValueMap::new(g),
            confirmation: ConfirmationState::default(),
            current_goal: None,
            target: None,
            steps_taken: 0,
            trajectory: vec![pose],
            last_rgb: None,
        }
    }

    pub fn cell(&self) -> Cell {
        self.map.geometry.world_to_cell(self.pose.x, self.pose.y)
    }
}

/// What one agent's perception step produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerceptionOutcome {
    pub best_confidence: f64,
    pub confirmed: bool,
    pub projected: bool,
    pub detector_error: bool,
}

/// Observe → back-project → splat → slice → detect → confirm → project goal
/// → value-map update, all on the agent's own state.
pub fn perceive(
    agent: &mut AgentState,
    obs: &Observation,
    query: &GoalQuery,
    detector: &dyn Detector,
    cfg: &TeamConfig,
    channel: usize,
) -> PerceptionOutcome {
    let sensor = &cfg.sensor;
    let band = HeightBand::for_sensor_height(sensor.extrinsics.sensor_height_m);
    let mut out = PerceptionOutcome::default();
    if let Ok(pc) = sensor.to_world(&obs.depth, &obs.pose) {
        let rep = agent.voxels.splat_points(&pc, None);
        let _ = agent.map.integrate_columns(&agent.voxels, &rep.columns, &band);
    }
    let g = agent.map.geometry;
    agent
        .map
        .sweep_footprint(agent.cell(), cfg.footprint_radius_m / g.cell_size);

    let detections: Vec<Detection> = match detector.detect(obs, query) {
        Ok(d) => d,
        Err(e) => {
            log::debug!("agent {}: detector failed: {e}", agent.id);
            out.detector_error = true;
            Vec::new()
        }
    };
    out.best_confidence = detections.iter().map(|d| d.confidence).fold(0.0, f64::max);
    let (state, confirmed) = confirm(&agent.confirmation, &detections, cfg.tau_det, cfg.n_confirm);
    agent.confirmation = state;
    out.confirmed = confirmed;
    if confirmed {
        if let Some(d) = agent.confirmation.last_confirmed.clone() {
            match project_goal_mask(&d.mask, &obs.depth, sensor, &obs.pose, &mut agent.map, channel, d.confidence as f32) {
                Ok(goal) => {
                    agent.current_goal = Some(goal);
                    out.projected = true;
                }
                Err(e) => log::debug!("agent {}: goal projection failed: {e}", agent.id),
            }
        }
    }
    if cfg.value_map {
        let cone = build_cone_mask(&obs.depth, sensor, &obs.pose, g);
        if let Err(e) = agent.value_map.bayes_update(out.best_confidence, &cone) {
            log::warn!("agent {}: value map update rejected: {e}", agent.id);
        }
    }
    agent.last_rgb = Some(obs.rgb.clone());
    out
}

/// Shared planning map for a round.
pub fn sync_round(agents: &[AgentState]) -> Result<SemanticBevMap, MappingError> {
    let maps: Vec<&SemanticBevMap> = agents.iter().map(|a| &a.map).collect();
    fuse_maps(&maps)
}

/// Per-round planning context derived from the shared map.
pub struct PlanningView<'a> {
    pub shared: &'a SemanticBevMap,
    trav_open: Grid<bool>,
    trav_known: Grid<bool>,
}

impl<'a> PlanningView<'a> {
    pub fn new(shared: &'a SemanticBevMap) -> Self {
        Self {
            shared,
            trav_open: traversable_grid(shared, UnknownPolicy::Traversable, INFLATION_CELLS),
            trav_known: traversable_grid(shared, UnknownPolicy::Blocked, INFLATION_CELLS),
        }
    }

    /// Traversability as seen from `agent`: inflation around it is cleared
    /// and its own cell is always open.
    fn for_agent(&self, policy: UnknownPolicy, agent: Cell) -> Grid<bool> {
        let mut t = match policy {
            UnknownPolicy::Traversable => self.trav_open.clone(),
            UnknownPolicy::Blocked => self.trav_known.clone(),
        };
        clear_inflation_around(&mut t, self.shared, agent, INFLATION_CELLS + 1.0);
        t.set(agent, true);
        t
    }
}

/// Utilities of every frontier for one agent; unreachable frontiers read
/// `-inf`. Also returns whether the scorer fell back, and the agent-rooted
/// distance field used for reachability.
#[allow(clippy::too_many_arguments)]
pub fn frontier_utilities(
    agent: &AgentState,
    view: &PlanningView<'_>,
    frontiers: &[Frontier],
    query: &GoalQuery,
    scorer: &dyn Scorer,
    cfg: &TeamConfig,
    round: usize,
) -> (Vec<f64>, bool, Option<DistanceField>) {
    if frontiers.is_empty() {
        return (Vec::new(), false, None);
    }
    let g = view.shared.geometry;
    let start = agent.cell();
    let trav = view.for_agent(UnknownPolicy::Traversable, start);
    let centroids: Vec<Cell> = frontiers.iter().map(|f| f.centroid).collect();
    let reach = fmm_solve_until(&trav, &[(start, 0.0)], &centroids).ok();
    let reachable: Vec<bool> = centroids
        .iter()
        .map(|&c| reach.as_ref().is_some_and(|f| f.is_reachable(c)))
        .collect();

    let mut fell_back = false;
    let scores = if cfg.vlm_reasoning {
        let points: Vec<(f64, f64)> = centroids.iter().map(|&c| g.cell_center(c)).collect();
        let history = format!(
            "round={round} agent={} explored_cells={} consecutive_hits={}",
            agent.id,
            view.shared.explored_count(),
            agent.confirmation.consecutive_hits
        );
        let req = ScoreRequest {
            agent_id: agent.id,
            query,
            frontiers: &points,
            history: &history,
            stages: &REASONING_STAGES,
            rgb: agent.last_rgb.as_ref(),
        };
        let (s, err) = score_or_fallback(scorer, &req);
        if let Some(e) = err {
            log::warn!("agent {}: scorer fallback: {e}", agent.id);
            fell_back = true;
        }
        s
    } else {
        vec![FALLBACK_SCORE; frontiers.len()]
    };
    let (values, w) = if cfg.value_map {
        let fv = frontier_values(&agent.value_map, frontiers, UCB_RADIUS_M, cfg.beta);
        (fv.normalized, cfg.w)
    } else {
        (vec![0.0; frontiers.len()], 0.0)
    };
    let mut u = blend_utility(&scores, &values, w).expect("one score and one value per frontier");
    for (ui, ok) in u.iter_mut().zip(&reachable) {
        if !ok {
            *ui = f64::NEG_INFINITY;
        }
    }
    (u, fell_back, reach)
}

/// Index of the frontier continuing an agent's previous frontier target.
fn previous_frontier(target: Option<Target>, frontiers: &[Frontier]) -> Option<usize> {
    let t = target.filter(|t| t.kind == TargetKind::Frontier)?;
    frontiers
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let d = f.cells.iter().map(|c| c.distance(t.cell)).fold(f64::INFINITY, f64::min);
            (j, d)
        })
        .filter(|&(_, d)| d <= 10.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(j, _)| j)
}

/// Breadth-first search over known-free cells for the closest unexplored cell.
fn nearest_unexplored(view: &PlanningView<'_>, start: Cell) -> Option<Cell> {
    let trav = view.for_agent(UnknownPolicy::Traversable, start);
    let map = view.shared;
    let mut seen = map.geometry.grid(false);
    let mut queue = std::collections::VecDeque::from([start]);
    seen.set(start, true);
    while let Some(c) = queue.pop_front() {
        if map.is_unknown(c) {
            return Some(c);
        }
        for (dx, dy) in NEIGHBORS8 {
            let n = c.offset(dx, dy);
            if trav.get(n).copied().unwrap_or(false) && !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    None
}

/// Distance in meters from `agent` to the nearest goal support cell.
fn goal_distance(map: &SemanticBevMap, pose: &Pose, support: &[Cell]) -> f64 {
    support
        .iter()
        .map(|&c| {
            let (x, y) = map.geometry.cell_center(c);
            (x - pose.x).hypot(y - pose.y)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Outcome of planning one action.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub action: Action,
    pub stg: Option<Cell>,
    /// The goal support was unreachable even through unknown space.
    pub goal_unreachable: bool,
}

/// FMM from the target, STG by descent from the agent, then an action.
/// `reach`, when given, is a distance field rooted at the agent over the
/// unknown-traversable grid; frontier targets it covers reuse it instead of
/// solving again from the target.
pub fn plan_action(
    agent: &AgentState,
    view: &PlanningView<'_>,
    target: Option<Target>,
    goal_support: &[Cell],
    reach: Option<&DistanceField>,
    cfg: &TeamConfig,
) -> PlanOutcome {
    let g = view.shared.geometry;
    let start = agent.cell();
    let spin = PlanOutcome {
        action: Action::TurnLeft,
        stg: None,
        goal_unreachable: false,
    };
    let Some(target) = target else {
        return spin;
    };
    let solved: Option<(DistanceField, Grid<bool>)> = match target.kind {
        TargetKind::Goal => {
            if goal_distance(view.shared, &agent.pose, goal_support) <= cfg.stop_radius_m {
                return PlanOutcome {
                    action: Action::Stop,
                    stg: Some(start),
                    goal_unreachable: false,
                };
            }
            let attempt = |policy| {
                let trav = view.for_agent(policy, start);
                let goals = dilate_goal(goal_support, &trav, GOAL_DILATION_M / g.cell_size)?;
                let seeds: Vec<(Cell, f64)> = goals.iter().map(|&c| (c, 0.0)).collect();
                fmm_solve_until(&trav, &seeds, &[start])
                    .ok()
                    .filter(|f| f.is_reachable(start))
                    .map(|f| (f, trav))
            };
            match attempt(UnknownPolicy::Blocked).or_else(|| attempt(UnknownPolicy::Traversable)) {
                Some(f) => Some(f),
                None => {
                    return PlanOutcome {
                        goal_unreachable: true,
                        ..spin
                    }
                }
            }
        }
        TargetKind::Frontier | TargetKind::Explore => {
            let trav = view.for_agent(UnknownPolicy::Traversable, start);
            if let Some(r) = reach.filter(|r| r.is_reachable(target.cell) && r.is_reachable(start)) {
                let mut path = descend(r, target.cell, g.cells()).unwrap_or_default();
                if path.last() == Some(&start) {
                    path.reverse();
                    let stg = stg_along_path(&path, &trav, STG_MAX_CELLS);
                    return if stg == start {
                        spin
                    } else {
                        PlanOutcome {
                            action: select_action(&agent.pose, g.cell_center(stg), false),
                            stg: Some(stg),
                            goal_unreachable: false,
                        }
                    };
                }
            }
            fmm_solve_until(&trav, &[(target.cell, 0.0)], &[start])
                .ok()
                .filter(|f| f.is_reachable(start))
                .map(|f| (f, trav))
        }
    };
    let Some((field, trav)) = solved else {
        return spin;
    };
    match extract_stg_visible(&field, &trav, start, STG_MAX_CELLS) {
        Ok(stg) if stg != start => PlanOutcome {
            action: select_action(&agent.pose, g.cell_center(stg), false),
            stg: Some(stg),
            goal_unreachable: false,
        },
        _ => spin,
    }
}

/// Single-agent convenience: perceive, merge into `shared`, pick the best
/// frontier (or the confirmed goal) and plan one action.
#[allow(clippy::too_many_arguments)]
pub fn agent_step(
    agent: &mut AgentState,
    obs: &Observation,
    query: &GoalQuery,
    scorer: &dyn Scorer,
    detector: &dyn Detector,
    shared: &SemanticBevMap,
    cfg: &TeamConfig,
    channel: usize,
) -> Result<Action, MappingError> {
    perceive(agent, obs, query, detector, cfg, channel);
    let mut merged = shared.clone();
    fuse_into(&mut merged, &agent.map)?;
    let view = PlanningView::new(&merged);
    let support = merged.semantic_cells(channel);
    let mut agent_reach = None;
    let target = if !support.is_empty() {
        Some(Target {
            kind: TargetKind::Goal,
            cell: support[0],
        })
    } else {
        let frontiers = extract_frontiers(&merged, MIN_FRONTIER_SIZE, MAX_FRONTIERS);
        let (u, _, reach) = frontier_utilities(agent, &view, &frontiers, query, scorer, cfg, agent.steps_taken);
        agent_reach = reach;
        match allocate_frontiers(&[u])[0] {
            Some(j) => Some(Target {
                kind: TargetKind::Frontier,
                cell: frontiers[j].centroid,
            }),
            None => nearest_unexplored(&view, agent.cell()).map(|cell| Target {
                kind: TargetKind::Explore,
                cell,
            }),
        }
    };
    agent.target = target;
    Ok(plan_action(agent, &view, target, &support, agent_reach.as_ref(), cfg).action)
}

/// Per-round outcome, for logging and trajectory export.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub actions: Vec<Action>,
    pub displacements: Vec<f64>,
    pub collisions: Vec<bool>,
    pub targets: Vec<Option<Target>>,
    pub stopped_by: Option<usize>,
    pub scorer_fallbacks: usize,
    pub detector_errors: usize,
}

/// Called after every round with the fused map.
pub trait RoundObserver {
    fn on_round(&mut self, subtask: usize, round: usize, shared: &SemanticBevMap, agents: &[AgentState]);
}

impl RoundObserver for () {
    fn on_round(&mut self, _: usize, _: usize, _: &SemanticBevMap, _: &[AgentState]) {}
}

/// In-progress subtask, driven by [`Team::step_subtask`].
#[derive(Clone, Debug)]
pub struct SubtaskRun {
    index: usize,
    query: GoalQuery,
    channel: usize,
    d_geo: f64,
    rounds: Vec<Vec<f64>>,
    stop_called: bool,
    fallbacks: usize,
    det_errors: usize,
}

impl SubtaskRun {
    pub fn rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_over(&self, budget: usize) -> bool {
        self.stop_called || self.rounds.len() >= budget
    }
}

pub struct Team {
    pub world: Arc<World>,
    pub cfg: TeamConfig,
    pub agents: Vec<AgentState>,
    pub shared: SemanticBevMap,
    /// Goal cells given up on during the current subtask.
    suppressed: Grid<bool>,
}

impl Team {
    pub fn new(world: Arc<World>, cfg: TeamConfig) -> Result<Self, CoordinationError> {
        cfg.validate()?;
        if world.spawns.len() < cfg.agents {
            return Err(CoordinationError::NotEnoughSpawns {
                spawns: world.spawns.len(),
                agents: cfg.agents,
            });
        }
        let channels = world.subtasks.len().max(1);
        let agents: Vec<AgentState> = (0..cfg.agents)
            .map(|i| AgentState::new(i, world.spawns[i], &world, channels))
            .collect();
        let shared = SemanticBevMap::new(world.geometry, channels);
        let suppressed = world.geometry.grid(false);
        Ok(Self {
            world,
            cfg,
            agents,
            shared,
            suppressed,
        })
    }

    fn begin_subtask(&mut self, query: &GoalQuery) {
        for a in &mut self.agents {
            a.confirmation = ConfirmationState::new(query.query_id);
            a.current_goal = None;
            a.target = None;
            a.steps_taken = 0;
        }
        self.suppressed.fill(false);
    }

    /// One lockstep round for every agent.
    pub fn round(
        &mut self,
        query: &GoalQuery,
        channel: usize,
        round: usize,
        scorer: &dyn Scorer,
        detector: &dyn Detector,
    ) -> Result<RoundReport, CoordinationError> {
        let n = self.agents.len();
        let mut detector_errors = 0;
        for a in &mut self.agents {
            let obs = self.world.render(&a.pose, &self.cfg.sensor);
            let p = perceive(a, &obs, query, detector, &self.cfg, channel);
            detector_errors += usize::from(p.detector_error);
        }
        if self.cfg.value_map && self.cfg.share_value_map && n > 1 {
            let mut fused = self.agents[0].value_map.clone();
            for a in &self.agents[1..] {
                fused.fuse(&a.value_map).expect("agents share one geometry");
            }
            for a in &mut self.agents {
                a.value_map = fused.clone();
            }
        }
        self.shared = sync_round(&self.agents)?;
        let shared = &self.shared;
        let view = PlanningView::new(shared);

        let support: Vec<Cell> = shared
            .semantic_cells(channel)
            .into_iter()
            .filter(|&c| !self.suppressed[c])
            .collect();
        let mut scorer_fallbacks = 0;
        let mut reach: Vec<Option<DistanceField>> = vec![None; n];
        let targets: Vec<Option<Target>> = if !support.is_empty() {
            let anchor = support[0];
            vec![
                Some(Target {
                    kind: TargetKind::Goal,
                    cell: anchor,
                });
                n
            ]
        } else {
            let frontiers = extract_frontiers(shared, MIN_FRONTIER_SIZE, MAX_FRONTIERS);
            let mut utilities = Vec::with_capacity(n);
            for a in &self.agents {
                let (u, fb, r) = frontier_utilities(a, &view, &frontiers, query, scorer, &self.cfg, round);
                scorer_fallbacks += usize::from(fb);
                utilities.push(u);
                reach[a.id] = r;
            }
            let previous: Vec<Option<usize>> = self
                .agents
                .iter()
                .map(|a| previous_frontier(a.target, &frontiers))
                .collect();
            let alloc = allocate_frontiers_sticky(&utilities, &previous, self.cfg.hysteresis);
            debug_assert!(is_disjoint(&alloc));
            alloc
                .iter()
                .zip(&self.agents)
                .map(|(choice, a)| match choice {
                    Some(j) => Some(Target {
                        kind: TargetKind::Frontier,
                        cell: frontiers[*j].centroid,
                    }),
                    None => nearest_unexplored(&view, a.cell()).map(|cell| Target {
                        kind: TargetKind::Explore,
                        cell,
                    }),
                })
                .collect()
        };

        let mut report = RoundReport {
            actions: Vec::with_capacity(n),
            displacements: Vec::with_capacity(n),
            collisions: Vec::with_capacity(n),
            targets: targets.clone(),
            stopped_by: None,
            scorer_fallbacks,
            detector_errors,
        };
        let mut give_up = false;
        for (a, target) in self.agents.iter_mut().zip(&targets) {
            a.target = *target;
            let plan = plan_action(a, &view, *target, &support, reach[a.id].as_ref(), &self.cfg);
            give_up |= plan.goal_unreachable;
            let out = self.world.step(&a.pose, plan.action);
            if out.collided {
                mark_collision(&mut a.map, &out.pose);
            }
            a.pose = out.pose;
            a.steps_taken += 1;
            a.trajectory.push(a.pose);
            if plan.action == Action::Stop && report.stopped_by.is_none() {
                report.stopped_by = Some(a.id);
            }
            report.actions.push(plan.action);
            report.displacements.push(out.displacement);
            report.collisions.push(out.collided);
        }
        if give_up {
            for &c in &support {
                self.suppressed.set(c, true);
            }
        }
        Ok(report)
    }

    /// Resets per-subtask state and records the starting geodesic distance.
    pub fn start_subtask(&mut self, index: usize, label: &str) -> Result<SubtaskRun, CoordinationError> {
        let query = GoalQuery::new(label, index as u32)
            .ok_or_else(|| CoordinationError::Config("empty goal query".into()))?;
        let channel = index.min(self.shared.semantic.len().saturating_sub(1));
        self.begin_subtask(&query);
        let d_geo = self
            .agents
            .iter()
            .map(|a| self.world.geodesic(&a.pose, label))
            .fold(f64::INFINITY, f64::min);
        Ok(SubtaskRun {
            index,
            query,
            channel,
            d_geo,
            rounds: Vec::new(),
            stop_called: false,
            fallbacks: 0,
            det_errors: 0,
        })
    }

    /// Advances a subtask by one round. Returns true once it is over.
    pub fn step_subtask(
        &mut self,
        run: &mut SubtaskRun,
        scorer: &dyn Scorer,
        detector: &dyn Detector,
        observer: &mut dyn RoundObserver,
    ) -> Result<bool, CoordinationError> {
        if run.is_over(self.cfg.budget) {
            return Ok(true);
        }
        let r = run.rounds.len();
        let rep = self.round(&run.query, run.channel, r, scorer, detector)?;
        run.fallbacks += rep.scorer_fallbacks;
        run.det_errors += rep.detector_errors;
        run.rounds.push(rep.displacements);
        observer.on_round(run.index, r, &self.shared, &self.agents);
        run.stop_called = rep.stopped_by.is_some();
        Ok(run.is_over(self.cfg.budget))
    }

    /// Scores a finished (or abandoned) subtask from the current poses.
    pub fn finish_subtask(&self, run: &SubtaskRun) -> SubtaskRecord {
        let label = run.query.text.as_str();
        let d_agent = crate::metrics::accumulate_multiagent_path(&run.rounds);
        let footprints: Vec<Footprint> = self
            .world
            .objects_with_label(label)
            .map(|o| Footprint {
                min: [o.min[0], o.min[1]],
                max: [o.max[0], o.max[1]],
            })
            .collect();
        let positions: Vec<(f64, f64)> = self.agents.iter().map(|a| (a.pose.x, a.pose.y)).collect();
        let dtg_final = dtg(&positions, &footprints);
        let success = run.stop_called && dtg_final <= D_SUCCESS_M;
        SubtaskRecord {
            scenario: self.world.name.clone(),
            subtask: run.index,
            query: label.to_string(),
            agents: self.agents.len(),
            success,
            stop_called: run.stop_called,
            d_geo: run.d_geo,
            d_agent,
            dtg_final,
            spl: spl(success, run.d_geo, d_agent).unwrap_or(0.0),
            steps: run.rounds.len(),
            scorer_fallbacks: run.fallbacks,
            detector_errors: run.det_errors,
        }
    }

    /// Runs one subtask until the first STOP or the budget runs out.
    pub fn run_subtask(
        &mut self,
        index: usize,
        label: &str,
        scorer: &dyn Scorer,
        detector: &dyn Detector,
        observer: &mut dyn RoundObserver,
    ) -> Result<SubtaskRecord, CoordinationError> {
        let mut run = self.start_subtask(index, label)?;
        while !self.step_subtask(&mut run, scorer, detector, observer)? {}
        Ok(self.finish_subtask(&run))
    }

    /// Runs the world's full subtask chain with persistent maps.
    pub fn run_episode(
        &mut self,
        scorer: &dyn Scorer,
        detector: &dyn Detector,
        observer: &mut dyn RoundObserver,
    ) -> Result<Vec<SubtaskRecord>, CoordinationError> {
        let labels = self.world.subtasks.clone();
        labels
            .iter()
            .enumerate()
            .map(|(i, label)| self.run_subtask(i, label, scorer, detector, observer))
            .collect()
    }
}

/// Marks the cells just ahead of a blocked agent as obstacles in its map.
fn mark_collision(map: &mut SemanticBevMap, pose: &Pose) {
    for lateral in [-0.05, 0.0, 0.05] {
        let (rx, ry) = pose.rotate(lateral, 0.13);
        let c = map.geometry.world_to_cell(pose.x + rx, pose.y + ry);
        map.mark_obstacle(c);
    }
}
