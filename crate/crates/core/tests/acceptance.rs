//! End-to-end acceptance checks. Each test prints one `[PASS]`/`[FAIL]`
//! line; run with `--nocapture` to see them. The tests take a shared lock
//! so the timed ones are not slowed by their neighbours.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use goalnav::coordination::{fuse_maps, AgentState, RoundObserver, Team, TeamConfig};
use goalnav::frontier::Frontier;
use goalnav::geometry::{depth_to_world, Pose, Sensor};
use goalnav::grid::{Cell, Grid, MapGeometry, NEIGHBORS4, NEIGHBORS8};
use goalnav::harness::{run_batch, BatchOutcome, RunConfig, ScorerKind};
use goalnav::mapping::{HeightBand, SemanticBevMap, VoxelGrid, VOXEL_HEIGHT_M};
use goalnav::metrics::{accumulate_multiagent_path, dtg, spl, summarize, EpisodeResult, Footprint, SubtaskRecord};
use goalnav::perception::external::{EchoServer, ExternalScorer, FaultMode, WireReply};
use goalnav::perception::{score_or_fallback, GoalQuery, OracleDetector, ScoreRequest, Scorer, FALLBACK_SCORE};
use goalnav::planner::fmm_solve;
use goalnav::simulator::{generate_set, GeneratorConfig, Scenario, World, ID_NONE, SIM_CELL_M};
use goalnav::valuemap::{ucb_score, ConeMask, ValueMap};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|p| p.into_inner())
}

fn report(name: &str, ok: bool, detail: impl AsRef<str>) {
    println!("[{}] {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
}

// ---------------------------------------------------------------- geometry

#[test]
fn geometry_round_trip() {
    let _g = serial();
    let t0 = Instant::now();
    let sensor = Sensor::standard();
    let scenes = generate_set(&GeneratorConfig::default(), 0, 20).unwrap();
    let band = HeightBand::for_sensor_height(sensor.extrinsics.sensor_height_m);
    let (mut hits, mut misses) = (0usize, 0usize);
    let (mut floor, mut floor_high_dual, mut floor_high_single) = (0usize, 0usize, 0usize);
    let (mut phantom_dual, mut phantom_single) = (0usize, 0usize);
    let single = sensor.intrinsics.single_focal();
    for sc in &scenes {
        let world = World::from_scenario(sc).unwrap();
        let g = world.geometry;
        let near_blocked = goalnav::grid::dilate(world.blocked(), 1.5);
        let mut vox_dual = VoxelGrid::new(g, VOXEL_HEIGHT_M, 1).unwrap();
        let mut vox_single = VoxelGrid::new(g, VOXEL_HEIGHT_M, 1).unwrap();
        for spawn in &world.spawns {
            for k in 0..6 {
                let pose = Pose::new(spawn.x, spawn.y, spawn.theta + f64::from(k) * std::f64::consts::PI / 3.0);
                let obs = world.render(&pose, &sensor);
                let pc = sensor.to_world(&obs.depth, &pose).unwrap();
                let bad = depth_to_world(&obs.depth, &single, &sensor.extrinsics, &pose, sensor.min_depth, sensor.max_depth)
                    .unwrap();
                vox_dual.splat_points(&pc, None);
                vox_single.splat_points(&bad, None);
                for (i, (p, &valid)) in pc.points.iter().zip(&pc.valid).enumerate() {
                    if !valid {
                        continue;
                    }
                    let id = obs.instance[i];
                    if id == ID_NONE {
                        floor += 1;
                        floor_high_dual += usize::from(p.z > band.z_min);
                        floor_high_single += usize::from(bad.valid[i] && bad.points[i].z > band.z_min);
                        if p.z.abs() > SIM_CELL_M {
                            misses += 1;
                        } else {
                            hits += 1;
                        }
                        continue;
                    }
                    let c = g.world_to_cell(p.x, p.y);
                    let z = (p.z / SIM_CELL_M).floor() as i64;
                    let found = (-1..=1).any(|dy| {
                        (-1..=1).any(|dx| {
                            (-1..=1).any(|dz| {
                                let zz = z + dz;
                                zz >= 0 && world.voxel(c.offset(dx, dy), zz as usize) == id
                            })
                        })
                    });
                    if found {
                        hits += 1;
                    } else {
                        misses += 1;
                    }
                }
            }
        }
        for (vox, phantom) in [(&vox_dual, &mut phantom_dual), (&vox_single, &mut phantom_single)] {
            let mut m = SemanticBevMap::new(g, 1);
            m.integrate_all(vox, &band).unwrap();
            *phantom += m.obstacle.iter().filter(|&(c, &o)| o && !near_blocked[c]).count();
        }
    }
    let elapsed = t0.elapsed();
    let ok = misses == 0
        && floor > 0
        && floor_high_dual == 0
        && floor_high_single * 100 >= floor
        && phantom_dual == 0
        && phantom_single > 0
        && elapsed < Duration::from_secs(30);
    report(
        "geometry round trip",
        ok,
        format!(
            "{hits} points within 1 cell, {misses} off; floor above z_min: dual {floor_high_dual}/{floor}, \
             single-focal {floor_high_single}/{floor}; phantom obstacle cells: dual {phantom_dual}, \
             single-focal {phantom_single}; {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
    assert_eq!(misses, 0);
    assert_eq!(floor_high_dual, 0);
    assert!(floor_high_single * 100 >= floor, "single-focal path should lift floor points");
    assert_eq!(phantom_dual, 0);
    assert!(phantom_single > 0);
    assert!(elapsed < Duration::from_secs(30));
}

// --------------------------------------------------------------------- fmm

/// Randomized depth-first maze with `cw`-cell corridors and one-cell walls,
/// plus a fraction of extra openings to create loops.
fn corridor_maze(n: usize, cw: usize, loops: f64, rng: &mut ChaCha8Rng) -> Grid<bool> {
    let pitch = cw + 1;
    let m = (n - 1) / pitch;
    let mut g = Grid::new(n, n, false);
    let open = |g: &mut Grid<bool>, x0: usize, y0: usize, w: usize, h: usize| {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                g.set(Cell::new(x as i32, y as i32), true);
            }
        }
    };
    let mut seen = vec![false; m * m];
    let mut stack = vec![(0usize, 0usize)];
    seen[0] = true;
    open(&mut g, 1, 1, cw, cw);
    while let Some(&(x, y)) = stack.last() {
        let mut next: Vec<(usize, usize)> = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .map(|&(dx, dy)| (x as i64 + dx, y as i64 + dy))
            .filter(|&(a, b)| a >= 0 && b >= 0 && (a as usize) < m && (b as usize) < m)
            .map(|(a, b)| (a as usize, b as usize))
            .filter(|&(a, b)| !seen[b * m + a])
            .collect();
        next.shuffle(rng);
        match next.first() {
            Some(&(a, b)) => {
                seen[b * m + a] = true;
                open(&mut g, 1 + a * pitch, 1 + b * pitch, cw, cw);
                let (x0, y0) = (1 + x.min(a) * pitch, 1 + y.min(b) * pitch);
                if a != x {
                    open(&mut g, x0, y0, 2 * cw + 1, cw);
                } else {
                    open(&mut g, x0, y0, cw, 2 * cw + 1);
                }
                stack.push((a, b));
            }
            None => {
                stack.pop();
            }
        }
    }
    for y in 0..m {
        for x in 0..m {
            if x + 1 < m && rng.gen_bool(loops) {
                open(&mut g, 1 + x * pitch, 1 + y * pitch, 2 * cw + 1, cw);
            }
            if y + 1 < m && rng.gen_bool(loops) {
                open(&mut g, 1 + x * pitch, 1 + y * pitch, cw, 2 * cw + 1);
            }
        }
    }
    g
}

/// 8-connected Dijkstra with unit and sqrt(2) edges.
fn dijkstra8(t: &Grid<bool>, goal: Cell) -> Grid<f64> {
    let mut d = Grid::new(t.width(), t.height(), f64::INFINITY);
    let mut heap = BinaryHeap::new();
    d.set(goal, 0.0);
    heap.push(Reverse((0u64, goal.x, goal.y)));
    while let Some(Reverse((bits, x, y))) = heap.pop() {
        let c = Cell::new(x, y);
        let dc = f64::from_bits(bits);
        if dc > d[c] {
            continue;
        }
        for (dx, dy) in NEIGHBORS8 {
            let n = c.offset(dx, dy);
            if t.get(n) != Some(&true) {
                continue;
            }
            let nd = dc + if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            if nd < d[n] {
                d.set(n, nd);
                heap.push(Reverse((nd.to_bits(), n.x, n.y)));
            }
        }
    }
    d
}

fn bfs4(t: &Grid<bool>, goal: Cell) -> Grid<f64> {
    let mut d = Grid::new(t.width(), t.height(), f64::INFINITY);
    let mut q = VecDeque::from([goal]);
    d.set(goal, 0.0);
    while let Some(c) = q.pop_front() {
        for (dx, dy) in NEIGHBORS4 {
            let n = c.offset(dx, dy);
            if t.get(n) == Some(&true) && d[n].is_infinite() {
                d.set(n, d[c] + 1.0);
                q.push_back(n);
            }
        }
    }
    d
}

fn random_open_cell(t: &Grid<bool>, rng: &mut ChaCha8Rng) -> Cell {
    let open: Vec<Cell> = t.iter().filter(|(_, &f)| f).map(|(c, _)| c).collect();
    *open.choose(rng).unwrap()
}

fn median_solve_time(t: &Grid<bool>, goal: Cell, reps: usize) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let s = Instant::now();
            std::hint::black_box(fmm_solve(t, &[goal]).unwrap());
            s.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[reps / 2]
}

#[test]
fn fmm_bracket_and_scaling() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_low, mut worst_high, mut slowest) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut reach_mismatch = 0;
    for i in 0..50 {
        let t = corridor_maze(200, 1 + i % 2, 0.1, &mut rng);
        let goal = random_open_cell(&t, &mut rng);
        let start = Instant::now();
        let f = fmm_solve(&t, &[goal]).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let (d8, d4) = (dijkstra8(&t, goal), bfs4(&t, goal));
        for (c, &free) in t.iter() {
            if !free {
                continue;
            }
            let v = f.arrival(c);
            if v.is_finite() != d4[c].is_finite() {
                reach_mismatch += 1;
            }
            if v.is_finite() {
                worst_low = worst_low.max(d8[c] - v);
                worst_high = worst_high.max(v - d4[c]);
            }
        }
    }
    let mut times = Vec::new();
    for n in [100usize, 200, 400] {
        let mut per = Vec::new();
        for _ in 0..3 {
            let t = corridor_maze(n, 2, 0.1, &mut rng);
            let goal = random_open_cell(&t, &mut rng);
            per.push(median_solve_time(&t, goal, 5));
        }
        per.sort_by(f64::total_cmp);
        times.push(((n * n) as f64, per[1]));
    }
    // Least-squares slope of log(time) against log(cells).
    let xs: Vec<f64> = times.iter().map(|t| t.0.ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let ok = reach_mismatch == 0 && worst_low <= 1.0 && worst_high <= 1.0 && slowest < 0.05 && slope < 1.25;
    report(
        "fmm bracket and scaling",
        ok,
        format!(
            "max below D8 {worst_low:.3}, max above D4 {worst_high:.3} cells; slowest 200x200 solve {:.1} ms; \
             scaling exponent {slope:.3} ({})",
            slowest * 1e3,
            times
                .iter()
                .map(|(n, t)| format!("{}: {:.2} ms", n.sqrt() as usize, t * 1e3))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    assert_eq!(reach_mismatch, 0);
    assert!(worst_low <= 1.0 && worst_high <= 1.0);
    assert!(slowest < 0.05, "slowest solve {slowest} s");
    assert!(slope < 1.25, "exponent {slope}");
}

// --------------------------------------------------------------- value map

#[test]
fn value_map_convergence_and_bounds() {
    let _g = serial();
    let g = MapGeometry::new(16, 16, 0.0, 0.0, 0.05);
    let full = ConeMask::full(g, 1.0);
    let mut worst_conv = 0usize;
    for &c in &[0.0, 0.1, 0.37, 0.5, 0.8, 1.0] {
        let mut vm = ValueMap::new(g);
        let mut it = 0;
        while it < 20 && vm.mu.as_slice().iter().any(|m| (m - c).abs() >= 1e-3) {
            vm.bayes_update(c, &full).unwrap();
            it += 1;
        }
        let converged = vm.mu.as_slice().iter().all(|m| (m - c).abs() < 1e-3);
        worst_conv = worst_conv.max(if converged { it } else { usize::MAX });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let small = MapGeometry::new(6, 6, 0.0, 0.0, 0.05);
    let mut vm = ValueMap::new(small);
    let mut out_of_bounds = 0usize;
    for _ in 0..100_000 {
        let k = rng.gen_range(1..8);
        let weights: Vec<(Cell, f64)> = (0..k)
            .map(|_| {
                let c = Cell::new(rng.gen_range(0..6), rng.gen_range(0..6));
                let m = match rng.gen_range(0..4) {
                    0 => 1.0,
                    1 => 0.0,
                    _ => rng.gen::<f64>(),
                };
                (c, m)
            })
            .collect();
        let c = if rng.gen_bool(0.2) { f64::from(rng.gen_range(0u8..=1)) } else { rng.gen::<f64>() };
        vm.bayes_update(c, &ConeMask::from_weights(small, &weights)).unwrap();
        out_of_bounds += vm
            .mu
            .iter()
            .filter(|&(cell, &mu)| !(0.0..=1.0).contains(&mu) || vm.sigma2[cell].is_nan() || vm.sigma2[cell] < 0.0)
            .count();
        if rng.gen_bool(0.001) {
            vm = ValueMap::new(small);
        }
    }

    let fresh = ValueMap::new(g);
    let f = Frontier::from_cells(vec![Cell::new(8, 8)]);
    let ucb = ucb_score(&fresh, &f, 0.5, 1.7).unwrap();
    let expected = 0.5 + 1.7 * 0.5f64.sqrt();
    let ok = worst_conv <= 20 && out_of_bounds == 0 && (ucb - expected).abs() < 1e-9;
    report(
        "value map",
        ok,
        format!(
            "converged within {worst_conv} updates; {out_of_bounds} out-of-bounds cells over 1e5 fuzzed updates; \
             fresh UCB {ucb:.12} vs {expected:.12}"
        ),
    );
    assert!(worst_conv <= 20);
    assert_eq!(out_of_bounds, 0);
    assert!((ucb - expected).abs() < 1e-9);
}

// ------------------------------------------------------------------ fusion

fn random_map(rng: &mut ChaCha8Rng, g: MapGeometry, channels: usize) -> SemanticBevMap {
    let mut m = SemanticBevMap::new(g, channels);
    let density = rng.gen::<f64>();
    for c in g.grid(()).cells().collect::<Vec<_>>() {
        if rng.gen_bool(density) {
            m.explored.set(c, true);
        }
        if rng.gen_bool(density / 2.0) {
            m.obstacle.set(c, true);
        }
        for ch in 0..channels {
            if rng.gen_bool(0.2) {
                m.semantic[ch].set(c, rng.gen::<f32>());
            }
        }
    }
    m
}

#[test]
fn fusion_algebra() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = MapGeometry::new(24, 20, 0.0, 0.0, 0.05);
    let empty = SemanticBevMap::new(g, 3);
    let mut violations = [0usize; 4];
    for _ in 0..1000 {
        let a = random_map(&mut rng, g, 3);
        let b = random_map(&mut rng, g, 3);
        let c = random_map(&mut rng, g, 3);
        let ab = fuse_maps(&[&a, &b]).unwrap();
        violations[0] += usize::from(ab != fuse_maps(&[&b, &a]).unwrap());
        let left = fuse_maps(&[&ab, &c]).unwrap();
        let right = fuse_maps(&[&a, &fuse_maps(&[&b, &c]).unwrap()]).unwrap();
        violations[1] += usize::from(left != right || left != fuse_maps(&[&a, &b, &c]).unwrap());
        violations[2] += usize::from(fuse_maps(&[&a, &a]).unwrap() != a);
        violations[3] += usize::from(fuse_maps(&[&a, &empty]).unwrap() != a);
    }
    let ok = violations.iter().all(|&v| v == 0);
    report(
        "fusion algebra",
        ok,
        format!(
            "1000 pairs: commutativity {} / associativity {} / idempotence {} / identity {} violations",
            violations[0], violations[1], violations[2], violations[3]
        ),
    );
    assert!(ok, "{violations:?}");
}

// ------------------------------------------------------------ end to end

struct Timed {
    outcome: BatchOutcome,
    elapsed: Duration,
}

fn batch(agents: usize, scorer: ScorerKind) -> Timed {
    let mut cfg = RunConfig::default();
    cfg.team.agents = agents;
    cfg.scorer = scorer;
    let t = Instant::now();
    let outcome = run_batch(&cfg).unwrap();
    Timed {
        outcome,
        elapsed: t.elapsed(),
    }
}

/// The default two-agent oracle batch, shared by several checks.
fn oracle_pair() -> &'static Timed {
    static B: OnceLock<Timed> = OnceLock::new();
    B.get_or_init(|| batch(2, ScorerKind::Oracle))
}

#[test]
fn oracle_navigation() {
    let _g = serial();
    let b = oracle_pair();
    let r = &b.outcome.report;
    let chains_ok = b.outcome.episodes.iter().all(|e| (3..=5).contains(&e.records.len()));
    let ok = b.outcome.episodes.len() == 20
        && b.outcome.skipped.is_empty()
        && chains_ok
        && r.sr >= 0.90
        && b.elapsed < Duration::from_secs(300);
    report(
        "oracle navigation",
        ok,
        format!(
            "{} episodes, {} subtasks, SR {:.3}, SPL {:.3}, mean DTG on failures {}, {:.0} s",
            r.episodes,
            r.subtasks,
            r.sr,
            r.spl,
            r.failure_dtg_mean.map_or("n/a (no failures)".into(), |d| format!("{d:.2} m")),
            b.elapsed.as_secs_f64()
        ),
    );
    assert_eq!(b.outcome.episodes.len(), 20);
    assert!(chains_ok);
    assert!(r.sr >= 0.90, "SR {}", r.sr);
    assert!(b.elapsed < Duration::from_secs(300), "{:?}", b.elapsed);
}

#[test]
fn second_agent_helps() {
    let _g = serial();
    let two = &oracle_pair().outcome.report;
    let one = batch(1, ScorerKind::Oracle).outcome.report;
    let (s2, s1) = (two.mean_steps_to_success.unwrap(), one.mean_steps_to_success.unwrap_or(f64::INFINITY));
    let ok = two.sr > one.sr && s2 < s1;
    report(
        "two agents vs one",
        ok,
        format!("SR {:.3} vs {:.3}; steps to success {s2:.1} vs {s1:.1}", two.sr, one.sr),
    );
    assert!(two.sr > one.sr);
    assert!(s2 < s1);
}

#[test]
fn scorer_quality_ordering() {
    let _g = serial();
    let oracle = oracle_pair().outcome.report.sr;
    let uniform = batch(2, ScorerKind::Uniform).outcome.report.sr;
    let adversarial = batch(2, ScorerKind::Adversarial).outcome.report.sr;
    let ok = uniform <= oracle && adversarial <= uniform;
    report(
        "scorer ordering",
        ok,
        format!("SR oracle {oracle:.3} >= uniform {uniform:.3} >= adversarial {adversarial:.3}"),
    );
    assert!(uniform <= oracle);
    assert!(adversarial <= uniform);
}

#[test]
fn runs_are_deterministic() {
    let _g = serial();
    let first = oracle_pair().outcome.records_jsonl();
    let second = batch(2, ScorerKind::Oracle).outcome.records_jsonl();
    let ok = first == second && !first.is_empty();
    report(
        "determinism",
        ok,
        format!("{} bytes, {} records, identical: {}", first.len(), first.lines().count(), first == second),
    );
    assert!(ok);
}

// ----------------------------------------------------------------- metrics

fn brute_spl(success: bool, d_geo: f64, d_agent: f64) -> f64 {
    if !success {
        return 0.0;
    }
    if d_agent > d_geo {
        d_geo / d_agent
    } else {
        1.0
    }
}

fn brute_dtg(positions: &[(f64, f64)], fps: &[Footprint]) -> f64 {
    let mut best = f64::INFINITY;
    for &(x, y) in positions {
        for f in fps {
            // Closest point by scanning the rectangle's four edges and interior test.
            let inside = x >= f.min[0] && x <= f.max[0] && y >= f.min[1] && y <= f.max[1];
            let d = if inside {
                0.0
            } else {
                let seg = |ax: f64, ay: f64, bx: f64, by: f64| {
                    let (vx, vy) = (bx - ax, by - ay);
                    let len2 = vx * vx + vy * vy;
                    let t = if len2 > 0.0 { (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    (x - (ax + t * vx)).hypot(y - (ay + t * vy))
                };
                let [x0, y0] = f.min;
                let [x1, y1] = f.max;
                seg(x0, y0, x1, y0).min(seg(x1, y0, x1, y1)).min(seg(x1, y1, x0, y1)).min(seg(x0, y1, x0, y0))
            };
            best = best.min(d);
        }
    }
    best
}

/// Agent poses at the start of every subtask.
struct StartPoses {
    starts: Vec<Vec<Pose>>,
    last: Vec<Pose>,
    current: usize,
}

impl RoundObserver for StartPoses {
    fn on_round(&mut self, subtask: usize, _: usize, _: &SemanticBevMap, agents: &[AgentState]) {
        if subtask != self.current {
            self.starts.push(self.last.clone());
            self.current = subtask;
        }
        self.last = agents.iter().map(|a| a.pose).collect();
    }
}

#[test]
fn metrics_match_brute_force() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0usize;
    let mut episodes = Vec::new();
    let mut records = Vec::new();
    for i in 0..200 {
        let agents = rng.gen_range(1..=3);
        let rounds: Vec<Vec<f64>> = (0..rng.gen_range(0..60))
            .map(|_| (0..agents).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..0.25) }).collect())
            .collect();
        let mut brute_d = 0.0;
        for r in &rounds {
            let mut m = 0.0f64;
            for &d in r {
                if d > m {
                    m = d;
                }
            }
            brute_d += m;
        }
        let d_agent = accumulate_multiagent_path(&rounds);
        mismatches += usize::from(d_agent != brute_d);

        let fps: Vec<Footprint> = (0..rng.gen_range(1..3))
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0));
                Footprint {
                    min: [x, y],
                    max: [x + rng.gen_range(0.1..1.5), y + rng.gen_range(0.1..1.5)],
                }
            })
            .collect();
        let positions: Vec<(f64, f64)> =
            (0..agents).map(|_| (rng.gen_range(-1.0..9.0), rng.gen_range(-1.0..9.0))).collect();
        let d = dtg(&positions, &fps);
        mismatches += usize::from((d - brute_dtg(&positions, &fps)).abs() > 1e-12);

        let d_geo = rng.gen_range(0.5..15.0);
        let stop = rng.gen_bool(0.8);
        let success = stop && d <= 1.0;
        let s = spl(success, d_geo, d_agent).unwrap();
        mismatches += usize::from(s != brute_spl(success, d_geo, d_agent));
        let rec = SubtaskRecord {
            scenario: format!("e{}", i / 4),
            subtask: i % 4,
            query: ["chair", "sofa", "bed"][i % 3].into(),
            agents,
            success,
            stop_called: stop,
            d_geo,
            d_agent,
            dtg_final: d,
            spl: s,
            steps: rounds.len(),
            scorer_fallbacks: 0,
            detector_errors: 0,
        };
        mismatches += usize::from(rec.check().is_err());
        records.push(rec.clone());
        if i % 4 == 3 {
            episodes.push(EpisodeResult {
                scenario: rec.scenario.clone(),
                records: std::mem::take(&mut records),
            });
        }
    }
    let rep = summarize(&episodes);
    let all: Vec<&SubtaskRecord> = episodes.iter().flat_map(|e| &e.records).collect();
    let sr = all.iter().filter(|r| r.success).count() as f64 / all.len() as f64;
    let mean_spl = all.iter().map(|r| r.spl).sum::<f64>() / all.len() as f64;
    mismatches += usize::from((rep.sr - sr).abs() > 1e-12 || (rep.spl - mean_spl).abs() > 1e-12);

    // Start-of-subtask geodesics, minimum over agents, on a real episode.
    let sc = generate_set(&GeneratorConfig::default(), 0, 1).unwrap().remove(0);
    let world = Arc::new(World::from_scenario(&sc).unwrap());
    let cfg = TeamConfig::default();
    let scorer = goalnav::perception::OracleScorer::new(world.clone());
    let detector = OracleDetector::new(world.clone(), cfg.sensor);
    let mut team = Team::new(world.clone(), cfg).unwrap();
    let spawns: Vec<Pose> = team.agents.iter().map(|a| a.pose).collect();
    let mut obs = StartPoses {
        starts: vec![spawns.clone()],
        last: spawns,
        current: 0,
    };
    let recs = team.run_episode(&scorer, &detector, &mut obs).unwrap();
    let mut geo_mismatch = 0;
    for (k, r) in recs.iter().enumerate() {
        let start = &obs.starts[k.min(obs.starts.len() - 1)];
        let expect = start.iter().map(|p| world.geodesic(p, &r.query)).fold(f64::INFINITY, f64::min);
        geo_mismatch += usize::from(obs.starts.len() > k && r.d_geo != expect);
        geo_mismatch += usize::from(r.spl != brute_spl(r.success, r.d_geo, r.d_agent));
    }
    let ok = mismatches == 0 && geo_mismatch == 0 && obs.starts.len() == recs.len();
    report(
        "metrics",
        ok,
        format!(
            "200 synthetic records: {mismatches} mismatches; {} live subtasks: {geo_mismatch} start-geodesic/SPL mismatches",
            recs.len()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- protocol

fn request<'a>(query: &'a GoalQuery, frontiers: &'a [(f64, f64)]) -> ScoreRequest<'a> {
    ScoreRequest {
        agent_id: 0,
        query,
        frontiers,
        history: "round=0",
        stages: &["frontier_ranking"],
        rgb: None,
    }
}

fn room() -> Scenario {
    Scenario::from_toml(
        r#"
version = 1
name = "room"
width_m = 6.0
depth_m = 5.0
subtasks = ["sofa", "plant"]
[[walls]]
from = [3.0, 0.0]
to = [3.0, 3.5]
[[objects]]
label = "sofa"
min = [4.5, 3.8, 0.0]
max = [5.8, 4.7, 0.8]
[[objects]]
label = "plant"
min = [0.3, 0.3, 0.0]
max = [0.7, 0.7, 1.2]
[[spawns]]
x = 1.5
y = 2.0
theta_deg = 0.0
[[spawns]]
x = 2.0
y = 2.5
theta_deg = 90.0
"#,
    )
    .unwrap()
}

fn episode_with(scorer: &dyn Scorer, budget: usize) -> Vec<SubtaskRecord> {
    let world = Arc::new(World::from_scenario(&room()).unwrap());
    let cfg = TeamConfig {
        budget,
        ..TeamConfig::default()
    };
    let detector = OracleDetector::new(world.clone(), cfg.sensor);
    let mut team = Team::new(world, cfg).unwrap();
    team.run_episode(scorer, &detector, &mut ()).unwrap()
}

#[test]
fn external_scorer_protocol() {
    let _g = serial();
    let query = GoalQuery::new("sofa", 3).unwrap();
    let pts = [(1.0, 2.0), (3.5, 0.25), (7.0, 7.0)];
    let mut failures: Vec<String> = Vec::new();

    let server = EchoServer::start(FaultMode::None).unwrap();
    let client = ExternalScorer::new(server.addr().to_string(), Duration::from_millis(500));
    for round in 0..3 {
        match client.score_frontiers(&request(&query, &pts)) {
            Ok(s) if s == vec![0.5; 3] => {}
            other => failures.push(format!("round trip {round}: {other:?}")),
        }
    }
    let seen = server.requests();
    let parsed: Vec<serde_json::Value> = seen.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ids: Vec<u64> = parsed.iter().map(|v| v["request_id"].as_u64().unwrap()).collect();
    if parsed.len() != 3
        || ids.windows(2).any(|w| w[1] <= w[0])
        || parsed[0]["type"] != "score_frontiers"
        || parsed[0]["query"]["text"] != "sofa"
        || parsed[0]["frontiers"][1] != serde_json::json!([3.5, 0.25])
    {
        failures.push(format!("server saw {seen:?}"));
    }
    let reply: WireReply = serde_json::from_str(r#"{"v":1,"request_id":9,"scores":[0.1]}"#).unwrap();
    if reply.scores != Some(vec![0.1]) {
        failures.push("reply schema".into());
    }

    let faults = [
        ("timeout", FaultMode::Delay(Duration::from_millis(600))),
        ("silent", FaultMode::Silent),
        ("malformed", FaultMode::Malformed),
        ("wrong length", FaultMode::WrongLength),
        ("drop mid reply", FaultMode::DropMidReply),
    ];
    let mut degraded = 0;
    for (name, mode) in faults {
        let server = EchoServer::start(mode).unwrap();
        let client = ExternalScorer::new(server.addr().to_string(), Duration::from_millis(150));
        let start = Instant::now();
        let (scores, err) = score_or_fallback(&client, &request(&query, &pts));
        if scores == vec![FALLBACK_SCORE; 3] && err.is_some() && start.elapsed() < Duration::from_secs(2) {
            degraded += 1;
        } else {
            failures.push(format!("{name}: {scores:?} {err:?}"));
        }
    }

    // Whole episodes against misbehaving servers still finish and log fallbacks.
    let mut episodes_ok = 0;
    for mode in [FaultMode::Malformed, FaultMode::Delay(Duration::from_millis(100))] {
        let server = EchoServer::start(mode).unwrap();
        let client = ExternalScorer::new(server.addr().to_string(), Duration::from_millis(20));
        let recs = episode_with(&client, 40);
        let fallbacks: usize = recs.iter().map(|r| r.scorer_fallbacks).sum();
        if recs.len() == 2 && fallbacks > 0 {
            episodes_ok += 1;
        } else {
            failures.push(format!("{mode:?} episode: {recs:?}"));
        }
    }
    let ok = failures.is_empty();
    report(
        "external scorer protocol",
        ok,
        format!(
            "3 round trips; {degraded}/5 faults degraded to fallback scores; {episodes_ok}/2 faulty episodes completed{}",
            if ok { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
    assert!(ok, "{failures:?}");
}
