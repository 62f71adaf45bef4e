//! Seeded multi-room scenario generator.
//!
//! Rooms form a grid; doors are cut along a random spanning tree of the room
//! adjacency graph plus a few extra edges, so every room is reachable.
//! Objects are drawn without replacement from a fixed vocabulary and placed
//! clear of walls, doors and each other.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{ObjectSpec, Scenario, SpawnSpec, WallSpec, SCENARIO_VERSION};
use super::{SimError, World};

/// Label and footprint/height in meters.
pub const VOCABULARY: &[(&str, f64, f64, f64)] = &[
    ("chair", 0.5, 0.5, 0.9),
    ("sofa", 1.8, 0.8, 0.8),
    ("bed", 1.6, 2.0, 0.6),
    ("table", 1.2, 0.8, 0.75),
    ("refrigerator", 0.8, 0.7, 1.8),
    ("plant", 0.4, 0.4, 1.0),
    ("toilet", 0.5, 0.7, 0.8),
    ("bookshelf", 1.0, 0.35, 1.8),
    ("piano", 1.5, 0.6, 1.2),
    ("tv_stand", 1.2, 0.4, 1.1),
    ("bathtub", 1.6, 0.8, 0.6),
    ("washer", 0.6, 0.6, 0.9),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rooms_x: usize,
    pub rooms_y: usize,
    pub room_m: f64,
    pub wall_thickness_m: f64,
    pub door_m: f64,
    pub extra_doors: usize,
    pub objects: (usize, usize),
    pub subtasks: (usize, usize),
    pub spawns: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rooms_x: 3,
            rooms_y: 3,
            room_m: 4.0,
            wall_thickness_m: 0.1,
            door_m: 1.0,
            extra_doors: 2,
            objects: (6, 9),
            subtasks: (3, 5),
            spawns: 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn gap(&self, o: &Rect) -> f64 {
        let dx = (o.x0 - self.x1).max(self.x0 - o.x1).max(0.0);
        let dy = (o.y0 - self.y1).max(self.y0 - o.y1).max(0.0);
        dx.hypot(dy)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Generates one scenario; retries internally until the world validates.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<Scenario, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for _ in 0..16 {
        let s = generate_once(cfg, seed, &mut rng)?;
        match World::from_scenario(&s) {
            Ok(_) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| SimError::Invalid("generator gave up".into())))
}

fn generate_once(cfg: &GeneratorConfig, seed: u64, rng: &mut ChaCha8Rng) -> Result<Scenario, SimError> {
    let (nx, ny, r) = (cfg.rooms_x, cfg.rooms_y, cfg.room_m);
    if nx == 0 || ny == 0 || r < 2.0 * cfg.door_m {
        return Err(SimError::Invalid("room grid too small".into()));
    }
    let room = |i: usize| (i % nx, i / nx);
    let n_rooms = nx * ny;

    // Candidate walls between horizontally/vertically adjacent rooms.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..n_rooms {
        let (x, y) = room(i);
        if x + 1 < nx {
            edges.push((i, i + 1));
        }
        if y + 1 < ny {
            edges.push((i, i + nx));
        }
    }
    edges.shuffle(rng);
    // Kruskal with union-find gives a random spanning tree.
    let mut parent: Vec<usize> = (0..n_rooms).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut i = i;
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut doors = vec![false; edges.len()];
    let mut extras = Vec::new();
    for (k, &(a, b)) in edges.iter().enumerate() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            doors[k] = true;
        } else {
            extras.push(k);
        }
    }
    for &k in extras.iter().take(cfg.extra_doors) {
        doors[k] = true;
    }

    let margin = 0.5;
    let mut walls = Vec::new();
    let mut door_zones = Vec::new();
    for (k, &(a, b)) in edges.iter().enumerate() {
        let (ax, ay) = room(a);
        let vertical = b == a + 1;
        // Shared wall line and its extent along the other axis.
        let (fixed, lo) = if vertical {
            ((ax + 1) as f64 * r, ay as f64 * r)
        } else {
            ((ay + 1) as f64 * r, ax as f64 * r)
        };
        let hi = lo + r;
        let mut pieces = vec![(lo, hi)];
        if doors[k] {
            let d0 = rng.gen_range(lo + margin..hi - margin - cfg.door_m);
            let d1 = d0 + cfg.door_m;
            pieces = vec![(lo, d0), (d1, hi)];
            let mid = (d0 + d1) / 2.0;
            let (cx, cy) = if vertical { (fixed, mid) } else { (mid, fixed) };
            door_zones.push(Rect {
                x0: cx - 0.9,
                y0: cy - 0.9,
                x1: cx + 0.9,
                y1: cy + 0.9,
            });
        }
        for (p0, p1) in pieces {
            let (from, to) = if vertical {
                ([fixed, p0], [fixed, p1])
            } else {
                ([p0, fixed], [p1, fixed])
            };
            walls.push(WallSpec {
                from,
                to,
                thickness_m: cfg.wall_thickness_m,
            });
        }
    }

    let clear_wall = 0.3;
    let clear_obj = 0.5;
    let n_obj = rng.gen_range(cfg.objects.0..=cfg.objects.1).min(VOCABULARY.len());
    let mut vocab: Vec<usize> = (0..VOCABULARY.len()).collect();
    vocab.shuffle(rng);
    let mut placed: Vec<Rect> = Vec::new();
    let mut objects = Vec::new();
    for &vi in &vocab {
        if objects.len() == n_obj {
            break;
        }
        let (label, sx, sy, sz) = VOCABULARY[vi];
        for _ in 0..60 {
            let (mut w, mut d) = (sx, sy);
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut w, &mut d);
            }
            let ri = rng.gen_range(0..n_rooms);
            let (rx, ry) = room(ri);
            let (bx0, by0) = (rx as f64 * r + clear_wall, ry as f64 * r + clear_wall);
            let (bx1, by1) = ((rx + 1) as f64 * r - clear_wall - w, (ry + 1) as f64 * r - clear_wall - d);
            if bx1 <= bx0 || by1 <= by0 {
                continue;
            }
            let x0 = snap(rng.gen_range(bx0..bx1));
            let y0 = snap(rng.gen_range(by0..by1));
            let rect = Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + d,
            };
            if door_zones.iter().any(|z| z.gap(&rect) == 0.0) || placed.iter().any(|p| p.gap(&rect) < clear_obj) {
                continue;
            }
            placed.push(rect);
            objects.push(ObjectSpec {
                label: label.to_string(),
                min: [rect.x0, rect.y0, 0.0],
                max: [rect.x1, rect.y1, sz],
                pierced: false,
            });
            break;
        }
    }
    if objects.len() < cfg.subtasks.0.max(1) {
        return Err(SimError::Invalid("could not place enough objects".into()));
    }

    // Spawns in distinct rooms, away from objects and walls.
    let mut rooms: Vec<usize> = (0..n_rooms).collect();
    rooms.shuffle(rng);
    let mut spawns = Vec::new();
    for &ri in rooms.iter() {
        if spawns.len() == cfg.spawns {
            break;
        }
        let (rx, ry) = room(ri);
        for _ in 0..60 {
            let x = snap(rng.gen_range(rx as f64 * r + 0.5..(rx + 1) as f64 * r - 0.5)) + 0.025;
            let y = snap(rng.gen_range(ry as f64 * r + 0.5..(ry + 1) as f64 * r - 0.5)) + 0.025;
            let pt = Rect {
                x0: x,
                y0: y,
                x1: x,
                y1: y,
            };
            if placed.iter().any(|p| p.gap(&pt) < 0.6) || door_zones.iter().any(|z| z.contains(x, y)) {
                continue;
            }
            let theta = f64::from(rng.gen_range(0..36) * 10 - 170);
            spawns.push(SpawnSpec { x, y, theta_deg: theta });
            break;
        }
    }

    let n_sub = rng.gen_range(cfg.subtasks.0..=cfg.subtasks.1).min(objects.len());
    let mut labels: Vec<String> = objects.iter().map(|o| o.label.clone()).collect();
    labels.shuffle(rng);
    labels.truncate(n_sub);

    Ok(Scenario {
        version: SCENARIO_VERSION,
        name: format!("procedural_{seed}"),
        width_m: nx as f64 * r,
        depth_m: ny as f64 * r,
        wall_height_m: 2.4,
        enclose: true,
        subtasks: labels,
        walls,
        objects,
        spawns,
    })
}

fn snap(v: f64) -> f64 {
    (v / 0.05).round() * 0.05
}

/// A batch of scenarios from consecutive seeds.
pub fn generate_set(cfg: &GeneratorConfig, base_seed: u64, count: usize) -> Result<Vec<Scenario>, SimError> {
    (0..count as u64).map(|i| generate(cfg, base_seed.wrapping_add(i))).collect()
}
