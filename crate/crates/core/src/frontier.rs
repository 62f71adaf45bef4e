//! Frontier extraction: connected components of explored free cells that
//! border unknown space.

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, Grid, NEIGHBORS4, NEIGHBORS8};
use crate::mapping::SemanticBevMap;
use crate::planner::DistanceField;

/// Smallest frontier kept, in cells (0.2 m at 5 cm cells).
pub const MIN_FRONTIER_SIZE: usize = 4;
/// Most frontiers considered per decision.
pub const MAX_FRONTIERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Member cells in row-major order.
    pub cells: Vec<Cell>,
    /// Mean of the member cells, in fractional cell coordinates.
    pub mean: (f64, f64),
    /// Member cell nearest to `mean` (ties to the smaller cell), so it is
    /// always a free cell on the boundary.
    pub centroid: Cell,
}

impl Frontier {
    pub fn from_cells(mut cells: Vec<Cell>) -> Self {
        assert!(!cells.is_empty(), "frontier needs at least one cell");
        cells.sort_unstable_by_key(|c| (c.y, c.x));
        let n = cells.len() as f64;
        let mx = cells.iter().map(|c| f64::from(c.x)).sum::<f64>() / n;
        let my = cells.iter().map(|c| f64::from(c.y)).sum::<f64>() / n;
        let dist = |c: &Cell| (f64::from(c.x) - mx).powi(2) + (f64::from(c.y) - my).powi(2);
        let centroid = *cells
            .iter()
            .min_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.cmp(b)))
            .expect("non-empty");
        Self {
            cells,
            mean: (mx, my),
            centroid,
        }
    }

    pub fn size(&self) -> usize {
        self.cells.len()
    }
}

fn is_boundary(map: &SemanticBevMap, cell: Cell) -> bool {
    map.is_free(cell)
        && NEIGHBORS4
            .iter()
            .any(|&(dx, dy)| map.is_unknown(cell.offset(dx, dy)))
}

/// Boundary cells grouped into 8-connected components; components below
/// `min_size` are dropped and the `max_count` largest are returned, ties broken
/// by the lexicographically smaller mean.
pub fn extract_frontiers(map: &SemanticBevMap, min_size: usize, max_count: usize) -> Vec<Frontier> {
    let g = map.geometry;
    let boundary = Grid::from_vec(
        g.width,
        g.height,
        (0..g.cells())
            .map(|i| {
                let c = Cell::new((i % g.width) as i32, (i / g.width) as i32);
                is_boundary(map, c)
            })
            .collect(),
    );
    let mut visited = g.grid(false);
    let mut frontiers = Vec::new();
    let mut stack = Vec::new();
    for (start, &b) in boundary.iter() {
        if !b || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut members = Vec::new();
        while let Some(c) = stack.pop() {
            members.push(c);
            for (dx, dy) in NEIGHBORS8 {
                let n = c.offset(dx, dy);
                if boundary.get(n).copied().unwrap_or(false) && !visited[n] {
                    visited[n] = true;
                    stack.push(n);
                }
            }
        }
        if members.len() >= min_size.max(1) {
            frontiers.push(Frontier::from_cells(members));
        }
    }
    frontiers.sort_by(|a, b| {
        b.size()
            .cmp(&a.size())
            .then(a.mean.0.total_cmp(&b.mean.0))
            .then(a.mean.1.total_cmp(&b.mean.1))
    });
    frontiers.truncate(max_count);
    frontiers
}

/// Drops frontiers whose centroid cannot be reached in `field`.
pub fn frontier_reachability_filter(frontiers: Vec<Frontier>, field: &DistanceField) -> Vec<Frontier> {
    frontiers
        .into_iter()
        .filter(|f| field.arrival(f.centroid).is_finite())
        .collect()
}
