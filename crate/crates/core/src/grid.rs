//! Dense 2D grids and the metric geometry that ties map cells to world meters.

use serde::{Deserialize, Serialize};

/// Integer map cell. `x` indexes columns (world +x), `y` indexes rows (world +y).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    /// Euclidean distance in cells.
    pub fn distance(self, other: Cell) -> f64 {
        let dx = f64::from(self.x - other.x);
        let dy = f64::from(self.y - other.y);
        dx.hypot(dy)
    }
}

pub const NEIGHBORS4: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

pub const NEIGHBORS8: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Row-major dense grid. Index `y * width + x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value.clone());
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.width && (cell.y as usize) < self.height
    }

    pub fn index(&self, cell: Cell) -> Option<usize> {
        self.in_bounds(cell)
            .then(|| cell.y as usize * self.width + cell.x as usize)
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.index(cell).map(|i| &self.data[i])
    }

    pub fn get_mut(&mut self, cell: Cell) -> Option<&mut T> {
        self.index(cell).map(move |i| &mut self.data[i])
    }

    /// Writes `value` when `cell` is in bounds; returns whether it was.
    pub fn set(&mut self, cell: Cell, value: T) -> bool {
        match self.index(cell) {
            Some(i) => {
                self.data[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.data.len()).map(move |i| self.cell_of(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        self.data.iter().enumerate().map(move |(i, v)| (self.cell_of(i), v))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> std::ops::Index<Cell> for Grid<T> {
    type Output = T;

    fn index(&self, cell: Cell) -> &T {
        let i = Grid::index(self, cell).unwrap_or_else(|| panic!("cell {cell:?} out of bounds"));
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<Cell> for Grid<T> {
    fn index_mut(&mut self, cell: Cell) -> &mut T {
        let i = Grid::index(self, cell).unwrap_or_else(|| panic!("cell {cell:?} out of bounds"));
        &mut self.data[i]
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Placement of a square-celled grid in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub width: usize,
    pub height: usize,
    /// World coordinates (meters) of the lower-left corner of cell (0, 0).
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
}

impl MapGeometry {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, cell_size: f64) -> Self {
        Self {
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
        }
    }

    /// Cell containing a world point, whether or not it is in bounds.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Cell {
        Cell::new(
            ((x - self.origin_x) / self.cell_size).floor() as i32,
            ((y - self.origin_y) / self.cell_size).floor() as i32,
        )
    }

    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            self.origin_x + (f64::from(cell.x) + 0.5) * self.cell_size,
            self.origin_y + (f64::from(cell.y) + 0.5) * self.cell_size,
        )
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && (cell.x as usize) < self.width && (cell.y as usize) < self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn grid<T: Clone>(&self, fill: T) -> Grid<T> {
        Grid::new(self.width, self.height, fill)
    }
}

/// Marks every cell within `radius` cells (Euclidean, center to center) of a
/// `true` cell in `src`.
pub fn dilate(src: &Grid<bool>, radius: f64) -> Grid<bool> {
    let r = radius.floor() as i32;
    let offsets: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| f64::from(dx * dx + dy * dy) <= radius * radius + 1e-9)
        .collect();
    let mut out = Grid::new(src.width(), src.height(), false);
    for (cell, &v) in src.iter() {
        if !v {
            continue;
        }
        for &(dx, dy) in &offsets {
            out.set(cell.offset(dx, dy), true);
        }
    }
    out
}

/// Cells of the discrete line from `a` to `b`, both ends included.
pub fn line_cells(a: Cell, b: Cell) -> Vec<Cell> {
    let (mut x, mut y) = (a.x, a.y);
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push(Cell::new(x, y));
        if x == b.x && y == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_cell_round_trip() {
        let g = MapGeometry::new(10, 8, -1.0, 2.0, 0.05);
        let c = Cell::new(3, 7);
        let (x, y) = g.cell_center(c);
        assert_eq!(g.world_to_cell(x, y), c);
        assert_eq!(g.world_to_cell(-1.0, 2.0), Cell::new(0, 0));
        assert_eq!(g.world_to_cell(-1.001, 2.0), Cell::new(-1, 0));
    }

    #[test]
    fn dilate_radius_two_is_a_disc() {
        let mut g = Grid::new(7, 7, false);
        g[Cell::new(3, 3)] = true;
        let d = dilate(&g, 2.0);
        assert_eq!(d.count_true(), 13);
        assert!(d[Cell::new(5, 3)]);
        assert!(!d[Cell::new(5, 5)]);
    }

    #[test]
    fn line_includes_endpoints() {
        let cells = line_cells(Cell::new(0, 0), Cell::new(4, 2));
        assert_eq!(cells.first(), Some(&Cell::new(0, 0)));
        assert_eq!(cells.last(), Some(&Cell::new(4, 2)));
        assert_eq!(cells.len(), 5);
    }
}
