//! Voxel accumulation and bird's-eye-view slicing.
//!
//! Registered points are binned into a `(x, y, z, channel)` count grid.
//! The BEV map is derived by height slicing: a column is an obstacle when the
//! occupancy counts inside the traversability band exceed `tau_obs`, and
//! explored when any height bin holds a point. Goal detections are
//! back-projected through depth and written into per-query semantic channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DepthImage, Pose, PointCloud, Sensor};
use crate::grid::{Cell, Grid, MapGeometry, NEIGHBORS8};
use crate::image::PixelMask;

/// Meters per BEV cell and per height bin.
pub const CELL_SIZE_M: f64 = 0.05;
/// Height extent of the voxel grid.
pub const VOXEL_HEIGHT_M: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("invalid mapping parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("goal mask is empty")]
    EmptyMask,
    #[error("no masked pixel has a valid depth reading")]
    NoValidDepth,
}

/// Traversability height band and count threshold used for obstacle slicing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightBand {
    pub z_min: f64,
    pub z_max: f64,
    pub tau_obs: f64,
}

impl HeightBand {
    /// `[25 cm, h_s + 50 cm]`, obstacle at one or more points.
    pub fn for_sensor_height(h_s: f64) -> Self {
        Self {
            z_min: 0.25,
            z_max: h_s + 0.5,
            tau_obs: 0.5,
        }
    }
}

/// Accumulated point counts over `(x, y, z, channel)`. Channel 0 is occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    geometry: MapGeometry,
    nz: usize,
    channels: usize,
    counts: Vec<u32>,
    dropped: u64,
}

/// Outcome of one [`VoxelGrid::splat_points`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatReport {
    pub inserted: usize,
    pub dropped: usize,
    /// Column indices (`y * width + x`) that received at least one point.
    pub columns: Vec<usize>,
}

impl VoxelGrid {
    pub fn new(geometry: MapGeometry, height_m: f64, channels: usize) -> Result<Self, MappingError> {
        if !(geometry.cell_size > 0.0) || !(height_m > 0.0) || channels == 0 {
            return Err(MappingError::InvalidParameter(format!(
                "cell size {}, height {height_m}, channels {channels}",
                geometry.cell_size
            )));
        }
        let nz = (height_m / geometry.cell_size - 1e-9).ceil() as usize;
        Ok(Self {
            geometry,
            nz,
            channels,
            counts: vec![0; geometry.cells() * nz * channels],
            dropped: 0,
        })
    }

    pub fn geometry(&self) -> &MapGeometry {
        &self.geometry
    }

    pub fn height_bins(&self) -> usize {
        self.nz
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Total points dropped as out of bounds since creation.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn offset(&self, column: usize, z: usize, c: usize) -> usize {
        (column * self.nz + z) * self.channels + c
    }

    pub fn count(&self, cell: Cell, z: usize, channel: usize) -> u32 {
        if !self.geometry.contains(cell) || z >= self.nz || channel >= self.channels {
            return 0;
        }
        let col = cell.y as usize * self.geometry.width + cell.x as usize;
        self.counts[self.offset(col, z, channel)]
    }

    /// Height bin for `z`, treating sub-floor noise down to one bin below zero as floor.
    pub fn z_bin(&self, z: f64) -> Option<usize> {
        let cs = self.geometry.cell_size;
        if z < -cs || !z.is_finite() {
            return None;
        }
        let b = (z.max(0.0) / cs).floor() as usize;
        (b < self.nz).then_some(b)
    }

    /// Voxel containing a map-frame point.
    pub fn voxel_of(&self, x: f64, y: f64, z: f64) -> Option<(Cell, usize)> {
        let cell = self.geometry.world_to_cell(x, y);
        if !self.geometry.contains(cell) {
            return None;
        }
        Some((cell, self.z_bin(z)?))
    }

    /// Nearest-voxel binning. Each in-bounds valid point increments its voxel in
    /// channel 0 and, when `labels` gives a non-zero channel, in that channel too.
    pub fn splat_points(&mut self, pc: &PointCloud, labels: Option<&[u16]>) -> SplatReport {
        let mut report = SplatReport::default();
        let width = self.geometry.width;
        for (i, (p, &ok)) in pc.points.iter().zip(&pc.valid).enumerate() {
            if !ok {
                continue;
            }
            let Some((cell, z)) = self.voxel_of(p.x, p.y, p.z) else {
                report.dropped += 1;
                continue;
            };
            let col = cell.y as usize * width + cell.x as usize;
            let base = self.offset(col, z, 0);
            self.counts[base] = self.counts[base].saturating_add(1);
            if let Some(&ch) = labels.and_then(|l| l.get(i)) {
                let ch = ch as usize;
                if ch > 0 && ch < self.channels {
                    self.counts[base + ch] = self.counts[base + ch].saturating_add(1);
                }
            }
            report.inserted += 1;
            report.columns.push(col);
        }
        report.columns.sort_unstable();
        report.columns.dedup();
        self.dropped += report.dropped as u64;
        report
    }

    /// Inclusive bin range whose lower edges fall inside `[z_min, z_max]`.
    fn band_bins(&self, z_min: f64, z_max: f64) -> Result<(usize, usize), MappingError> {
        let cs = self.geometry.cell_size;
        let top = self.nz as f64 * cs;
        if !(z_min < z_max) || z_min < 0.0 || z_max > top + 1e-9 {
            return Err(MappingError::InvalidParameter(format!(
                "height band [{z_min}, {z_max}] outside grid extent [0, {top}]"
            )));
        }
        let lo = (z_min / cs - 1e-9).ceil() as usize;
        let hi = ((z_max / cs + 1e-9).floor() as usize).min(self.nz - 1);
        Ok((lo, hi))
    }

    fn column_sum(&self, col: usize, lo: usize, hi: usize) -> u64 {
        (lo..=hi)
            .map(|z| u64::from(self.counts[self.offset(col, z, 0)]))
            .sum()
    }

    fn column_channel_total(&self, col: usize, c: usize) -> u64 {
        (0..self.nz)
            .map(|z| u64::from(self.counts[self.offset(col, z, c)]))
            .sum()
    }
}

pub fn slice_obstacles(
    grid: &VoxelGrid,
    z_min: f64,
    z_max: f64,
    tau_obs: f64,
) -> Result<Grid<bool>, MappingError> {
    let (lo, hi) = grid.band_bins(z_min, z_max)?;
    let g = grid.geometry;
    let data = (0..g.cells())
        .map(|col| grid.column_sum(col, lo, hi) as f64 > tau_obs)
        .collect();
    Ok(Grid::from_vec(g.width, g.height, data))
}

pub fn slice_explored(grid: &VoxelGrid) -> Grid<bool> {
    let g = grid.geometry;
    let data = (0..g.cells())
        .map(|col| grid.column_sum(col, 0, grid.nz - 1) > 0)
        .collect();
    Grid::from_vec(g.width, g.height, data)
}

/// Where a navigation goal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalSource {
    Detector,
    Frontier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGoal {
    pub centroid: Cell,
    pub support: Vec<Cell>,
    pub source: GoalSource,
}

/// Per-agent (or fused) top-down map.
///
/// Invariants: `obstacle` and every semantic channel's support are subsets of
/// `explored`. All mutation goes through methods that preserve this.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBevMap {
    pub geometry: MapGeometry,
    pub obstacle: Grid<bool>,
    pub explored: Grid<bool>,
    pub semantic: Vec<Grid<f32>>,
}

impl SemanticBevMap {
    pub fn new(geometry: MapGeometry, semantic_channels: usize) -> Self {
        Self {
            geometry,
            obstacle: geometry.grid(false),
            explored: geometry.grid(false),
            semantic: (0..semantic_channels).map(|_| geometry.grid(0.0)).collect(),
        }
    }

    pub fn same_geometry(&self, other: &SemanticBevMap) -> bool {
        self.geometry == other.geometry && self.semantic.len() == other.semantic.len()
    }

    /// Re-slices the given voxel columns into the obstacle/explored layers.
    /// Layers only ever gain cells, so repeated integration is monotone.
    pub fn integrate_columns(
        &mut self,
        grid: &VoxelGrid,
        columns: &[usize],
        band: &HeightBand,
    ) -> Result<(), MappingError> {
        if grid.geometry != self.geometry {
            return Err(MappingError::Shape("voxel grid and map geometry differ".into()));
        }
        let (lo, hi) = grid.band_bins(band.z_min, band.z_max)?;
        let last = grid.nz - 1;
        for &col in columns {
            if grid.column_sum(col, 0, last) > 0 {
                self.explored.as_mut_slice()[col] = true;
            }
            if grid.column_sum(col, lo, hi) as f64 > band.tau_obs {
                self.obstacle.as_mut_slice()[col] = true;
                self.explored.as_mut_slice()[col] = true;
            }
            for (c, layer) in self.semantic.iter_mut().enumerate() {
                // Voxel channel c + 1 feeds semantic channel c.
                if c + 1 < grid.channels && grid.column_channel_total(col, c + 1) > 0 {
                    let v = &mut layer.as_mut_slice()[col];
                    *v = v.max(1.0);
                    self.explored.as_mut_slice()[col] = true;
                }
            }
        }
        Ok(())
    }

    pub fn integrate_all(&mut self, grid: &VoxelGrid, band: &HeightBand) -> Result<(), MappingError> {
        let all: Vec<usize> = (0..self.geometry.cells()).collect();
        self.integrate_columns(grid, &all, band)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.explored.get(cell).copied().unwrap_or(false) && !self.obstacle[cell]
    }

    pub fn is_unknown(&self, cell: Cell) -> bool {
        self.explored.get(cell).map(|e| !e).unwrap_or(false)
    }

    pub fn explored_count(&self) -> usize {
        self.explored.count_true()
    }

    pub fn mark_obstacle(&mut self, cell: Cell) {
        if self.obstacle.set(cell, true) {
            self.explored[cell] = true;
        }
    }

    /// Raises a semantic cell to `value` (max), marking it explored.
    pub fn write_semantic(&mut self, channel: usize, cell: Cell, value: f32) {
        let Some(layer) = self.semantic.get_mut(channel) else {
            return;
        };
        if let Some(v) = layer.get_mut(cell) {
            *v = v.max(value);
            self.explored[cell] = true;
        }
    }

    pub fn semantic_cells(&self, channel: usize) -> Vec<Cell> {
        self.semantic
            .get(channel)
            .map(|layer| layer.iter().filter(|(_, &v)| v > 0.0).map(|(c, _)| c).collect())
            .unwrap_or_default()
    }

    /// Marks cells within `radius` cells of `center` explored, flooding only
    /// through cells not already known to be obstacles. Covers the floor right
    /// around the agent, which a pitched camera cannot see.
    pub fn sweep_footprint(&mut self, center: Cell, radius: f64) {
        if !self.geometry.contains(center) {
            return;
        }
        let mut stack = vec![center];
        let mut seen = std::collections::HashSet::from([center]);
        while let Some(c) = stack.pop() {
            if self.obstacle[c] {
                continue;
            }
            self.explored[c] = true;
            for (dx, dy) in NEIGHBORS8 {
                let n = c.offset(dx, dy);
                if self.geometry.contains(n) && n.distance(center) <= radius && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
    }
}

/// Back-projects the masked pixels through depth into BEV cells, writes them
/// to `channel` with value `confidence`, and returns the goal they describe.
pub fn project_goal_mask(
    mask: &PixelMask,
    depth: &DepthImage,
    sensor: &Sensor,
    pose: &Pose,
    map: &mut SemanticBevMap,
    channel: usize,
    confidence: f32,
) -> Result<BevGoal, MappingError> {
    if mask.is_empty() {
        return Err(MappingError::EmptyMask);
    }
    if mask.width != depth.width || mask.height != depth.height {
        return Err(MappingError::Shape(format!(
            "mask {}x{} vs depth {}x{}",
            mask.width, mask.height, depth.width, depth.height
        )));
    }
    if channel >= map.semantic.len() {
        return Err(MappingError::InvalidParameter(format!(
            "semantic channel {channel} out of range ({} channels)",
            map.semantic.len()
        )));
    }
    let world = sensor
        .to_world(depth, pose)
        .map_err(|e| MappingError::Shape(e.to_string()))?;
    let mut support: Vec<Cell> = mask
        .pixels
        .iter()
        .filter(|&&i| world.valid[i as usize])
        .map(|&i| {
            let p = world.points[i as usize];
            map.geometry.world_to_cell(p.x, p.y)
        })
        .filter(|&c| map.geometry.contains(c))
        .collect();
    if support.is_empty() {
        return Err(MappingError::NoValidDepth);
    }
    support.sort_unstable();
    support.dedup();
    for &c in &support {
        map.write_semantic(channel, c, confidence);
    }
    Ok(BevGoal {
        centroid: mean_cell(&support),
        support,
        source: GoalSource::Detector,
    })
}

/// Rounded mean of a non-empty cell set.
pub fn mean_cell(cells: &[Cell]) -> Cell {
    let n = cells.len() as f64;
    let sx: f64 = cells.iter().map(|c| f64::from(c.x)).sum();
    let sy: f64 = cells.iter().map(|c| f64::from(c.y)).sum();
    Cell::new((sx / n).round() as i32, (sy / n).round() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn geometry(n: usize) -> MapGeometry {
        MapGeometry::new(n, n, 0.0, 0.0, CELL_SIZE_M)
    }

    fn grid(n: usize) -> VoxelGrid {
        VoxelGrid::new(geometry(n), VOXEL_HEIGHT_M, 2).unwrap()
    }

    #[test]
    fn forty_height_bins() {
        assert_eq!(grid(4).height_bins(), 40);
    }

    #[test]
    fn single_point_lands_in_its_voxel() {
        let mut g = grid(10);
        let pc = PointCloud::from_points(vec![Vec3::new(0.125, 0.175, 0.525)]);
        let r = g.splat_points(&pc, None);
        assert_eq!(r.inserted, 1);
        assert_eq!(g.count(Cell::new(2, 3), 10, 0), 1);
        let total: u32 = g.counts.iter().sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn points_accumulate() {
        let mut g = grid(10);
        let pc = PointCloud::from_points(vec![Vec3::new(0.1, 0.1, 1.0); 10]);
        g.splat_points(&pc, None);
        assert_eq!(g.count(Cell::new(2, 2), 20, 0), 10);
    }

    #[test]
    fn labels_feed_their_channel_and_occupancy() {
        let mut g = grid(10);
        let pc = PointCloud::from_points(vec![Vec3::new(0.1, 0.1, 1.0), Vec3::new(0.1, 0.1, 1.0)]);
        g.splat_points(&pc, Some(&[1, 0]));
        assert_eq!(g.count(Cell::new(2, 2), 20, 0), 2);
        assert_eq!(g.count(Cell::new(2, 2), 20, 1), 1);
    }

    #[test]
    fn out_of_bounds_points_are_dropped_and_tallied() {
        let mut g = grid(10);
        let pc = PointCloud::from_points(vec![
            Vec3::new(-0.1, 0.1, 1.0),
            Vec3::new(0.1, 0.1, 2.5),
            Vec3::new(0.1, 0.1, -0.2),
            Vec3::new(0.1, 0.1, -0.01),
        ]);
        let r = g.splat_points(&pc, None);
        assert_eq!((r.inserted, r.dropped), (1, 3));
        assert_eq!(g.dropped(), 3);
        // Sub-floor noise is binned as floor.
        assert_eq!(g.count(Cell::new(2, 2), 0, 0), 1);
    }

    #[test]
    fn obstacle_band_examples() {
        let band = HeightBand::for_sensor_height(1.31);
        assert!((band.z_max - 1.81).abs() < 1e-12);
        let mut g = grid(10);
        g.splat_points(&PointCloud::from_points(vec![Vec3::new(0.1, 0.1, 1.0)]), None);
        g.splat_points(&PointCloud::from_points(vec![Vec3::new(0.325, 0.325, 0.05)]), None);
        let obs = slice_obstacles(&g, band.z_min, band.z_max, band.tau_obs).unwrap();
        assert!(obs[Cell::new(2, 2)]);
        assert!(!obs[Cell::new(6, 6)]);
        let explored = slice_explored(&g);
        assert!(explored[Cell::new(6, 6)]);
        assert_eq!(explored.count_true(), 2);
    }

    #[test]
    fn band_edges() {
        let mut g = grid(4);
        g.splat_points(
            &PointCloud::from_points(vec![
                Vec3::new(0.025, 0.025, 0.249),
                Vec3::new(0.075, 0.025, 0.25),
                Vec3::new(0.125, 0.025, 1.81),
                Vec3::new(0.175, 0.025, 1.86),
            ]),
            None,
        );
        let obs = slice_obstacles(&g, 0.25, 1.81, 0.5).unwrap();
        assert_eq!(
            (0..4).map(|x| obs[Cell::new(x, 0)]).collect::<Vec<_>>(),
            vec![false, true, true, false]
        );
    }

    #[test]
    fn band_outside_grid_is_rejected() {
        let g = grid(4);
        assert!(slice_obstacles(&g, 0.5, 0.25, 0.5).is_err());
        assert!(slice_obstacles(&g, -0.1, 1.0, 0.5).is_err());
        assert!(slice_obstacles(&g, 0.25, 2.5, 0.5).is_err());
    }

    #[test]
    fn empty_grid_is_unexplored() {
        assert_eq!(slice_explored(&grid(6)).count_true(), 0);
    }

    #[test]
    fn incremental_integration_matches_full_slice() {
        let mut g = grid(20);
        let pts: Vec<Vec3> = (0..200)
            .map(|i| {
                let f = f64::from(i);
                Vec3::new((f * 0.37) % 1.0, (f * 0.53) % 1.0, (f * 0.071) % 2.0)
            })
            .collect();
        let band = HeightBand::for_sensor_height(1.31);
        let mut map = SemanticBevMap::new(*g.geometry(), 1);
        for chunk in pts.chunks(37) {
            let r = g.splat_points(&PointCloud::from_points(chunk.to_vec()), None);
            map.integrate_columns(&g, &r.columns, &band).unwrap();
        }
        assert_eq!(map.obstacle, slice_obstacles(&g, band.z_min, band.z_max, band.tau_obs).unwrap());
        assert_eq!(map.explored, slice_explored(&g));
    }

    #[test]
    fn footprint_sweep_stops_at_known_obstacles() {
        let mut map = SemanticBevMap::new(geometry(11), 0);
        for y in 0..11 {
            map.mark_obstacle(Cell::new(7, y));
        }
        map.sweep_footprint(Cell::new(5, 5), 4.0);
        assert!(map.explored[Cell::new(5, 9)]);
        assert!(map.explored[Cell::new(6, 5)]);
        assert!(!map.explored[Cell::new(8, 5)]);
        assert!(!map.explored[Cell::new(5, 10)]);
    }

    #[test]
    fn empty_mask_and_missing_depth_are_errors() {
        let sensor = Sensor::standard();
        let (w, h) = (sensor.intrinsics.width(), sensor.intrinsics.height());
        let depth = DepthImage::new(w, h);
        let mut map = SemanticBevMap::new(geometry(100), 1);
        let pose = Pose::new(2.5, 2.5, 0.0);
        let empty = PixelMask::new(w, h, vec![]);
        assert_eq!(
            project_goal_mask(&empty, &depth, &sensor, &pose, &mut map, 0, 1.0),
            Err(MappingError::EmptyMask)
        );
        let mask = PixelMask::new(w, h, (0..500).collect());
        assert_eq!(
            project_goal_mask(&mask, &depth, &sensor, &pose, &mut map, 0, 1.0),
            Err(MappingError::NoValidDepth)
        );
    }
}
