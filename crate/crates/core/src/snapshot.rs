//! Static image export: 8-bit binary PGM per map layer with a plain-text
//! sidecar header, and a PPM trajectory overlay. Images are north-up: the
//! first row is the largest y.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::geometry::Pose;
use crate::grid::{Grid, MapGeometry};
use crate::mapping::SemanticBevMap;
use crate::valuemap::ValueMap;

/// Binary greyscale PGM, rows flipped so +y is up.
pub fn encode_pgm<T>(grid: &Grid<T>, pixel: impl Fn(&T) -> u8) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    let data = grid.as_slice();
    for row in (0..h).rev() {
        out.extend(data[row * w..(row + 1) * w].iter().map(&pixel));
    }
    out
}

/// Sidecar describing where the image sits in the world.
pub fn sidecar_header(geometry: &MapGeometry, layer: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "layer: {layer}");
    let _ = writeln!(s, "width: {}", geometry.width);
    let _ = writeln!(s, "height: {}", geometry.height);
    let _ = writeln!(s, "origin_x: {}", geometry.origin_x);
    let _ = writeln!(s, "origin_y: {}", geometry.origin_y);
    let _ = writeln!(s, "cell_size: {}", geometry.cell_size);
    let _ = writeln!(s, "orientation: north_up");
    s
}

pub fn bool_pixel(b: &bool) -> u8 {
    if *b {
        255
    } else {
        0
    }
}

/// Belief in `[0, 1]` scaled to `[0, 255]`.
pub fn value_pixel(mu: &f64) -> u8 {
    (mu.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_layer(dir: &Path, stem: &str, layer: &str, geometry: &MapGeometry, pgm: &[u8]) -> io::Result<PathBuf> {
    let path = dir.join(format!("{stem}_{layer}.pgm"));
    fs::write(&path, pgm)?;
    fs::write(path.with_extension("txt"), sidecar_header(geometry, layer))?;
    Ok(path)
}

/// Writes `{stem}_obstacle.pgm`, `{stem}_explored.pgm` and, when given,
/// `{stem}_value.pgm`, each with a `.txt` sidecar.
pub fn write_map_snapshot(
    dir: &Path,
    stem: &str,
    map: &SemanticBevMap,
    value: Option<&ValueMap>,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let g = &map.geometry;
    let mut paths = vec![
        write_layer(dir, stem, "obstacle", g, &encode_pgm(&map.obstacle, bool_pixel))?,
        write_layer(dir, stem, "explored", g, &encode_pgm(&map.explored, bool_pixel))?,
    ];
    if let Some(v) = value {
        paths.push(write_layer(dir, stem, "value", &v.geometry, &encode_pgm(&v.mu, value_pixel))?);
    }
    Ok(paths)
}

const AGENT_COLORS: [[u8; 3]; 4] = [[220, 40, 40], [30, 90, 220], [20, 160, 60], [200, 120, 0]];

/// Binary PPM of the map (unknown grey, free white, obstacle black, goal
/// channel cells yellow) with each agent's path drawn in its own color.
pub fn render_trajectories(map: &SemanticBevMap, trajectories: &[Vec<Pose>]) -> Vec<u8> {
    let g = map.geometry;
    let mut rgb: Grid<[u8; 3]> = g.grid([128, 128, 128]);
    for (cell, &explored) in map.explored.iter() {
        if explored {
            rgb[cell] = if map.obstacle[cell] { [0, 0, 0] } else { [255, 255, 255] };
        }
    }
    for channel in &map.semantic {
        for (cell, &v) in channel.iter() {
            if v > 0.0 {
                rgb[cell] = [240, 200, 0];
            }
        }
    }
    for (i, traj) in trajectories.iter().enumerate() {
        let color = AGENT_COLORS[i % AGENT_COLORS.len()];
        for pair in traj.windows(2) {
            let a = g.world_to_cell(pair[0].x, pair[0].y);
            let b = g.world_to_cell(pair[1].x, pair[1].y);
            for c in crate::grid::line_cells(a, b) {
                rgb.set(c, color);
            }
        }
    }
    let (w, h) = (g.width, g.height);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for row in (0..h).rev() {
        for px in &rgb.as_slice()[row * w..(row + 1) * w] {
            out.extend_from_slice(px);
        }
    }
    out
}
