//! Scenario files: a versioned TOML description of a voxel world, its goal
//! objects, agent spawn points and the ordered chain of goal queries.
//!
//! ```toml
//! version = 1
//! name = "two_rooms"
//! width_m = 8.0
//! depth_m = 4.0
//! wall_height_m = 2.4      # optional, default 2.4
//! enclose = true           # optional, default true: add boundary walls
//! subtasks = ["chair", "sofa"]
//!
//! [[walls]]
//! from = [4.0, 0.0]
//! to = [4.0, 1.5]
//! thickness_m = 0.1        # optional, default 0.1
//!
//! [[objects]]
//! label = "chair"
//! min = [1.0, 1.0, 0.0]
//! max = [1.5, 1.5, 0.9]
//! pierced = false          # optional: depth reads through the object
//!
//! [[spawns]]
//! x = 1.0
//! y = 3.0
//! theta_deg = 0.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_wall_height() -> f64 {
    2.4
}

fn default_thickness() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub from: [f64; 2],
    pub to: [f64; 2],
    #[serde(default = "default_thickness")]
    pub thickness_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    #[serde(default)]
    pub pierced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub width_m: f64,
    pub depth_m: f64,
    #[serde(default = "default_wall_height")]
    pub wall_height_m: f64,
    #[serde(default = "default_true")]
    pub enclose: bool,
    pub subtasks: Vec<String>,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub spawns: Vec<SpawnSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if s.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(s.version));
        }
        s.check_fields()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Static field checks; connectivity is checked when the world is built.
    pub fn check_fields(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.width_m > 0.0 && self.depth_m > 0.0 && self.wall_height_m > 0.0) {
            return bad(format!("non-positive extent {}x{}x{}", self.width_m, self.depth_m, self.wall_height_m));
        }
        if self.subtasks.is_empty() {
            return bad("no subtasks".into());
        }
        if self.spawns.is_empty() {
            return bad("no spawn points".into());
        }
        for o in &self.objects {
            if o.label.trim().is_empty() {
                return bad("object with empty label".into());
            }
            if (0..3).any(|i| !(o.min[i] < o.max[i])) {
                return bad(format!("object '{}' has an empty box", o.label));
            }
        }
        for t in &self.subtasks {
            if !self.objects.iter().any(|o| o.label == *t) {
                return bad(format!("subtask '{t}' has no matching object"));
            }
        }
        Ok(())
    }
}

/// Loads every `*.toml` under `dir` in file-name order. Files that fail to
/// load are returned as errors alongside their path rather than aborting.
pub fn load_dir(dir: &Path) -> std::io::Result<Vec<(String, Result<Scenario, ScenarioError>)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| (p.display().to_string(), Scenario::load(&p)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
name = "box"
width_m = 4.0
depth_m = 3.0
subtasks = ["chair"]

[[objects]]
label = "chair"
min = [1.0, 1.0, 0.0]
max = [1.5, 1.5, 0.9]

[[spawns]]
x = 3.0
y = 2.0
"#;

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.wall_height_m, 2.4);
        assert!(s.enclose);
        assert!(!s.objects[0].pierced);
        assert_eq!(s.spawns[0].theta_deg, 0.0);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_other_versions() {
        let text = MINIMAL.replace("version = 1", "version = 2");
        assert!(matches!(Scenario::from_toml(&text), Err(ScenarioError::Version(2))));
    }

    #[test]
    fn rejects_unmatched_subtask() {
        let text = MINIMAL.replace(r#"subtasks = ["chair"]"#, r#"subtasks = ["sofa"]"#);
        assert!(matches!(Scenario::from_toml(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Scenario::from_toml("version = "), Err(ScenarioError::Parse(_))));
    }
}
