//! Batch runner: loads or generates scenarios, runs every episode's subtask
//! chain, and writes the record log, summary and images.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordination::{AgentState, CoordinationError, RoundObserver, Team, TeamConfig};
use crate::mapping::SemanticBevMap;
use crate::metrics::{summarize, EpisodeResult, Report, SubtaskRecord};
use crate::perception::{
    AdversarialScorer, Detector, ExternalDetector, ExternalScorer, OracleDetector, OracleScorer, Scorer, UniformScorer,
};
use crate::simulator::{generate_set, load_dir, GeneratorConfig, Scenario, World};
use crate::snapshot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Team(#[from] CoordinationError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Team(CoordinationError::Config(_)) => EXIT_CONFIG,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Oracle,
    Uniform,
    Adversarial,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Oracle,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSource {
    Dir { path: PathBuf },
    Procedural { count: usize, generator: GeneratorConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: ScenarioSource,
    pub seed: u64,
    pub team: TeamConfig,
    pub scorer: ScorerKind,
    pub detector: DetectorKind,
    pub out_dir: Option<PathBuf>,
    pub dump_maps: bool,
    /// Endpoints for the external backends; `None` falls back to the
    /// environment variables.
    pub scorer_addr: Option<String>,
    pub detector_addr: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: ScenarioSource::Procedural {
                count: 20,
                generator: GeneratorConfig::default(),
            },
            seed: 0,
            team: TeamConfig::default(),
            scorer: ScorerKind::Oracle,
            detector: DetectorKind::Oracle,
            out_dir: None,
            dump_maps: false,
            scorer_addr: None,
            detector_addr: None,
        }
    }
}

/// A scenario that could not be run, and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub scenario: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    pub episodes: Vec<EpisodeResult>,
    pub skipped: Vec<Skipped>,
    pub report: Report,
}

impl BatchOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.is_empty() {
            EXIT_EMPTY
        } else {
            EXIT_OK
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &SubtaskRecord> {
        self.episodes.iter().flat_map(|e| &e.records)
    }

    /// One JSON object per subtask, in episode order.
    pub fn records_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.records() {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}

fn load_scenarios(cfg: &RunConfig) -> Result<(Vec<Scenario>, Vec<Skipped>), HarnessError> {
    match &cfg.source {
        ScenarioSource::Dir { path } => {
            let entries = load_dir(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let mut ok = Vec::new();
            let mut skipped = Vec::new();
            for (name, res) in entries {
                match res {
                    Ok(s) => ok.push(s),
                    Err(e) => {
                        log::warn!("skipping {name}: {e}");
                        skipped.push(Skipped {
                            scenario: name,
                            reason: e.to_string(),
                        });
                    }
                }
            }
            Ok((ok, skipped))
        }
        ScenarioSource::Procedural { count, generator } => {
            let set = generate_set(generator, cfg.seed, *count).map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok((set, Vec::new()))
        }
    }
}

fn make_scorer(cfg: &RunConfig, world: &Arc<World>) -> Result<Box<dyn Scorer>, HarnessError> {
    Ok(match cfg.scorer {
        ScorerKind::Oracle => Box::new(OracleScorer::new(world.clone())),
        ScorerKind::Uniform => Box::new(UniformScorer),
        ScorerKind::Adversarial => Box::new(AdversarialScorer::new(world.clone())),
        ScorerKind::External => Box::new(match &cfg.scorer_addr {
            Some(a) => ExternalScorer::new(a.clone(), crate::perception::external::DEFAULT_TIMEOUT),
            None => ExternalScorer::from_env().ok_or_else(|| {
                HarnessError::Config(format!(
                    "external scorer needs {}",
                    crate::perception::external::SCORER_ADDR_ENV
                ))
            })?,
        }),
    })
}

fn make_detector(cfg: &RunConfig, world: &Arc<World>) -> Result<Box<dyn Detector>, HarnessError> {
    Ok(match cfg.detector {
        DetectorKind::Oracle => Box::new(OracleDetector::new(world.clone(), cfg.team.sensor)),
        DetectorKind::External => Box::new(match &cfg.detector_addr {
            Some(a) => ExternalDetector::new(a.clone(), crate::perception::external::DEFAULT_TIMEOUT),
            None => ExternalDetector::from_env().ok_or_else(|| {
                HarnessError::Config(format!(
                    "external detector needs {}",
                    crate::perception::external::DETECTOR_ADDR_ENV
                ))
            })?,
        }),
    })
}

/// Writes per-round map layers under `dir`.
struct MapDumper {
    dir: PathBuf,
    failed: bool,
}

impl RoundObserver for MapDumper {
    fn on_round(&mut self, subtask: usize, round: usize, shared: &SemanticBevMap, agents: &[AgentState]) {
        if self.failed {
            return;
        }
        let stem = format!("s{subtask}_r{round:03}");
        let vm = agents.first().map(|a| &a.value_map);
        if let Err(e) = snapshot::write_map_snapshot(&self.dir, &stem, shared, vm) {
            log::warn!("map dump to {} failed: {e}", self.dir.display());
            self.failed = true;
        }
    }
}

enum EpisodeRun {
    Done(EpisodeResult),
    Skipped(Skipped),
}

fn run_one(cfg: &RunConfig, scenario: &Scenario) -> Result<EpisodeRun, HarnessError> {
    let skip = |reason: String| {
        log::warn!("skipping {}: {reason}", scenario.name);
        Ok(EpisodeRun::Skipped(Skipped {
            scenario: scenario.name.clone(),
            reason,
        }))
    };
    let world = match World::from_scenario(scenario) {
        Ok(w) => Arc::new(w),
        Err(e) => return skip(e.to_string()),
    };
    let scorer = make_scorer(cfg, &world)?;
    let detector = make_detector(cfg, &world)?;
    let mut team = match Team::new(world.clone(), cfg.team.clone()) {
        Ok(t) => t,
        Err(CoordinationError::NotEnoughSpawns { spawns, agents }) => {
            return skip(format!("{spawns} spawn points for {agents} agents"))
        }
        Err(e) => return Err(e.into()),
    };
    let mut dumper = match (&cfg.out_dir, cfg.dump_maps) {
        (Some(out), true) => Some(MapDumper {
            dir: out.join("maps").join(&scenario.name),
            failed: false,
        }),
        _ => None,
    };
    let records = match dumper.as_mut() {
        Some(d) => team.run_episode(scorer.as_ref(), detector.as_ref(), d)?,
        None => team.run_episode(scorer.as_ref(), detector.as_ref(), &mut ())?,
    };
    if let Some(out) = &cfg.out_dir {
        let dir = out.join("trajectories");
        let trajectories: Vec<_> = team.agents.iter().map(|a| a.trajectory.clone()).collect();
        let ppm = snapshot::render_trajectories(&team.shared, &trajectories);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.ppm", scenario.name));
        fs::write(&path, ppm).map_err(io_err(&path))?;
    }
    Ok(EpisodeRun::Done(EpisodeResult {
        scenario: scenario.name.clone(),
        records,
    }))
}

/// Runs every episode. Episodes are independent and run on a worker pool
/// when the `parallel` feature is on; results keep scenario order.
pub fn run_batch(cfg: &RunConfig) -> Result<BatchOutcome, HarnessError> {
    cfg.team.validate()?;
    let (scenarios, mut skipped) = load_scenarios(cfg)?;

    #[cfg(feature = "parallel")]
    let runs: Vec<Result<EpisodeRun, HarnessError>> = {
        use rayon::prelude::*;
        scenarios.par_iter().map(|s| run_one(cfg, s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<EpisodeRun, HarnessError>> = scenarios.iter().map(|s| run_one(cfg, s)).collect();

    let mut episodes = Vec::new();
    for r in runs {
        match r? {
            EpisodeRun::Done(e) => episodes.push(e),
            EpisodeRun::Skipped(s) => skipped.push(s),
        }
    }
    let report = summarize(&episodes);
    let outcome = BatchOutcome {
        episodes,
        skipped,
        report,
    };
    if let Some(out) = &cfg.out_dir {
        write_outputs(out, cfg, &outcome)?;
    }
    Ok(outcome)
}

fn write_outputs(out: &Path, cfg: &RunConfig, outcome: &BatchOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let write = |name: &str, body: &[u8]| -> Result<(), HarnessError> {
        let path = out.join(name);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(body).map_err(io_err(&path))
    };
    write("config.json", pretty(cfg).as_bytes())?;
    write("records.jsonl", outcome.records_jsonl().as_bytes())?;
    write("summary.json", pretty(&outcome.report).as_bytes())?;
    write("summary.txt", outcome.report.to_table().as_bytes())?;
    if !outcome.skipped.is_empty() {
        write("skipped.json", pretty(&outcome.skipped).as_bytes())?;
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            source: ScenarioSource::Dir { path: dir.to_path_buf() },
            team: TeamConfig {
                agents: 1,
                budget: 60,
                ..TeamConfig::default()
            },
            ..RunConfig::default()
        }
    }

    const ROOM: &str = r#"
version = 1
name = "room"
width_m = 5.0
depth_m = 4.0
subtasks = ["table"]
[[objects]]
label = "table"
min = [3.5, 2.5, 0.0]
max = [4.3, 3.2, 0.75]
[[spawns]]
x = 1.0
y = 1.0
theta_deg = -45.0
"#;

    #[test]
    fn writes_outputs_and_skips_bad_scenarios() {
        let scen = tempfile::tempdir().unwrap();
        fs::write(scen.path().join("a_room.toml"), ROOM).unwrap();
        fs::write(scen.path().join("b_broken.toml"), "version = 1\nname = 3").unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: Some(out.path().to_path_buf()),
            ..tiny(scen.path())
        };
        let res = run_batch(&cfg).unwrap();
        assert_eq!(res.exit_code(), EXIT_OK);
        assert_eq!(res.episodes.len(), 1);
        assert_eq!(res.skipped.len(), 1);
        assert!(res.episodes[0].records[0].success);
        for f in ["config.json", "records.jsonl", "summary.json", "summary.txt", "trajectories/room.ppm"] {
            assert!(out.path().join(f).exists(), "{f}");
        }
        let echoed: RunConfig = serde_json::from_str(&fs::read_to_string(out.path().join("config.json")).unwrap()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn empty_batch_has_its_own_exit_code() {
        let scen = tempfile::tempdir().unwrap();
        let res = run_batch(&tiny(scen.path())).unwrap();
        assert_eq!(res.exit_code(), EXIT_EMPTY);
    }

    #[test]
    fn bad_parameters_are_config_errors() {
        let scen = tempfile::tempdir().unwrap();
        let mut cfg = tiny(scen.path());
        cfg.team.w = 1.5;
        assert_eq!(run_batch(&cfg).unwrap_err().exit_code(), EXIT_CONFIG);
        let cfg = RunConfig {
            source: ScenarioSource::Dir {
                path: scen.path().join("missing"),
            },
            ..tiny(scen.path())
        };
        assert_eq!(run_batch(&cfg).unwrap_err().exit_code(), EXIT_CONFIG);
    }
}
