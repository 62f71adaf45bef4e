use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use goalnav::harness::{run_batch, DetectorKind, RunConfig, ScenarioSource, ScorerKind, EXIT_CONFIG};
use goalnav::perception::{EchoServer, FaultMode};
use goalnav::simulator::{generate_set, GeneratorConfig};

#[derive(Parser)]
#[command(name = "goalnav", version, about = "Multi-agent object-goal navigation in voxel worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and write records, summary and images.
    Run(Box<RunArgs>),
    /// Write procedural scenarios as TOML files.
    Generate(GenerateArgs),
    /// Serve the scorer/detector protocol with fixed answers, for testing.
    EchoServer(EchoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Oracle,
    Uniform,
    Adversarial,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Oracle,
    External,
}

#[derive(Args)]
struct RunArgs {
    /// Base configuration (JSON, as echoed in config.json); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of scenario TOML files. Without it a procedural set is generated.
    #[arg(long)]
    scenario_dir: Option<PathBuf>,
    /// Number of procedural scenarios when no directory is given [default: 20].
    #[arg(long)]
    procedural: Option<usize>,
    /// Team size [default: 2].
    #[arg(long)]
    agents: Option<usize>,
    /// Rounds per subtask [default: 500].
    #[arg(long)]
    budget: Option<usize>,
    /// Frontier scorer [default: oracle].
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    /// Goal detector [default: oracle].
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// host:port of an external scorer [default: $GOALNAV_SCORER_ADDR].
    #[arg(long)]
    scorer_addr: Option<String>,
    /// host:port of an external detector [default: $GOALNAV_DETECTOR_ADDR].
    #[arg(long)]
    detector_addr: Option<String>,
    /// Value-map weight in the utility blend [default: 0.35].
    #[arg(long)]
    w: Option<f64>,
    /// UCB exploration weight [default: 1.7].
    #[arg(long)]
    beta: Option<f64>,
    /// Detection confidence threshold [default: 0.30].
    #[arg(long)]
    tau_det: Option<f64>,
    /// Consecutive detections needed to confirm a goal [default: 2].
    #[arg(long)]
    n_confirm: Option<u32>,
    /// Seed for procedural generation [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for records, summaries and images.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the fused map after every round.
    #[arg(long)]
    dump_maps: bool,
    /// Use value-map evidence in frontier utilities [default: on].
    #[arg(long, value_enum)]
    value_map: Option<OnOff>,
    /// Query the frontier scorer [default: on].
    #[arg(long, value_enum)]
    vlm_reasoning: Option<OnOff>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    WrongLength,
    Malformed,
    Delay,
    DropMidReply,
    Silent,
}

#[derive(Args)]
struct EchoArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long, value_enum, default_value_t = FaultArg::None)]
    fault: FaultArg,
    /// Pause before replying in `delay` mode.
    #[arg(long, default_value_t = 3000)]
    delay_ms: u64,
}

fn build_config(a: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(dir) = &a.scenario_dir {
        cfg.source = ScenarioSource::Dir { path: dir.clone() };
    } else if let Some(n) = a.procedural {
        cfg.source = ScenarioSource::Procedural {
            count: n,
            generator: GeneratorConfig::default(),
        };
    }
    let t = &mut cfg.team;
    macro_rules! set {
        ($($field:expr => $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { $field = v.into(); })*
        };
    }
    set!(
        t.agents => a.agents,
        t.budget => a.budget,
        t.w => a.w,
        t.beta => a.beta,
        t.tau_det => a.tau_det,
        t.n_confirm => a.n_confirm,
        t.value_map => a.value_map,
        t.vlm_reasoning => a.vlm_reasoning,
        cfg.seed => a.seed,
    );
    if let Some(s) = a.scorer {
        cfg.scorer = match s {
            ScorerArg::Oracle => ScorerKind::Oracle,
            ScorerArg::Uniform => ScorerKind::Uniform,
            ScorerArg::Adversarial => ScorerKind::Adversarial,
            ScorerArg::External => ScorerKind::External,
        };
    }
    if let Some(d) = a.detector {
        cfg.detector = match d {
            DetectorArg::Oracle => DetectorKind::Oracle,
            DetectorArg::External => DetectorKind::External,
        };
    }
    if a.scorer_addr.is_some() {
        cfg.scorer_addr = a.scorer_addr.clone();
    }
    if a.detector_addr.is_some() {
        cfg.detector_addr = a.detector_addr.clone();
    }
    if a.out_dir.is_some() {
        cfg.out_dir = a.out_dir.clone();
    }
    cfg.dump_maps |= a.dump_maps;
    Ok(cfg)
}

fn run(a: RunArgs) -> ExitCode {
    let cfg = match build_config(&a) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run_batch(&cfg) {
        Ok(out) => {
            print!("{}", out.report.to_table());
            for s in &out.skipped {
                eprintln!("skipped {}: {}", s.scenario, s.reason);
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn generate(a: GenerateArgs) -> ExitCode {
    let set = match generate_set(&GeneratorConfig::default(), a.seed, a.count) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = fs::create_dir_all(&a.out_dir) {
        eprintln!("error: {}: {e}", a.out_dir.display());
        return ExitCode::FAILURE;
    }
    for s in &set {
        let path = a.out_dir.join(format!("{}.toml", s.name));
        if let Err(e) = fs::write(&path, s.to_toml()) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
        println!("{}", path.display());
    }
    ExitCode::SUCCESS
}

fn echo(a: EchoArgs) -> ExitCode {
    let mode = match a.fault {
        FaultArg::None => FaultMode::None,
        FaultArg::WrongLength => FaultMode::WrongLength,
        FaultArg::Malformed => FaultMode::Malformed,
        FaultArg::Delay => FaultMode::Delay(Duration::from_millis(a.delay_ms)),
        FaultArg::DropMidReply => FaultMode::DropMidReply,
        FaultArg::Silent => FaultMode::Silent,
    };
    match EchoServer::bind(&a.addr, mode) {
        Ok(server) => {
            println!("listening on {}", server.addr());
            server.wait();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", a.addr);
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(*a),
        Command::Generate(a) => generate(a),
        Command::EchoServer(a) => echo(a),
    }
}
