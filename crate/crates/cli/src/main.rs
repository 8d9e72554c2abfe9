//! `objslam` command-line front end.
//!
//! Every subcommand prints a JSON document on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit nonzero.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use objslam::assoc::{AssociationRecord, Method};
use objslam::config::Preset;
use objslam::eval::ReferenceSet;
use objslam::io::{read_frames, read_json, read_jsonl, write_json, write_jsonl, IoError};
use objslam::loopdet::LoopRecord;
use objslam::mapdb::{Frame, KeyFrameId, MapSnapshot};
use objslam::pipeline::{run_stream, Pipeline};
use objslam::scenario::{
    bench_timing, builtin, evaluate_logs, reference_set, run_frames, run_id, run_scenario, write_run, BenchConfig,
    ScenarioConfig, ScenarioError, BUILTIN_NAMES,
};
use objslam::sim::{simulate, SceneSpec, SimOutput, TruthRecord};

#[derive(Debug, Parser)]
#[command(name = "objslam", version, about = "Object-level SLAM association and loop closure toolkit")]
struct Cli {
    /// Scenario config: a JSON file or `builtin:<name>`.
    #[arg(long, global = true, default_value = "builtin:noiseless")]
    config: String,
    /// Overrides the scenario's seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Association method (mlv, jda, 2d, pro or 3d).
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Loop filter preset.
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a frame stream and ground truth.
    Simulate,
    /// Associate detections to landmarks, without loop detection.
    Associate {
        /// Read frames from this JSON-lines file instead of simulating.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Associate and detect loops.
    Loop {
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Recompute reports from the logs in a run directory.
    Eval {
        /// Directory holding associations.jsonl, truth.jsonl and map.json.
        #[arg(long)]
        run: PathBuf,
    },
    /// Per-frame association timing at the 10/100/1000-frame stages.
    Bench {
        /// Timed passes per method.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Simulate, associate, detect loops and evaluate every configured run.
    Run,
    /// List the bundled scenarios.
    List,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown preset `{s}` (expected paper-c1 or paper-c2)"))
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match cli.config.strip_prefix("builtin:") {
        Some(name) => builtin(name)?,
        None => read_json::<ScenarioConfig>(Path::new(&cli.config))?,
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
        cfg.scene.seed = seed;
    }
    if let Some(m) = cli.method {
        cfg.methods = vec![m];
    }
    if let Some(p) = cli.preset {
        cfg.engine = cfg.engine.with_preset(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_seed(cfg: &ScenarioConfig) -> u64 {
    cfg.seeds()[0]
}

fn single_method(cfg: &ScenarioConfig) -> Method {
    cfg.methods.first().copied().unwrap_or_default()
}

fn simulate_scene(cfg: &ScenarioConfig) -> Result<(SceneSpec, SimOutput)> {
    let scene = cfg.scene_for_seed(single_seed(cfg));
    let sim = simulate(&scene)?;
    Ok((scene, sim))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_simulate(cli: &Cli, cfg: &ScenarioConfig) -> Result<Value> {
    let (scene, sim) = simulate_scene(cfg)?;
    let Some(out) = &cli.out else {
        bail!("simulate needs --out");
    };
    ensure_dir(out)?;
    write_jsonl(&out.join("frames.jsonl"), &sim.frames)?;
    write_jsonl(&out.join("truth.jsonl"), &sim.truth)?;
    Ok(json!({
        "scenario": cfg.name,
        "seed": scene.seed,
        "frames": sim.frames.len(),
        "detections": sim.frames.iter().map(|f| f.detections.len()).sum::<usize>(),
        "out": out,
    }))
}

/// Associates an external frame stream; there is no truth to evaluate against.
fn run_external(cli: &Cli, cfg: &ScenarioConfig, path: &Path, detect_loops: bool) -> Result<Value> {
    let frames: Vec<Frame> = read_frames(path)?;
    let method = single_method(cfg);
    let id = run_id(&cfg.name, method, single_seed(cfg));
    let mut pipeline = Pipeline::new(cfg.engine.clone(), method, cfg.scene.camera, id.clone());
    pipeline.detect_loops = detect_loops;
    let output = run_stream(pipeline, &frames)?;
    let map = output.db.snapshot();
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_jsonl(&out.join("associations.jsonl"), &output.associations)?;
        if detect_loops {
            write_jsonl(&out.join("loops.jsonl"), &output.loops)?;
        }
        write_json(&out.join("map.json"), &map)?;
    }
    Ok(json!({
        "run_id": id,
        "method": method,
        "frames": frames.len(),
        "keyframes": map.keyframes.len(),
        "landmarks": map.landmarks.len(),
        "loops_detected": output.loops.iter().filter(|r| r.accepted).count(),
    }))
}

fn cmd_pipeline(cli: &Cli, cfg: &ScenarioConfig, frames: Option<&Path>, detect_loops: bool) -> Result<Value> {
    if let Some(path) = frames {
        return run_external(cli, cfg, path, detect_loops);
    }
    let cfg = ScenarioConfig {
        detect_loops,
        ..cfg.clone()
    };
    let (scene, sim) = simulate_scene(&cfg)?;
    let run = run_frames(&cfg, &scene, single_method(&cfg), sim)?;
    if let Some(out) = &cli.out {
        write_run(out, &run)?;
    }
    Ok(serde_json::to_value(&run.report)?)
}

fn cmd_eval(cli: &Cli, cfg: &ScenarioConfig, dir: &Path) -> Result<Value> {
    let associations: Vec<AssociationRecord> = read_jsonl(&dir.join("associations.jsonl"))?;
    let truth: Vec<TruthRecord> = read_jsonl(&dir.join("truth.jsonl"))?;
    let map: MapSnapshot = read_json(&dir.join("map.json"))?;
    let loops_path = dir.join("loops.jsonl");
    let loops: Vec<LoopRecord> = if loops_path.exists() {
        read_jsonl(&loops_path)?
    } else {
        Vec::new()
    };
    let refs_path = dir.join("references.json");
    let references: ReferenceSet = if refs_path.exists() {
        read_json(&refs_path)?
    } else {
        // keyframe ids are frame ids
        let keyframes: Vec<KeyFrameId> = associations
            .iter()
            .filter(|r| r.keyframe)
            .map(|r| KeyFrameId(r.frame_id))
            .collect();
        let id = loops
            .first()
            .map(|r| r.run_id.clone())
            .unwrap_or_else(|| run_id(&cfg.name, single_method(cfg), single_seed(cfg)));
        reference_set(&id, &keyframes, &truth, &cfg.eval)
    };
    let scene = cfg.scene_for_seed(single_seed(cfg));
    let (association, construction, loop_report) = evaluate_logs(
        &references.run_id,
        &scene,
        &cfg.eval,
        &associations,
        &loops,
        &truth,
        &map,
        &references,
    )
    .map_err(ScenarioError::from)?;
    let report = json!({
        "run_id": references.run_id,
        "frames": associations.len(),
        "keyframes": references.keyframes,
        "landmarks": map.landmarks.len(),
        "association": association,
        "construction": construction,
        "loops": loop_report,
    });
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(report)
}

fn cmd_bench(cli: &Cli, cfg: &ScenarioConfig, repeats: Option<usize>) -> Result<Value> {
    let (scene, sim) = simulate_scene(cfg)?;
    let mut bench = cfg.bench.clone().unwrap_or(BenchConfig {
        methods: vec![Method::Mlv, Method::Jda],
        repeats: 3,
    });
    if let Some(m) = cli.method {
        bench.methods = vec![m];
    }
    if let Some(r) = repeats {
        bench.repeats = r;
    }
    let timing = bench_timing(&sim.frames, &cfg.engine, &scene, &bench)?;
    if let Some(out) = &cli.out {
        ensure_dir(out)?;
        write_json(&out.join("timing.json"), &timing)?;
    }
    Ok(serde_json::to_value(&timing)?)
}

fn dispatch(cli: &Cli) -> Result<Value> {
    if let Command::List = cli.command {
        return Ok(json!(BUILTIN_NAMES));
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(cli, &cfg),
        Command::Associate { frames } => cmd_pipeline(cli, &cfg, frames.as_deref(), false),
        Command::Loop { frames } => cmd_pipeline(cli, &cfg, frames.as_deref(), true),
        Command::Eval { run } => cmd_eval(cli, &cfg, run),
        Command::Bench { repeats } => cmd_bench(cli, &cfg, *repeats),
        Command::Run => Ok(serde_json::to_value(run_scenario(&cfg, cli.out.as_deref())?)?),
        Command::List => unreachable!(),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<ScenarioError>() {
        return match e {
            ScenarioError::Config(_) => "config",
            ScenarioError::Sim(_) => "simulation",
            ScenarioError::Pipeline(_) => "pipeline",
            ScenarioError::Eval(_) => "input",
            ScenarioError::Io(IoError::Parse { .. }) => "parse",
            ScenarioError::Io(_) => "io",
            ScenarioError::UnknownBuiltin(_) => "config",
        };
    }
    match err.downcast_ref::<IoError>() {
        Some(IoError::Parse { .. }) => "parse",
        Some(_) => "io",
        None => "error",
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match dispatch(&cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("report serializes");
            // a closed pipe (e.g. `| head`) is not a failure
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(error_kind(&e), message(&e), 1),
    }
}
