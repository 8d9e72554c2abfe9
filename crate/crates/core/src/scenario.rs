//! Scenario configuration, bundled scenarios and the end-to-end runner.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{AssociationRecord, Method};
use crate::config::{ConfigError, EngineConfig};
use crate::geom::CameraIntrinsics;
use crate::eval::{
    eval_associations, eval_construction, eval_loops, real_exist, stage_means, AssociationReport, ConstructionReport,
    EvalConfig, EvalError, LoopReport, MethodTiming, ReferenceSet, TimingReport, TruthObject,
};
use crate::io::{write_json, write_jsonl, IoError};
use crate::loopdet::LoopRecord;
use crate::mapdb::{Frame, KeyFrameId, MapSnapshot};
use crate::pipeline::{run_stream, Pipeline, PipelineError, RunOutput};
use crate::sim::{
    reference_loops, simulate, Drift, NoiseModel, ObjectSpec, SceneSpec, ScriptedOcclusion, SimError, SimOutput,
    Trajectory, TruthRecord,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("unknown bundled scenario `{0}`")]
    UnknownBuiltin(String),
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mlv]
}

fn yes() -> bool {
    true
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    /// Timed passes after one warm-up pass; the per-frame minimum is kept.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub scene: SceneSpec,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Seeds to run; empty means the scene's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "yes")]
    pub detect_loops: bool,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
}

impl ScenarioConfig {
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.scene.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn scene_for_seed(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            ..self.scene.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.engine.validate()?;
        self.scene.validate()?;
        Ok(())
    }
}

pub fn run_id(name: &str, method: Method, seed: u64) -> String {
    format!("{name}:{method}:{seed}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub frames: usize,
    pub keyframes: usize,
    pub landmarks: usize,
    pub association: AssociationReport,
    pub construction: ConstructionReport,
    pub loops: LoopReport,
}

/// Everything one (method, seed) run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub sim: SimOutput,
    pub output: RunOutput,
    pub references: ReferenceSet,
    pub map: MapSnapshot,
}

pub fn truth_objects(scene: &SceneSpec) -> Vec<TruthObject> {
    scene
        .objects
        .iter()
        .map(|o| TruthObject {
            label: o.label,
            center: Vector3::from(o.center),
        })
        .collect()
}

/// Reference revisits among the keyframes of a run, judged on true poses.
pub fn reference_set(
    run_id: &str,
    keyframes: &[KeyFrameId],
    truth: &[TruthRecord],
    eval: &EvalConfig,
) -> ReferenceSet {
    let by_frame: BTreeMap<u64, &TruthRecord> = truth.iter().map(|t| (t.frame_id, t)).collect();
    let poses: Vec<_> = keyframes
        .iter()
        .filter_map(|id| by_frame.get(&id.0).map(|t| (*id, t.pose)))
        .collect();
    ReferenceSet {
        run_id: run_id.to_string(),
        criteria: eval.loop_criteria,
        keyframes: poses.len(),
        pairs: reference_loops(&poses, &eval.loop_criteria),
    }
}

/// Reports computed from logs and map alone, as they would be read back from disk.
pub fn evaluate_logs(
    run_id: &str,
    scene: &SceneSpec,
    eval: &EvalConfig,
    associations: &[AssociationRecord],
    loops: &[LoopRecord],
    truth: &[TruthRecord],
    map: &MapSnapshot,
    references: &ReferenceSet,
) -> Result<(AssociationReport, ConstructionReport, LoopReport), EvalError> {
    let _ = run_id;
    let association = eval_associations(associations, truth)?;
    let construction = eval_construction(map, &truth_objects(scene), &real_exist(truth), eval);
    let loop_report = eval_loops(loops, references, eval.loop_tolerance)?;
    Ok((association, construction, loop_report))
}

pub fn run_frames(
    cfg: &ScenarioConfig,
    scene: &SceneSpec,
    method: Method,
    sim: SimOutput,
) -> Result<RunArtifacts, ScenarioError> {
    let id = run_id(&cfg.name, method, scene.seed);
    let mut pipeline = Pipeline::new(cfg.engine.clone(), method, scene.camera, id.clone());
    pipeline.detect_loops = cfg.detect_loops;
    let output = run_stream(pipeline, &sim.frames)?;
    let map = output.db.snapshot();
    let keyframes: Vec<KeyFrameId> = output.db.keyframes().map(|k| k.id).collect();
    let references = reference_set(&id, &keyframes, &sim.truth, &cfg.eval);
    let (association, construction, loops) = evaluate_logs(
        &id,
        scene,
        &cfg.eval,
        &output.associations,
        &output.loops,
        &sim.truth,
        &map,
        &references,
    )?;
    let report = RunReport {
        run_id: id,
        method,
        seed: scene.seed,
        frames: sim.frames.len(),
        keyframes: keyframes.len(),
        landmarks: output.db.landmark_count(),
        association,
        construction,
        loops,
    };
    Ok(RunArtifacts {
        report,
        sim,
        output,
        references,
        map,
    })
}

pub fn run_once(cfg: &ScenarioConfig, method: Method, seed: u64) -> Result<RunArtifacts, ScenarioError> {
    let scene = cfg.scene_for_seed(seed);
    let sim = simulate(&scene)?;
    run_frames(cfg, &scene, method, sim)
}

/// Writes the artifacts of one run into `dir`.
pub fn write_run(dir: &Path, run: &RunArtifacts) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    write_jsonl(&dir.join("frames.jsonl"), &run.sim.frames)?;
    write_jsonl(&dir.join("truth.jsonl"), &run.sim.truth)?;
    write_jsonl(&dir.join("associations.jsonl"), &run.output.associations)?;
    write_jsonl(&dir.join("loops.jsonl"), &run.output.loops)?;
    write_json(&dir.join("map.json"), &run.map)?;
    write_json(&dir.join("references.json"), &run.references)?;
    write_json(&dir.join("report.json"), &run.report)?;
    Ok(())
}

/// Per-frame association times of each method over the same stream.
pub fn bench_timing(
    frames: &[Frame],
    engine: &EngineConfig,
    scene: &SceneSpec,
    bench: &BenchConfig,
) -> Result<TimingReport, ScenarioError> {
    let mut methods = Vec::new();
    for &method in &bench.methods {
        let mut best: Vec<f64> = vec![f64::INFINITY; frames.len()];
        let mut landmarks = 0;
        let mut reference_log: Option<Vec<AssociationRecord>> = None;
        // the first pass only warms caches
        for pass in 0..=bench.repeats.max(1) {
            let mut p = Pipeline::new(engine.clone(), method, scene.camera, "bench");
            p.detect_loops = false;
            let out = run_stream(p, frames)?;
            if pass == 0 {
                reference_log = Some(out.associations);
                continue;
            }
            debug_assert_eq!(reference_log.as_ref(), Some(&out.associations));
            for (b, t) in best.iter_mut().zip(&out.elapsed_us) {
                *b = b.min(*t);
            }
            landmarks = out.db.landmark_count();
        }
        methods.push(MethodTiming {
            method: method.to_string(),
            stages_ms: stage_means(&best),
            landmarks_at_end: landmarks,
        });
    }
    Ok(TimingReport {
        frames: frames.len(),
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingReport>,
}

/// Runs every (seed, method) combination, then the benchmark if configured.
/// With `out`, each run's artifacts go to `out/<method>-seed<seed>/` and the
/// combined report to `out/report.json`.
pub fn run_scenario(cfg: &ScenarioConfig, out: Option<&Path>) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let mut runs = Vec::new();
    let mut timing = None;
    for seed in cfg.seeds() {
        let scene = cfg.scene_for_seed(seed);
        let sim = simulate(&scene)?;
        for &method in &cfg.methods {
            let run = run_frames(cfg, &scene, method, sim.clone())?;
            if let Some(dir) = out {
                write_run(&dir.join(format!("{method}-seed{seed}")), &run)?;
            }
            runs.push(run.report);
        }
        if timing.is_none() {
            if let Some(bench) = &cfg.bench {
                timing = Some(bench_timing(&sim.frames, &cfg.engine, &scene, bench)?);
            }
        }
    }
    let report = ScenarioReport {
        name: cfg.name.clone(),
        runs,
        timing,
    };
    if let Some(dir) = out {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Bundled scenarios
// ---------------------------------------------------------------------------

pub const BUILTIN_NAMES: [&str; 7] = ["noiseless", "ablation", "growing", "loop", "aliasing", "drift", "occlusion"];

/// Ten tabletop-sized objects within about a meter of the origin.
pub fn desk_objects(offset: [f64; 3]) -> Vec<ObjectSpec> {
    let table: [(u32, [f64; 3], [f64; 3]); 10] = [
        (0, [0.00, 0.00, 0.10], [0.06, 0.06, 0.10]),
        (1, [0.45, 0.20, 0.03], [0.12, 0.09, 0.03]),
        (2, [-0.40, 0.35, 0.25], [0.25, 0.05, 0.18]),
        (3, [0.10, -0.45, 0.02], [0.22, 0.08, 0.02]),
        (0, [-0.55, -0.30, 0.10], [0.05, 0.05, 0.10]),
        (4, [0.60, -0.35, 0.04], [0.04, 0.06, 0.03]),
        (5, [0.75, 0.55, 0.30], [0.15, 0.15, 0.30]),
        (1, [-0.20, 0.75, 0.05], [0.10, 0.14, 0.05]),
        (6, [-0.85, 0.30, 0.45], [0.25, 0.25, 0.45]),
        (7, [0.30, 0.80, 0.12], [0.04, 0.04, 0.12]),
    ];
    table
        .iter()
        .map(|(label, c, h)| ObjectSpec::new(*label, [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]], *h))
        .collect()
}

fn desk_orbit(center: [f64; 3], laps: f64, frames_per_lap: usize, start_angle: f64) -> Trajectory {
    Trajectory::Orbit {
        center: [center[0], center[1], center[2] + 0.1],
        radius: 2.5,
        height: 1.2,
        laps,
        frames_per_lap,
        start_angle,
    }
}

fn desk_scene(name: &str, trajectory: Trajectory, noise: NoiseModel, seed: u64) -> SceneSpec {
    SceneSpec {
        name: name.to_string(),
        objects: desk_objects([0.0; 3]),
        trajectory,
        camera: Default::default(),
        noise,
        seed,
        num_classes: 10,
        max_range: 8.0,
        min_box_px: 4.0,
    }
}

/// Four rows of evenly spaced objects passed by a sideways-looking camera,
/// so the map grows steadily.
pub fn corridor_objects() -> Vec<ObjectSpec> {
    let rows = [(2.0, -0.35), (2.5, -0.08), (3.0, 0.2), (3.5, 0.5)];
    let mut out = Vec::new();
    for (r, (y, z)) in rows.iter().enumerate() {
        for i in 0..120 {
            let label = ((i * 3 + r * 7) % 10) as u32;
            out.push(ObjectSpec::new(label, [0.3 * i as f64, *y, *z], [0.12, 0.12, 0.12]));
        }
    }
    out
}

fn scenario(name: &str, scene: SceneSpec, methods: Vec<Method>, seeds: Vec<u64>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        scene,
        engine: EngineConfig::default(),
        methods,
        seeds,
        eval: EvalConfig::default(),
        detect_loops: true,
        bench: None,
    }
}

pub fn builtin(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let five = vec![1, 2, 3, 4, 5];
    let cfg = match name {
        "noiseless" => scenario(
            name,
            desk_scene(name, desk_orbit([0.0; 3], 1.0, 1000, 0.0), NoiseModel::noiseless(), 1),
            vec![Method::Mlv, Method::Jda],
            vec![],
        ),
        "ablation" => {
            let mut c = scenario(
                name,
                desk_scene(name, desk_orbit([0.0; 3], 1.0, 1000, 0.0), NoiseModel::standard(), 1),
                vec![Method::TwoD, Method::Pro, Method::ThreeD, Method::Mlv],
                five,
            );
            c.detect_loops = false;
            c
        }
        "growing" => {
            let scene = SceneSpec {
                name: name.to_string(),
                objects: corridor_objects(),
                trajectory: Trajectory::Line {
                    start: [1.0, 0.0, 0.0],
                    end: [35.0, 0.0, 0.0],
                    look: [0.0, 1.0, 0.0],
                    frames: 1000,
                },
                // a narrow lens keeps the per-frame detection count small
                camera: CameraIntrinsics {
                    fx: 1000.0,
                    fy: 1000.0,
                    ..Default::default()
                },
                noise: NoiseModel::noiseless(),
                seed: 1,
                num_classes: 10,
                max_range: 8.0,
                min_box_px: 4.0,
            };
            let mut c = scenario(name, scene, vec![Method::Mlv, Method::Jda], vec![]);
            c.detect_loops = false;
            c.bench = Some(BenchConfig {
                methods: vec![Method::Mlv, Method::Jda],
                repeats: 5,
            });
            c
        }
        "loop" => {
            let noise = NoiseModel {
                observation_sigma: 0.005,
                ..NoiseModel::standard()
            };
            scenario(
                name,
                desk_scene(name, desk_orbit([0.0; 3], 2.0, 1200, 0.0), noise, 1),
                vec![Method::Mlv],
                vec![],
            )
        }
        "aliasing" => {
            let a = [0.0, 0.0, 0.0];
            let b = [20.0, 0.0, 0.0];
            let mut objects = desk_objects(a);
            objects.extend(desk_objects(b));
            let trajectory = Trajectory::Sequence {
                parts: vec![
                    desk_orbit(a, 1.0, 1200, 0.0),
                    Trajectory::Line {
                        start: [2.5, 0.0, 1.3],
                        end: [17.5, 0.0, 1.3],
                        look: [1.0, 0.0, 0.0],
                        frames: 300,
                    },
                    desk_orbit(b, 1.0, 1200, std::f64::consts::PI),
                ],
            };
            let scene = SceneSpec {
                objects,
                ..desk_scene(name, trajectory, NoiseModel::standard(), 1)
            };
            scenario(name, scene, vec![Method::Mlv], five)
        }
        "drift" => {
            let noise = NoiseModel {
                drift: Some(Drift {
                    translation: [0.3, 0.0, 0.0],
                    start_frame: 400,
                    ramp_frames: 200,
                }),
                ..NoiseModel::noiseless()
            };
            scenario(
                name,
                desk_scene(name, desk_orbit([0.0; 3], 2.0, 1200, 0.0), noise, 1),
                vec![Method::Mlv],
                vec![],
            )
        }
        "occlusion" => {
            let noise = NoiseModel {
                scripted: vec![ScriptedOcclusion {
                    object: 0,
                    start_frame: 150,
                    frames: 10,
                }],
                ..NoiseModel::noiseless()
            };
            let mut c = scenario(
                name,
                desk_scene(name, desk_orbit([0.0; 3], 0.3, 1000, 0.0), noise, 1),
                vec![Method::Mlv],
                vec![],
            );
            c.detect_loops = false;
            c
        }
        other => return Err(ScenarioError::UnknownBuiltin(other.to_string())),
    };
    Ok(cfg)
}
