//! Frame-by-frame driver: association, keyframe insertion, loop detection and
//! correction of subsequent poses.

use thiserror::Error;

use crate::assoc::{AssocError, AssociationRecord, Associator, Method};
use crate::config::EngineConfig;
use crate::geom::{CameraIntrinsics, Similarity3};
use crate::loopdet::{detect_loop, ConsistencyTracker, LoopError, LoopRecord};
use crate::mapdb::{Frame, MapDatabase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Assoc(#[from] AssocError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

/// Everything produced for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub association: AssociationRecord,
    pub elapsed_us: f64,
    pub loop_record: Option<LoopRecord>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: EngineConfig,
    pub db: MapDatabase,
    pub run_id: String,
    pub detect_loops: bool,
    associator: Associator,
    tracker: ConsistencyTracker,
    /// Accumulated world correction applied to incoming poses.
    correction: Similarity3,
}

impl Pipeline {
    pub fn new(cfg: EngineConfig, method: Method, intrinsics: CameraIntrinsics, run_id: impl Into<String>) -> Self {
        Pipeline {
            cfg,
            db: MapDatabase::new(),
            run_id: run_id.into(),
            detect_loops: true,
            associator: Associator::new(method, intrinsics),
            tracker: ConsistencyTracker::new(),
            correction: Similarity3::identity(),
        }
    }

    pub fn correction(&self) -> &Similarity3 {
        &self.correction
    }

    pub fn process(&mut self, frame: &Frame) -> Result<FrameOutput, PipelineError> {
        let corrected;
        let frame = if self.cfg.apply_correction && self.correction != Similarity3::identity() {
            let mut f = frame.clone();
            f.pose = self.correction.apply_to_pose(&f.pose);
            corrected = f;
            &corrected
        } else {
            frame
        };
        let result = self.associator.associate_frame(frame, &mut self.db, &self.cfg)?;
        let mut loop_record = None;
        if let (Some(kf), true) = (result.keyframe, self.detect_loops) {
            let decision = detect_loop(kf, &mut self.db, &self.cfg, &mut self.tracker)?;
            if let Some(c) = decision.closure.as_ref().and_then(|c| c.correction.as_ref()) {
                if c.applied {
                    self.correction = c.correction.compose(&self.correction);
                }
            }
            loop_record = LoopRecord::from_decision(&self.run_id, &decision);
        }
        Ok(FrameOutput {
            association: result.record(),
            elapsed_us: result.elapsed_us,
            loop_record,
        })
    }
}

/// Logs of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub associations: Vec<AssociationRecord>,
    pub loops: Vec<LoopRecord>,
    pub elapsed_us: Vec<f64>,
    pub db: MapDatabase,
}

pub fn run_stream(mut pipeline: Pipeline, frames: &[Frame]) -> Result<RunOutput, PipelineError> {
    let mut associations = Vec::with_capacity(frames.len());
    let mut loops = Vec::new();
    let mut elapsed_us = Vec::with_capacity(frames.len());
    for f in frames {
        let out = pipeline.process(f)?;
        associations.push(out.association);
        elapsed_us.push(out.elapsed_us);
        loops.extend(out.loop_record);
    }
    Ok(RunOutput {
        associations,
        loops,
        elapsed_us,
        db: pipeline.db,
    })
}
