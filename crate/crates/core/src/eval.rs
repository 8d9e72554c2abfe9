//! Construction, association, loop and timing metrics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::AssociationRecord;
use crate::loopdet::LoopRecord;
use crate::mapdb::{AssociationLevel, ClassId, KeyFrameId, LandmarkId, MapSnapshot};
use crate::sim::{LoopCriteria, TruthRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("loop log belongs to run `{found}` but the reference set to run `{expected}`")]
    RunMismatch { expected: String, found: String },
    #[error("association log and ground truth disagree at frame {0}")]
    TruthMismatch(u64),
}

/// Precision, recall and F-measure from raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl Prf {
    /// `predicted == 0` gives precision 0, `actual == 0` recall 0.
    pub fn from_counts(tp: usize, predicted: usize, actual: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f_measure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Maximum centroid distance for a landmark to count as its object (m).
    pub r_match: f64,
    /// Observations a landmark needs before it counts as constructed.
    pub min_observations: u32,
    /// Candidate-side keyframe id tolerance when matching loops.
    pub loop_tolerance: u64,
    pub loop_criteria: LoopCriteria,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            r_match: 0.5,
            min_observations: 3,
            loop_tolerance: 2,
            loop_criteria: LoopCriteria::standard(),
        }
    }
}

/// Ground-truth object position and class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthObject {
    pub label: ClassId,
    pub center: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub constructed: usize,
    pub real_exist: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Objects that were in view in at least one frame.
pub fn real_exist(truth: &[TruthRecord]) -> BTreeSet<usize> {
    truth.iter().flat_map(|t| t.visible.iter().copied()).collect()
}

/// A landmark is a true positive when its nearest object has the same label,
/// lies within `r_match`, and no other constructed landmark is nearer to it.
pub fn eval_construction(
    map: &MapSnapshot,
    objects: &[TruthObject],
    exist: &BTreeSet<usize>,
    cfg: &EvalConfig,
) -> ConstructionReport {
    let built: Vec<(LandmarkId, ClassId, Vector3<f64>)> = map
        .landmarks
        .iter()
        .filter(|l| l.observations() >= cfg.min_observations)
        .map(|l| (l.id, l.label, Vector3::from(l.centroid)))
        .collect();
    let nearest = |p: &Vector3<f64>, pool: &mut dyn Iterator<Item = (usize, Vector3<f64>)>| {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in pool {
            let d = (p - q).norm();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    };
    // nearest constructed landmark of each object
    let owner: BTreeMap<usize, usize> = exist
        .iter()
        .filter_map(|&o| {
            let c = objects.get(o)?.center;
            nearest(&c, &mut built.iter().enumerate().map(|(i, b)| (i, b.2))).map(|(i, _)| (o, i))
        })
        .collect();
    let mut tp = 0;
    for (i, (_, label, c)) in built.iter().enumerate() {
        let Some((o, d)) = nearest(c, &mut exist.iter().filter_map(|&o| objects.get(o).map(|t| (o, t.center)))) else {
            continue;
        };
        if objects[o].label == *label && d <= cfg.r_match && owner.get(&o) == Some(&i) {
            tp += 1;
        }
    }
    let prf = Prf::from_counts(tp, built.len(), exist.len());
    ConstructionReport {
        constructed: built.len(),
        real_exist: exist.len(),
        true_positives: tp,
        precision: prf.precision,
        recall: prf.recall,
        f_measure: prf.f_measure,
    }
}

/// Agreement of the association log with ground-truth object identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub detections: usize,
    pub true_detections: usize,
    /// Detections not on their object's majority landmark, or on a landmark
    /// whose majority is another object (spurious detections count as one
    /// object of their own).
    pub errors: usize,
    /// Landmarks created by true detections.
    pub landmarks_created: usize,
    pub objects_seen: usize,
}

pub fn eval_associations(log: &[AssociationRecord], truth: &[TruthRecord]) -> Result<AssociationReport, EvalError> {
    let truth_by_frame: BTreeMap<u64, &TruthRecord> = truth.iter().map(|t| (t.frame_id, t)).collect();
    // (detection order, object, landmark) for every logged outcome
    let mut pairs: Vec<(Option<usize>, LandmarkId)> = Vec::new();
    let mut report = AssociationReport {
        detections: 0,
        true_detections: 0,
        errors: 0,
        landmarks_created: 0,
        objects_seen: 0,
    };
    for rec in log {
        let t = truth_by_frame
            .get(&rec.frame_id)
            .ok_or(EvalError::TruthMismatch(rec.frame_id))?;
        if t.objects.len() != rec.detections.len() {
            return Err(EvalError::TruthMismatch(rec.frame_id));
        }
        for o in &rec.detections {
            let obj = t.objects[o.detection];
            report.detections += 1;
            if obj.is_some() {
                report.true_detections += 1;
                if o.level == AssociationLevel::NewLandmark {
                    report.landmarks_created += 1;
                }
            }
            pairs.push((obj, o.landmark));
        }
    }
    // counts plus first appearance, which breaks ties
    let mut by_landmark: BTreeMap<LandmarkId, BTreeMap<Option<usize>, (usize, usize)>> = BTreeMap::new();
    let mut by_object: BTreeMap<usize, BTreeMap<LandmarkId, (usize, usize)>> = BTreeMap::new();
    for (i, (obj, lm)) in pairs.iter().enumerate() {
        let e = by_landmark.entry(*lm).or_default().entry(*obj).or_insert((0, i));
        e.0 += 1;
        if let Some(obj) = obj {
            let e = by_object.entry(*obj).or_default().entry(*lm).or_insert((0, i));
            e.0 += 1;
        }
    }
    fn majority<K: Copy>(m: &BTreeMap<K, (usize, usize)>) -> Option<K> {
        m.iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(k, _)| *k)
    }
    let dominant: BTreeMap<LandmarkId, Option<usize>> =
        by_landmark.iter().filter_map(|(lm, m)| majority(m).map(|o| (*lm, o))).collect();
    let primary: BTreeMap<usize, LandmarkId> =
        by_object.iter().filter_map(|(o, m)| majority(m).map(|lm| (*o, lm))).collect();
    for (obj, lm) in &pairs {
        let ok = match obj {
            Some(o) => primary.get(o) == Some(lm) && dominant.get(lm) == Some(&Some(*o)),
            None => dominant.get(lm) == Some(&None),
        };
        if !ok {
            report.errors += 1;
        }
    }
    report.objects_seen = by_object.len();
    Ok(report)
}

/// Reference revisits of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub run_id: String,
    pub criteria: LoopCriteria,
    pub keyframes: usize,
    /// `(later, earlier)` keyframe pairs.
    pub pairs: Vec<(KeyFrameId, KeyFrameId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub keyframes: usize,
    /// Keyframes with at least one reference partner.
    pub reference_loops: usize,
    /// Reference keyframe pairs.
    pub reference_pairs: usize,
    /// Accepted loops.
    pub detected: usize,
    pub true_positives: usize,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    pub recall: f64,
}

pub fn eval_loops(log: &[LoopRecord], reference: &ReferenceSet, tolerance: u64) -> Result<LoopReport, EvalError> {
    if let Some(bad) = log.iter().find(|r| r.run_id != reference.run_id) {
        return Err(EvalError::RunMismatch {
            expected: reference.run_id.clone(),
            found: bad.run_id.clone(),
        });
    }
    let mut partners: BTreeMap<KeyFrameId, Vec<KeyFrameId>> = BTreeMap::new();
    for (later, earlier) in &reference.pairs {
        partners.entry(*later).or_default().push(*earlier);
    }
    let accepted: Vec<&LoopRecord> = log.iter().filter(|r| r.accepted).collect();
    let tp = accepted
        .iter()
        .filter(|r| {
            partners
                .get(&r.current)
                .is_some_and(|ps| ps.iter().any(|p| p.0.abs_diff(r.candidate.0) <= tolerance))
        })
        .count();
    let reference_loops = partners.len();
    Ok(LoopReport {
        keyframes: reference.keyframes,
        reference_loops,
        reference_pairs: reference.pairs.len(),
        detected: accepted.len(),
        true_positives: tp,
        precision: (!accepted.is_empty()).then(|| tp as f64 / accepted.len() as f64),
        recall: if reference_loops == 0 {
            0.0
        } else {
            tp as f64 / reference_loops as f64
        },
    })
}

/// Frame-count stages at which per-frame times are summarized.
pub const TIMING_STAGES: [usize; 3] = [10, 100, 1000];

/// Mean of the last tenth of the first `stage` frames (the first ten for
/// stage 10), for every stage the stream reaches.
pub fn stage_means(per_frame_us: &[f64]) -> BTreeMap<usize, f64> {
    TIMING_STAGES
        .iter()
        .filter_map(|&stage| {
            let start = stage - stage.max(100) / 10;
            let end = stage.min(per_frame_us.len());
            (end > start).then(|| {
                let w = &per_frame_us[start..end];
                (stage, w.iter().sum::<f64>() / w.len() as f64 / 1000.0)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    /// Stage (frame count) → mean per-frame association time in milliseconds.
    pub stages_ms: BTreeMap<usize, f64>,
    pub landmarks_at_end: usize,
}

impl MethodTiming {
    /// Ratio of the largest reached stage to the first.
    pub fn growth(&self) -> Option<f64> {
        let first = self.stages_ms.values().next()?;
        let last = self.stages_ms.values().next_back()?;
        Some(last / first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub methods: Vec<MethodTiming>,
}
