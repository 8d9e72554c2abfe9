//! Loop detection by comparing semantic topological graphs of co-observed
//! landmarks, plus closed-form loop correction.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EngineConfig, RotationMeasure, TranslationMeasure};
use crate::geom::{rotation_angle, umeyama_align, vector_pair_transform, GeomError, PairTransform, SE3Pose, Similarity3, EPS_LEN};
use crate::mapdb::{ClassId, KeyFrame, KeyFrameId, LandmarkId, MapDatabase, MapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("keyframe {0} has fewer than two usable landmarks")]
    GraphTooSmall(KeyFrameId),
    #[error("graphs share no scorable vector pair")]
    NoScore,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub landmark: LandmarkId,
    pub label: ClassId,
    /// Centroid in the keyframe's camera frame.
    pub centroid: Vector3<f64>,
    pub rho: f64,
}

/// Landmark centroids of one keyframe, sorted by landmark id.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTopoGraph {
    pub keyframe: KeyFrameId,
    pub nodes: Vec<GraphNode>,
}

impl SemanticTopoGraph {
    pub fn node(&self, id: LandmarkId) -> Option<&GraphNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.landmark)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Semantic vectors `C_q − C_p` for every node pair `p < q`.
    pub fn vectors(&self) -> Vec<(LandmarkId, LandmarkId, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.nodes.len() * self.nodes.len().saturating_sub(1) / 2);
        for (i, p) in self.nodes.iter().enumerate() {
            for q in &self.nodes[i + 1..] {
                out.push((p.landmark, q.landmark, q.centroid - p.centroid));
            }
        }
        out
    }
}

/// Builds the graph of a keyframe. Each node uses the centroid the keyframe
/// itself observed when available, otherwise the map centroid moved into the
/// camera frame.
pub fn extract_topo_graph(kf: &KeyFrame, db: &MapDatabase) -> Result<SemanticTopoGraph, LoopError> {
    let t_cw = kf.pose_cw();
    let nodes: Vec<GraphNode> = kf
        .landmark_ids()
        .into_iter()
        .filter_map(|id| {
            let lm = db.landmark(id)?;
            let centroid = kf
                .observed_centroids
                .get(&id)
                .copied()
                .unwrap_or_else(|| t_cw.transform_point(&lm.centroid));
            centroid.iter().all(|c| c.is_finite()).then_some(GraphNode {
                landmark: id,
                label: lm.label,
                centroid,
                rho: lm.quality,
            })
        })
        .collect();
    if nodes.len() < 2 {
        return Err(LoopError::GraphTooSmall(kf.id));
    }
    Ok(SemanticTopoGraph { keyframe: kf.id, nodes })
}

/// Rotation, scale and start-point offset relating `v_i` (current) to `v_j` (candidate).
pub fn pair_indicators(
    v_i: &Vector3<f64>,
    v_j: &Vector3<f64>,
    start_i: &Vector3<f64>,
    start_j: &Vector3<f64>,
) -> Result<PairTransform, GeomError> {
    let mut pt = vector_pair_transform(v_i, v_j)?;
    pt.translation = start_j - start_i;
    Ok(pt)
}

pub fn rotation_indicator(pt: &PairTransform, measure: RotationMeasure) -> f64 {
    match measure {
        RotationMeasure::Trace => (1.0 + 2.0 * pt.angle.cos()) / 3.0,
        RotationMeasure::Frobenius => 3f64.sqrt(),
        RotationMeasure::Spectral => 1.0,
    }
}

/// `exp(−½ |1 − s·n(R) − t̂|)`.
pub fn score_topology_with(pt: &PairTransform, rot: RotationMeasure, trans: TranslationMeasure) -> f64 {
    let t = match trans {
        TranslationMeasure::Relative => pt.translation.norm() / pt.source_length,
        TranslationMeasure::Meters => pt.translation.norm(),
    };
    (-0.5 * (1.0 - pt.scale * rotation_indicator(pt, rot) - t).abs()).exp()
}

pub fn score_topology(pt: &PairTransform) -> f64 {
    score_topology_with(pt, RotationMeasure::Trace, TranslationMeasure::Relative)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub raw: f64,
    /// `raw / Σρ`, in `(0, 1]`.
    pub normalized: f64,
    pub pairs: usize,
}

/// Quality-weighted topology score over vector pairs of landmarks present in
/// both graphs.
pub fn cov_graph_similarity(
    current: &SemanticTopoGraph,
    candidate: &SemanticTopoGraph,
    cfg: &EngineConfig,
) -> Result<Similarity, LoopError> {
    let shared: Vec<(&GraphNode, &GraphNode)> = current
        .nodes
        .iter()
        .filter_map(|n| candidate.node(n.landmark).map(|m| (n, m)))
        .collect();
    let mut raw = 0.0;
    let mut weight = 0.0;
    let mut pairs = 0;
    for (i, (pk, pc)) in shared.iter().enumerate() {
        for (qk, qc) in &shared[i + 1..] {
            let v_i = qk.centroid - pk.centroid;
            let v_j = qc.centroid - pc.centroid;
            if v_i.norm() <= EPS_LEN || v_j.norm() <= EPS_LEN {
                continue;
            }
            let pt = pair_indicators(&v_i, &v_j, &pk.centroid, &pc.centroid)?;
            let rho = pk.rho;
            raw += rho * score_topology_with(&pt, cfg.rotation_measure, cfg.translation_measure);
            weight += rho;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(LoopError::NoScore);
    }
    Ok(Similarity {
        raw,
        normalized: raw / weight,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub current: KeyFrameId,
    pub candidate: KeyFrameId,
    pub shared: Vec<LandmarkId>,
    pub raw: f64,
    pub normalized: f64,
    pub pairs: usize,
}

/// Unscored candidates passing the shared-object and id-gap gates.
pub fn loop_match_filter(kf: &KeyFrame, db: &MapDatabase, min_objects: usize, min_id_gap: u64) -> Vec<LoopCandidate> {
    db.shared_with_earlier(kf, min_id_gap)
        .into_iter()
        .filter(|(_, lms)| lms.len() >= min_objects)
        .map(|(candidate, mut shared)| {
            shared.sort();
            LoopCandidate {
                current: kf.id,
                candidate,
                shared,
                raw: 0.0,
                normalized: 0.0,
                pairs: 0,
            }
        })
        .collect()
}

/// Counts consecutive keyframes whose best above-threshold candidates fall
/// into overlapping covisibility groups.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyTracker {
    group: BTreeSet<KeyFrameId>,
    count: usize,
}

impl ConsistencyTracker {
    pub fn new() -> Self {
        ConsistencyTracker::default()
    }

    /// Registers an above-threshold hit and returns the running count.
    pub fn hit(&mut self, group: BTreeSet<KeyFrameId>) -> usize {
        if self.count > 0 && !self.group.is_disjoint(&group) {
            self.count += 1;
        } else {
            self.count = 1;
        }
        self.group = group;
        self.count
    }

    pub fn miss(&mut self) {
        self.count = 0;
        self.group.clear();
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// True once the candidate's group has been hit in `n_consist` consecutive keyframes.
pub fn consistency_check(tracker: &mut ConsistencyTracker, group: BTreeSet<KeyFrameId>, n_consist: usize) -> bool {
    tracker.hit(group) >= n_consist
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopCorrection {
    /// Similarity taking current-camera coordinates to candidate-camera coordinates.
    pub relative: Similarity3,
    /// World-frame transform moving the current keyframe onto its corrected pose.
    pub correction: Similarity3,
    pub corrected_pose: SE3Pose,
    /// False when the correction fell below the configured floors or
    /// corrections are disabled.
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopClosure {
    pub candidate: LoopCandidate,
    pub consistency: usize,
    /// Absent when the shared landmarks could not support an alignment.
    pub correction: Option<LoopCorrection>,
}

/// Outcome of loop detection at one keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopDecision {
    pub best: Option<LoopCandidate>,
    pub consistency: usize,
    pub closure: Option<LoopClosure>,
}

/// Aligns the shared landmarks of the two keyframes and distributes the
/// resulting world correction over keyframes `(candidate, current]`.
pub fn loop_correction(
    db: &mut MapDatabase,
    current: KeyFrameId,
    candidate: KeyFrameId,
    cfg: &EngineConfig,
) -> Result<LoopCorrection, LoopError> {
    let kf_cur = db.keyframe(current).ok_or(MapError::MissingKeyFrame(current))?;
    let kf_cand = db.keyframe(candidate).ok_or(MapError::MissingKeyFrame(candidate))?;
    let g_cur = extract_topo_graph(kf_cur, db)?;
    let g_cand = extract_topo_graph(kf_cand, db)?;
    let (src, dst): (Vec<_>, Vec<_>) = g_cur
        .nodes
        .iter()
        .filter_map(|n| g_cand.node(n.landmark).map(|m| (n.centroid, m.centroid)))
        .unzip();
    let relative = umeyama_align(&src, &dst, cfg.align_with_scale)?;

    let cand_pose = Similarity3::from_pose(kf_cand.pose);
    let corrected = cand_pose.compose(&relative);
    let corrected_pose = SE3Pose::new(corrected.pose.rotation, corrected.pose.translation);
    let r_c = corrected_pose.rotation * kf_cur.pose.rotation.inverse();
    let correction = Similarity3::from_pose(SE3Pose::new(
        r_c,
        corrected_pose.translation - r_c * kf_cur.pose.translation,
    ));

    let significant = correction.translation().norm() >= cfg.correction_min_translation
        || rotation_angle(correction.rotation()).to_degrees() >= cfg.correction_min_rotation_deg;
    let applied = cfg.apply_correction && significant;
    if applied {
        let span = (current.0 - candidate.0) as f64;
        let affected: Vec<KeyFrameId> = db
            .keyframes()
            .map(|kf| kf.id)
            .filter(|id| *id > candidate && *id <= current)
            .collect();
        for id in &affected {
            let f = (id.0 - candidate.0) as f64 / span;
            let step = correction.interpolate(f);
            let pose = db.keyframe(*id).expect("listed above").pose;
            db.set_keyframe_pose(*id, step.apply_to_pose(&pose))?;
        }
        db.set_keyframe_pose(current, corrected_pose)?;
        let anchored: Vec<(LandmarkId, KeyFrameId)> = db
            .index()
            .iter()
            .filter_map(|(lm, q)| q.first().map(|first| (*lm, *first)))
            .filter(|(_, first)| *first > candidate && *first <= current)
            .collect();
        for (lm, first) in anchored {
            let f = (first.0 - candidate.0) as f64 / span;
            db.transform_landmark(lm, &correction.interpolate(f))?;
        }
    }
    Ok(LoopCorrection {
        relative,
        correction,
        corrected_pose,
        applied,
    })
}

/// Full detection step for a freshly inserted keyframe.
pub fn detect_loop(
    current: KeyFrameId,
    db: &mut MapDatabase,
    cfg: &EngineConfig,
    tracker: &mut ConsistencyTracker,
) -> Result<LoopDecision, LoopError> {
    let kf = db.keyframe(current).ok_or(MapError::MissingKeyFrame(current))?;
    let candidates = loop_match_filter(kf, db, cfg.min_shared_objects, cfg.min_id_gap);
    let mut best: Option<LoopCandidate> = None;
    if !candidates.is_empty() {
        if let Ok(g_k) = extract_topo_graph(kf, db) {
            for mut c in candidates {
                let Some(kf_c) = db.keyframe(c.candidate) else { continue };
                let Ok(g_c) = extract_topo_graph(kf_c, db) else { continue };
                let Ok(sim) = cov_graph_similarity(&g_k, &g_c, cfg) else { continue };
                // candidates arrive in ascending id order, so ties keep the lower id
                if best.as_ref().is_none_or(|b| sim.normalized > b.normalized) {
                    c.raw = sim.raw;
                    c.normalized = sim.normalized;
                    c.pairs = sim.pairs;
                    best = Some(c);
                }
            }
        }
    }

    let Some(best) = best else {
        tracker.miss();
        return Ok(LoopDecision {
            best: None,
            consistency: 0,
            closure: None,
        });
    };
    if best.normalized <= cfg.score_threshold {
        tracker.miss();
        return Ok(LoopDecision {
            best: Some(best),
            consistency: 0,
            closure: None,
        });
    }
    let group = db.covisibility_group(best.candidate, cfg.min_shared_objects);
    let accepted = consistency_check(tracker, group, cfg.consistency_count);
    let consistency = tracker.count();
    let closure = if accepted {
        let correction = match loop_correction(db, best.current, best.candidate, cfg) {
            Ok(c) => Some(c),
            Err(LoopError::Geom(GeomError::InsufficientGeometry(_))) => None,
            Err(e) => return Err(e),
        };
        Some(LoopClosure {
            candidate: best.clone(),
            consistency,
            correction,
        })
    } else {
        None
    };
    Ok(LoopDecision {
        best: Some(best),
        consistency,
        closure,
    })
}

/// One line of the loop log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub run_id: String,
    pub current: KeyFrameId,
    pub candidate: KeyFrameId,
    pub shared: Vec<LandmarkId>,
    pub raw: f64,
    pub normalized: f64,
    pub accepted: bool,
    pub consistency: usize,
    /// World-frame correction; present only for accepted, aligned loops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Similarity3>,
    /// Current-to-candidate camera similarity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<Similarity3>,
    /// Accepted but without enough geometry to align.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub uncorrected: bool,
    /// Whether `transform` was applied to the map.
    #[serde(default)]
    pub applied: bool,
}

impl LoopRecord {
    pub fn from_decision(run_id: &str, d: &LoopDecision) -> Option<LoopRecord> {
        let best = d.best.as_ref()?;
        let correction = d.closure.as_ref().and_then(|c| c.correction.as_ref());
        Some(LoopRecord {
            run_id: run_id.to_string(),
            current: best.current,
            candidate: best.candidate,
            shared: best.shared.clone(),
            raw: best.raw,
            normalized: best.normalized,
            accepted: d.closure.is_some(),
            consistency: d.consistency,
            transform: correction.map(|c| c.correction),
            relative: correction.map(|c| c.relative),
            uncorrected: d.closure.is_some() && correction.is_none(),
            applied: correction.is_some_and(|c| c.applied),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::geom::CameraIntrinsics;
    use crate::mapdb::{Association, AssociationLevel, Detection, FrameView};
    use crate::geom::Box2D;
    use std::f64::consts::FRAC_PI_2;

    fn graph(points: &[[f64; 3]], rho: &[f64]) -> SemanticTopoGraph {
        SemanticTopoGraph {
            keyframe: KeyFrameId(0),
            nodes: points
                .iter()
                .zip(rho)
                .enumerate()
                .map(|(i, (p, r))| GraphNode {
                    landmark: LandmarkId(i as u64),
                    label: ClassId(0),
                    centroid: Vector3::from(*p),
                    rho: *r,
                })
                .collect(),
        }
    }

    #[test]
    fn score_examples() {
        let z = Vector3::zeros();
        let v = Vector3::new(1.0, 2.0, 3.0);
        let pt = pair_indicators(&v, &v, &z, &z).unwrap();
        assert_eq!(score_topology(&pt), 1.0);
        let pt = pair_indicators(&Vector3::x(), &(2.0 * Vector3::x()), &z, &z).unwrap();
        assert!((score_topology(&pt) - (-0.5f64).exp()).abs() < 1e-12);
        let pt = pair_indicators(&Vector3::x(), &Vector3::y(), &z, &z).unwrap();
        assert!((pt.angle - FRAC_PI_2).abs() < 1e-15);
        assert!((score_topology(&pt) - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn anti_parallel_pair_scores_through_pi() {
        let z = Vector3::zeros();
        let pt = pair_indicators(&Vector3::x(), &-Vector3::x(), &z, &z).unwrap();
        assert!(pt.degenerate);
        // n(R) = -1/3 → exp(-½·4/3)
        assert!((score_topology(&pt) - (-2.0f64 / 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn scaled_graph_indicators() {
        let a = Vector3::new(0.2, 0.1, 2.0);
        let b = Vector3::new(-0.3, 0.2, 3.0);
        let pt = pair_indicators(&(b - a), &(2.0 * (b - a)), &a, &(2.0 * a)).unwrap();
        assert!((pt.scale - 2.0).abs() < 1e-12);
        assert!((pt.translation - a).norm() < 1e-12);
    }

    #[test]
    fn self_similarity_is_one() {
        let cfg = EngineConfig::default();
        let g = graph(&[[0.0, 0.0, 2.0], [1.0, 0.0, 3.0], [0.0, 1.0, 2.5]], &[1.0, 1.0, 1.0]);
        let s = cov_graph_similarity(&g, &g, &cfg).unwrap();
        assert_eq!((s.raw, s.normalized, s.pairs), (3.0, 1.0, 3));
        let g = graph(&[[0.0, 0.0, 2.0], [1.0, 0.0, 3.0], [0.0, 1.0, 2.5]], &[0.5, 1.0, 1.0]);
        assert_eq!(cov_graph_similarity(&g, &g, &cfg).unwrap().normalized, 1.0);
        let mut moved = g.clone();
        moved.nodes[1].centroid.x += 0.3;
        assert!(cov_graph_similarity(&g, &moved, &cfg).unwrap().normalized < 1.0);
    }

    #[test]
    fn coincident_nodes_are_skipped() {
        let cfg = EngineConfig::default();
        let g = graph(&[[0.0, 0.0, 2.0], [0.0, 0.0, 2.0]], &[1.0, 1.0]);
        assert_eq!(g.vectors().len(), 1);
        assert_eq!(cov_graph_similarity(&g, &g, &cfg), Err(LoopError::NoScore));
        let g3 = graph(&[[0.0, 0.0, 2.0], [1.0, 0.0, 2.0], [0.0, 1.0, 2.0]], &[1.0; 3]);
        assert_eq!(g3.vectors().len(), 3);
    }

    #[test]
    fn consistency_examples() {
        let g = |ids: &[u64]| ids.iter().map(|&i| KeyFrameId(i)).collect::<BTreeSet<_>>();
        let mut t = ConsistencyTracker::new();
        assert!(consistency_check(&mut t, g(&[1]), 1));

        let mut t = ConsistencyTracker::new();
        assert!(!consistency_check(&mut t, g(&[1, 2]), 3));
        assert!(!consistency_check(&mut t, g(&[2, 3]), 3));
        assert!(consistency_check(&mut t, g(&[3, 4]), 3));

        let mut t = ConsistencyTracker::new();
        consistency_check(&mut t, g(&[1]), 3);
        consistency_check(&mut t, g(&[1]), 3);
        t.miss();
        assert!(!consistency_check(&mut t, g(&[1]), 3));
    }

    /// Map with `n` landmarks and keyframes observing all of them from the given poses.
    fn scripted_map(centers: &[Vector3<f64>], poses: &[(u64, SE3Pose)]) -> MapDatabase {
        let cfg = EngineConfig::default();
        let mut db = MapDatabase::new();
        let k = CameraIntrinsics::default();
        let first = FrameView {
            frame_id: poses[0].0,
            pose: poses[0].1,
            intrinsics: k,
        };
        let mut ids = Vec::new();
        for c in centers {
            let mut d = Detection::new(Box2D::new(0.0, 0.0, 1.0, 1.0), ClassId(0), 0.9);
            d.points = vec![first.pose.inverse().transform_point(c)];
            ids.push(db.create_landmark(&d, &first, &cfg));
        }
        for (fid, pose) in poses {
            let dets: Vec<Detection> = centers
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut d = Detection::new(Box2D::new(0.0, 0.0, 1.0, 1.0), ClassId(0), 0.9);
                    d.index = i;
                    d.points = vec![pose.inverse().transform_point(c)];
                    d
                })
                .collect();
            let assoc = ids
                .iter()
                .map(|&landmark| {
                    Some(Association {
                        landmark,
                        level: AssociationLevel::FrameIou,
                        score: 1.0,
                    })
                })
                .collect();
            db.insert_keyframe(KeyFrame::new(KeyFrameId(*fid), *pose, k, dets, assoc))
                .unwrap();
        }
        db
    }

    fn centers() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.5, 0.1, 0.0),
            Vector3::new(-0.3, 0.4, 0.2),
            Vector3::new(0.2, -0.5, 0.1),
        ]
    }

    #[test]
    fn drift_free_loop_has_identity_correction() {
        let cfg = EngineConfig::default();
        let pose = SE3Pose::look_at(Vector3::new(0.0, -3.0, 1.0), Vector3::zeros(), Vector3::z());
        let mut db = scripted_map(&centers(), &[(0, pose), (1500, pose)]);
        let c = loop_correction(&mut db, KeyFrameId(1500), KeyFrameId(0), &cfg).unwrap();
        assert!(c.correction.pose.translation.norm() < 1e-9);
        assert!((c.correction.pose.rotation.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-9);
        assert!((c.relative.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn translation_drift_is_recovered() {
        let cfg = EngineConfig::default();
        let truth = SE3Pose::look_at(Vector3::new(0.0, -3.0, 1.0), Vector3::zeros(), Vector3::z());
        let drift = Vector3::new(0.3, 0.0, 0.0);
        let drifted = SE3Pose::new(truth.rotation, truth.translation + drift);
        // camera-frame observations reflect the true geometry; the pose carries the drift
        let mut db = scripted_map(&centers(), &[(0, truth), (800, truth), (1500, truth)]);
        db.set_keyframe_pose(KeyFrameId(800), SE3Pose::new(truth.rotation, truth.translation + drift / 2.0))
            .unwrap();
        db.set_keyframe_pose(KeyFrameId(1500), drifted).unwrap();
        let c = loop_correction(&mut db, KeyFrameId(1500), KeyFrameId(0), &cfg).unwrap();
        assert!((c.correction.pose.translation + drift).norm() < 1e-9);
        let fixed = db.keyframe(KeyFrameId(1500)).unwrap().pose;
        assert!((fixed.translation - truth.translation).norm() < 1e-9);
        let mid = db.keyframe(KeyFrameId(800)).unwrap().pose;
        // linear share of the correction: 800/1500 of −0.3 applied to +0.15
        let expected = truth.translation + drift / 2.0 - drift * (800.0 / 1500.0);
        assert!((mid.translation - expected).norm() < 1e-9, "{}", (mid.translation - expected).norm());
    }

    #[test]
    fn two_shared_landmarks_cannot_be_aligned() {
        let cfg = EngineConfig::default();
        let pose = SE3Pose::look_at(Vector3::new(0.0, -3.0, 1.0), Vector3::zeros(), Vector3::z());
        let mut db = scripted_map(&centers()[..2], &[(0, pose), (1500, pose)]);
        assert!(matches!(
            loop_correction(&mut db, KeyFrameId(1500), KeyFrameId(0), &cfg),
            Err(LoopError::Geom(GeomError::InsufficientGeometry(_)))
        ));
    }

    #[test]
    fn revisit_is_accepted_after_consistency() {
        let cfg = EngineConfig::default();
        let pose = SE3Pose::look_at(Vector3::new(0.0, -3.0, 1.0), Vector3::zeros(), Vector3::z());
        let mut db = scripted_map(&centers(), &[(0, pose), (2000, pose), (2001, pose), (2002, pose)]);
        let mut tracker = ConsistencyTracker::new();
        let mut last = None;
        for id in [2000, 2001, 2002] {
            last = Some(detect_loop(KeyFrameId(id), &mut db, &cfg, &mut tracker).unwrap());
            if id < 2002 {
                assert!(last.as_ref().unwrap().closure.is_none());
            }
        }
        let d = last.unwrap();
        let closure = d.closure.clone().unwrap();
        assert_eq!(closure.candidate.candidate, KeyFrameId(0));
        assert!(closure.candidate.normalized > 0.95);
        assert_eq!(closure.consistency, 3);
        let rec = LoopRecord::from_decision("r", &d).unwrap();
        assert!(rec.accepted && rec.transform.is_some());

        let mut empty = MapDatabase::new();
        assert!(detect_loop(KeyFrameId(1), &mut empty, &cfg, &mut tracker).is_err());
    }
}
