//! Pose–point–object map database: keyframes, quadric landmarks, map points
//! and the landmark → keyframe-queue covisibility index.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::geom::{Box2D, CameraIntrinsics, DualQuadric, SE3Pose, Similarity3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyFrameId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MapPointId(pub u64);

/// Object class identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl std::fmt::Display for KeyFrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "kf{}", self.0)
    }
}

impl std::fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "lm{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("keyframe {0} already stored or older than the newest keyframe")]
    DuplicateKeyFrame(KeyFrameId),
    #[error("unknown landmark {0}")]
    MissingLandmark(LandmarkId),
    #[error("unknown keyframe {0}")]
    MissingKeyFrame(KeyFrameId),
    #[error("invalid detection {index}: {reason}")]
    InvalidDetection { index: usize, reason: &'static str },
}

/// One detector output inside a frame.
///
/// `points` and `quadric` are optional camera-frame observations supplied by
/// the front-end (feature points inside the box, current ellipsoid estimate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub label: ClassId,
    #[serde(rename = "conf")]
    pub confidence: f64,
    /// Position inside the frame's detection list; assigned on load.
    #[serde(skip)]
    pub index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadric: Option<DualQuadric>,
    /// Quality score of the object estimate, if the front-end provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Detection {
    pub fn new(bbox: Box2D, label: ClassId, confidence: f64) -> Self {
        Detection {
            bbox,
            label,
            confidence,
            index: 0,
            points: Vec::new(),
            quadric: None,
            rho: None,
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let err = |reason| MapError::InvalidDetection {
            index: self.index,
            reason,
        };
        if !self.bbox.is_finite() {
            return Err(err("box is not finite"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(err("confidence outside [0, 1]"));
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(err("non-finite point"));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(err("rho outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Camera-frame object center implied by this detection's observations.
    pub fn observed_centroid(&self) -> Option<Vector3<f64>> {
        if let Some(q) = &self.quadric {
            return Some(q.center);
        }
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }
}

/// One input frame: world-from-camera pose and detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub pose: SE3Pose,
    pub detections: Vec<Detection>,
    /// Forces the frame to become a keyframe.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub keyframe: bool,
}

impl Frame {
    pub fn new(frame_id: u64, pose: SE3Pose, mut detections: Vec<Detection>) -> Self {
        for (i, d) in detections.iter_mut().enumerate() {
            d.index = i;
        }
        Frame {
            frame_id,
            pose,
            detections,
            keyframe: false,
        }
    }

    /// Re-numbers detection indices after deserialization.
    pub fn reindex(&mut self) {
        for (i, d) in self.detections.iter_mut().enumerate() {
            d.index = i;
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        self.detections.iter().try_for_each(Detection::validate)
    }
}

/// Verification level at which a detection found its landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationLevel {
    FrameIou,
    LabelPosterior,
    QuadricIou,
    PointRatio,
    /// Global assignment of the baseline.
    Assignment,
    NewLandmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub landmark: LandmarkId,
    pub level: AssociationLevel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrame {
    /// Source frame id; strictly increasing across inserted keyframes.
    pub id: KeyFrameId,
    /// World-from-camera.
    pub pose: SE3Pose,
    pub intrinsics: CameraIntrinsics,
    pub detections: Vec<Detection>,
    /// Parallel to `detections`.
    pub associations: Vec<Option<Association>>,
    /// Camera-frame object centers observed in this keyframe, per landmark.
    pub observed_centroids: BTreeMap<LandmarkId, Vector3<f64>>,
}

impl KeyFrame {
    /// Builds a keyframe, keeping each associated detection's observed center
    /// and dropping the raw point observations.
    pub fn new(
        id: KeyFrameId,
        pose: SE3Pose,
        intrinsics: CameraIntrinsics,
        detections: Vec<Detection>,
        associations: Vec<Option<Association>>,
    ) -> Self {
        let mut observed_centroids = BTreeMap::new();
        for (det, assoc) in detections.iter().zip(&associations) {
            if let (Some(a), Some(c)) = (assoc, det.observed_centroid()) {
                observed_centroids.insert(a.landmark, c);
            }
        }
        let detections = detections
            .into_iter()
            .map(|mut d| {
                d.points = Vec::new();
                d
            })
            .collect();
        KeyFrame {
            id,
            pose,
            intrinsics,
            detections,
            associations,
            observed_centroids,
        }
    }

    pub fn landmark_ids(&self) -> BTreeSet<LandmarkId> {
        self.associations.iter().flatten().map(|a| a.landmark).collect()
    }

    pub fn pose_cw(&self) -> SE3Pose {
        self.pose.inverse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: MapPointId,
    pub position: Vector3<f64>,
    pub landmark: Option<LandmarkId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadricLandmark {
    pub id: LandmarkId,
    pub histogram: BTreeMap<ClassId, u32>,
    pub label: ClassId,
    /// Set once the landmark has enough observations.
    pub quadric: Option<DualQuadric>,
    /// Latest world-frame ellipsoid observation, adopted into `quadric` when eligible.
    pub observed_quadric: Option<DualQuadric>,
    pub centroid: Vector3<f64>,
    point_sum: Vector3<f64>,
    points_absorbed: u64,
    pub quality: f64,
    pub points: Vec<MapPointId>,
    pub last_frame: u64,
    pub last_box: Box2D,
    /// `(frame id, detection index)` of every association.
    pub history: Vec<(u64, usize)>,
}

impl QuadricLandmark {
    /// Total number of associated detections.
    pub fn observations(&self) -> u32 {
        self.histogram.values().sum()
    }

    pub fn label_count(&self, label: ClassId) -> u32 {
        self.histogram.get(&label).copied().unwrap_or(0)
    }

    pub fn points_absorbed(&self) -> u64 {
        self.points_absorbed
    }

    fn relabel(&mut self) {
        let mut best: Option<(ClassId, u32)> = None;
        for (&class, &count) in &self.histogram {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((class, count));
            }
        }
        if let Some((class, _)) = best {
            self.label = class;
        }
    }
}

/// Landmark → keyframe queue, each queue sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovisibilityIndex {
    queues: BTreeMap<LandmarkId, Vec<KeyFrameId>>,
}

impl CovisibilityIndex {
    fn push(&mut self, landmark: LandmarkId, kf: KeyFrameId) {
        let q = self.queues.entry(landmark).or_default();
        if q.last().is_none_or(|&last| last < kf) {
            q.push(kf);
        }
    }

    pub fn queue(&self, landmark: LandmarkId) -> &[KeyFrameId] {
        self.queues.get(&landmark).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LandmarkId, &Vec<KeyFrameId>)> {
        self.queues.iter()
    }
}

/// Where and how an observation was made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameView {
    pub frame_id: u64,
    /// World-from-camera.
    pub pose: SE3Pose,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Default)]
pub struct MapDatabase {
    keyframes: BTreeMap<KeyFrameId, KeyFrame>,
    landmarks: BTreeMap<LandmarkId, QuadricLandmark>,
    points: BTreeMap<MapPointId, MapPoint>,
    index: CovisibilityIndex,
    /// Landmarks associated per processed frame, trimmed to the sliding window span.
    recent: VecDeque<(u64, Vec<LandmarkId>)>,
    recent_keyframes: VecDeque<KeyFrameId>,
    window_capacity: usize,
    next_landmark: u64,
    next_point: u64,
}

impl MapDatabase {
    pub fn new() -> Self {
        MapDatabase::default()
    }

    pub fn keyframe(&self, id: KeyFrameId) -> Option<&KeyFrame> {
        self.keyframes.get(&id)
    }

    pub fn keyframe_mut(&mut self, id: KeyFrameId) -> Option<&mut KeyFrame> {
        self.keyframes.get_mut(&id)
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &KeyFrame> {
        self.keyframes.values()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn last_keyframe(&self) -> Option<&KeyFrame> {
        self.keyframes.values().next_back()
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&QuadricLandmark> {
        self.landmarks.get(&id)
    }

    pub fn landmarks(&self) -> impl Iterator<Item = &QuadricLandmark> {
        self.landmarks.values()
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    pub fn point(&self, id: MapPointId) -> Option<&MapPoint> {
        self.points.get(&id)
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn index(&self) -> &CovisibilityIndex {
        &self.index
    }

    /// Stores a keyframe and appends it to the queue of every landmark it associates.
    pub fn insert_keyframe(&mut self, kf: KeyFrame) -> Result<KeyFrameId, MapError> {
        if self.keyframes.keys().next_back().is_some_and(|&last| last >= kf.id) {
            return Err(MapError::DuplicateKeyFrame(kf.id));
        }
        let ids = kf.landmark_ids();
        if let Some(missing) = ids.iter().find(|id| !self.landmarks.contains_key(id)) {
            return Err(MapError::MissingLandmark(*missing));
        }
        for lm in ids {
            self.index.push(lm, kf.id);
        }
        let id = kf.id;
        self.keyframes.insert(id, kf);
        self.recent_keyframes.push_back(id);
        self.trim_recent();
        Ok(id)
    }

    /// Landmarks shared with each earlier keyframe at least `min_id_gap` older,
    /// gathered from the queues of `kf`'s own landmarks.
    pub fn shared_with_earlier(&self, kf: &KeyFrame, min_id_gap: u64) -> BTreeMap<KeyFrameId, Vec<LandmarkId>> {
        let mut shared: BTreeMap<KeyFrameId, Vec<LandmarkId>> = BTreeMap::new();
        for lm in kf.landmark_ids() {
            for &other in self.index.queue(lm) {
                if other >= kf.id || kf.id.0 - other.0 < min_id_gap {
                    // queues are sorted; nothing later qualifies
                    break;
                }
                shared.entry(other).or_default().push(lm);
            }
        }
        shared
    }

    /// Keyframes sharing at least `min_objects` landmarks with `kf` and at least
    /// `min_id_gap` ids older.
    pub fn covisible_candidates(&self, kf: &KeyFrame, min_objects: usize, min_id_gap: u64) -> Vec<KeyFrameId> {
        self.shared_with_earlier(kf, min_id_gap)
            .into_iter()
            .filter(|(_, lms)| lms.len() >= min_objects)
            .map(|(id, _)| id)
            .collect()
    }

    /// `kf` together with every keyframe sharing at least `min_objects` landmarks with it.
    pub fn covisibility_group(&self, kf: KeyFrameId, min_objects: usize) -> BTreeSet<KeyFrameId> {
        let mut group = BTreeSet::from([kf]);
        let Some(frame) = self.keyframes.get(&kf) else {
            return group;
        };
        let mut counts: BTreeMap<KeyFrameId, usize> = BTreeMap::new();
        for lm in frame.landmark_ids() {
            for &other in self.index.queue(lm) {
                *counts.entry(other).or_default() += 1;
            }
        }
        group.extend(counts.into_iter().filter(|&(_, c)| c >= min_objects).map(|(id, _)| id));
        group
    }

    /// Records the landmarks a processed frame associated, for the sliding window.
    pub fn record_frame(&mut self, frame_id: u64, landmarks: Vec<LandmarkId>) {
        self.recent.push_back((frame_id, landmarks));
        self.trim_recent();
    }

    /// Keeps enough history for windows of up to `capacity` keyframes.
    pub fn set_window_capacity(&mut self, capacity: usize) {
        self.window_capacity = capacity;
        self.trim_recent();
    }

    fn trim_recent(&mut self) {
        let cap = self.window_capacity.max(1);
        while self.recent_keyframes.len() > cap {
            self.recent_keyframes.pop_front();
        }
        if let Some(&oldest) = self.recent_keyframes.front() {
            while self.recent.front().is_some_and(|(f, _)| *f < oldest.0) {
                self.recent.pop_front();
            }
        }
    }

    /// Landmarks associated since the `window`-th most recent keyframe before
    /// `frame_id` (inclusive), plus `extra`.
    pub fn sliding_window_landmarks(&self, frame_id: u64, window: usize, extra: &[LandmarkId]) -> BTreeSet<LandmarkId> {
        // gathered into a vector and bulk-built; far cheaper than repeated inserts
        let mut out: Vec<LandmarkId> = extra.to_vec();
        let preceding: Vec<KeyFrameId> = self
            .keyframes
            .range(..KeyFrameId(frame_id))
            .rev()
            .take(window)
            .map(|(id, _)| *id)
            .collect();
        let Some(&start) = preceding.last() else {
            return out.into_iter().collect();
        };
        if self.recent.front().is_some_and(|(f, _)| *f <= start.0) {
            for (f, lms) in self.recent.iter().rev() {
                if *f >= frame_id {
                    continue;
                }
                if *f < start.0 {
                    break;
                }
                out.extend(lms.iter().copied());
            }
        } else {
            // History was trimmed below the requested window; fall back to keyframes.
            for id in preceding {
                out.extend(self.keyframes[&id].landmark_ids());
            }
        }
        out.sort_unstable();
        out.dedup();
        out.into_iter().collect()
    }

    fn fresh_landmark_id(&mut self) -> LandmarkId {
        let id = LandmarkId(self.next_landmark);
        self.next_landmark += 1;
        id
    }

    fn add_points(&mut self, owner: LandmarkId, world: &[Vector3<f64>], budget: usize) -> Vec<MapPointId> {
        world
            .iter()
            .take(budget)
            .map(|p| {
                let id = MapPointId(self.next_point);
                self.next_point += 1;
                self.points.insert(
                    id,
                    MapPoint {
                        id,
                        position: *p,
                        landmark: Some(owner),
                    },
                );
                id
            })
            .collect()
    }

    /// New landmark seeded from an unmatched detection.
    pub fn create_landmark(&mut self, det: &Detection, view: &FrameView, cfg: &EngineConfig) -> LandmarkId {
        let id = self.fresh_landmark_id();
        let world_points: Vec<Vector3<f64>> = det.points.iter().map(|p| view.pose.transform_point(p)).collect();
        let observed_quadric = det.quadric.map(|q| q.transformed(&view.pose));
        let point_sum: Vector3<f64> = world_points.iter().sum();
        let centroid = if !world_points.is_empty() {
            point_sum / world_points.len() as f64
        } else if let Some(q) = &observed_quadric {
            q.center
        } else {
            view.pose
                .transform_point(&view.intrinsics.unproject(&det.bbox.center(), cfg.default_depth))
        };
        let points = self.add_points(id, &world_points, cfg.max_points_per_landmark);
        let quadric = observed_quadric.filter(|_| cfg.quadric_min_observations <= 1);
        self.landmarks.insert(
            id,
            QuadricLandmark {
                id,
                histogram: BTreeMap::from([(det.label, 1)]),
                label: det.label,
                quadric,
                observed_quadric,
                centroid,
                point_sum,
                points_absorbed: world_points.len() as u64,
                quality: det.rho.unwrap_or(cfg.default_quality),
                points,
                last_frame: view.frame_id,
                last_box: det.bbox,
                history: vec![(view.frame_id, det.index)],
            },
        );
        id
    }

    /// Folds a new associated detection into a landmark.
    pub fn update_landmark(
        &mut self,
        id: LandmarkId,
        det: &Detection,
        view: &FrameView,
        cfg: &EngineConfig,
    ) -> Result<&QuadricLandmark, MapError> {
        if !self.landmarks.contains_key(&id) {
            return Err(MapError::MissingLandmark(id));
        }
        let world_points: Vec<Vector3<f64>> = det.points.iter().map(|p| view.pose.transform_point(p)).collect();
        let stored = self.landmarks[&id].points.len();
        let budget = cfg.max_points_per_landmark.saturating_sub(stored);
        let new_points = self.add_points(id, &world_points, budget);

        let lm = self.landmarks.get_mut(&id).expect("checked above");
        *lm.histogram.entry(det.label).or_insert(0) += 1;
        lm.relabel();
        lm.points.extend(new_points);
        if !world_points.is_empty() {
            lm.point_sum += world_points.iter().sum::<Vector3<f64>>();
            lm.points_absorbed += world_points.len() as u64;
            lm.centroid = lm.point_sum / lm.points_absorbed as f64;
        }
        if let Some(q) = det.quadric {
            let q = q.transformed(&view.pose);
            lm.observed_quadric = Some(q);
            if lm.points_absorbed == 0 {
                lm.centroid = q.center;
            }
        }
        if lm.observations() >= cfg.quadric_min_observations {
            if let Some(q) = lm.observed_quadric {
                lm.quadric = Some(q);
            }
        }
        if let Some(rho) = det.rho {
            lm.quality = rho;
        }
        lm.last_frame = view.frame_id;
        lm.last_box = det.bbox;
        lm.history.push((view.frame_id, det.index));
        Ok(lm)
    }

    pub fn set_keyframe_pose(&mut self, id: KeyFrameId, pose: SE3Pose) -> Result<(), MapError> {
        let kf = self.keyframes.get_mut(&id).ok_or(MapError::MissingKeyFrame(id))?;
        kf.pose = pose;
        Ok(())
    }

    /// Moves a landmark (centroid, ellipsoid and map points) by a similarity.
    pub fn transform_landmark(&mut self, id: LandmarkId, sim: &Similarity3) -> Result<(), MapError> {
        let lm = self.landmarks.get_mut(&id).ok_or(MapError::MissingLandmark(id))?;
        lm.centroid = sim.apply(&lm.centroid);
        lm.point_sum = lm.centroid * lm.points_absorbed as f64;
        lm.quadric = lm.quadric.map(|q| q.transformed_sim(sim));
        lm.observed_quadric = lm.observed_quadric.map(|q| q.transformed_sim(sim));
        for pid in &lm.points {
            if let Some(p) = self.points.get_mut(pid) {
                p.position = sim.apply(&p.position);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            keyframes: self
                .keyframes
                .values()
                .map(|kf| KeyFrameRecord {
                    id: kf.id,
                    pose: kf.pose,
                    landmarks: kf.landmark_ids().into_iter().collect(),
                })
                .collect(),
            landmarks: self
                .landmarks
                .values()
                .map(|lm| LandmarkRecord {
                    id: lm.id,
                    label: lm.label,
                    histogram: lm.histogram.clone(),
                    centroid: lm.centroid.into(),
                    rho: lm.quality,
                    quadric: lm.quadric,
                })
                .collect(),
            covisibility: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFrameRecord {
    pub id: KeyFrameId,
    pub pose: SE3Pose,
    pub landmarks: Vec<LandmarkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub id: LandmarkId,
    pub label: ClassId,
    pub histogram: BTreeMap<ClassId, u32>,
    pub centroid: [f64; 3],
    pub rho: f64,
    pub quadric: Option<DualQuadric>,
}

impl LandmarkRecord {
    pub fn observations(&self) -> u32 {
        self.histogram.values().sum()
    }
}

/// Exported map state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub keyframes: Vec<KeyFrameRecord>,
    pub landmarks: Vec<LandmarkRecord>,
    pub covisibility: CovisibilityIndex,
}

impl MapSnapshot {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Structural equality with floating-point fields compared to `tol`.
    pub fn approx_eq(&self, other: &MapSnapshot, tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
        let pose_close = |a: &SE3Pose, b: &SE3Pose| {
            close(a.translation.as_slice(), b.translation.as_slice())
                && close(a.rotation.matrix().as_slice(), b.rotation.matrix().as_slice())
        };
        let quadric_close = |a: &Option<DualQuadric>, b: &Option<DualQuadric>| match (a, b) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                close(a.center.as_slice(), b.center.as_slice())
                    && close(a.half_axes.as_slice(), b.half_axes.as_slice())
                    && close(a.orientation.matrix().as_slice(), b.orientation.matrix().as_slice())
            }
            _ => false,
        };
        self.covisibility == other.covisibility
            && self.keyframes.len() == other.keyframes.len()
            && self.landmarks.len() == other.landmarks.len()
            && self
                .keyframes
                .iter()
                .zip(&other.keyframes)
                .all(|(a, b)| a.id == b.id && a.landmarks == b.landmarks && pose_close(&a.pose, &b.pose))
            && self.landmarks.iter().zip(&other.landmarks).all(|(a, b)| {
                a.id == b.id
                    && a.label == b.label
                    && a.histogram == b.histogram
                    && close(&a.centroid, &b.centroid)
                    && (a.rho - b.rho).abs() <= tol
                    && quadric_close(&a.quadric, &b.quadric)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn view(frame_id: u64) -> FrameView {
        FrameView {
            frame_id,
            pose: SE3Pose::identity(),
            intrinsics: CameraIntrinsics::default(),
        }
    }

    fn det(label: u32) -> Detection {
        Detection::new(Box2D::new(300.0, 220.0, 340.0, 260.0), ClassId(label), 0.9)
    }

    fn keyframe(id: u64, landmarks: &[LandmarkId]) -> KeyFrame {
        let dets: Vec<_> = landmarks
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut d = det(0);
                d.index = i;
                d
            })
            .collect();
        let assoc = landmarks
            .iter()
            .map(|&lm| {
                Some(Association {
                    landmark: lm,
                    level: AssociationLevel::FrameIou,
                    score: 1.0,
                })
            })
            .collect();
        KeyFrame::new(KeyFrameId(id), SE3Pose::identity(), CameraIntrinsics::default(), dets, assoc)
    }

    fn db_with_landmarks(n: usize) -> (MapDatabase, Vec<LandmarkId>) {
        let mut db = MapDatabase::new();
        let cfg = EngineConfig::default();
        let ids = (0..n).map(|_| db.create_landmark(&det(0), &view(0), &cfg)).collect();
        (db, ids)
    }

    #[test]
    fn insert_keyframe_bookkeeping() {
        let (mut db, lm) = db_with_landmarks(10);
        db.insert_keyframe(keyframe(1, &[])).unwrap();
        assert!(db.index().is_empty());
        db.insert_keyframe(keyframe(2, &[lm[3], lm[7]])).unwrap();
        db.insert_keyframe(keyframe(3, &[lm[3], lm[7]])).unwrap();
        assert_eq!(db.index().queue(lm[3]), &[KeyFrameId(2), KeyFrameId(3)]);
        assert_eq!(db.index().queue(lm[7]), &[KeyFrameId(2), KeyFrameId(3)]);
        db.insert_keyframe(keyframe(4, &[lm[9]])).unwrap();
        assert_eq!(db.index().queue(lm[9]), &[KeyFrameId(4)]);
        assert_eq!(
            db.insert_keyframe(keyframe(4, &[])),
            Err(MapError::DuplicateKeyFrame(KeyFrameId(4)))
        );
        assert_eq!(
            db.insert_keyframe(keyframe(9, &[LandmarkId(99)])),
            Err(MapError::MissingLandmark(LandmarkId(99)))
        );
    }

    #[test]
    fn covisible_candidate_gates() {
        let (mut db, lm) = db_with_landmarks(3);
        db.insert_keyframe(keyframe(10, &lm)).unwrap();
        db.insert_keyframe(keyframe(810, &lm)).unwrap();
        let current = keyframe(1210, &lm);
        db.insert_keyframe(current.clone()).unwrap();
        // 1200 gap to kf 10, only 400 to kf 810
        assert_eq!(db.covisible_candidates(&current, 2, 1000), vec![KeyFrameId(10)]);
        assert_eq!(db.covisible_candidates(&current, 4, 1000), vec![]);
        let empty = keyframe(1300, &[]);
        assert!(db.covisible_candidates(&empty, 2, 1000).is_empty());
    }

    #[test]
    fn sliding_window_union() {
        let (mut db, lm) = db_with_landmarks(4);
        db.set_window_capacity(2);
        assert!(db.sliding_window_landmarks(0, 2, &[]).is_empty());
        db.record_frame(1, vec![lm[0]]);
        db.insert_keyframe(keyframe(1, &[lm[0]])).unwrap();
        db.record_frame(2, vec![lm[1], lm[2]]);
        db.insert_keyframe(keyframe(2, &[lm[1], lm[2]])).unwrap();
        db.record_frame(3, vec![lm[2], lm[3]]);
        db.insert_keyframe(keyframe(3, &[lm[2], lm[3]])).unwrap();
        let w = db.sliding_window_landmarks(4, 2, &[]);
        assert_eq!(w, BTreeSet::from([lm[1], lm[2], lm[3]]));
        let all = db.sliding_window_landmarks(4, 50, &[]);
        assert!(all.is_superset(&w));
        let with_extra = db.sliding_window_landmarks(4, 2, &[lm[0]]);
        assert!(with_extra.contains(&lm[0]));
    }

    #[test]
    fn create_landmark_centroids() {
        let cfg = EngineConfig::default();
        let mut db = MapDatabase::new();
        let mut d = det(3);
        d.points = (0..5).map(|i| Vector3::new(i as f64, 0.0, 2.0)).collect();
        let id = db.create_landmark(&d, &view(0), &cfg);
        let lm = db.landmark(id).unwrap();
        assert_eq!(lm.label, ClassId(3));
        assert_relative_eq!(lm.centroid, Vector3::new(2.0, 0.0, 2.0));
        assert_eq!(lm.points.len(), 5);
        assert!(lm.quadric.is_none());

        // no points: box center (320,240) back-projected at the default depth
        let v = FrameView {
            frame_id: 1,
            pose: SE3Pose::new(Rotation3::from_euler_angles(0.0, 0.0, 0.5), Vector3::new(1.0, 2.0, 0.0)),
            intrinsics: CameraIntrinsics::default(),
        };
        let id2 = db.create_landmark(&det(4), &v, &cfg);
        let expected = v.pose.transform_point(&Vector3::new(0.0, 0.0, 3.0));
        assert_relative_eq!(db.landmark(id2).unwrap().centroid, expected, epsilon = 1e-12);
        assert_ne!(id, id2);
    }

    #[test]
    fn update_landmark_histogram_and_running_mean() {
        let cfg = EngineConfig::default();
        let mut db = MapDatabase::new();
        let mut d = det(2);
        d.points = vec![Vector3::zeros()];
        let id = db.create_landmark(&d, &view(0), &cfg);
        d.points = vec![Vector3::new(2.0, 0.0, 0.0)];
        let lm = db.update_landmark(id, &d, &view(1), &cfg).unwrap();
        assert_relative_eq!(lm.centroid, Vector3::new(1.0, 0.0, 0.0));

        let mut chair = det(5);
        chair.points.clear();
        let id = db.create_landmark(&chair, &view(0), &cfg);
        for f in 1..3 {
            db.update_landmark(id, &chair, &view(f), &cfg).unwrap();
        }
        let lm = db.update_landmark(id, &chair, &view(3), &cfg).unwrap();
        assert_eq!(lm.histogram[&ClassId(5)], 4);
        assert_eq!(lm.observations(), 4);

        // tie between classes 2 and 7 resolves to the lower id
        let id = db.create_landmark(&det(7), &view(0), &cfg);
        db.update_landmark(id, &det(7), &view(1), &cfg).unwrap();
        db.update_landmark(id, &det(2), &view(2), &cfg).unwrap();
        let lm = db.update_landmark(id, &det(2), &view(3), &cfg).unwrap();
        assert_eq!(lm.label, ClassId(2));

        assert_eq!(
            db.update_landmark(LandmarkId(1234), &det(0), &view(0), &cfg).unwrap_err(),
            MapError::MissingLandmark(LandmarkId(1234))
        );
    }

    #[test]
    fn quadric_adopted_after_enough_observations() {
        let cfg = EngineConfig::default();
        let mut db = MapDatabase::new();
        let mut d = det(1);
        d.quadric = Some(DualQuadric::sphere(Vector3::new(0.0, 0.0, 3.0), 0.2).unwrap());
        let id = db.create_landmark(&d, &view(0), &cfg);
        assert!(db.landmark(id).unwrap().quadric.is_none());
        db.update_landmark(id, &d, &view(1), &cfg).unwrap();
        assert!(db.landmark(id).unwrap().quadric.is_none());
        db.update_landmark(id, &d, &view(2), &cfg).unwrap();
        assert!(db.landmark(id).unwrap().quadric.is_some());
        // centroid falls back to the ellipsoid center when no points were seen
        assert_relative_eq!(db.landmark(id).unwrap().centroid, Vector3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn point_budget_is_respected() {
        let cfg = EngineConfig {
            max_points_per_landmark: 4,
            ..Default::default()
        };
        let mut db = MapDatabase::new();
        let mut d = det(0);
        d.points = vec![Vector3::new(0.0, 0.0, 1.0); 3];
        let id = db.create_landmark(&d, &view(0), &cfg);
        db.update_landmark(id, &d, &view(1), &cfg).unwrap();
        let lm = db.landmark(id).unwrap();
        assert_eq!(lm.points.len(), 4);
        assert_eq!(lm.points_absorbed(), 6);
        assert_eq!(db.point_count(), 4);
    }

    #[test]
    fn snapshot_json_roundtrip() {
        let cfg = EngineConfig::default();
        let mut db = MapDatabase::new();
        let mut d = det(1);
        d.quadric = Some(
            DualQuadric::new(
                Vector3::new(0.1, 0.2, 3.0),
                Vector3::new(0.2, 0.3, 0.1),
                Rotation3::from_euler_angles(0.3, 0.2, 0.1),
            )
            .unwrap(),
        );
        let id = db.create_landmark(&d, &view(0), &cfg);
        for f in 1..4 {
            db.update_landmark(id, &d, &view(f), &cfg).unwrap();
        }
        let mut kf = keyframe(5, &[id]);
        kf.pose = SE3Pose::new(Rotation3::from_euler_angles(1.0, -2.0, 0.5), Vector3::new(0.3, 0.1, 7.0));
        db.insert_keyframe(kf).unwrap();
        let snap = db.snapshot();
        let back = MapSnapshot::from_json(&snap.to_json().unwrap()).unwrap();
        assert!(snap.approx_eq(&back, 1e-12));
        assert!(back.landmarks[0].quadric.is_some());
    }
}
