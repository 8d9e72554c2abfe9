//! Multi-level object data association: frame IoU, label posterior,
//! quadric back-projection IoU and point back-projection ratio.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline;
use crate::config::EngineConfig;
use crate::geom::{iou_2d, project_point, project_quadric_bbox, Box2D, CameraIntrinsics, SE3Pose};
use crate::mapdb::{
    Association, AssociationLevel, Detection, Frame, FrameView, KeyFrame, KeyFrameId, LandmarkId, MapDatabase,
    MapError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("frame {got} arrived after frame {previous}; frames must have increasing ids")]
    OutOfOrder { previous: u64, got: u64 },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Association strategy: the full cascade, one of its ablations, or the
/// joint-assignment baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Method {
    #[default]
    #[serde(rename = "mlv")]
    Mlv,
    #[serde(rename = "jda")]
    Jda,
    /// Frame IoU only.
    #[serde(rename = "2d")]
    TwoD,
    /// Label posterior only.
    #[serde(rename = "pro")]
    Pro,
    /// Quadric IoU and point ratio only.
    #[serde(rename = "3d")]
    ThreeD,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Mlv, Method::Jda, Method::TwoD, Method::Pro, Method::ThreeD];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mlv => "mlv",
            Method::Jda => "jda",
            Method::TwoD => "2d",
            Method::Pro => "pro",
            Method::ThreeD => "3d",
        }
    }

    fn uses(&self, level: AssociationLevel) -> bool {
        use AssociationLevel::*;
        match self {
            Method::Mlv => matches!(level, FrameIou | LabelPosterior | QuadricIou | PointRatio),
            Method::TwoD => level == FrameIou,
            Method::Pro => level == LabelPosterior,
            Method::ThreeD => matches!(level, QuadricIou | PointRatio),
            Method::Jda => level == Assignment,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected mlv, jda, 2d, pro or 3d)"))
    }
}

/// Result for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub detection: usize,
    pub landmark: LandmarkId,
    pub level: AssociationLevel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub frame_id: u64,
    /// Set when the frame was stored as a keyframe.
    pub keyframe: Option<KeyFrameId>,
    /// One entry per detection, in detection order.
    pub outcomes: Vec<Outcome>,
    pub elapsed_us: f64,
}

impl AssociationResult {
    pub fn record(&self) -> AssociationRecord {
        AssociationRecord {
            frame_id: self.frame_id,
            keyframe: self.keyframe.is_some(),
            detections: self.outcomes.clone(),
        }
    }
}

/// One line of the association log. Timing is deliberately absent so logs
/// are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub frame_id: u64,
    pub keyframe: bool,
    pub detections: Vec<Outcome>,
}

/// Whether a frame becomes a keyframe: the first frame, a forced frame, or
/// enough motion since the last keyframe.
pub fn keyframe_due(frame: &Frame, db: &MapDatabase, cfg: &EngineConfig) -> bool {
    let Some(last) = db.last_keyframe() else {
        return true;
    };
    frame.keyframe
        || frame.pose.distance_to(&last.pose) >= cfg.keyframe_translation
        || frame.pose.angle_to(&last.pose).to_degrees() >= cfg.keyframe_rotation_deg
}

/// Returns the candidate with the largest score, ties going to the lower
/// landmark id. Candidates must be visited in ascending id order.
fn argmax(scored: impl Iterator<Item = (LandmarkId, f64)>) -> Option<(LandmarkId, f64)> {
    let mut best: Option<(LandmarkId, f64)> = None;
    for (id, s) in scored {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best
}

/// Level 1: IoU against the boxes landmarks had in the previous frame.
pub fn verify_2d_frame_iou(
    det: &Detection,
    prev: &[(LandmarkId, Box2D)],
    db: &MapDatabase,
    claimed: &BTreeSet<LandmarkId>,
    delta1: f64,
) -> Option<(LandmarkId, f64)> {
    let (id, iou) = argmax(
        prev.iter()
            .filter(|(id, _)| !claimed.contains(id))
            .map(|(id, b)| (*id, iou_2d(&det.bbox, b))),
    )?;
    let label_ok = db.landmark(id).is_some_and(|lm| lm.label == det.label);
    (iou > delta1 && label_ok).then_some((id, iou))
}

/// Level 2: label posterior against window landmarks. Returns the winning
/// landmark when its posterior beats that of a brand-new object.
pub fn verify_label_posterior(
    det: &Detection,
    candidates: &[LandmarkId],
    db: &MapDatabase,
    view: &FrameView,
    cfg: &EngineConfig,
) -> Option<(LandmarkId, f64)> {
    let t_cw = view.pose.inverse();
    let center = det.bbox.center();
    let mut usable = Vec::with_capacity(candidates.len());
    for &id in candidates {
        let Some(lm) = db.landmark(id) else { continue };
        let Some(px) = project_point(&view.intrinsics, &t_cw, &lm.centroid) else {
            continue;
        };
        usable.push((id, lm.observations() as f64, lm.label_count(det.label) as f64, (px - center).norm()));
    }
    let alpha = cfg.dirichlet_alpha;
    let total: f64 = usable.iter().map(|u| u.1).sum();
    let classes = cfg.num_classes as f64;
    let sigma2 = cfg.position_sigma_px * cfg.position_sigma_px;
    let (id, post) = argmax(usable.iter().map(|&(id, n, count, d)| {
        let prior = n / (total + alpha);
        let label = (count + 1.0) / (n + classes);
        let pos = (-d * d / (2.0 * sigma2)).exp();
        (id, prior * label * pos)
    }))?;
    // the new-object hypothesis carries the label likelihood of an empty landmark
    let new_object = alpha / (total + alpha) / classes;
    (post > new_object).then_some((id, post))
}

/// Level 3: IoU against the projected boxes of landmarks with ellipsoids.
pub fn verify_quadric_backproj_iou(
    det: &Detection,
    candidates: &[LandmarkId],
    db: &MapDatabase,
    view: &FrameView,
    delta2: f64,
) -> Option<(LandmarkId, f64)> {
    let t_cw = view.pose.inverse();
    let (id, iou) = argmax(candidates.iter().filter_map(|&id| {
        let q = db.landmark(id)?.quadric?;
        let b = project_quadric_bbox(&view.intrinsics, &t_cw, &q)?;
        Some((id, iou_2d(&det.bbox, &b)))
    }))?;
    let label_ok = db.landmark(id).is_some_and(|lm| lm.label == det.label);
    (iou > delta2 && label_ok).then_some((id, iou))
}

/// Fraction of a landmark's in-image projected points that fall inside `bbox`.
pub fn point_ratio(
    db: &MapDatabase,
    id: LandmarkId,
    bbox: &Box2D,
    intrinsics: &CameraIntrinsics,
    t_cw: &SE3Pose,
) -> Option<f64> {
    let lm = db.landmark(id)?;
    let mut in_image = 0usize;
    let mut inside = 0usize;
    for pid in &lm.points {
        let Some(p) = db.point(*pid) else { continue };
        let Some(px) = project_point(intrinsics, t_cw, &p.position) else {
            continue;
        };
        if intrinsics.in_image(&px) {
            in_image += 1;
            if bbox.contains(&px) {
                inside += 1;
            }
        }
    }
    (in_image > 0).then(|| inside as f64 / in_image as f64)
}

/// Level 4: projected map-point ratio for landmarks without ellipsoids.
pub fn verify_point_backproj_num(
    det: &Detection,
    candidates: &[LandmarkId],
    db: &MapDatabase,
    view: &FrameView,
    delta3: f64,
) -> Option<(LandmarkId, f64)> {
    let t_cw = view.pose.inverse();
    let (id, ratio) = argmax(candidates.iter().filter_map(|&id| {
        if db.landmark(id)?.quadric.is_some() {
            return None;
        }
        Some((id, point_ratio(db, id, &det.bbox, &view.intrinsics, &t_cw)?))
    }))?;
    let label_ok = db.landmark(id).is_some_and(|lm| lm.label == det.label);
    (ratio > delta3 && label_ok).then_some((id, ratio))
}

/// Stateful per-session associator; keeps the previous frame's boxes.
#[derive(Debug, Clone)]
pub struct Associator {
    pub method: Method,
    pub intrinsics: CameraIntrinsics,
    last_frame: Option<u64>,
    prev: Vec<(LandmarkId, Box2D)>,
}

impl Associator {
    pub fn new(method: Method, intrinsics: CameraIntrinsics) -> Self {
        Associator {
            method,
            intrinsics,
            last_frame: None,
            prev: Vec::new(),
        }
    }

    fn verify_level(
        &self,
        level: AssociationLevel,
        det: &Detection,
        pool: &[LandmarkId],
        claimed: &BTreeSet<LandmarkId>,
        db: &MapDatabase,
        view: &FrameView,
        cfg: &EngineConfig,
    ) -> Option<(LandmarkId, f64)> {
        use AssociationLevel::*;
        match level {
            FrameIou => verify_2d_frame_iou(det, &self.prev, db, claimed, cfg.frame_iou_threshold),
            LabelPosterior => verify_label_posterior(det, pool, db, view, cfg),
            QuadricIou => verify_quadric_backproj_iou(det, pool, db, view, cfg.quadric_iou_threshold),
            PointRatio => verify_point_backproj_num(det, pool, db, view, cfg.point_ratio_threshold),
            Assignment | NewLandmark => None,
        }
    }

    /// Runs the levels in order over the whole frame. Every detection gets a
    /// chance at a level before any detection falls through to the next one;
    /// within a level, conflicting claims go to the higher score.
    fn cascade(
        &self,
        frame: &Frame,
        window: &BTreeSet<LandmarkId>,
        db: &MapDatabase,
        view: &FrameView,
        cfg: &EngineConfig,
    ) -> Vec<Option<(LandmarkId, AssociationLevel, f64)>> {
        use AssociationLevel::*;
        let mut out = vec![None; frame.detections.len()];
        let mut claimed = BTreeSet::new();
        for level in [FrameIou, LabelPosterior, QuadricIou, PointRatio] {
            if !self.method.uses(level) {
                continue;
            }
            loop {
                let pool: Vec<LandmarkId> = window.iter().filter(|id| !claimed.contains(*id)).copied().collect();
                let mut proposals: Vec<(usize, LandmarkId, f64)> = frame
                    .detections
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| out[*i].is_none())
                    .filter_map(|(i, det)| {
                        self.verify_level(level, det, &pool, &claimed, db, view, cfg)
                            .map(|(id, s)| (i, id, s))
                    })
                    .collect();
                if proposals.is_empty() {
                    break;
                }
                proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
                for (i, id, s) in proposals {
                    if claimed.insert(id) {
                        out[i] = Some((id, level, s));
                    }
                }
            }
        }
        out
    }

    /// Associates every detection of `frame`, updates the map and stores the
    /// frame as a keyframe when the keyframe policy fires.
    pub fn associate_frame(
        &mut self,
        frame: &Frame,
        db: &mut MapDatabase,
        cfg: &EngineConfig,
    ) -> Result<AssociationResult, AssocError> {
        if let Some(previous) = self.last_frame {
            if frame.frame_id <= previous {
                return Err(AssocError::OutOfOrder {
                    previous,
                    got: frame.frame_id,
                });
            }
        }
        frame.validate()?;
        db.set_window_capacity(cfg.window_size);
        // only the matching decision is timed; map upkeep is common to all methods
        let start = Instant::now();
        let view = FrameView {
            frame_id: frame.frame_id,
            pose: frame.pose,
            intrinsics: self.intrinsics,
        };

        let matches: Vec<Option<(LandmarkId, AssociationLevel, f64)>> = if self.method == Method::Jda {
            baseline::jda_assign(frame, db, &view, &cfg.jda)
                .into_iter()
                .map(|m| m.map(|(id, cost)| (id, AssociationLevel::Assignment, cost)))
                .collect()
        } else {
            let window = db.sliding_window_landmarks(frame.frame_id, cfg.window_size, &[]);
            self.cascade(frame, &window, db, &view, cfg)
        };
        let elapsed_us = start.elapsed().as_secs_f64() * 1e6;

        let mut outcomes = Vec::with_capacity(frame.detections.len());
        for (det, m) in frame.detections.iter().zip(matches) {
            let outcome = match m {
                Some((landmark, level, score)) => {
                    db.update_landmark(landmark, det, &view, cfg)?;
                    Outcome {
                        detection: det.index,
                        landmark,
                        level,
                        score,
                    }
                }
                None => Outcome {
                    detection: det.index,
                    landmark: db.create_landmark(det, &view, cfg),
                    level: AssociationLevel::NewLandmark,
                    score: 0.0,
                },
            };
            outcomes.push(outcome);
        }

        let keyframe = if keyframe_due(frame, db, cfg) {
            let associations = outcomes
                .iter()
                .map(|o| {
                    Some(Association {
                        landmark: o.landmark,
                        level: o.level,
                        score: o.score,
                    })
                })
                .collect();
            let kf = KeyFrame::new(
                KeyFrameId(frame.frame_id),
                frame.pose,
                self.intrinsics,
                frame.detections.clone(),
                associations,
            );
            Some(db.insert_keyframe(kf)?)
        } else {
            None
        };
        db.record_frame(frame.frame_id, outcomes.iter().map(|o| o.landmark).collect());

        self.prev = outcomes
            .iter()
            .map(|o| (o.landmark, frame.detections[o.detection].bbox))
            .collect();
        self.prev.sort_by_key(|(id, _)| *id);
        self.last_frame = Some(frame.frame_id);
        Ok(AssociationResult {
            frame_id: frame.frame_id,
            keyframe,
            outcomes,
            elapsed_us,
        })
    }
}

/// Pixel distance between a box center and a projected point, if it projects.
pub fn projected_distance(
    intrinsics: &CameraIntrinsics,
    t_cw: &SE3Pose,
    bbox: &Box2D,
    world: &nalgebra::Vector3<f64>,
) -> Option<f64> {
    let px: Vector2<f64> = project_point(intrinsics, t_cw, world)?;
    Some((px - bbox.center()).norm())
}
