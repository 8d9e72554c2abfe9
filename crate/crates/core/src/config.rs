//! Engine parameters shared by association, loop detection and evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

fn check(ok: bool, field: &'static str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError {
            field,
            reason: reason.to_string(),
        })
    }
}

/// How the rotation indicator of a vector pair enters the topology score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationMeasure {
    /// `trace(R) / 3`, equal to 1 at identity.
    #[default]
    Trace,
    /// Frobenius norm (√3 for every rotation).
    Frobenius,
    /// Spectral norm (1 for every rotation).
    Spectral,
}

/// How the start-point offset enters the topology score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TranslationMeasure {
    /// Offset length divided by the current-frame vector length.
    #[default]
    Relative,
    /// Raw offset length in meters.
    Meters,
}

/// Weights of the joint-assignment baseline cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JdaWeights {
    pub label_penalty: f64,
    /// Multiplies the pixel distance normalized by the image diagonal.
    pub distance_weight: f64,
    pub iou_weight: f64,
    /// Cost of leaving a detection unassigned.
    pub gate: f64,
}

impl Default for JdaWeights {
    fn default() -> Self {
        JdaWeights {
            label_penalty: 1.0,
            distance_weight: 1.0,
            iou_weight: 1.0,
            gate: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// δ1: frame-to-frame IoU threshold.
    pub frame_iou_threshold: f64,
    /// δ2: quadric back-projection IoU threshold.
    pub quadric_iou_threshold: f64,
    /// δ3: projected point ratio threshold.
    pub point_ratio_threshold: f64,
    /// M: number of keyframes in the sliding window.
    pub window_size: usize,
    /// Th_objs: minimum co-observed landmarks for a loop candidate.
    pub min_shared_objects: usize,
    /// Th_ids: minimum keyframe id gap for a loop candidate.
    pub min_id_gap: u64,
    /// Th_score: normalized similarity threshold.
    pub score_threshold: f64,
    /// N_consist: consecutive keyframes that must agree before a loop is accepted.
    pub consistency_count: usize,
    /// α: concentration of the label prior.
    pub dirichlet_alpha: f64,
    /// σ_pos: pixel scale of the centroid projection likelihood.
    pub position_sigma_px: f64,
    /// L: number of object classes.
    pub num_classes: usize,
    /// Quality ρ of landmarks whose detections carry none.
    pub default_quality: f64,
    /// Depth used to back-project a box center when nothing else is known.
    pub default_depth: f64,
    /// Observations before a landmark adopts quadric parameters.
    pub quadric_min_observations: u32,
    pub max_points_per_landmark: usize,
    /// Keyframe policy: translation (m) or rotation (deg) since the last keyframe.
    pub keyframe_translation: f64,
    pub keyframe_rotation_deg: f64,
    pub rotation_measure: RotationMeasure,
    pub translation_measure: TranslationMeasure,
    /// Estimate scale in the loop alignment.
    pub align_with_scale: bool,
    /// Apply loop corrections to the map and to subsequent frames.
    pub apply_correction: bool,
    /// Corrections smaller than both floors are logged but not applied, so
    /// repeated revisits do not integrate alignment noise.
    pub correction_min_translation: f64,
    pub correction_min_rotation_deg: f64,
    pub jda: JdaWeights,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            frame_iou_threshold: 0.5,
            quadric_iou_threshold: 0.4,
            point_ratio_threshold: 0.5,
            window_size: 10,
            min_shared_objects: 3,
            min_id_gap: 1000,
            score_threshold: 0.8,
            consistency_count: 3,
            dirichlet_alpha: 1.0,
            position_sigma_px: 20.0,
            num_classes: 10,
            default_quality: 1.0,
            default_depth: 3.0,
            quadric_min_observations: 3,
            max_points_per_landmark: 64,
            keyframe_translation: 0.05,
            keyframe_rotation_deg: 5.0,
            rotation_measure: RotationMeasure::Trace,
            translation_measure: TranslationMeasure::Relative,
            align_with_scale: true,
            apply_correction: true,
            correction_min_translation: 0.05,
            correction_min_rotation_deg: 2.0,
            jda: JdaWeights::default(),
        }
    }
}

/// Named parameter presets for the loop filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Three shared objects, 1000-id gap.
    PaperC1,
    /// Two shared objects, 500-id gap.
    PaperC2,
}

impl EngineConfig {
    pub fn with_preset(mut self, preset: Preset) -> Self {
        match preset {
            Preset::PaperC1 => {
                self.min_shared_objects = 3;
                self.min_id_gap = 1000;
            }
            Preset::PaperC2 => {
                self.min_shared_objects = 2;
                self.min_id_gap = 500;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        check(unit_open(self.frame_iou_threshold), "frame_iou_threshold", "must lie in (0, 1)")?;
        check(unit_open(self.quadric_iou_threshold), "quadric_iou_threshold", "must lie in (0, 1)")?;
        check(unit_open(self.point_ratio_threshold), "point_ratio_threshold", "must lie in (0, 1)")?;
        check(unit_open(self.score_threshold), "score_threshold", "must lie in (0, 1)")?;
        check(self.window_size >= 1, "window_size", "must be at least 1")?;
        check(self.min_shared_objects >= 1, "min_shared_objects", "must be at least 1")?;
        check(self.consistency_count >= 1, "consistency_count", "must be at least 1")?;
        check(self.dirichlet_alpha > 0.0, "dirichlet_alpha", "must be positive")?;
        check(self.position_sigma_px > 0.0, "position_sigma_px", "must be positive")?;
        check(self.num_classes >= 1, "num_classes", "must be at least 1")?;
        check(
            self.default_quality > 0.0 && self.default_quality <= 1.0,
            "default_quality",
            "must lie in (0, 1]",
        )?;
        check(self.default_depth > 0.0, "default_depth", "must be positive")?;
        check(self.quadric_min_observations >= 1, "quadric_min_observations", "must be at least 1")?;
        check(self.max_points_per_landmark >= 1, "max_points_per_landmark", "must be at least 1")?;
        check(self.keyframe_translation >= 0.0, "keyframe_translation", "must be non-negative")?;
        check(self.keyframe_rotation_deg >= 0.0, "keyframe_rotation_deg", "must be non-negative")?;
        check(self.correction_min_translation >= 0.0, "correction_min_translation", "must be non-negative")?;
        check(self.correction_min_rotation_deg >= 0.0, "correction_min_rotation_deg", "must be non-negative")?;
        check(self.jda.gate > 0.0, "jda.gate", "must be positive")?;
        check(
            self.jda.label_penalty >= 0.0 && self.jda.distance_weight >= 0.0 && self.jda.iou_weight >= 0.0,
            "jda",
            "weights must be non-negative",
        )?;
        Ok(())
    }
}
