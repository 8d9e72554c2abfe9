//! Deterministic synthetic scenes: ellipsoidal objects, camera trajectories,
//! noisy detection streams with ground truth, and reference loop pairs.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{project_quadric_bbox, Box2D, CameraIntrinsics, DualQuadric, GeomError, SE3Pose};
use crate::mapdb::{ClassId, Detection, Frame, KeyFrameId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("trajectory needs at least one waypoint")]
    NoWaypoints,
    #[error("trajectory produces no frames")]
    NoFrames,
    #[error("object {index}: {source}")]
    Object { index: usize, source: GeomError },
    #[error("object {0}: quality must lie in (0, 1]")]
    Quality(usize),
    #[error("noise model: {0}")]
    Noise(&'static str),
    #[error("camera: {0}")]
    Camera(GeomError),
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn default_point_count() -> usize {
    48
}

fn default_quality() -> f64 {
    1.0
}

/// One ellipsoidal object of the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: ClassId,
    pub center: [f64; 3],
    pub half_axes: [f64; 3],
    /// Orientation quaternion `[w, x, y, z]`.
    #[serde(default = "identity_quaternion")]
    pub q: [f64; 4],
    /// Number of surface points sampled on the ellipsoid.
    #[serde(default = "default_point_count")]
    pub points: usize,
    /// Quality score reported with the object's detections.
    #[serde(default = "default_quality")]
    pub quality: f64,
}

impl ObjectSpec {
    pub fn new(label: u32, center: [f64; 3], half_axes: [f64; 3]) -> Self {
        ObjectSpec {
            label: ClassId(label),
            center,
            half_axes,
            q: identity_quaternion(),
            points: default_point_count(),
            quality: default_quality(),
        }
    }

    pub fn quadric(&self) -> Result<DualQuadric, GeomError> {
        let pose = SE3Pose::from_quaternion_wxyz(self.center, self.q);
        DualQuadric::new(pose.translation, Vector3::from(self.half_axes), pose.rotation)
    }

    /// Deterministic surface samples (Fibonacci sphere scaled by the half-axes)
    /// with their outward normals, in world coordinates.
    pub fn surface_points(&self) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>, GeomError> {
        let q = self.quadric()?;
        let n = self.points;
        let golden = PI * (3.0 - 5f64.sqrt());
        Ok((0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let u = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                let local = u.component_mul(&q.half_axes);
                let normal = u.component_div(&q.half_axes).normalize();
                (q.orientation * local + q.center, q.orientation * normal)
            })
            .collect())
    }
}

/// Camera path. All variants use a world frame with +z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Circle around `center` at `height` above it, always looking at `center`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        height: f64,
        laps: f64,
        frames_per_lap: usize,
        #[serde(default)]
        start_angle: f64,
    },
    /// Straight segment traversed at constant speed with a fixed viewing direction.
    Line {
        start: [f64; 3],
        end: [f64; 3],
        look: [f64; 3],
        frames: usize,
    },
    /// Piecewise-linear path through `positions`, looking at `target`.
    Waypoints {
        positions: Vec<[f64; 3]>,
        target: [f64; 3],
        frames_per_segment: usize,
    },
    /// Lemniscate around `center`, looking along the direction of travel.
    FigureEight {
        center: [f64; 3],
        radius: f64,
        height: f64,
        laps: f64,
        frames_per_lap: usize,
    },
    /// Concatenation of other trajectories.
    Sequence { parts: Vec<Trajectory> },
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

fn looking(eye: Vector3<f64>, dir: Vector3<f64>) -> SE3Pose {
    SE3Pose::look_at(eye, eye + dir, Vector3::z())
}

impl Trajectory {
    pub fn generate(&self) -> Result<Vec<SE3Pose>, SimError> {
        let poses = match self {
            Trajectory::Orbit {
                center,
                radius,
                height,
                laps,
                frames_per_lap,
                start_angle,
            } => {
                let c = v3(*center);
                let n = (laps * *frames_per_lap as f64).round() as usize;
                (0..n)
                    .map(|i| {
                        let a = start_angle + TAU * (i % frames_per_lap) as f64 / *frames_per_lap as f64;
                        let eye = c + Vector3::new(radius * a.cos(), radius * a.sin(), *height);
                        SE3Pose::look_at(eye, c, Vector3::z())
                    })
                    .collect()
            }
            Trajectory::Line {
                start,
                end,
                look,
                frames,
            } => {
                let (s, e) = (v3(*start), v3(*end));
                (0..*frames)
                    .map(|i| {
                        let f = if *frames > 1 { i as f64 / (*frames - 1) as f64 } else { 0.0 };
                        looking(s + (e - s) * f, v3(*look))
                    })
                    .collect()
            }
            Trajectory::Waypoints {
                positions,
                target,
                frames_per_segment,
            } => {
                let target = v3(*target);
                match positions.as_slice() {
                    [] => return Err(SimError::NoWaypoints),
                    [only] => (0..*frames_per_segment)
                        .map(|_| SE3Pose::look_at(v3(*only), target, Vector3::z()))
                        .collect(),
                    many => many
                        .windows(2)
                        .flat_map(|w| {
                            let (a, b) = (v3(w[0]), v3(w[1]));
                            (0..*frames_per_segment).map(move |i| {
                                let f = i as f64 / *frames_per_segment as f64;
                                SE3Pose::look_at(a + (b - a) * f, target, Vector3::z())
                            })
                        })
                        .collect(),
                }
            }
            Trajectory::FigureEight {
                center,
                radius,
                height,
                laps,
                frames_per_lap,
            } => {
                let c = v3(*center) + Vector3::new(0.0, 0.0, *height);
                let point = |a: f64| c + Vector3::new(radius * a.sin(), radius * a.sin() * a.cos(), 0.0);
                let n = (laps * *frames_per_lap as f64).round() as usize;
                (0..n)
                    .map(|i| {
                        let a = TAU * (i % frames_per_lap) as f64 / *frames_per_lap as f64;
                        let eye = point(a);
                        let tangent = Vector3::new(radius * a.cos(), radius * (2.0 * a).cos(), 0.0);
                        looking(eye, tangent)
                    })
                    .collect()
            }
            Trajectory::Sequence { parts } => {
                let mut all = Vec::new();
                for p in parts {
                    all.extend(p.generate()?);
                }
                all
            }
        };
        if poses.is_empty() {
            return Err(SimError::NoFrames);
        }
        Ok(poses)
    }
}

/// Slowly growing translation error added to the reported poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub translation: [f64; 3],
    pub start_frame: u64,
    pub ramp_frames: u64,
}

impl Drift {
    pub fn at(&self, frame: u64) -> Vector3<f64> {
        let f = if frame <= self.start_frame {
            0.0
        } else if self.ramp_frames == 0 {
            1.0
        } else {
            ((frame - self.start_frame) as f64 / self.ramp_frames as f64).min(1.0)
        };
        v3(self.translation) * f
    }
}

/// An object hidden from the detector for a span of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOcclusion {
    pub object: usize,
    pub start_frame: u64,
    pub frames: u64,
}

fn default_overlap() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Probability of dropping a visible object.
    pub fn_prob: f64,
    /// Mean number of spurious detections per frame.
    pub fp_rate: f64,
    /// Probability of reporting a wrong class.
    pub flip_prob: f64,
    /// Standard deviation of box corner jitter, pixels.
    pub jitter_px: f64,
    /// Suppress farther boxes hidden behind nearer ones.
    pub occlusion: bool,
    #[serde(default = "default_overlap")]
    pub occlusion_overlap: f64,
    /// Per-frame pose noise (m, rad).
    pub pose_sigma_t: f64,
    pub pose_sigma_r: f64,
    /// Noise on reported camera-frame points and ellipsoid centers (m).
    pub observation_sigma: f64,
    pub drift: Option<Drift>,
    pub scripted: Vec<ScriptedOcclusion>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            fn_prob: 0.0,
            fp_rate: 0.0,
            flip_prob: 0.0,
            jitter_px: 0.0,
            occlusion: false,
            occlusion_overlap: default_overlap(),
            pose_sigma_t: 0.0,
            pose_sigma_r: 0.0,
            observation_sigma: 0.0,
            drift: None,
            scripted: Vec::new(),
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel::default()
    }

    /// FN 0.15, 0.5 FP per frame, 5 % label flips, 2 px jitter.
    pub fn standard() -> Self {
        NoiseModel {
            fn_prob: 0.15,
            fp_rate: 0.5,
            flip_prob: 0.05,
            jitter_px: 2.0,
            ..NoiseModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.fn_prob) || !prob(self.flip_prob) || !prob(self.occlusion_overlap) {
            return Err(SimError::Noise("probabilities must lie in [0, 1]"));
        }
        if !(self.fp_rate >= 0.0 && self.jitter_px >= 0.0 && self.pose_sigma_t >= 0.0 && self.pose_sigma_r >= 0.0 && self.observation_sigma >= 0.0) {
            return Err(SimError::Noise("rates and deviations must be non-negative"));
        }
        Ok(())
    }
}

fn default_classes() -> u32 {
    10
}

fn default_max_range() -> f64 {
    8.0
}

fn default_min_box() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_classes")]
    pub num_classes: u32,
    /// Detector range limit (m, camera depth of the object center).
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    /// Boxes with a side shorter than this many pixels are not detected.
    #[serde(default = "default_min_box")]
    pub min_box_px: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.camera.validate().map_err(SimError::Camera)?;
        for (index, o) in self.objects.iter().enumerate() {
            o.quadric().map_err(|source| SimError::Object { index, source })?;
            if !(o.quality > 0.0 && o.quality <= 1.0) {
                return Err(SimError::Quality(index));
            }
        }
        if !(self.max_range > 0.0 && self.min_box_px >= 0.0) {
            return Err(SimError::Noise("detector range must be positive and box size non-negative"));
        }
        self.noise.validate()
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame_id: u64,
    /// True camera pose.
    pub pose: SE3Pose,
    /// Object index per emitted detection; `None` marks a false positive.
    pub objects: Vec<Option<usize>>,
    /// Objects in view before any noise.
    pub visible: Vec<usize>,
    /// Visible objects suppressed by occlusion.
    pub occluded: Vec<usize>,
}

/// Per-object geometry precomputed once per scene.
#[derive(Debug, Clone)]
pub struct PreparedObject {
    pub label: ClassId,
    pub quadric: DualQuadric,
    pub surface: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub quality: f64,
}

pub fn prepare_objects(spec: &SceneSpec) -> Result<Vec<PreparedObject>, SimError> {
    spec.objects
        .iter()
        .enumerate()
        .map(|(index, o)| {
            let err = |source| SimError::Object { index, source };
            Ok(PreparedObject {
                label: o.label,
                quadric: o.quadric().map_err(err)?,
                surface: o.surface_points().map_err(err)?,
                quality: o.quality,
            })
        })
        .collect()
}

/// Random generator for one frame: independent of the order frames are rendered in.
pub fn frame_rng(seed: u64, frame_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id);
    rng
}

fn perturbed_pose(truth: &SE3Pose, noise: &NoiseModel, frame_id: u64, rng: &mut ChaCha8Rng) -> SE3Pose {
    let mut pose = *truth;
    if noise.pose_sigma_t > 0.0 || noise.pose_sigma_r > 0.0 {
        let nt = Normal::new(0.0, noise.pose_sigma_t.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let nr = Normal::new(0.0, noise.pose_sigma_r.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let dt = Vector3::new(nt.sample(rng), nt.sample(rng), nt.sample(rng));
        let dr = Vector3::new(nr.sample(rng), nr.sample(rng), nr.sample(rng));
        pose = SE3Pose::new(Rotation3::new(dr) * pose.rotation, pose.translation + dt);
    }
    if let Some(d) = &noise.drift {
        pose.translation += d.at(frame_id);
    }
    pose
}

/// Renders the detections of one frame seen from `truth_pose`.
///
/// Noise is applied in a fixed order: visibility, occlusion, false negatives,
/// jitter, label flips, false positives.
pub fn render_frame(
    spec: &SceneSpec,
    objects: &[PreparedObject],
    frame_id: u64,
    truth_pose: &SE3Pose,
    rng: &mut ChaCha8Rng,
) -> (Frame, TruthRecord) {
    let cam = &spec.camera;
    let noise = &spec.noise;
    let t_cw = truth_pose.inverse();
    let eye = truth_pose.translation;

    // (object, depth, box) for objects whose center is in front and inside the image
    let mut visible: Vec<(usize, f64, Box2D)> = objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let c = t_cw.transform_point(&o.quadric.center);
            let px = cam.project_camera(&c)?;
            if !cam.in_image(&px) {
                return None;
            }
            if c.z > spec.max_range {
                return None;
            }
            let b = project_quadric_bbox(cam, &t_cw, &o.quadric)?;
            if b.width().min(b.height()) < spec.min_box_px {
                return None;
            }
            Some((i, c.z, b))
        })
        .collect();
    visible.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let visible_ids: Vec<usize> = {
        let mut v: Vec<usize> = visible.iter().map(|v| v.0).collect();
        v.sort_unstable();
        v
    };

    let mut occluded = Vec::new();
    let mut kept: Vec<(usize, f64, Box2D)> = Vec::with_capacity(visible.len());
    for (i, depth, b) in visible {
        let hidden_by_script = noise
            .scripted
            .iter()
            .any(|s| s.object == i && frame_id >= s.start_frame && frame_id < s.start_frame + s.frames);
        let hidden_by_nearer = noise.occlusion
            && kept
                .iter()
                .any(|(_, _, near)| near.intersection_area(&b) > noise.occlusion_overlap * b.area());
        if hidden_by_script || hidden_by_nearer {
            occluded.push(i);
        } else {
            kept.push((i, depth, b));
        }
    }
    occluded.sort_unstable();
    kept.sort_by_key(|k| k.0);

    let mut dets: Vec<(Detection, Option<usize>)> = Vec::new();
    let jitter = Normal::new(0.0, noise.jitter_px.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for (i, _, b) in kept {
        // false negative draw happens for every object so streams stay aligned
        if rng.random::<f64>() < noise.fn_prob {
            continue;
        }
        let mut bbox = b;
        if noise.jitter_px > 0.0 {
            let j: [f64; 4] = std::array::from_fn(|_| jitter.sample(rng));
            bbox = Box2D::new(b.u_min + j[0], b.v_min + j[1], b.u_max + j[2], b.v_max + j[3]);
        }
        let obj = &objects[i];
        let mut label = obj.label;
        if noise.flip_prob > 0.0 && rng.random::<f64>() < noise.flip_prob && spec.num_classes > 1 {
            let other = rng.random_range(0..spec.num_classes - 1);
            label = ClassId(if other >= obj.label.0 { other + 1 } else { other });
        }
        let confidence = rng.random_range(0.7..1.0);
        let mut points: Vec<Vector3<f64>> = obj
            .surface
            .iter()
            .filter(|(p, n)| n.dot(&(eye - p)) > 0.0)
            .map(|(p, _)| t_cw.transform_point(p))
            .filter(|c| cam.project_camera(c).is_some_and(|px| cam.in_image(&px)))
            .collect();
        let mut quadric = obj.quadric.transformed(&t_cw);
        if noise.observation_sigma > 0.0 {
            let n = Normal::new(0.0, noise.observation_sigma).expect("valid sigma");
            let mut offset = || Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            quadric.center += offset();
            for p in &mut points {
                *p += offset();
            }
        }
        let mut det = Detection::new(bbox, label, confidence);
        det.points = points;
        det.quadric = Some(quadric);
        det.rho = Some(obj.quality);
        dets.push((det, Some(i)));
    }

    if noise.fp_rate > 0.0 {
        let count = Poisson::new(noise.fp_rate).expect("positive rate").sample(rng) as usize;
        for _ in 0..count {
            let w = rng.random_range(20.0..120.0);
            let h = rng.random_range(20.0..120.0);
            let c = Vector2::new(rng.random_range(0.0..cam.width), rng.random_range(0.0..cam.height));
            let bbox = Box2D::from_center(c, w / 2.0, h / 2.0)
                .clip(cam.width, cam.height)
                .unwrap_or_else(|| Box2D::from_center(c, 1.0, 1.0));
            let label = ClassId(rng.random_range(0..spec.num_classes));
            let confidence = rng.random_range(0.3..0.65);
            dets.push((Detection::new(bbox, label, confidence), None));
        }
    }

    dets.sort_by(|a, b| b.0.confidence.total_cmp(&a.0.confidence));
    let objects_of: Vec<Option<usize>> = dets.iter().map(|d| d.1).collect();
    let pose = perturbed_pose(truth_pose, noise, frame_id, rng);
    let frame = Frame::new(frame_id, pose, dets.into_iter().map(|d| d.0).collect());
    let truth = TruthRecord {
        frame_id,
        pose: *truth_pose,
        objects: objects_of,
        visible: visible_ids,
        occluded,
    };
    (frame, truth)
}

/// Full simulated stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub frames: Vec<Frame>,
    pub truth: Vec<TruthRecord>,
}

pub fn generate_trajectory(spec: &SceneSpec) -> Result<Vec<SE3Pose>, SimError> {
    spec.trajectory.generate()
}

pub fn simulate(spec: &SceneSpec) -> Result<SimOutput, SimError> {
    spec.validate()?;
    let objects = prepare_objects(spec)?;
    let poses = generate_trajectory(spec)?;
    let (frames, truth) = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let id = i as u64;
            render_frame(spec, &objects, id, pose, &mut frame_rng(spec.seed, id))
        })
        .unzip();
    Ok(SimOutput { frames, truth })
}

/// Gates defining which keyframe pairs count as true revisits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCriteria {
    pub max_distance: f64,
    pub max_angle_deg: f64,
    pub min_id_gap: u64,
}

impl LoopCriteria {
    /// Within 3 m and 80°, at least 1000 ids apart.
    pub fn standard() -> Self {
        LoopCriteria {
            max_distance: 3.0,
            max_angle_deg: 80.0,
            min_id_gap: 1000,
        }
    }

    /// Within 1 m and 53°, at least 1000 ids apart.
    pub fn tight() -> Self {
        LoopCriteria {
            max_distance: 1.0,
            max_angle_deg: 53.0,
            min_id_gap: 1000,
        }
    }

    pub fn matches(&self, a: (KeyFrameId, &SE3Pose), b: (KeyFrameId, &SE3Pose)) -> bool {
        a.0 .0.abs_diff(b.0 .0) >= self.min_id_gap
            && a.1.distance_to(b.1) <= self.max_distance
            && a.1.angle_to(b.1).to_degrees() <= self.max_angle_deg
    }
}

/// All keyframe pairs `(later, earlier)` meeting the criteria, ordered by later id then earlier id.
pub fn reference_loops(keyframes: &[(KeyFrameId, SE3Pose)], criteria: &LoopCriteria) -> Vec<(KeyFrameId, KeyFrameId)> {
    let mut sorted: Vec<&(KeyFrameId, SE3Pose)> = keyframes.iter().collect();
    sorted.sort_by_key(|k| k.0);
    let mut out = Vec::new();
    for (i, (later, pl)) in sorted.iter().map(|k| (k.0, &k.1)).enumerate() {
        for (earlier, pe) in sorted[..i].iter().map(|k| (k.0, &k.1)) {
            if criteria.matches((later, pl), (earlier, pe)) {
                out.push((later, earlier));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(objects: Vec<ObjectSpec>, trajectory: Trajectory, noise: NoiseModel) -> SceneSpec {
        SceneSpec {
            name: "test".into(),
            objects,
            trajectory,
            camera: CameraIntrinsics::default(),
            noise,
            seed: 7,
            num_classes: 10,
            max_range: 8.0,
            min_box_px: 4.0,
        }
    }

    fn static_view(frames: usize) -> Trajectory {
        Trajectory::Waypoints {
            positions: vec![[0.0, -4.0, 0.0]],
            target: [0.0, 0.0, 0.0],
            frames_per_segment: frames,
        }
    }

    #[test]
    fn orbit_revisits_start() {
        let t = Trajectory::Orbit {
            center: [0.0; 3],
            radius: 3.0,
            height: 1.0,
            laps: 2.0,
            frames_per_lap: 500,
            start_angle: 0.0,
        };
        let poses = t.generate().unwrap();
        assert_eq!(poses.len(), 1000);
        assert!(poses[0].distance_to(&poses[500]) < 1e-9);
        assert!(poses[0].angle_to(&poses[500]) < 1e-9);
    }

    #[test]
    fn single_waypoint_is_static_and_empty_is_rejected() {
        let poses = static_view(5).generate().unwrap();
        assert!(poses.windows(2).all(|w| w[0] == w[1]));
        let empty = Trajectory::Waypoints {
            positions: vec![],
            target: [0.0; 3],
            frames_per_segment: 3,
        };
        assert_eq!(empty.generate(), Err(SimError::NoWaypoints));
    }

    #[test]
    fn figure_eight_crosses_itself() {
        let t = Trajectory::FigureEight {
            center: [0.0; 3],
            radius: 2.0,
            height: 0.5,
            laps: 1.0,
            frames_per_lap: 400,
        };
        let poses = t.generate().unwrap();
        // passes through the center at a = 0 and a = π
        assert!(poses[0].translation.xy().norm() < 1e-12);
        assert!(poses[200].translation.xy().norm() < 1e-9);
        // heading differs between the two passes
        assert!(poses[0].angle_to(&poses[200]) > 1.0);
    }

    #[test]
    fn noiseless_on_axis_object_gives_analytic_box() {
        let s = scene(vec![ObjectSpec::new(2, [0.0, 0.0, 0.0], [0.5, 0.5, 0.5])], static_view(1), NoiseModel::noiseless());
        let out = simulate(&s).unwrap();
        let f = &out.frames[0];
        assert_eq!(f.detections.len(), 1);
        let half = 500.0 * 0.5 / (16.0f64 - 0.25).sqrt();
        let b = f.detections[0].bbox;
        assert!((b.width() / 2.0 - half).abs() < 1e-9);
        assert!((b.center() - Vector2::new(320.0, 240.0)).norm() < 1e-9);
        assert_eq!(out.truth[0].objects, vec![Some(0)]);
        assert!(!f.detections[0].points.is_empty());
    }

    #[test]
    fn certain_false_negatives_keep_visibility_in_truth() {
        let noise = NoiseModel {
            fn_prob: 1.0,
            ..NoiseModel::default()
        };
        let s = scene(vec![ObjectSpec::new(2, [0.0, 0.0, 0.0], [0.5, 0.5, 0.5])], static_view(3), noise);
        let out = simulate(&s).unwrap();
        assert!(out.frames.iter().all(|f| f.detections.is_empty()));
        assert!(out.truth.iter().all(|t| t.visible == vec![0]));
    }

    #[test]
    fn occlusion_keeps_nearer_object() {
        let noise = NoiseModel {
            occlusion: true,
            ..NoiseModel::default()
        };
        let objects = vec![
            ObjectSpec::new(1, [0.0, 2.0, 0.0], [0.3, 0.3, 0.3]),
            ObjectSpec::new(2, [0.0, -1.0, 0.0], [0.3, 0.3, 0.3]),
        ];
        let s = scene(objects, static_view(1), noise);
        let out = simulate(&s).unwrap();
        assert_eq!(out.truth[0].objects, vec![Some(1)]);
        assert_eq!(out.truth[0].occluded, vec![0]);
    }

    #[test]
    fn same_seed_same_stream() {
        let objects = (0..5)
            .map(|i| ObjectSpec::new(i, [0.3 * i as f64 - 0.6, 0.0, 0.0], [0.1, 0.1, 0.1]))
            .collect();
        let s = scene(objects, static_view(50), NoiseModel::standard());
        let a = simulate(&s).unwrap();
        let b = simulate(&s).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(simulate(&other).unwrap().frames, a.frames);
    }

    #[test]
    fn reference_loop_examples() {
        let still: Vec<_> = (0..5).map(|i| (KeyFrameId(i * 600), SE3Pose::identity())).collect();
        let refs = reference_loops(&still, &LoopCriteria::standard());
        // gaps of ≥1000 among 0,600,1200,1800,2400
        assert_eq!(refs.len(), 6);

        let line: Vec<_> = (0..50)
            .map(|i| (KeyFrameId(i * 100), SE3Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0))))
            .collect();
        assert!(reference_loops(&line, &LoopCriteria::standard()).is_empty());

        let t = Trajectory::Orbit {
            center: [0.0; 3],
            radius: 3.0,
            height: 0.0,
            laps: 2.0,
            frames_per_lap: 1500,
            start_angle: 0.0,
        };
        let kfs: Vec<_> = t.generate().unwrap().into_iter().enumerate().map(|(i, p)| (KeyFrameId(i as u64), p)).collect();
        let refs = reference_loops(&kfs, &LoopCriteria::tight());
        assert!(!refs.is_empty());
        // revisits sit near whole-lap offsets; 1 m on a 3 m circle is about 19°
        assert!(refs.iter().all(|(a, b)| {
            let d = (a.0 - b.0) % 1500;
            d.min(1500 - d) <= 1500 * 20 / 360
        }));
    }

    #[test]
    fn drift_ramps_linearly() {
        let d = Drift {
            translation: [0.3, 0.0, 0.0],
            start_frame: 100,
            ramp_frames: 200,
        };
        assert_eq!(d.at(50), Vector3::zeros());
        assert!((d.at(200).x - 0.15).abs() < 1e-15);
        assert_eq!(d.at(1000).x, 0.3);
    }
}
