//! Closed-form geometry: boxes, poses, pinhole projection, dual-quadric
//! projection, vector-pair rotation recovery and similarity alignment.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera-frame depth below which a point counts as behind the camera.
pub const EPS_DEPTH: f64 = 1e-6;
/// Minimum length of a vector taking part in a pair transform.
pub const EPS_LEN: f64 = 1e-9;
/// Angular tolerance for the parallel / anti-parallel special cases.
pub const EPS_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("vector shorter than {EPS_LEN} m cannot define a pair transform")]
    InvalidVector,
    #[error("rotation axis must be unit length (norm was {0})")]
    InvalidAxis(f64),
    #[error("insufficient geometry for alignment: {0}")]
    InsufficientGeometry(&'static str),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid quadric: {0}")]
    InvalidQuadric(&'static str),
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
}

// ---------------------------------------------------------------------------
// 2D boxes
// ---------------------------------------------------------------------------

/// Axis-aligned pixel box. Serialized as `[u_min, v_min, u_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl From<[f64; 4]> for Box2D {
    fn from(a: [f64; 4]) -> Self {
        Box2D::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        [b.u_min, b.v_min, b.u_max, b.v_max]
    }
}

impl Box2D {
    /// Builds a box from two corners in any order.
    pub fn new(u1: f64, v1: f64, u2: f64, v2: f64) -> Self {
        Box2D {
            u_min: u1.min(u2),
            v_min: v1.min(v2),
            u_max: u1.max(u2),
            v_max: v1.max(v2),
        }
    }

    pub fn from_center(center: Vector2<f64>, half_w: f64, half_h: f64) -> Self {
        Box2D::new(
            center.x - half_w,
            center.y - half_h,
            center.x + half_w,
            center.y + half_h,
        )
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.u_min.is_finite()
            && self.v_min.is_finite()
            && self.u_max.is_finite()
            && self.v_max.is_finite()
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.u_min && p.x <= self.u_max && p.y >= self.v_min && p.y <= self.v_max
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = self.u_max.min(other.u_max) - self.u_min.max(other.u_min);
        let h = self.v_max.min(other.v_max) - self.v_min.max(other.v_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Restricts the box to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<Box2D> {
        let b = Box2D {
            u_min: self.u_min.clamp(0.0, width),
            v_min: self.v_min.clamp(0.0, height),
            u_max: self.u_max.clamp(0.0, width),
            v_max: self.v_max.clamp(0.0, height),
        };
        (b.width() > 0.0 && b.height() > 0.0).then_some(b)
    }
}

/// Intersection over union; 0 for disjoint boxes or when both are degenerate.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Poses
// ---------------------------------------------------------------------------

/// Rigid transform mapping points from a local frame into a parent frame:
/// `x_parent = R * x_local + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct SE3Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

/// Wire form of a pose: translation plus unit quaternion in `w, x, y, z` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRepr {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<PoseRepr> for SE3Pose {
    fn from(r: PoseRepr) -> Self {
        SE3Pose::from_quaternion_wxyz(r.t, r.q)
    }
}

impl From<SE3Pose> for PoseRepr {
    fn from(p: SE3Pose) -> Self {
        PoseRepr {
            t: [p.translation.x, p.translation.y, p.translation.z],
            q: p.quaternion_wxyz(),
        }
    }
}

impl Default for SE3Pose {
    fn default() -> Self {
        SE3Pose::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        SE3Pose {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        SE3Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SE3Pose::new(Rotation3::identity(), t)
    }

    /// Normalizes the quaternion before use.
    pub fn from_quaternion_wxyz(t: [f64; 3], q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        SE3Pose::new(uq.to_rotation_matrix(), Vector3::new(t[0], t[1], t[2]))
    }

    /// Quaternion `[w, x, y, z]` with non-negative `w`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        rotation_to_wxyz(&self.rotation)
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`
    /// (camera axes: x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // looking along `up`; any perpendicular right vector will do
            x = z.cross(&Vector3::x());
            if x.norm() < 1e-9 {
                x = z.cross(&Vector3::y());
            }
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = Matrix3::from_columns(&[x, y, z]);
        SE3Pose::new(Rotation3::from_matrix_unchecked(m), eye)
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        SE3Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> Self {
        SE3Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Angle of the relative rotation between two poses, radians.
    pub fn angle_to(&self, other: &SE3Pose) -> f64 {
        rotation_angle(&(self.rotation.inverse() * other.rotation))
    }

    pub fn distance_to(&self, other: &SE3Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Checks orthonormality and orientation of the rotation to 1e-9.
    pub fn validate(&self) -> Result<(), GeomError> {
        let m = self.rotation.matrix();
        if !m.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(GeomError::InvalidPose("non-finite entry"));
        }
        if (m.transpose() * m - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(GeomError::InvalidPose("rotation not orthonormal"));
        }
        if (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeomError::InvalidPose("rotation determinant is not +1"));
        }
        Ok(())
    }
}

pub(crate) fn rotation_to_wxyz(r: &Rotation3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

pub(crate) fn wxyz_to_rotation(q: [f64; 4]) -> Rotation3<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
}

/// Rotation angle in `[0, π]`, robust to round-off in the trace.
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SimRepr", into = "SimRepr")]
pub struct Similarity3 {
    pub pose: SE3Pose,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRepr {
    pub t: [f64; 3],
    pub q: [f64; 4],
    pub scale: f64,
}

impl From<SimRepr> for Similarity3 {
    fn from(r: SimRepr) -> Self {
        Similarity3 {
            pose: SE3Pose::from_quaternion_wxyz(r.t, r.q),
            scale: r.scale,
        }
    }
}

impl From<Similarity3> for SimRepr {
    fn from(s: Similarity3) -> Self {
        let p: PoseRepr = s.pose.into();
        SimRepr {
            t: p.t,
            q: p.q,
            scale: s.scale,
        }
    }
}

impl Similarity3 {
    pub fn identity() -> Self {
        Similarity3 {
            pose: SE3Pose::identity(),
            scale: 1.0,
        }
    }

    pub fn from_pose(pose: SE3Pose) -> Self {
        Similarity3 { pose, scale: 1.0 }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.pose.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.pose.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation * (self.scale * p) + self.pose.translation
    }

    pub fn compose(&self, other: &Similarity3) -> Similarity3 {
        Similarity3 {
            pose: SE3Pose::new(
                self.pose.rotation * other.pose.rotation,
                self.scale * (self.pose.rotation * other.pose.translation) + self.pose.translation,
            ),
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Similarity3 {
        let r_inv = self.pose.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        Similarity3 {
            pose: SE3Pose::new(r_inv, -(s_inv * (r_inv * self.pose.translation))),
            scale: s_inv,
        }
    }

    /// Applies the similarity to a camera-to-world pose, keeping the result rigid:
    /// the camera center is mapped through the similarity and the orientation is rotated.
    pub fn apply_to_pose(&self, pose: &SE3Pose) -> SE3Pose {
        SE3Pose::new(self.pose.rotation * pose.rotation, self.apply(&pose.translation))
    }

    /// Fraction `f` of the way from identity, interpolating rotation vector,
    /// log-scale and translation linearly.
    pub fn interpolate(&self, f: f64) -> Similarity3 {
        let rotvec = UnitQuaternion::from_rotation_matrix(&self.pose.rotation).scaled_axis() * f;
        Similarity3 {
            pose: SE3Pose::new(Rotation3::new(rotvec), self.pose.translation * f),
            scale: self.scale.powf(f),
        }
    }
}

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeomError> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(GeomError::InvalidIntrinsics("image size must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn image_box(&self) -> Box2D {
        Box2D::new(0.0, 0.0, self.width, self.height)
    }

    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width && px.y >= 0.0 && px.y <= self.height
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= EPS_DEPTH {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Camera-frame point at `depth` along the ray through pixel `px`.
    pub fn unproject(&self, px: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// Pinhole projection of world point `x` through camera-from-world pose `t_cw`.
/// Returns `None` when the point lies behind the camera.
pub fn project_point(k: &CameraIntrinsics, t_cw: &SE3Pose, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    k.project_camera(&t_cw.transform_point(x))
}

// ---------------------------------------------------------------------------
// Dual quadrics
// ---------------------------------------------------------------------------

/// Ellipsoid kept in decomposed form; the 4×4 dual matrix is derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "QuadricRepr", into = "QuadricRepr")]
pub struct DualQuadric {
    pub center: Vector3<f64>,
    pub half_axes: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadricRepr {
    pub center: [f64; 3],
    pub half_axes: [f64; 3],
    pub q: [f64; 4],
}

impl From<QuadricRepr> for DualQuadric {
    fn from(r: QuadricRepr) -> Self {
        DualQuadric {
            center: Vector3::from(r.center),
            half_axes: Vector3::from(r.half_axes),
            orientation: wxyz_to_rotation(r.q),
        }
    }
}

impl From<DualQuadric> for QuadricRepr {
    fn from(d: DualQuadric) -> Self {
        QuadricRepr {
            center: d.center.into(),
            half_axes: d.half_axes.into(),
            q: rotation_to_wxyz(&d.orientation),
        }
    }
}

impl DualQuadric {
    pub fn new(center: Vector3<f64>, half_axes: Vector3<f64>, orientation: Rotation3<f64>) -> Result<Self, GeomError> {
        let q = DualQuadric {
            center,
            half_axes,
            orientation,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self, GeomError> {
        DualQuadric::new(center, Vector3::repeat(radius), Rotation3::identity())
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !self.half_axes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(GeomError::InvalidQuadric("half-axes must be positive"));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(GeomError::InvalidQuadric("center must be finite"));
        }
        Ok(())
    }

    /// Dual matrix `T · diag(a², b², c², −1) · Tᵀ` where `T = [R c; 0 1]`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(self.orientation.matrix());
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        let a = self.half_axes;
        let d = Matrix4::from_diagonal(&nalgebra::Vector4::new(a.x * a.x, a.y * a.y, a.z * a.z, -1.0));
        t * d * t.transpose()
    }

    /// The same ellipsoid expressed in the parent frame of `pose`.
    pub fn transformed(&self, pose: &SE3Pose) -> DualQuadric {
        DualQuadric {
            center: pose.transform_point(&self.center),
            half_axes: self.half_axes,
            orientation: pose.rotation * self.orientation,
        }
    }

    pub fn transformed_sim(&self, sim: &Similarity3) -> DualQuadric {
        DualQuadric {
            center: sim.apply(&self.center),
            half_axes: self.half_axes * sim.scale,
            orientation: sim.pose.rotation * self.orientation,
        }
    }

    /// Whether a point lies inside the ellipsoid.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.orientation.inverse() * (p - self.center);
        let a = self.half_axes;
        (local.x / a.x).powi(2) + (local.y / a.y).powi(2) + (local.z / a.z).powi(2) <= 1.0
    }
}

/// Dual conic `C* = P Q Pᵀ` with `P = K[R|t]` for camera-from-world pose `t_cw`.
pub fn dual_conic(k: &CameraIntrinsics, t_cw: &SE3Pose, q: &DualQuadric) -> Matrix3<f64> {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(t_cw.rotation.matrix());
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&t_cw.translation);
    let p = k.matrix() * rt;
    let c = p * q.matrix() * p.transpose();
    0.5 * (c + c.transpose())
}

/// Axis-aligned box bounding the projected ellipsoid, clipped to the image.
///
/// `None` when the center is behind the camera, when the ellipsoid crosses the
/// camera's principal plane (the conic is then not an ellipse), or when the
/// clipped box is empty.
pub fn project_quadric_bbox(k: &CameraIntrinsics, t_cw: &SE3Pose, q: &DualQuadric) -> Option<Box2D> {
    project_quadric_bbox_unclipped(k, t_cw, q)?.clip(k.width, k.height)
}

/// Bounding box of the conic envelope without clipping to the image.
pub fn project_quadric_bbox_unclipped(k: &CameraIntrinsics, t_cw: &SE3Pose, q: &DualQuadric) -> Option<Box2D> {
    let center_cam = t_cw.transform_point(&q.center);
    if center_cam.z <= EPS_DEPTH {
        return None;
    }
    let c = dual_conic(k, t_cw, q);
    // With Q44 = -1, C33 < 0 iff the principal plane misses the ellipsoid.
    let c33 = c[(2, 2)];
    if c33 >= 0.0 {
        return None;
    }
    // Tangent lines u = const: C11 - 2u C13 + u² C33 = 0 (same for v).
    let disc_u = c[(0, 2)] * c[(0, 2)] - c[(0, 0)] * c33;
    let disc_v = c[(1, 2)] * c[(1, 2)] - c[(1, 1)] * c33;
    if disc_u < 0.0 || disc_v < 0.0 {
        return None;
    }
    let (su, sv) = (disc_u.sqrt(), disc_v.sqrt());
    Some(Box2D::new(
        (c[(0, 2)] + su) / c33,
        (c[(1, 2)] + sv) / c33,
        (c[(0, 2)] - su) / c33,
        (c[(1, 2)] - sv) / c33,
    ))
}

// ---------------------------------------------------------------------------
// Vector pair transforms
// ---------------------------------------------------------------------------

/// Rotation, scale and offset relating two semantic vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTransform {
    pub rotation: Rotation3<f64>,
    pub scale: f64,
    /// Radians in `[0, π]`.
    pub angle: f64,
    /// Unit rotation axis.
    pub axis: Vector3<f64>,
    /// Offset between the vectors' starting points; zero until set by the caller.
    pub translation: Vector3<f64>,
    /// Length of the source vector, used to make the offset dimensionless.
    pub source_length: f64,
    /// Set for anti-parallel vectors, whose rotation axis is undefined.
    pub degenerate: bool,
}

/// Some unit vector perpendicular to `v`.
fn any_perpendicular(v: &Vector3<f64>) -> Vector3<f64> {
    let a = v.abs();
    let other = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    v.cross(&other).normalize()
}

/// Rodrigues rotation `cosθ I + (1 − cosθ) ωωᵀ + sinθ [ω]×`.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Result<Rotation3<f64>, GeomError> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
        return Err(GeomError::InvalidAxis(n));
    }
    let (s, c) = angle.sin_cos();
    let m = Matrix3::identity() * c + axis * axis.transpose() * (1.0 - c) + axis.cross_matrix() * s;
    Ok(Rotation3::from_matrix_unchecked(m))
}

/// Recovers `R`, `s` with `v_j = R (s v_i)`.
pub fn vector_pair_transform(v_i: &Vector3<f64>, v_j: &Vector3<f64>) -> Result<PairTransform, GeomError> {
    let (ni, nj) = (v_i.norm(), v_j.norm());
    if !(ni > EPS_LEN && nj > EPS_LEN) || !ni.is_finite() || !nj.is_finite() {
        return Err(GeomError::InvalidVector);
    }
    let scale = nj / ni;
    let cos = (v_i.dot(v_j) / (ni * nj)).clamp(-1.0, 1.0);
    let angle = cos.acos();

    let (axis, angle, degenerate) = if angle < EPS_ANGLE {
        (any_perpendicular(v_i), 0.0, false)
    } else if std::f64::consts::PI - angle < EPS_ANGLE {
        (any_perpendicular(v_i), std::f64::consts::PI, true)
    } else {
        (v_i.cross(v_j).normalize(), angle, false)
    };
    let rotation = if angle == 0.0 {
        Rotation3::identity()
    } else {
        rodrigues(&axis, angle)?
    };
    Ok(PairTransform {
        rotation,
        scale,
        angle,
        axis,
        translation: Vector3::zeros(),
        source_length: ni,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Similarity alignment
// ---------------------------------------------------------------------------

/// Least-squares `dst ≈ s R src + t` (Umeyama). With `with_scale` off, `s = 1`.
pub fn umeyama_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Similarity3, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::InsufficientGeometry("correspondence lists differ in length"));
    }
    if src.len() < 3 {
        return Err(GeomError::InsufficientGeometry("fewer than 3 correspondences"));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;

    let mut scatter = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        scatter += cs * cs.transpose();
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let mut eig: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig[0] <= 1e-18 || eig[1] <= 1e-12 * eig[0] {
        return Err(GeomError::InsufficientGeometry("source points are collinear"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = svd.singular_values;
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        let min_idx = d.imin();
        signs[min_idx] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = if with_scale {
        d.component_mul(&signs).sum() / var_s
    } else {
        1.0
    };
    let t = mu_d - scale * (r * mu_s);
    Ok(Similarity3 {
        pose: SE3Pose::new(Rotation3::from_matrix_unchecked(r), t),
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn iou_examples() {
        let a = Box2D::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &Box2D::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_relative_eq!(iou_2d(&a, &Box2D::new(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0, epsilon = 1e-15);
        let degenerate = Box2D::new(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou_2d(&degenerate, &degenerate), 0.0);
    }

    #[test]
    fn project_point_examples() {
        let id = SE3Pose::identity();
        let p = project_point(&k(), &id, &Vector3::new(0.0, 0.0, 4.0)).unwrap();
        assert_eq!((p.x, p.y), (320.0, 240.0));
        let p = project_point(&k(), &id, &Vector3::new(1.0, 0.0, 4.0)).unwrap();
        assert_relative_eq!(p.x, 445.0);
        assert!(project_point(&k(), &id, &Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn sphere_projection_matches_tangent_formula() {
        let q = DualQuadric::sphere(Vector3::new(0.0, 0.0, 4.0), 0.5).unwrap();
        let b = project_quadric_bbox(&k(), &SE3Pose::identity(), &q).unwrap();
        let expected = 500.0 * 0.5 / (16.0f64 - 0.25).sqrt();
        assert_relative_eq!(b.center().x, 320.0, epsilon = 1e-9);
        assert_relative_eq!(b.center().y, 240.0, epsilon = 1e-9);
        assert_relative_eq!(b.width() / 2.0, expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 62.994, epsilon = 1e-3);
    }

    #[test]
    fn quadric_behind_or_outside_is_not_projected() {
        let behind = DualQuadric::sphere(Vector3::new(0.0, 0.0, -4.0), 0.5).unwrap();
        assert!(project_quadric_bbox(&k(), &SE3Pose::identity(), &behind).is_none());
        let outside = DualQuadric::sphere(Vector3::new(40.0, 0.0, 4.0), 0.5).unwrap();
        assert!(project_quadric_bbox(&k(), &SE3Pose::identity(), &outside).is_none());
        // camera inside the ellipsoid
        let around = DualQuadric::sphere(Vector3::new(0.0, 0.0, 0.2), 0.5).unwrap();
        assert!(project_quadric_bbox(&k(), &SE3Pose::identity(), &around).is_none());
    }

    #[test]
    fn quadric_matrix_is_symmetric_and_transforms_consistently() {
        let q = DualQuadric::new(
            Vector3::new(1.0, -2.0, 3.0),
            Vector3::new(0.3, 0.5, 0.2),
            Rotation3::from_euler_angles(0.1, 0.4, -0.7),
        )
        .unwrap();
        let m = q.matrix();
        assert!((m - m.transpose()).abs().max() < 1e-12);
        assert_relative_eq!(m[(3, 3)], -1.0);
        let pose = SE3Pose::new(Rotation3::from_euler_angles(0.3, -0.2, 0.9), Vector3::new(0.5, 1.0, -1.0));
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(pose.rotation.matrix());
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
        let direct = t * m * t.transpose();
        assert!((direct - q.transformed(&pose).matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn invalid_quadric_rejected() {
        assert!(DualQuadric::sphere(Vector3::zeros(), 0.0).is_err());
        assert!(DualQuadric::new(Vector3::zeros(), Vector3::new(1.0, -1.0, 1.0), Rotation3::identity()).is_err());
    }

    #[test]
    fn rodrigues_examples() {
        let r = rodrigues(&Vector3::new(0.6, 0.8, 0.0), 0.0).unwrap();
        assert!((r.matrix() - Matrix3::identity()).abs().max() < 1e-15);
        let r = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expected).abs().max() < 1e-15);
        let r = rodrigues(&Vector3::x(), PI).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r.matrix() - expected).abs().max() < 1e-15);
        assert!(matches!(rodrigues(&Vector3::new(1.0, 1.0, 0.0), 0.3), Err(GeomError::InvalidAxis(_))));
    }

    #[test]
    fn pair_transform_examples() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let pt = vector_pair_transform(&v, &v).unwrap();
        assert_eq!(pt.scale, 1.0);
        assert_eq!(pt.angle, 0.0);
        assert_eq!(pt.rotation, Rotation3::identity());
        assert!(!pt.degenerate);
        assert_relative_eq!(pt.axis.norm(), 1.0, epsilon = 1e-12);

        let pt = vector_pair_transform(&Vector3::x(), &Vector3::new(0.0, 2.0, 0.0)).unwrap();
        assert_relative_eq!(pt.scale, 2.0);
        assert_relative_eq!(pt.angle, FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(pt.axis, Vector3::z(), epsilon = 1e-15);
        let rz = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        assert!((pt.rotation.matrix() - rz.matrix()).abs().max() < 1e-15);

        let pt = vector_pair_transform(&Vector3::x(), &(-Vector3::x())).unwrap();
        assert!(pt.degenerate);
        assert_eq!(pt.scale, 1.0);
        assert_eq!(pt.angle, PI);
        assert!((pt.rotation * Vector3::x() + Vector3::x()).norm() < 1e-12);

        assert_eq!(
            vector_pair_transform(&Vector3::zeros(), &Vector3::x()),
            Err(GeomError::InvalidVector)
        );
    }

    #[test]
    fn umeyama_examples() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.5, 0.3, 1.0),
        ];
        let id = umeyama_align(&src, &src, true).unwrap();
        assert_relative_eq!(id.scale, 1.0, epsilon = 1e-12);
        assert!(id.pose.translation.norm() < 1e-12);
        assert!(rotation_angle(&id.pose.rotation) < 1e-9);

        let truth = Similarity3 {
            pose: SE3Pose::new(Rotation3::from_euler_angles(0.4, -0.1, 1.2), Vector3::new(1.0, -3.0, 0.25)),
            scale: 2.0,
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let est = umeyama_align(&src, &dst, true).unwrap();
        assert_relative_eq!(est.scale, 2.0, epsilon = 1e-9);
        for (s, d) in src.iter().zip(&dst) {
            assert!((est.apply(s) - d).norm() < 1e-9);
        }

        let collinear: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&collinear, &collinear, true),
            Err(GeomError::InsufficientGeometry(_))
        ));
        assert!(umeyama_align(&src[..2], &src[..2], false).is_err());
    }

    #[test]
    fn similarity_compose_inverse_and_interpolate() {
        let s = Similarity3 {
            pose: SE3Pose::new(Rotation3::from_euler_angles(0.2, 0.1, -0.5), Vector3::new(1.0, 2.0, 3.0)),
            scale: 1.5,
        };
        let p = Vector3::new(0.3, -0.7, 2.0);
        assert!((s.inverse().apply(&s.apply(&p)) - p).norm() < 1e-12);
        assert!((s.compose(&s.inverse()).apply(&p) - p).norm() < 1e-12);
        let full = s.interpolate(1.0);
        assert!((full.apply(&p) - s.apply(&p)).norm() < 1e-12);
        let none = s.interpolate(0.0);
        assert!((none.apply(&p) - p).norm() < 1e-12);
    }

    #[test]
    fn pose_wire_roundtrip() {
        let pose = SE3Pose::new(Rotation3::from_euler_angles(2.9, -0.4, 1.1), Vector3::new(1.0, 2.0, -3.0));
        let json = serde_json::to_string(&pose).unwrap();
        let back: SE3Pose = serde_json::from_str(&json).unwrap();
        assert!((back.rotation.matrix() - pose.rotation.matrix()).abs().max() < 1e-12);
        assert_eq!(back.translation, pose.translation);
        back.validate().unwrap();
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(2.0, 1.0, 1.5);
        let target = Vector3::new(0.0, 0.0, 0.5);
        let pose = SE3Pose::look_at(eye, target, Vector3::z());
        pose.validate().unwrap();
        let cam = pose.inverse().transform_point(&target);
        assert!(cam.x.abs() < 1e-12 && cam.y.abs() < 1e-12 && cam.z > 0.0);
        // world up maps to image-up (negative y)
        let up = pose.inverse().rotation * Vector3::z();
        assert!(up.y < 0.0);
    }
}
