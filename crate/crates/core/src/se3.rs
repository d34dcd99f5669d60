//! Rigid-body pose algebra for the handover frame chain.
//!
//! Rotations are stored as unit quaternions in canonical form (`w >= 0`) and
//! only materialized as matrices on demand. Poses carry no frame information
//! themselves; [`FramedPose`] attaches a parent/child [`FrameTag`] pair so the
//! camera -> hand -> grasp chain can be checked at each composition.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cartesian vector in meters (or unitless for directions).
pub type Vec3 = Vector3<f64>;

/// Unit-norm tolerance used by constructors and invariant checks.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Quaternions whose dot product exceeds this are interpolated linearly.
const NLERP_THRESHOLD: f64 = 1.0 - 1e-6;
/// Below this |dot| the relative rotation is a half turn and both arcs are geodesics.
const HALF_TURN_TOLERANCE: f64 = 1e-12;
/// Squared norms this close to one are left untouched so normalization is idempotent.
const KEEP_NORM_WINDOW: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: focal lengths must be positive")]
    InvalidIntrinsics,
    #[error("frame mismatch: expected {expected_parent}->{expected_child}, got {parent}->{child}")]
    FrameMismatch {
        expected_parent: FrameTag,
        expected_child: FrameTag,
        parent: FrameTag,
        child: FrameTag,
    },
}

/// Rotation as a unit quaternion, canonicalized so that `w >= 0`.
///
/// When `w == 0` the first non-zero vector component is made positive, so
/// every rotation has exactly one representation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes `(w, x, y, z)`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, Se3Error> {
        if ![w, x, y, z].iter().all(|c| c.is_finite()) {
            return Err(Se3Error::NonFinite("quaternion"));
        }
        let n2 = w * w + x * x + y * y + z * z;
        if n2 < 1e-300 {
            return Err(Se3Error::DegenerateQuaternion);
        }
        Ok(Self::normalized(w, x, y, z, n2))
    }

    // Components that are already unit within a few ulps are kept bit-for-bit.
    fn normalized(w: f64, x: f64, y: f64, z: f64, n2: f64) -> Self {
        let (w, x, y, z) = if (n2 - 1.0).abs() <= KEEP_NORM_WINDOW {
            (w, x, y, z)
        } else {
            let n = n2.sqrt();
            (w / n, x / n, y / n, z / n)
        };
        canonical(w, x, y, z)
    }

    fn from_raw(c: [f64; 4]) -> Self {
        let n2 = c.iter().map(|v| v * v).sum::<f64>();
        Self::normalized(c[0], c[1], c[2], c[3], n2)
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields the identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis / n;
        Self::from_raw([c, a.x * s, a.y * s, a.z * s])
    }

    /// Inverse of [`Self::to_rotation_vector`].
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    /// Builds a quaternion from a rotation matrix (assumed orthonormal).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self::from_raw([q.w, q.i, q.j, q.k])
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.wxyz().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn inverse(&self) -> Self {
        canonical(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.inverse() * *other).angle()
    }

    /// Axis scaled by angle, with the angle in `[0, pi]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        // w >= 0 by canonicalization, so the angle never exceeds pi.
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Spherical linear interpolation along the shortest arc.
    ///
    /// Nearly parallel inputs fall back to normalized linear interpolation.
    /// For an exact half turn both arcs are geodesics; the one rotating about
    /// the positive dominant axis of `self⁻¹ · target` is chosen.
    pub fn slerp(&self, target: &Self, u: f64) -> Self {
        if u <= 0.0 {
            return *self;
        }
        if u >= 1.0 {
            return *target;
        }
        let a = self.wxyz();
        let mut b = target.wxyz();
        let mut d = self.dot(target);
        if d.abs() < HALF_TURN_TOLERANCE {
            let rel = raw_mul(&[a[0], -a[1], -a[2], -a[3]], &b);
            let dominant = (1..4)
                .max_by(|&i, &j| rel[i].abs().total_cmp(&rel[j].abs()))
                .unwrap_or(1);
            if rel[dominant] < 0.0 {
                b = b.map(|c| -c);
                d = -d;
            }
        } else if d < 0.0 {
            b = b.map(|c| -c);
            d = -d;
        }
        let (wa, wb) = if d > NLERP_THRESHOLD {
            (1.0 - u, u)
        } else {
            let theta = d.min(1.0).acos();
            let s = theta.sin();
            (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
        };
        let c = [0, 1, 2, 3].map(|i| wa * a[i] + wb * b[i]);
        Self::from_raw(c)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.angle_to(other) <= tol
    }
}

fn raw_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn canonical(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion {
    let flip = if w != 0.0 {
        w < 0.0
    } else if x != 0.0 {
        x < 0.0
    } else if y != 0.0 {
        y < 0.0
    } else {
        z < 0.0
    };
    // `0.0 * -1.0` would leave negative zeros behind; `-v` on 0.0 too, so add 0.0.
    if flip {
        UnitQuaternion {
            w: -w + 0.0,
            x: -x + 0.0,
            y: -y + 0.0,
            z: -z + 0.0,
        }
    } else {
        UnitQuaternion {
            w: w + 0.0,
            x: x + 0.0,
            y: y + 0.0,
            z: z + 0.0,
        }
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion::from_raw(raw_mul(&self.wxyz(), &rhs.wxyz()))
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Se3Error;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        UnitQuaternion::new(c[0], c[1], c[2], c[3])
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.wxyz()
    }
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

/// On-disk pose: position in meters and quaternion as `[w, x, y, z]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRepr {
    pub position: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quaternion: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Se3Error;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        if !r.position.iter().all(|c| c.is_finite()) {
            return Err(Se3Error::NonFinite("position"));
        }
        Ok(Pose::new(UnitQuaternion::try_from(r.quaternion)?, Vec3::from(r.position)))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            position: [p.translation.x, p.translation.y, p.translation.z],
            quaternion: p.rotation.wxyz(),
        }
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: UnitQuaternion::IDENTITY,
        translation: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::IDENTITY, t)
    }

    pub fn from_rotation(r: UnitQuaternion) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// Homogeneous product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation.rotate(&other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.translation + self.rotation.rotate(p)
    }

    pub fn x_axis(&self) -> Vec3 {
        self.rotation.rotate(&Vec3::x())
    }

    pub fn z_axis(&self) -> Vec3 {
        self.rotation.rotate(&Vec3::z())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let t: Vec3 = m.fixed_view::<3, 1>(0, 3).into();
        Pose::new(UnitQuaternion::from_matrix(&r), t)
    }

    /// Translation distance and rotation angle to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            self.rotation.angle_to(&other.rotation),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Coordinate frames of the handover setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameTag {
    Base,
    Camera,
    Hand,
    Grasp,
    Object,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A pose labelled as `parent -> child`, i.e. the child frame expressed in the parent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramedPose {
    pub parent: FrameTag,
    pub child: FrameTag,
    pub pose: Pose,
}

impl FramedPose {
    pub fn new(parent: FrameTag, child: FrameTag, pose: Pose) -> Self {
        Self {
            parent,
            child,
            pose,
        }
    }

    pub fn expect(&self, parent: FrameTag, child: FrameTag) -> Result<&Pose, Se3Error> {
        if self.parent == parent && self.child == child {
            Ok(&self.pose)
        } else {
            Err(Se3Error::FrameMismatch {
                expected_parent: parent,
                expected_child: child,
                parent: self.parent,
                child: self.child,
            })
        }
    }

    /// `a->b` composed with `b->c` gives `a->c`.
    pub fn then(&self, next: &FramedPose) -> Result<FramedPose, Se3Error> {
        let p = next.expect(self.child, next.child)?;
        Ok(FramedPose::new(self.parent, next.child, self.pose.compose(p)))
    }
}

/// Hand pose in the robot base: `T_B_H = T_B_C · T_C_H`.
pub fn hand_in_base(calib: &FramedPose, hand_in_cam: &FramedPose) -> Result<FramedPose, Se3Error> {
    calib.expect(FrameTag::Base, FrameTag::Camera)?;
    hand_in_cam.expect(FrameTag::Camera, FrameTag::Hand)?;
    calib.then(hand_in_cam)
}

/// Object target in the base frame: `T_B_H · T_H_G`, with the grasp frame
/// taken as the object frame.
pub fn grasp_target(hand_in_base: &FramedPose, grasp_offset: &FramedPose) -> Result<FramedPose, Se3Error> {
    hand_in_base.expect(FrameTag::Base, FrameTag::Hand)?;
    grasp_offset.expect(FrameTag::Hand, FrameTag::Grasp)?;
    let g = hand_in_base.then(grasp_offset)?;
    Ok(FramedPose::new(FrameTag::Base, FrameTag::Object, g.pose))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsRepr {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = Se3Error;

    fn try_from(r: IntrinsicsRepr) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(k: CameraIntrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, Se3Error> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Se3Error::InvalidIntrinsics);
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Se3Error::NonFinite("principal point"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// Forward pinhole projection of a camera-frame point to pixels.
    pub fn project(&self, p: &Vec3) -> Result<(f64, f64), Se3Error> {
        if p.z <= 0.0 {
            return Err(Se3Error::BehindCamera(p.z));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Lifts pixel `(u, v)` at metric `depth` into the camera frame.
pub fn back_project(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vec3, Se3Error> {
    if !(depth > 0.0) {
        return Err(Se3Error::NonPositiveDepth(depth));
    }
    Ok(Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth))
}
