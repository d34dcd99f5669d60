//! Serial-chain kinematics: DH forward kinematics, geometric Jacobian,
//! manipulability, damped-least-squares IK and trajectory feasibility checks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, PoseRepr, Se3Error, UnitQuaternion, Vec3};
use crate::trajectory::PoseTrajectory;

/// Built-in Panda-like 7-DOF robot description.
pub const PANDA_TOML: &str = include_str!("../data/panda.toml");

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint vector has {got} entries, model has {expected} joints")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("robot model parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid pose in robot model: {0}")]
    Pose(#[from] Se3Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("joint vector has {got} entries, model has {expected} joints")]
    LengthMismatch { expected: usize, got: usize },
    #[error("IK did not converge after {iterations} iterations (pos err {position_error:.3e} m, rot err {rotation_error:.3e} rad)")]
    NoConvergence {
        best: JointConfig,
        iterations: usize,
        position_error: f64,
        rotation_error: f64,
    },
    #[error("IK solution violates the limits of joint {joint}")]
    JointLimitViolation { q: JointConfig, joint: usize },
}

/// Placement of the joint-local DH parameters relative to the joint rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhConvention {
    /// Craig: `RotX(alpha) · TransX(a) · RotZ(theta) · TransZ(d)`.
    #[default]
    Modified,
    /// Classic: `RotZ(theta) · TransZ(d) · TransX(a) · RotX(alpha)`.
    Standard,
}

/// Which rows of the 6-row twist the task constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    #[default]
    Spatial,
    /// `x, y` only (planar positioning arms).
    PlanarPosition,
    /// `x, y, yaw`.
    PlanarPose,
}

impl TaskSpace {
    pub fn rows(&self) -> &'static [usize] {
        match self {
            TaskSpace::Spatial => &[0, 1, 2, 3, 4, 5],
            TaskSpace::PlanarPosition => &[0, 1],
            TaskSpace::PlanarPose => &[0, 1, 5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointParams {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default = "default_velocity_limit")]
    pub velocity_limit: f64,
}

fn default_velocity_limit() -> f64 {
    2.0
}

impl JointParams {
    pub fn revolute(a: f64, d: f64, alpha: f64, limits: (f64, f64)) -> Self {
        Self {
            a,
            d,
            alpha,
            theta_offset: 0.0,
            q_min: limits.0,
            q_max: limits.1,
            velocity_limit: default_velocity_limit(),
        }
    }

    fn pre(&self, convention: DhConvention) -> Pose {
        match convention {
            DhConvention::Modified => Pose::new(
                UnitQuaternion::from_axis_angle(&Vec3::x(), self.alpha),
                Vec3::new(self.a, 0.0, 0.0),
            ),
            DhConvention::Standard => Pose::IDENTITY,
        }
    }

    fn post(&self, convention: DhConvention) -> Pose {
        match convention {
            DhConvention::Modified => Pose::from_translation(Vec3::new(0.0, 0.0, self.d)),
            DhConvention::Standard => Pose::new(
                UnitQuaternion::from_axis_angle(&Vec3::x(), self.alpha),
                Vec3::new(self.a, 0.0, self.d),
            ),
        }
    }
}

/// Joint positions in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainModel {
    name: String,
    convention: DhConvention,
    task_space: TaskSpace,
    joints: Vec<JointParams>,
    flange_offset: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationThresholds {
    pub manipulability_min: f64,
    pub sigma_min: f64,
    pub joint_margin: f64,
    pub ik_tol_pos: f64,
    pub ik_tol_rot: f64,
    pub ik_max_iters: usize,
    /// DLS damping `mu`.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Per-iteration cap on the largest joint update (rad).
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

fn default_damping() -> f64 {
    1e-3
}

fn default_max_step() -> f64 {
    0.5
}

impl Default for ValidationThresholds {
    fn default() -> Self {
        Self {
            manipulability_min: 0.01,
            sigma_min: 0.01,
            joint_margin: 0.05,
            ik_tol_pos: 1e-3,
            ik_tol_rot: 0.01,
            ik_max_iters: 200,
            damping: default_damping(),
            max_step: default_max_step(),
        }
    }
}

impl ValidationThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("manipulability_min", self.manipulability_min),
            ("sigma_min", self.sigma_min),
            ("joint_margin", self.joint_margin),
            ("ik_tol_pos", self.ik_tol_pos),
            ("ik_tol_rot", self.ik_tol_rot),
            ("damping", self.damping),
            ("max_step", self.max_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("threshold {name} must be positive, got {v}"));
            }
        }
        if self.ik_max_iters == 0 {
            return Err("threshold ik_max_iters must be positive".into());
        }
        Ok(())
    }
}

/// A robot model file: chain, home configuration and default thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotConfig {
    pub model: ChainModel,
    pub home: JointConfig,
    pub thresholds: ValidationThresholds,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    name: String,
    #[serde(default)]
    convention: DhConvention,
    #[serde(default)]
    task_space: TaskSpace,
    home: Vec<f64>,
    flange_offset: Option<PoseRepr>,
    #[serde(default)]
    thresholds: Option<ValidationThresholds>,
    joints: Vec<JointParams>,
}

impl RobotConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: RobotFile = toml::from_str(text)?;
        let flange = match file.flange_offset {
            Some(r) => Pose::try_from(r)?,
            None => Pose::IDENTITY,
        };
        let model = ChainModel::new(file.name, file.convention, file.task_space, file.joints, flange)?;
        let home = JointConfig(file.home);
        model.check_len(&home)?;
        if let Some(j) = model.first_limit_violation(&home, 0.0) {
            return Err(KinematicsError::InvalidModel(format!("home position outside the limits of joint {j}")));
        }
        let thresholds = file.thresholds.unwrap_or_default();
        thresholds.validate().map_err(KinematicsError::InvalidModel)?;
        Ok(Self {
            model,
            home,
            thresholds,
        })
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path).map_err(|source| KinematicsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn panda() -> Self {
        Self::from_toml_str(PANDA_TOML).expect("bundled panda model is valid")
    }
}

impl ChainModel {
    pub fn new(
        name: impl Into<String>,
        convention: DhConvention,
        task_space: TaskSpace,
        joints: Vec<JointParams>,
        flange_offset: Pose,
    ) -> Result<Self, KinematicsError> {
        if joints.len() < 2 {
            return Err(KinematicsError::InvalidModel("a chain needs at least two joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            let vals = [j.a, j.d, j.alpha, j.theta_offset, j.q_min, j.q_max, j.velocity_limit];
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidModel(format!("joint {i} has non-finite parameters")));
            }
            if !(j.q_min < j.q_max) {
                return Err(KinematicsError::InvalidModel(format!("joint {i}: q_min must be below q_max")));
            }
        }
        Ok(Self {
            name: name.into(),
            convention,
            task_space,
            joints,
            flange_offset,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dof(&self) -> usize {
        self.joints.len()
    }
    pub fn joints(&self) -> &[JointParams] {
        &self.joints
    }
    pub fn task_space(&self) -> TaskSpace {
        self.task_space
    }
    pub fn flange_offset(&self) -> &Pose {
        &self.flange_offset
    }

    fn check_len(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// First joint outside `[q_min + margin, q_max - margin]`.
    pub fn first_limit_violation(&self, q: &JointConfig, margin: f64) -> Option<usize> {
        self.joints
            .iter()
            .zip(&q.0)
            .position(|(j, &v)| v < j.q_min + margin || v > j.q_max - margin)
    }

    // Joint axes/origins in the base frame, plus the flange pose.
    fn frames(&self, q: &[f64]) -> (Vec<(Vec3, Vec3)>, Pose) {
        let mut t = Pose::IDENTITY;
        let mut axes = Vec::with_capacity(self.dof());
        for (joint, &qi) in self.joints.iter().zip(q) {
            let f = t.compose(&joint.pre(self.convention));
            axes.push((f.z_axis(), f.translation));
            let rz = Pose::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::z(), qi + joint.theta_offset));
            t = f.compose(&rz).compose(&joint.post(self.convention));
        }
        (axes, t.compose(&self.flange_offset))
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Pose, KinematicsError> {
        self.check_len(q)?;
        Ok(self.frames(&q.0).1)
    }

    /// Geometric Jacobian (6×n, linear rows first) at the flange.
    pub fn jacobian(&self, q: &JointConfig) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_len(q)?;
        Ok(self.jacobian_unchecked(&q.0).0)
    }

    fn jacobian_unchecked(&self, q: &[f64]) -> (DMatrix<f64>, Pose) {
        let (axes, ee) = self.frames(q);
        let mut j = DMatrix::zeros(6, self.dof());
        for (c, (z, o)) in axes.iter().enumerate() {
            let lin = z.cross(&(ee.translation - o));
            for r in 0..3 {
                j[(r, c)] = lin[r];
                j[(r + 3, c)] = z[r];
            }
        }
        (j, ee)
    }

    /// Jacobian restricted to the rows of the model's task space.
    pub fn task_jacobian(&self, q: &JointConfig) -> Result<DMatrix<f64>, KinematicsError> {
        Ok(self.task_space.select(&self.jacobian(q)?))
    }

    /// Yoshikawa measure `sqrt(det(J·Jᵀ))` on the task-space Jacobian.
    pub fn manipulability(&self, q: &JointConfig) -> Result<f64, KinematicsError> {
        Ok(manipulability_of(&self.task_jacobian(q)?))
    }

    /// Singular values of the task-space Jacobian, largest first.
    pub fn singular_values(&self, q: &JointConfig) -> Result<Vec<f64>, KinematicsError> {
        Ok(singular_values_of(&self.task_jacobian(q)?))
    }

    /// Damped least squares: `dq = Jᵀ (J Jᵀ + mu² I)⁻¹ e`, iterated from `seed`.
    ///
    /// Each iterate is clamped to the joint limits shrunk by `joint_margin`.
    pub fn solve_ik(&self, target: &Pose, seed: &JointConfig, th: &ValidationThresholds) -> Result<IkSolution, IkError> {
        if seed.len() != self.dof() {
            return Err(IkError::LengthMismatch {
                expected: self.dof(),
                got: seed.len(),
            });
        }
        let rows = self.task_space.rows();
        let m = rows.len();
        let mut q = seed.0.clone();
        let mut iterations = 0;
        loop {
            let (j_full, ee) = self.jacobian_unchecked(&q);
            let err6 = pose_error(&ee, target);
            let (pos_err, rot_err) = self.task_space.error_norms(&err6);
            if pos_err < th.ik_tol_pos && rot_err < th.ik_tol_rot {
                let q = JointConfig(q);
                if let Some(joint) = self.first_limit_violation(&q, th.joint_margin) {
                    return Err(IkError::JointLimitViolation { q, joint });
                }
                return Ok(IkSolution {
                    q,
                    iterations,
                    position_error: pos_err,
                    rotation_error: rot_err,
                });
            }
            if iterations >= th.ik_max_iters {
                return Err(IkError::NoConvergence {
                    best: JointConfig(q),
                    iterations,
                    position_error: pos_err,
                    rotation_error: rot_err,
                });
            }
            let j = self.task_space.select(&j_full);
            let e = DVector::from_iterator(m, rows.iter().map(|&r| err6[r]));
            let jjt = &j * j.transpose() + DMatrix::identity(m, m) * (th.damping * th.damping);
            let y = match jjt.cholesky() {
                Some(c) => c.solve(&e),
                None => {
                    return Err(IkError::NoConvergence {
                        best: JointConfig(q),
                        iterations,
                        position_error: pos_err,
                        rotation_error: rot_err,
                    })
                }
            };
            let mut dq = j.transpose() * y;
            let largest = dq.amax();
            if largest > th.max_step {
                dq *= th.max_step / largest;
            }
            // Projected step: iterates stay inside the margin-shrunk limits.
            for ((qi, d), joint) in q.iter_mut().zip(dq.iter()).zip(&self.joints) {
                let (lo, hi) = (joint.q_min + th.joint_margin, joint.q_max - th.joint_margin);
                *qi = if lo <= hi { (*qi + d).clamp(lo, hi) } else { 0.5 * (joint.q_min + joint.q_max) };
            }
            iterations += 1;
        }
    }
}

impl TaskSpace {
    fn select(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = self.rows();
        if rows.len() == j.nrows() {
            return j.clone();
        }
        DMatrix::from_fn(rows.len(), j.ncols(), |r, c| j[(rows[r], c)])
    }

    fn error_norms(&self, e: &[f64; 6]) -> (f64, f64) {
        let norm = |idx: &[usize]| idx.iter().map(|&i| e[i] * e[i]).sum::<f64>().sqrt();
        match self {
            TaskSpace::Spatial => (norm(&[0, 1, 2]), norm(&[3, 4, 5])),
            TaskSpace::PlanarPosition => (norm(&[0, 1]), 0.0),
            TaskSpace::PlanarPose => (norm(&[0, 1]), e[5].abs()),
        }
    }
}

/// Position difference and rotation vector of `R_target · R_currentᵀ`.
fn pose_error(current: &Pose, target: &Pose) -> [f64; 6] {
    let dp = target.translation - current.translation;
    let dr = (target.rotation * current.rotation.inverse()).to_rotation_vector();
    [dp.x, dp.y, dp.z, dr.x, dr.y, dr.z]
}

/// `sqrt(det(J·Jᵀ))`, evaluated as `|det R|` from `Jᵀ = Q·R`.
///
/// Forming `J·Jᵀ` first squares the condition number and leaves about
/// `sqrt(eps)` of noise at singular configurations.
pub fn manipulability_of(j: &DMatrix<f64>) -> f64 {
    if j.nrows() > j.ncols() {
        return 0.0;
    }
    let r = j.transpose().qr().r();
    r.diagonal().iter().map(|v| v.abs()).product()
}

pub fn singular_values_of(j: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = j.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub q: JointConfig,
    pub iterations: usize,
    pub position_error: f64,
    pub rotation_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    NoConvergence,
    JointLimit,
    Manipulability,
    SingularValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub s: f64,
    pub q: JointConfig,
    pub ik_converged: bool,
    pub manipulability: f64,
    pub sigma_min: f64,
    pub joint_limit_ok: bool,
}

impl SampleRecord {
    /// The first criterion this sample fails, checked in report order.
    pub fn failure(&self, th: &ValidationThresholds) -> Option<FailureReason> {
        if !self.ik_converged {
            Some(FailureReason::NoConvergence)
        } else if !self.joint_limit_ok {
            Some(FailureReason::JointLimit)
        } else if self.manipulability < th.manipulability_min {
            Some(FailureReason::Manipulability)
        } else if self.sigma_min < th.sigma_min {
            Some(FailureReason::SingularValue)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub samples: Vec<SampleRecord>,
    pub first_failure: Option<(f64, FailureReason)>,
}

impl FeasibilityReport {
    /// Joint solution of the last sample at or before `s`.
    pub fn joints_near(&self, s: f64) -> Option<&JointConfig> {
        self.samples
            .iter()
            .rev()
            .find(|r| r.s <= s && r.ik_converged)
            .or_else(|| self.samples.first())
            .map(|r| &r.q)
    }
}

/// Samples `n_samples` evenly spaced path parameters and checks each pose for
/// IK convergence, joint limits, manipulability and smallest singular value.
/// IK is warm-started from the previous converged sample, starting at `seed`.
pub fn validate_trajectory(
    model: &ChainModel,
    traj: &PoseTrajectory,
    th: &ValidationThresholds,
    n_samples: usize,
    seed: &JointConfig,
) -> Result<FeasibilityReport, KinematicsError> {
    model.check_len(seed)?;
    let n = n_samples.max(2);
    let mut warm = seed.clone();
    let mut samples = Vec::with_capacity(n);
    let mut first_failure = None;
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let pose = traj.pose_at_s(s).expect("s within [0, 1]");
        let (q, ik_converged) = match model.solve_ik(&pose, &warm, th) {
            Ok(sol) => (sol.q, true),
            Err(IkError::JointLimitViolation { q, .. }) => (q, true),
            Err(IkError::NoConvergence { best, .. }) => (best, false),
            Err(IkError::LengthMismatch { expected, got }) => {
                return Err(KinematicsError::LengthMismatch { expected, got })
            }
        };
        let jac = model.task_jacobian(&q)?;
        let sv = singular_values_of(&jac);
        let record = SampleRecord {
            s,
            manipulability: manipulability_of(&jac),
            sigma_min: sv.last().copied().unwrap_or(0.0),
            joint_limit_ok: model.first_limit_violation(&q, th.joint_margin).is_none(),
            ik_converged,
            q,
        };
        if ik_converged {
            warm = record.q.clone();
        }
        if first_failure.is_none() {
            if let Some(reason) = record.failure(th) {
                first_failure = Some((s, reason));
            }
        }
        samples.push(record);
    }
    Ok(FeasibilityReport {
        feasible: first_failure.is_none(),
        samples,
        first_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{BezierPath, MotionLaw, OrientationPlan};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar_2r(l1: f64, l2: f64) -> ChainModel {
        let lim = (-3.0, 3.0);
        ChainModel::new(
            "2r",
            DhConvention::Standard,
            TaskSpace::PlanarPosition,
            vec![JointParams::revolute(l1, 0.0, 0.0, lim), JointParams::revolute(l2, 0.0, 0.0, lim)],
            Pose::IDENTITY,
        )
        .unwrap()
    }

    fn q(v: &[f64]) -> JointConfig {
        JointConfig(v.to_vec())
    }

    fn random_in_limits(model: &ChainModel, margin: f64, rng: &mut impl Rng) -> JointConfig {
        JointConfig(
            model
                .joints()
                .iter()
                .map(|j| rng.gen_range(j.q_min + margin..j.q_max - margin))
                .collect(),
        )
    }

    #[test]
    fn planar_fk_by_hand() {
        let m = planar_2r(1.0, 1.0);
        let p = m.forward_kinematics(&q(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(p.translation, Vec3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(p.rotation, UnitQuaternion::IDENTITY);
        let p = m.forward_kinematics(&q(&[FRAC_PI_2, 0.0])).unwrap();
        assert_relative_eq!(p.translation, Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        assert!(m.forward_kinematics(&q(&[0.0])).is_err());
    }

    #[test]
    fn modified_and_standard_conventions_agree_on_planar_arm() {
        let std_arm = planar_2r(0.7, 0.4);
        let lim = (-3.0, 3.0);
        let mod_arm = ChainModel::new(
            "2r-modified",
            DhConvention::Modified,
            TaskSpace::PlanarPosition,
            vec![JointParams::revolute(0.0, 0.0, 0.0, lim), JointParams::revolute(0.7, 0.0, 0.0, lim)],
            Pose::from_translation(Vec3::new(0.4, 0.0, 0.0)),
        )
        .unwrap();
        let c = q(&[0.3, -1.1]);
        let a = std_arm.forward_kinematics(&c).unwrap();
        let b = mod_arm.forward_kinematics(&c).unwrap();
        assert_relative_eq!(a.translation, b.translation, epsilon = 1e-14);
        assert!(a.rotation.approx_eq(&b.rotation, 1e-14));
    }

    #[test]
    fn planar_jacobian_columns() {
        let m = planar_2r(1.0, 1.0);
        let j = m.jacobian(&q(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(j.fixed_view::<3, 1>(0, 0).into_owned(), Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(j.fixed_view::<3, 1>(0, 1).into_owned(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_length_links_have_no_linear_jacobian() {
        let m = planar_2r(0.0, 0.0);
        let j = m.jacobian(&q(&[0.4, 1.2])).unwrap();
        assert!(j.rows(0, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn planar_manipulability() {
        let m = planar_2r(1.0, 1.0);
        assert_relative_eq!(m.manipulability(&q(&[0.2, FRAC_PI_2])).unwrap(), 1.0, epsilon = 1e-12);
        assert!(m.manipulability(&q(&[0.2, 0.0])).unwrap() < 1e-12);
        let sv = m.singular_values(&q(&[0.0, 0.0])).unwrap();
        assert!(sv[1].abs() < 1e-9);
        assert!(sv[0] >= sv[1]);
    }

    #[test]
    fn singular_values_of_orthogonal_columns() {
        let mut j = DMatrix::zeros(6, 3);
        j[(0, 0)] = 3.0;
        j[(4, 0)] = 4.0;
        j[(1, 1)] = -2.0;
        j[(2, 2)] = 0.5;
        j[(5, 2)] = 0.5;
        let sv = singular_values_of(&j);
        assert_relative_eq!(sv[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(sv[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sv[2], 0.5f64.hypot(0.5), epsilon = 1e-12);
    }

    #[test]
    fn panda_jacobian_matches_finite_differences() {
        let robot = RobotConfig::panda();
        let m = &robot.model;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-7;
        for _ in 0..100 {
            let c = random_in_limits(m, 0.0, &mut rng);
            let j = m.jacobian(&c).unwrap();
            let base = m.forward_kinematics(&c).unwrap();
            for i in 0..m.dof() {
                let mut cp = c.clone();
                cp.0[i] += eps;
                let p = m.forward_kinematics(&cp).unwrap();
                let lin = (p.translation - base.translation) / eps;
                let ang = (p.rotation * base.rotation.inverse()).to_rotation_vector() / eps;
                for r in 0..3 {
                    assert!((j[(r, i)] - lin[r]).abs() < 1e-5, "linear row {r} col {i}");
                    assert!((j[(r + 3, i)] - ang[r]).abs() < 1e-5, "angular row {r} col {i}");
                }
            }
        }
    }

    #[test]
    fn manipulability_agrees_with_singular_values() {
        let robot = RobotConfig::panda();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let c = random_in_limits(&robot.model, 0.0, &mut rng);
            let w = robot.model.manipulability(&c).unwrap();
            let j = robot.model.task_jacobian(&c).unwrap();
            let gram_det = (&j * j.transpose()).determinant();
            let prod: f64 = robot.model.singular_values(&c).unwrap().iter().product();
            assert!((w * w - gram_det).abs() < 1e-9);
            assert!((gram_det - prod * prod).abs() < 1e-9);
            assert!(w >= 0.0);
        }
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let robot = RobotConfig::panda();
        let th = robot.thresholds;
        let target = robot.model.forward_kinematics(&robot.home).unwrap();
        let sol = robot.model.solve_ik(&target, &robot.home, &th).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.q, robot.home);
    }

    #[test]
    fn ik_recovers_from_perturbed_seed() {
        let robot = RobotConfig::panda();
        let th = robot.thresholds;
        let mut star = robot.home.clone();
        star.0[0] += 0.3;
        star.0[3] += 0.2;
        let target = robot.model.forward_kinematics(&star).unwrap();
        let seed = JointConfig(star.0.iter().map(|v| v + 0.05).collect());
        let sol = robot.model.solve_ik(&target, &seed, &th).unwrap();
        let got = robot.model.forward_kinematics(&sol.q).unwrap();
        let (dp, dr) = got.distance_to(&target);
        assert!(dp < th.ik_tol_pos && dr < th.ik_tol_rot);
    }

    #[test]
    fn ik_unreachable_target_fails() {
        let m = planar_2r(1.0, 1.0);
        let th = ValidationThresholds::default();
        let far = Pose::from_translation(Vec3::new(2.5, 0.3, 0.0));
        assert!(matches!(
            m.solve_ik(&far, &q(&[0.1, 0.2]), &th),
            Err(IkError::NoConvergence { .. })
        ));
    }

    #[test]
    fn ik_reports_joint_limit_violation() {
        let lim = (-0.5, 0.5);
        let m = ChainModel::new(
            "narrow",
            DhConvention::Standard,
            TaskSpace::PlanarPosition,
            vec![JointParams::revolute(1.0, 0.0, 0.0, lim), JointParams::revolute(1.0, 0.0, 0.0, lim)],
            Pose::IDENTITY,
        )
        .unwrap();
        let th = ValidationThresholds::default();
        // reachable only with q1 near 1.0 rad
        let target = planar_2r(1.0, 1.0).forward_kinematics(&q(&[1.0, 0.3])).unwrap();
        match m.solve_ik(&target, &q(&[0.4, 0.3]), &th).unwrap_err() {
            IkError::NoConvergence { best, .. } => assert!(m.first_limit_violation(&best, th.joint_margin).is_none()),
            e => panic!("unexpected {e}"),
        }
        // a seed that already solves the target is returned unprojected
        let err = m.solve_ik(&target, &q(&[1.0, 0.3]), &th).unwrap_err();
        assert!(matches!(err, IkError::JointLimitViolation { joint: 0, .. }));
    }

    fn hold_trajectory(pose: Pose) -> PoseTrajectory {
        PoseTrajectory::new(
            BezierPath::point(pose.translation),
            MotionLaw::new(1.5).unwrap(),
            OrientationPlan::new(pose.rotation, pose.rotation, 0.7).unwrap(),
        )
    }

    #[test]
    fn validate_constant_comfortable_pose() {
        let robot = RobotConfig::panda();
        let pose = robot.model.forward_kinematics(&robot.home).unwrap();
        let report = validate_trajectory(&robot.model, &hold_trajectory(pose), &robot.thresholds, 50, &robot.home).unwrap();
        assert!(report.feasible);
        assert_eq!(report.samples.len(), 50);
        assert!(report.samples.iter().all(|r| r.manipulability > robot.thresholds.manipulability_min));
        assert_eq!(report.first_failure, None);
    }

    #[test]
    fn validate_unreachable_tail() {
        let robot = RobotConfig::panda();
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        let far = Vec3::new(1.6, 0.0, 0.4);
        let path = BezierPath::new([
            start.translation,
            start.translation + Vec3::new(0.1, 0.0, 0.0),
            far - Vec3::new(0.1, 0.0, 0.0),
            far,
        ])
        .unwrap();
        let traj = PoseTrajectory::new(
            path,
            MotionLaw::new(3.0).unwrap(),
            OrientationPlan::new(start.rotation, start.rotation, 0.7).unwrap(),
        );
        let report = validate_trajectory(&robot.model, &traj, &robot.thresholds, 20, &robot.home).unwrap();
        assert!(!report.feasible);
        let (s, reason) = report.first_failure.unwrap();
        assert_eq!(reason, FailureReason::NoConvergence);
        assert!(s > 0.0);
    }

    #[test]
    fn validate_threshold_forcing() {
        let robot = RobotConfig::panda();
        let pose = robot.model.forward_kinematics(&robot.home).unwrap();
        let w = robot.model.manipulability(&robot.home).unwrap();
        let th = ValidationThresholds {
            manipulability_min: w * 1.5,
            ..robot.thresholds
        };
        let report = validate_trajectory(&robot.model, &hold_trajectory(pose), &th, 10, &robot.home).unwrap();
        assert!(!report.feasible);
        assert_eq!(report.first_failure, Some((0.0, FailureReason::Manipulability)));
    }

    #[test]
    fn robot_file_errors() {
        assert!(RobotConfig::from_toml_str("name = 'x'").is_err());
        let bad_limits = r#"
            name = "bad"
            home = [0.0, 0.0]
            [[joints]]
            a = 0.0
            d = 0.0
            alpha = 0.0
            q_min = 1.0
            q_max = -1.0
            [[joints]]
            a = 0.0
            d = 0.0
            alpha = 0.0
            q_min = -1.0
            q_max = 1.0
        "#;
        assert!(matches!(
            RobotConfig::from_toml_str(bad_limits),
            Err(KinematicsError::InvalidModel(_))
        ));
    }
}
