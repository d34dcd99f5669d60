//! Handover trajectory: a cubic Bézier position path, a minimum-jerk quintic
//! time law and a SLERP orientation plan that locks onto the target early.
//!
//! The geometric path is parameterized by `s in [0, 1]`; the time law maps
//! `t in [0, T]` onto `s`. Both are evaluated independently and combined in
//! [`PoseTrajectory`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{Pose, UnitQuaternion, Vec3, UNIT_TOLERANCE};

/// Default average speed used to size the motion duration (m/s).
pub const DEFAULT_AVERAGE_SPEED: f64 = 0.25;
/// Shortest motion duration the planner will produce (s).
pub const DEFAULT_MIN_DURATION: f64 = 1.5;
/// Default fraction of the path by which the orientation must be settled.
pub const DEFAULT_LOCK_FACTOR: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{0} must be a unit vector")]
    NonUnitDirection(&'static str),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), TrajectoryError> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(TrajectoryError::OutOfRange { name, value, lo, hi })
    }
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Cubic Bézier curve through `p0` and `p3`, shaped by `p1` and `p2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Vec3; 4]", into = "[Vec3; 4]")]
pub struct BezierPath {
    points: [Vec3; 4],
    degenerate: bool,
}

/// Derivatives of the path with respect to `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathDerivatives {
    pub d1: Vec3,
    pub d2: Vec3,
    pub d3: Vec3,
}

impl BezierPath {
    /// Endpoints closer than this are flagged as degenerate.
    pub const DEGENERATE_LENGTH: f64 = 1e-12;

    pub fn new(points: [Vec3; 4]) -> Result<Self, TrajectoryError> {
        if !points.iter().all(finite) {
            return Err(TrajectoryError::NonFinite("control points"));
        }
        let degenerate = (points[3] - points[0]).norm() <= Self::DEGENERATE_LENGTH;
        Ok(Self { points, degenerate })
    }

    /// Zero-length path that stays at `p`.
    pub fn point(p: Vec3) -> Self {
        Self {
            points: [p; 4],
            degenerate: true,
        }
    }

    pub fn points(&self) -> &[Vec3; 4] {
        &self.points
    }

    pub fn p0(&self) -> Vec3 {
        self.points[0]
    }
    pub fn p1(&self) -> Vec3 {
        self.points[1]
    }
    pub fn p2(&self) -> Vec3 {
        self.points[2]
    }
    pub fn p3(&self) -> Vec3 {
        self.points[3]
    }

    /// True when start and end coincide.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn chord_length(&self) -> f64 {
        (self.points[3] - self.points[0]).norm()
    }

    /// Cubic Bernstein evaluation at `s`.
    pub fn position(&self, s: f64) -> Result<Vec3, TrajectoryError> {
        check_range("s", s, 0.0, 1.0)?;
        let [p0, p1, p2, p3] = &self.points;
        let r = 1.0 - s;
        let b0 = r * r * r;
        let b1 = 3.0 * r * r * s;
        let b2 = 3.0 * r * s * s;
        let b3 = s * s * s;
        Ok(p0 * b0 + p1 * b1 + p2 * b2 + p3 * b3)
    }

    pub fn derivatives(&self, s: f64) -> Result<PathDerivatives, TrajectoryError> {
        check_range("s", s, 0.0, 1.0)?;
        let [p0, p1, p2, p3] = &self.points;
        let r = 1.0 - s;
        let d1 = ((p1 - p0) * (r * r) + (p2 - p1) * (2.0 * r * s) + (p3 - p2) * (s * s)) * 3.0;
        let d2 = ((p2 - p1 * 2.0 + p0) * r + (p3 - p2 * 2.0 + p1) * s) * 6.0;
        let d3 = (p3 - p2 * 3.0 + p1 * 3.0 - p0) * 6.0;
        Ok(PathDerivatives { d1, d2, d3 })
    }
}

impl TryFrom<[Vec3; 4]> for BezierPath {
    type Error = TrajectoryError;

    fn try_from(points: [Vec3; 4]) -> Result<Self, Self::Error> {
        BezierPath::new(points)
    }
}

impl From<BezierPath> for [Vec3; 4] {
    fn from(b: BezierPath) -> Self {
        b.points
    }
}

/// Start/approach directions and how far the inner control points reach along them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproachSpec {
    start_dir: Vec3,
    approach_dir: Vec3,
    alpha_s: f64,
    alpha_a: f64,
}

impl ApproachSpec {
    pub fn new(start_dir: Vec3, approach_dir: Vec3, alpha_s: f64, alpha_a: f64) -> Result<Self, TrajectoryError> {
        if !finite(&start_dir) || (start_dir.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(TrajectoryError::NonUnitDirection("start direction"));
        }
        if !finite(&approach_dir) || (approach_dir.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(TrajectoryError::NonUnitDirection("approach direction"));
        }
        if !(alpha_s > 0.0 && alpha_s.is_finite()) {
            return Err(TrajectoryError::NonPositive("alpha_s"));
        }
        if !(alpha_a > 0.0 && alpha_a.is_finite()) {
            return Err(TrajectoryError::NonPositive("alpha_a"));
        }
        Ok(Self {
            start_dir,
            approach_dir,
            alpha_s,
            alpha_a,
        })
    }

    pub fn start_dir(&self) -> Vec3 {
        self.start_dir
    }
    pub fn approach_dir(&self) -> Vec3 {
        self.approach_dir
    }
    pub fn alpha_s(&self) -> f64 {
        self.alpha_s
    }
    pub fn alpha_a(&self) -> f64 {
        self.alpha_a
    }
}

/// `p1 = start + alpha_s·d_s`, `p2 = target − alpha_a·d_a`.
pub fn build_control_points(start: Vec3, target: Vec3, spec: &ApproachSpec) -> Result<BezierPath, TrajectoryError> {
    let p1 = start + spec.start_dir * spec.alpha_s;
    let p2 = target - spec.approach_dir * spec.alpha_a;
    BezierPath::new([start, p1, p2, target])
}

/// Time-law value and its first three time derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeLawSample {
    pub s: f64,
    pub ds: f64,
    pub dds: f64,
    pub ddds: f64,
}

/// Rest-to-rest minimum-jerk quintic `s = 10τ³ − 15τ⁴ + 6τ⁵`, `τ = t/T`.
pub fn quintic_s(t: f64, duration: f64) -> Result<TimeLawSample, TrajectoryError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(TrajectoryError::NonPositive("duration"));
    }
    check_range("t", t, 0.0, duration)?;
    let tau = t / duration;
    let om = 1.0 - tau;
    // Rounding can push the polynomial a few ulps past 1 just before t = T.
    let s = (tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))).clamp(0.0, 1.0);
    let ds = 30.0 * tau * tau * om * om / duration;
    let dds = 60.0 * tau * om * (1.0 - 2.0 * tau) / (duration * duration);
    let ddds = 60.0 * (1.0 - 6.0 * tau + 6.0 * tau * tau) / (duration * duration * duration);
    Ok(TimeLawSample { s, ds, dds, ddds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MotionLaw {
    duration: f64,
}

impl MotionLaw {
    pub fn new(duration: f64) -> Result<Self, TrajectoryError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(TrajectoryError::NonPositive("duration"));
        }
        Ok(Self { duration })
    }

    /// `T = max(min_duration, distance / average_speed)`.
    pub fn for_distance(distance: f64, average_speed: f64, min_duration: f64) -> Result<Self, TrajectoryError> {
        if !(average_speed > 0.0) {
            return Err(TrajectoryError::NonPositive("average speed"));
        }
        Self::new(min_duration.max(distance / average_speed))
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample(&self, t: f64) -> Result<TimeLawSample, TrajectoryError> {
        quintic_s(t, self.duration)
    }

    /// Largest |d³s/dt³|, reached at both ends of the motion.
    pub fn peak_jerk(&self) -> f64 {
        60.0 / (self.duration * self.duration * self.duration)
    }
}

impl TryFrom<f64> for MotionLaw {
    type Error = TrajectoryError;

    fn try_from(d: f64) -> Result<Self, Self::Error> {
        MotionLaw::new(d)
    }
}

impl From<MotionLaw> for f64 {
    fn from(m: MotionLaw) -> f64 {
        m.duration
    }
}

/// SLERP from `start` to `target`, compressed into `s in [0, lock_factor]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OrientationRepr", into = "OrientationRepr")]
pub struct OrientationPlan {
    start: UnitQuaternion,
    target: UnitQuaternion,
    lock_factor: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OrientationRepr {
    pub start: UnitQuaternion,
    pub target: UnitQuaternion,
    pub lock_factor: f64,
}

impl TryFrom<OrientationRepr> for OrientationPlan {
    type Error = TrajectoryError;

    fn try_from(r: OrientationRepr) -> Result<Self, Self::Error> {
        OrientationPlan::new(r.start, r.target, r.lock_factor)
    }
}

impl From<OrientationPlan> for OrientationRepr {
    fn from(p: OrientationPlan) -> Self {
        OrientationRepr {
            start: p.start,
            target: p.target,
            lock_factor: p.lock_factor,
        }
    }
}

impl OrientationPlan {
    pub fn new(start: UnitQuaternion, target: UnitQuaternion, lock_factor: f64) -> Result<Self, TrajectoryError> {
        if !(lock_factor > 0.0 && lock_factor <= 1.0) {
            return Err(TrajectoryError::OutOfRange {
                name: "lock factor",
                value: lock_factor,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self {
            start,
            target,
            lock_factor,
        })
    }

    pub fn start(&self) -> UnitQuaternion {
        self.start
    }
    pub fn target(&self) -> UnitQuaternion {
        self.target
    }
    pub fn lock_factor(&self) -> f64 {
        self.lock_factor
    }

    pub fn orientation(&self, s: f64) -> Result<UnitQuaternion, TrajectoryError> {
        check_range("s", s, 0.0, 1.0)?;
        if s >= self.lock_factor {
            return Ok(self.target);
        }
        Ok(self.start.slerp(&self.target, s / self.lock_factor))
    }
}

/// State of a trajectory at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub s: f64,
    pub pose: Pose,
    pub velocity: Vec3,
    pub jerk: Vec3,
}

impl TrajectorySample {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
    pub fn jerk_norm(&self) -> f64 {
        self.jerk.norm()
    }
}

/// Object pose trajectory `T_B_O(s(t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrajectory {
    pub path: BezierPath,
    pub law: MotionLaw,
    pub orientation: OrientationPlan,
}

impl PoseTrajectory {
    pub fn new(path: BezierPath, law: MotionLaw, orientation: OrientationPlan) -> Self {
        Self {
            path,
            law,
            orientation,
        }
    }

    pub fn duration(&self) -> f64 {
        self.law.duration()
    }

    pub fn start_pose(&self) -> Pose {
        Pose::new(self.orientation.start(), self.path.p0())
    }

    pub fn target_pose(&self) -> Pose {
        Pose::new(self.orientation.target(), self.path.p3())
    }

    /// Pose at path parameter `s`, independent of timing.
    pub fn pose_at_s(&self, s: f64) -> Result<Pose, TrajectoryError> {
        Ok(Pose::new(self.orientation.orientation(s)?, self.path.position(s)?))
    }

    pub fn pose(&self, t: f64) -> Result<Pose, TrajectoryError> {
        let law = self.law.sample(t)?;
        self.pose_at_s(law.s)
    }

    /// Pose plus Cartesian velocity and jerk via the chain rule.
    pub fn sample(&self, t: f64) -> Result<TrajectorySample, TrajectoryError> {
        let law = self.law.sample(t)?;
        let d = self.path.derivatives(law.s)?;
        Ok(TrajectorySample {
            t,
            s: law.s,
            pose: self.pose_at_s(law.s)?,
            velocity: d.d1 * law.ds,
            jerk: cartesian_jerk(&d, &law),
        })
    }

    /// Largest translational jerk norm over `n_samples` evenly spaced instants,
    /// both ends included.
    pub fn max_cartesian_jerk(&self, n_samples: usize) -> f64 {
        assert!(n_samples >= 2, "need at least two samples");
        let t_end = self.duration();
        (0..n_samples)
            .map(|i| {
                let t = t_end * i as f64 / (n_samples - 1) as f64;
                let law = self.law.sample(t.min(t_end)).expect("t within [0, T]");
                let d = self.path.derivatives(law.s).expect("s within [0, 1]");
                cartesian_jerk(&d, &law).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `p''' = d1·s''' + 3·d2·s'·s'' + d3·s'^3`
pub fn cartesian_jerk(d: &PathDerivatives, law: &TimeLawSample) -> Vec3 {
    d.d1 * law.ddds + d.d2 * (3.0 * law.ds * law.dds) + d.d3 * (law.ds * law.ds * law.ds)
}
