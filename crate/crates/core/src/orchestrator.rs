//! Handover state machine and the plan / validate / shrink loop.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand_stream::{grasp_offset_for, in_handover_volume, GraspCatalog, HandoverVolume, StreamError, TaskId};
use crate::kinematics::{
    validate_trajectory, ChainModel, FailureReason, FeasibilityReport, JointConfig, KinematicsError,
    ValidationThresholds,
};
use crate::se3::{grasp_target, FrameTag, FramedPose, Pose, Se3Error, Vec3};
use crate::trajectory::{
    build_control_points, ApproachSpec, BezierPath, MotionLaw, OrientationPlan, PoseTrajectory, TrajectoryError,
    DEFAULT_AVERAGE_SPEED, DEFAULT_LOCK_FACTOR, DEFAULT_MIN_DURATION,
};

/// Start and target closer than this are planned as a pure rotation.
pub const COINCIDENT_DISTANCE: f64 = 1e-9;

/// A start direction within this angle of pointing straight back along the
/// chord is replaced by the chord direction.
pub const START_DIR_FALLBACK_ANGLE: f64 = 5.0 * std::f64::consts::PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandoverMode {
    Static,
    Adaptive,
}

impl HandoverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HandoverMode::Static => "static",
            HandoverMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for HandoverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HandoverMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(HandoverMode::Static),
            "adaptive" => Ok(HandoverMode::Adaptive),
            _ => Err(format!("unknown mode '{s}' (expected static or adaptive)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsmState {
    Idle,
    PickObject,
    AwaitHand,
    Plan,
    Approach,
    OfferHold,
    Release,
    Retract,
    Done,
    Fault,
}

impl FsmState {
    pub fn can_transition_to(self, to: FsmState) -> bool {
        use FsmState::*;
        matches!(
            (self, to),
            (Idle, PickObject)
                | (PickObject, AwaitHand)
                | (AwaitHand, Plan)
                | (Plan, Approach)
                | (Plan, Fault)
                | (Approach, OfferHold)
                | (Approach, Plan)
                | (OfferHold, Release)
                | (Release, Retract)
                | (Retract, Done)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, FsmState::Done | FsmState::Fault)
    }

    /// States in which the arm follows a commanded pose.
    pub fn is_motion(self) -> bool {
        matches!(self, FsmState::Approach | FsmState::OfferHold)
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn default_alpha() -> f64 {
    0.1
}
fn default_alpha_shrink() -> f64 {
    0.8
}
fn default_alpha_min() -> f64 {
    0.02
}
fn default_lock_factor() -> f64 {
    DEFAULT_LOCK_FACTOR
}
fn default_loop_rate() -> f64 {
    30.0
}
fn default_replan_pos() -> f64 {
    0.03
}
fn default_replan_rot() -> f64 {
    0.15
}
fn default_dwell_ticks() -> usize {
    10
}
fn default_average_speed() -> f64 {
    DEFAULT_AVERAGE_SPEED
}
fn default_min_duration() -> f64 {
    DEFAULT_MIN_DURATION
}
fn default_validation_samples() -> usize {
    50
}

/// The `[planner]` section of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    #[serde(default = "default_alpha")]
    pub alpha_s: f64,
    #[serde(default = "default_alpha")]
    pub alpha_a: f64,
    #[serde(default = "default_alpha_shrink")]
    pub alpha_shrink: f64,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    #[serde(default = "default_lock_factor")]
    pub lock_factor: f64,
    #[serde(default = "default_loop_rate")]
    pub loop_rate: f64,
    /// Set to `inf` to disable replanning.
    #[serde(default = "default_replan_pos")]
    pub replan_pos_threshold: f64,
    #[serde(default = "default_replan_rot")]
    pub replan_rot_threshold: f64,
    /// Consecutive in-volume ticks required before an Adaptive plan.
    #[serde(default = "default_dwell_ticks")]
    pub dwell_ticks: usize,
    #[serde(default = "default_average_speed")]
    pub average_speed: f64,
    #[serde(default = "default_min_duration")]
    pub min_duration: f64,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
    /// T̄_B_O.
    pub static_pose: Pose,
    pub handover_volume: HandoverVolume,
}

impl PlannerConfig {
    pub fn new(static_pose: Pose, handover_volume: HandoverVolume) -> Self {
        Self {
            alpha_s: default_alpha(),
            alpha_a: default_alpha(),
            alpha_shrink: default_alpha_shrink(),
            alpha_min: default_alpha_min(),
            lock_factor: default_lock_factor(),
            loop_rate: default_loop_rate(),
            replan_pos_threshold: default_replan_pos(),
            replan_rot_threshold: default_replan_rot(),
            dwell_ticks: default_dwell_ticks(),
            average_speed: default_average_speed(),
            min_duration: default_min_duration(),
            validation_samples: default_validation_samples(),
            static_pose,
            handover_volume,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha_min > 0.0 && self.alpha_min.is_finite()) {
            return Err(format!("alpha_min must be positive, got {}", self.alpha_min));
        }
        if !(self.alpha_min < self.alpha_s && self.alpha_min < self.alpha_a) {
            return Err(format!(
                "alpha_min ({}) must be below alpha_s ({}) and alpha_a ({})",
                self.alpha_min, self.alpha_s, self.alpha_a
            ));
        }
        if !(self.alpha_s.is_finite() && self.alpha_a.is_finite()) {
            return Err("alpha_s and alpha_a must be finite".into());
        }
        if !(self.alpha_shrink > 0.0 && self.alpha_shrink < 1.0) {
            return Err(format!("alpha_shrink must be in (0, 1), got {}", self.alpha_shrink));
        }
        if !(self.lock_factor > 0.0 && self.lock_factor <= 1.0) {
            return Err(format!("lock_factor must be in (0, 1], got {}", self.lock_factor));
        }
        if !(self.loop_rate > 0.0 && self.loop_rate.is_finite()) {
            return Err(format!("loop_rate must be positive, got {}", self.loop_rate));
        }
        if !(self.replan_pos_threshold >= 0.0 && self.replan_rot_threshold >= 0.0) {
            return Err("replan thresholds must be non-negative".into());
        }
        if !(self.average_speed > 0.0 && self.average_speed.is_finite()) {
            return Err(format!("average_speed must be positive, got {}", self.average_speed));
        }
        if !(self.min_duration > 0.0 && self.min_duration.is_finite()) {
            return Err(format!("min_duration must be positive, got {}", self.min_duration));
        }
        if self.validation_samples < 2 {
            return Err("validation_samples must be at least 2".into());
        }
        Ok(())
    }

    /// Upper bound on validations in one plan: one per shrink step plus the first.
    pub fn max_validation_attempts(&self) -> usize {
        let alpha0 = self.alpha_s.max(self.alpha_a);
        let shrinks = ((self.alpha_min / alpha0).ln() / self.alpha_shrink.ln()).ceil().max(0.0);
        shrinks as usize + 1
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("hand position {0:?} is outside the handover volume")]
    HandOutsideVolume([f64; 3]),
    #[error("no feasible trajectory after {attempts} validation attempts")]
    PlanInfeasible {
        attempts: usize,
        scalings: Vec<(f64, f64)>,
        last_failure: Option<(f64, FailureReason)>,
    },
    #[error(transparent)]
    Task(#[from] StreamError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Frame(#[from] Se3Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub trajectory: PoseTrajectory,
    pub report: FeasibilityReport,
    /// Validations run, including the successful one.
    pub attempts: usize,
    /// `(alpha_s, alpha_a)` after each shrink step.
    pub scalings: Vec<(f64, f64)>,
    pub alpha_s: f64,
    pub alpha_a: f64,
}

/// Borrowed planning context shared by both modes.
#[derive(Clone, Copy)]
pub struct Planner<'a> {
    pub config: &'a PlannerConfig,
    pub model: &'a ChainModel,
    pub thresholds: &'a ValidationThresholds,
}

impl<'a> Planner<'a> {
    pub fn new(config: &'a PlannerConfig, model: &'a ChainModel, thresholds: &'a ValidationThresholds) -> Self {
        Self {
            config,
            model,
            thresholds,
        }
    }

    /// Trajectory to `grasp_target(hand, T_H_G)` arriving along the outward palm normal.
    pub fn plan_adaptive(
        &self,
        hand: &Pose,
        task: TaskId,
        catalog: &GraspCatalog,
        current_object: &Pose,
        seed: &JointConfig,
    ) -> Result<PlanOutcome, PlanError> {
        if !in_handover_volume(hand, &self.config.handover_volume) {
            return Err(PlanError::HandOutsideVolume(hand.translation.into()));
        }
        let offset = grasp_offset_for(task, catalog)?;
        let target = grasp_target(
            &FramedPose::new(FrameTag::Base, FrameTag::Hand, *hand),
            &FramedPose::new(FrameTag::Hand, FrameTag::Grasp, offset),
        )?
        .pose;
        let approach = -hand.z_axis();
        self.plan_to(current_object, &target, Some(approach), seed)
    }

    /// Trajectory to the configured static pose, approached along the chord.
    pub fn plan_static(&self, current_object: &Pose, seed: &JointConfig) -> Result<PlanOutcome, PlanError> {
        self.plan_to(current_object, &self.config.static_pose, None, seed)
    }

    fn plan_to(
        &self,
        start: &Pose,
        target: &Pose,
        approach: Option<Vec3>,
        seed: &JointConfig,
    ) -> Result<PlanOutcome, PlanError> {
        let cfg = self.config;
        let chord = target.translation - start.translation;
        let dist = chord.norm();
        let law = MotionLaw::for_distance(dist, cfg.average_speed, cfg.min_duration)?;
        let orientation = OrientationPlan::new(start.rotation, target.rotation, cfg.lock_factor)?;
        let coincident = dist <= COINCIDENT_DISTANCE;
        let (d_s, d_a) = if coincident {
            (Vec3::zeros(), Vec3::zeros())
        } else {
            let along = chord / dist;
            let mut d_s = start.x_axis().normalize();
            if d_s.dot(&along) < -START_DIR_FALLBACK_ANGLE.cos() {
                d_s = along;
            }
            let d_a = approach.map(|a| a.normalize()).unwrap_or(along);
            (d_s, d_a)
        };

        let (mut alpha_s, mut alpha_a) = (cfg.alpha_s, cfg.alpha_a);
        let mut scalings = Vec::new();
        let mut attempts = 0;
        loop {
            let path = if coincident {
                BezierPath::point(start.translation)
            } else {
                let spec = ApproachSpec::new(d_s, d_a, alpha_s, alpha_a)?;
                build_control_points(start.translation, target.translation, &spec)?
            };
            let trajectory = PoseTrajectory::new(path, law, orientation);
            attempts += 1;
            let report = validate_trajectory(self.model, &trajectory, self.thresholds, cfg.validation_samples, seed)?;
            if report.feasible {
                return Ok(PlanOutcome {
                    trajectory,
                    report,
                    attempts,
                    scalings,
                    alpha_s,
                    alpha_a,
                });
            }
            let exhausted = alpha_s <= cfg.alpha_min && alpha_a <= cfg.alpha_min;
            if coincident || exhausted {
                return Err(PlanError::PlanInfeasible {
                    attempts,
                    scalings,
                    last_failure: report.first_failure,
                });
            }
            alpha_s = (alpha_s * cfg.alpha_shrink).max(cfg.alpha_min);
            alpha_a = (alpha_a * cfg.alpha_shrink).max(cfg.alpha_min);
            scalings.push((alpha_s, alpha_a));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FsmEvent {
    Planned {
        attempts: usize,
        alpha_s: f64,
        alpha_a: f64,
        duration: f64,
    },
    Replanned {
        position_deviation: f64,
        rotation_deviation: f64,
    },
    ScaledAlpha {
        alpha_s: f64,
        alpha_a: f64,
    },
    ValidationFailed {
        attempts: usize,
        s: Option<f64>,
        reason: Option<FailureReason>,
        message: String,
    },
    Released,
}

impl FsmEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            FsmEvent::Planned { .. } => "Planned",
            FsmEvent::Replanned { .. } => "Replanned",
            FsmEvent::ScaledAlpha { .. } => "ScaledAlpha",
            FsmEvent::ValidationFailed { .. } => "ValidationFailed",
            FsmEvent::Released => "Released",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickInput {
    pub time: f64,
    /// Latest filtered T_B_H, if any sample has arrived.
    pub hand: Option<Pose>,
    pub task: TaskId,
    pub object_in_gripper: bool,
    pub release: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub s: f64,
    pub speed: f64,
    pub jerk_norm: f64,
}

/// A validated plan as adopted by the FSM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub start_time: f64,
    /// The T_B_H that generated the target (Adaptive only).
    pub hand: Option<Pose>,
    pub target: Pose,
    pub trajectory: PoseTrajectory,
    pub alpha_s: f64,
    pub alpha_a: f64,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutput {
    pub state: FsmState,
    pub commanded_pose: Option<Pose>,
    pub motion: Option<MotionSample>,
    pub events: Vec<FsmEvent>,
    /// Set on the tick a new plan is adopted.
    pub new_plan: Option<PlanRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("invalid transition {from} -> {to}")]
    InvalidTransition { from: FsmState, to: FsmState },
    #[error("tick time {time} does not increase (previous {prev})")]
    NonMonotoneTime { prev: f64, time: f64 },
    #[error("tick time must be finite")]
    NonFiniteTime,
    #[error("invalid configuration: {0}")]
    Config(String),
}

struct ActivePlan {
    record: PlanRecord,
    report: FeasibilityReport,
}

/// Single-owner handover controller, advanced once per loop tick.
pub struct HandoverFsm {
    mode: HandoverMode,
    config: PlannerConfig,
    thresholds: ValidationThresholds,
    catalog: GraspCatalog,
    model: ChainModel,
    state: FsmState,
    joints: JointConfig,
    object_pose: Pose,
    dwell: usize,
    last_inside_hand: Option<Pose>,
    last_time: Option<f64>,
    active: Option<ActivePlan>,
}

impl HandoverFsm {
    /// Starts in `Idle` with the object held at `FK(home)`.
    pub fn new(
        mode: HandoverMode,
        config: PlannerConfig,
        thresholds: ValidationThresholds,
        catalog: GraspCatalog,
        model: ChainModel,
        home: JointConfig,
    ) -> Result<Self, FsmError> {
        config.validate().map_err(FsmError::Config)?;
        thresholds.validate().map_err(FsmError::Config)?;
        let object_pose = model.forward_kinematics(&home).map_err(|e| FsmError::Config(e.to_string()))?;
        Ok(Self {
            mode,
            config,
            thresholds,
            catalog,
            model,
            state: FsmState::Idle,
            joints: home,
            object_pose,
            dwell: 0,
            last_inside_hand: None,
            last_time: None,
            active: None,
        })
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn mode(&self) -> HandoverMode {
        self.mode
    }

    pub fn object_pose(&self) -> &Pose {
        &self.object_pose
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    fn go(&mut self, to: FsmState) -> Result<(), FsmError> {
        if !self.state.can_transition_to(to) {
            return Err(FsmError::InvalidTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }

    pub fn tick(&mut self, input: &TickInput) -> Result<TickOutput, FsmError> {
        if !input.time.is_finite() {
            return Err(FsmError::NonFiniteTime);
        }
        if let Some(prev) = self.last_time {
            if input.time <= prev {
                return Err(FsmError::NonMonotoneTime { prev, time: input.time });
            }
        }
        self.last_time = Some(input.time);

        let inside = input.hand.filter(|h| in_handover_volume(h, &self.config.handover_volume));
        match inside {
            Some(h) => {
                self.dwell += 1;
                self.last_inside_hand = Some(h);
            }
            None => self.dwell = 0,
        }

        let mut out = TickOutput {
            state: self.state,
            commanded_pose: None,
            motion: None,
            events: Vec::new(),
            new_plan: None,
        };
        match self.state {
            FsmState::Idle => self.go(FsmState::PickObject)?,
            FsmState::PickObject => {
                if input.object_in_gripper {
                    self.go(FsmState::AwaitHand)?;
                }
            }
            FsmState::AwaitHand => {
                let ready = match self.mode {
                    HandoverMode::Static => true,
                    HandoverMode::Adaptive => self.dwell >= self.config.dwell_ticks.max(1),
                };
                if ready {
                    self.go(FsmState::Plan)?;
                }
            }
            FsmState::Plan => self.plan(input, &mut out)?,
            FsmState::Approach => self.approach(input, inside, &mut out)?,
            FsmState::OfferHold => {
                let target = self.active.as_ref().expect("plan adopted before OfferHold").record.target;
                out.commanded_pose = Some(target);
                out.motion = Some(MotionSample {
                    s: 1.0,
                    speed: 0.0,
                    jerk_norm: 0.0,
                });
                if input.release {
                    out.events.push(FsmEvent::Released);
                    self.go(FsmState::Release)?;
                    out.commanded_pose = None;
                    out.motion = None;
                }
            }
            FsmState::Release => self.go(FsmState::Retract)?,
            FsmState::Retract => self.go(FsmState::Done)?,
            FsmState::Done | FsmState::Fault => {}
        }
        out.state = self.state;
        debug_assert!(out.commanded_pose.is_none() || out.state.is_motion());
        Ok(out)
    }

    fn plan(&mut self, input: &TickInput, out: &mut TickOutput) -> Result<(), FsmError> {
        let planner = Planner::new(&self.config, &self.model, &self.thresholds);
        let (hand, result) = match self.mode {
            HandoverMode::Static => (None, planner.plan_static(&self.object_pose, &self.joints)),
            HandoverMode::Adaptive => {
                let hand = self.last_inside_hand.expect("dwell satisfied before planning");
                let r = planner.plan_adaptive(&hand, input.task, &self.catalog, &self.object_pose, &self.joints);
                (Some(hand), r)
            }
        };
        match result {
            Ok(plan) => {
                for &(alpha_s, alpha_a) in &plan.scalings {
                    out.events.push(FsmEvent::ScaledAlpha { alpha_s, alpha_a });
                }
                out.events.push(FsmEvent::Planned {
                    attempts: plan.attempts,
                    alpha_s: plan.alpha_s,
                    alpha_a: plan.alpha_a,
                    duration: plan.trajectory.duration(),
                });
                let record = PlanRecord {
                    start_time: input.time,
                    hand,
                    target: plan.trajectory.target_pose(),
                    trajectory: plan.trajectory,
                    alpha_s: plan.alpha_s,
                    alpha_a: plan.alpha_a,
                    attempts: plan.attempts,
                };
                out.new_plan = Some(record.clone());
                self.active = Some(ActivePlan {
                    record,
                    report: plan.report,
                });
                self.go(FsmState::Approach)?;
                self.command(input.time, out);
            }
            Err(err) => {
                let (attempts, last) = match &err {
                    PlanError::PlanInfeasible {
                        attempts,
                        scalings,
                        last_failure,
                    } => {
                        for &(alpha_s, alpha_a) in scalings {
                            out.events.push(FsmEvent::ScaledAlpha { alpha_s, alpha_a });
                        }
                        (*attempts, *last_failure)
                    }
                    _ => (0, None),
                };
                out.events.push(FsmEvent::ValidationFailed {
                    attempts,
                    s: last.map(|l| l.0),
                    reason: last.map(|l| l.1),
                    message: err.to_string(),
                });
                self.active = None;
                self.go(FsmState::Fault)?;
            }
        }
        Ok(())
    }

    /// Fills the commanded pose for the active plan at absolute `time`.
    fn command(&mut self, time: f64, out: &mut TickOutput) {
        let plan = &self.active.as_ref().expect("active plan").record;
        let t = (time - plan.start_time).clamp(0.0, plan.trajectory.duration());
        let sample = plan.trajectory.sample(t).expect("clamped time");
        self.object_pose = sample.pose;
        out.commanded_pose = Some(sample.pose);
        out.motion = Some(MotionSample {
            s: sample.s,
            speed: sample.speed(),
            jerk_norm: sample.jerk_norm(),
        });
    }

    fn approach(&mut self, input: &TickInput, inside: Option<Pose>, out: &mut TickOutput) -> Result<(), FsmError> {
        let active = self.active.as_ref().expect("plan adopted before Approach");
        let elapsed = input.time - active.record.start_time;
        let duration = active.record.trajectory.duration();
        if elapsed >= duration {
            self.joints = active.report.samples.last().map(|r| r.q.clone()).unwrap_or_else(|| self.joints.clone());
            self.go(FsmState::OfferHold)?;
            self.command(input.time, out);
            return Ok(());
        }
        if self.mode == HandoverMode::Adaptive {
            if let (Some(hand), Some(plan_hand)) = (inside, active.record.hand) {
                let (dp, dr) = hand.distance_to(&plan_hand);
                if dp > self.config.replan_pos_threshold || dr > self.config.replan_rot_threshold {
                    // Hold at the last commanded pose and plan again from there.
                    let s_now = active.record.trajectory.law.sample(elapsed).map(|l| l.s).unwrap_or(0.0);
                    if let Some(q) = active.report.joints_near(s_now) {
                        self.joints = q.clone();
                    }
                    out.events.push(FsmEvent::Replanned {
                        position_deviation: dp,
                        rotation_deviation: dr,
                    });
                    self.go(FsmState::Plan)?;
                    return Ok(());
                }
            }
        }
        self.command(input.time, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RobotConfig;
    use crate::se3::UnitQuaternion;
    use std::f64::consts::PI;

    fn volume() -> HandoverVolume {
        HandoverVolume::new(Vec3::new(0.35, -0.3, 0.15), Vec3::new(0.75, 0.3, 0.55)).unwrap()
    }

    fn upright(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_translation(Vec3::new(x, y, z))
    }

    /// Palm up with the fingers pointing along base -y.
    fn palm_up(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(UnitQuaternion::from_axis_angle(&Vec3::z(), -PI / 2.0), Vec3::new(x, y, z))
    }

    fn config() -> PlannerConfig {
        PlannerConfig::new(upright(0.5, 0.0, 0.4), volume())
    }

    fn input(time: f64, hand: Option<Pose>) -> TickInput {
        TickInput {
            time,
            hand,
            task: TaskId::MugDrink,
            object_in_gripper: time >= 0.1,
            release: time >= 4.0,
        }
    }

    fn fsm(mode: HandoverMode, cfg: PlannerConfig) -> HandoverFsm {
        let robot = RobotConfig::panda();
        HandoverFsm::new(mode, cfg, robot.thresholds, GraspCatalog::default_catalog(), robot.model, robot.home).unwrap()
    }

    fn run(fsm: &mut HandoverFsm, hand: impl Fn(f64) -> Option<Pose>, seconds: f64) -> Vec<TickOutput> {
        let mut out = Vec::new();
        let n = (seconds * 30.0) as usize;
        for k in 0..=n {
            let t = k as f64 / 30.0;
            let o = fsm.tick(&input(t, hand(t))).unwrap();
            let done = o.state.is_terminal();
            out.push(o);
            if done {
                break;
            }
        }
        out
    }

    fn kinds(outs: &[TickOutput]) -> Vec<&'static str> {
        outs.iter().flat_map(|o| o.events.iter().map(|e| e.kind())).collect()
    }

    #[test]
    fn transition_graph() {
        use FsmState::*;
        assert!(Idle.can_transition_to(PickObject));
        assert!(Approach.can_transition_to(Plan));
        assert!(!Idle.can_transition_to(Approach));
        assert!(!Done.can_transition_to(Idle));
        assert!(!Fault.can_transition_to(Plan));
        assert!(!OfferHold.can_transition_to(Approach));
    }

    #[test]
    fn config_invariants() {
        let mut c = config();
        assert!(c.validate().is_ok());
        c.alpha_min = 0.2;
        assert!(c.validate().is_err());
        let mut c = config();
        c.alpha_shrink = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(config().max_validation_attempts(), 9);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Adaptive".parse::<HandoverMode>().unwrap(), HandoverMode::Adaptive);
        assert_eq!("static".parse::<HandoverMode>().unwrap(), HandoverMode::Static);
        assert!("dynamic".parse::<HandoverMode>().is_err());
    }

    #[test]
    fn reachable_hand_plans_first_try() {
        let robot = RobotConfig::panda();
        let cfg = config();
        let planner = Planner::new(&cfg, &robot.model, &robot.thresholds);
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        let hand = palm_up(0.55, 0.0, 0.30);
        let plan = planner
            .plan_adaptive(&hand, TaskId::MugDrink, &GraspCatalog::default_catalog(), &start, &robot.home)
            .unwrap();
        assert_eq!(plan.attempts, 1);
        assert!(plan.scalings.is_empty());
        let expected = hand * grasp_offset_for(TaskId::MugDrink, &GraspCatalog::default_catalog()).unwrap();
        let (dp, dr) = plan.trajectory.target_pose().distance_to(&expected);
        assert!(dp < 1e-12 && dr < 1e-12);
        // The arrival tangent is the inward palm normal.
        let d = plan.trajectory.path.derivatives(1.0).unwrap().d1.normalize();
        assert!((d - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn hand_outside_volume_rejected() {
        let robot = RobotConfig::panda();
        let cfg = config();
        let planner = Planner::new(&cfg, &robot.model, &robot.thresholds);
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        let r = planner.plan_adaptive(&palm_up(0.55, 0.0, 0.7), TaskId::MugDrink, &GraspCatalog::default_catalog(), &start, &robot.home);
        assert!(matches!(r, Err(PlanError::HandOutsideVolume(_))));
    }

    #[test]
    fn static_plan_to_current_pose_is_degenerate() {
        let robot = RobotConfig::panda();
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        let cfg = PlannerConfig::new(start, volume());
        let planner = Planner::new(&cfg, &robot.model, &robot.thresholds);
        let plan = planner.plan_static(&start, &robot.home).unwrap();
        assert!(plan.trajectory.path.is_degenerate());
        assert_eq!(plan.attempts, 1);
    }

    #[test]
    fn static_plan_ends_at_static_pose() {
        let robot = RobotConfig::panda();
        let cfg = config();
        let planner = Planner::new(&cfg, &robot.model, &robot.thresholds);
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        let plan = planner.plan_static(&start, &robot.home).unwrap();
        let end = plan.trajectory.pose(plan.trajectory.duration()).unwrap();
        assert_eq!(end, cfg.static_pose);
    }

    #[test]
    fn unreachable_static_pose_is_infeasible_after_bound() {
        let robot = RobotConfig::panda();
        let mut cfg = config();
        cfg.static_pose = upright(1.5, 0.0, 0.4);
        let planner = Planner::new(&cfg, &robot.model, &robot.thresholds);
        let start = robot.model.forward_kinematics(&robot.home).unwrap();
        match planner.plan_static(&start, &robot.home) {
            Err(PlanError::PlanInfeasible { attempts, scalings, .. }) => {
                assert_eq!(attempts, cfg.max_validation_attempts());
                assert_eq!(scalings.len(), 8);
                assert_eq!(scalings.last().unwrap(), &(0.02, 0.02));
            }
            other => panic!("expected PlanInfeasible, got {other:?}"),
        }
    }

    #[test]
    fn nominal_adaptive_run() {
        let mut f = fsm(HandoverMode::Adaptive, config());
        let outs = run(&mut f, |_| Some(palm_up(0.55, 0.0, 0.30)), 6.0);
        assert_eq!(kinds(&outs), vec!["Planned", "Released"]);
        assert_eq!(outs.last().unwrap().state, FsmState::Done);
        let first_offer = outs.iter().find(|o| o.state == FsmState::OfferHold).unwrap();
        let plan = outs.iter().find_map(|o| o.new_plan.clone()).unwrap();
        assert_eq!(first_offer.commanded_pose.unwrap(), plan.target);
        for w in outs.windows(2) {
            let (a, b) = (w[0].state, w[1].state);
            assert!(a == b || a.can_transition_to(b), "{a} -> {b}");
        }
        for o in &outs {
            assert_eq!(o.commanded_pose.is_some(), o.state.is_motion());
        }
    }

    #[test]
    fn adaptive_waits_for_dwell() {
        let mut f = fsm(HandoverMode::Adaptive, config());
        let outs = run(&mut f, |_| Some(palm_up(0.55, 0.0, 0.30)), 1.0);
        let await_ticks = outs.iter().filter(|o| o.state == FsmState::AwaitHand).count();
        // Entered on the tick object_in_gripper first holds; leaves once the dwell count reaches 10.
        let first_plan = outs.iter().position(|o| o.state == FsmState::Approach).unwrap();
        assert!(await_ticks >= 1);
        assert!(first_plan >= 10);
    }

    #[test]
    fn out_of_volume_hand_never_plans_adaptive() {
        let mut f = fsm(HandoverMode::Adaptive, config());
        let outs = run(&mut f, |_| Some(palm_up(0.55, 0.0, 0.70)), 3.0);
        assert_eq!(outs.last().unwrap().state, FsmState::AwaitHand);
        assert!(kinds(&outs).is_empty());
    }

    #[test]
    fn step_hand_replans_once() {
        let hand = |t: f64| Some(if t < 1.0 { palm_up(0.55, -0.05, 0.30) } else { palm_up(0.55, 0.05, 0.30) });
        let mut f = fsm(HandoverMode::Adaptive, config());
        let outs = run(&mut f, hand, 6.0);
        let k = kinds(&outs);
        assert_eq!(k.iter().filter(|e| **e == "Replanned").count(), 1, "{k:?}");
        assert_eq!(outs.last().unwrap().state, FsmState::Done);
        let mut s = fsm(HandoverMode::Static, config());
        let outs = run(&mut s, hand, 6.0);
        assert!(!kinds(&outs).contains(&"Replanned"));
        assert_eq!(outs.last().unwrap().state, FsmState::Done);
    }

    #[test]
    fn time_must_increase() {
        let mut f = fsm(HandoverMode::Static, config());
        f.tick(&input(0.0, None)).unwrap();
        assert!(matches!(f.tick(&input(0.0, None)), Err(FsmError::NonMonotoneTime { .. })));
        assert!(matches!(f.tick(&input(f64::NAN, None)), Err(FsmError::NonFiniteTime)));
    }
}
