//! Simulated-time scenario runner, run logs, metrics, mode comparison and
//! trajectory export.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand_stream::{apply_noise, smooth, to_base_frame, TaskId};
use crate::orchestrator::{FsmError, FsmEvent, FsmState, HandoverFsm, HandoverMode, MotionSample, PlanRecord, TickInput};
use crate::scenario::{Override, Scenario, ScenarioError, ScriptedEventKind};
use crate::se3::Pose;
use crate::trajectory::PoseTrajectory;

pub const LOG_FORMAT_VERSION: u32 = 1;

/// Grid size used for the jerk metric.
pub const JERK_SAMPLES: usize = 1000;

/// Orientation counts as settled once within this angle of the target.
pub const SETTLE_ANGLE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("state machine error: {0}")]
    Fsm(#[from] FsmError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("log format error: {0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format_version: u32,
    pub scenario_id: String,
    pub mode: HandoverMode,
    pub task: TaskId,
    pub config_digest: String,
    pub seed: u64,
    pub loop_rate: f64,
    /// Simulated seconds available to the run.
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub index: usize,
    pub time: f64,
    pub state: FsmState,
    pub commanded_pose: Option<Pose>,
    pub motion: Option<MotionSample>,
    pub events: Vec<FsmEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub tick: usize,
    pub time: f64,
    pub event: FsmEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Duration of the last adopted plan (0 if none).
    #[serde(rename = "duration_T")]
    pub duration_t: f64,
    /// Distance from the last commanded pose to the last plan target.
    pub final_pos_error: Option<f64>,
    pub final_rot_error: Option<f64>,
    /// Largest translational jerk over all adopted plans.
    pub max_cartesian_jerk: f64,
    /// First path parameter at which the last plan's orientation is locked.
    pub orientation_settle_s: Option<f64>,
    pub n_replans: usize,
    pub n_alpha_scalings: usize,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub ticks: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
    pub events: Vec<LoggedEvent>,
    pub terminal_state: FsmState,
    pub metrics: RunMetrics,
}

impl RunLog {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run log serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// 0 iff the run reached `Done` with every plan feasible, otherwise 1.
    pub fn exit_code(&self) -> i32 {
        if self.terminal_state == FsmState::Done && self.metrics.feasible {
            0
        } else {
            1
        }
    }

    pub fn final_commanded_pose(&self) -> Option<Pose> {
        self.ticks.iter().rev().find_map(|t| t.commanded_pose)
    }

    pub fn count_events(&self, kind: &str) -> usize {
        self.events.iter().filter(|e| e.event.kind() == kind).count()
    }
}

/// Loads the scenario at `path` with `overrides` and runs it.
pub fn run_scenario_file(path: &Path, mode: HandoverMode, overrides: &[Override]) -> Result<RunLog, HarnessError> {
    let scenario = Scenario::load(path, overrides)?;
    run_scenario(&scenario, mode)
}

/// Runs `scenario` in simulated time at the planner loop rate.
///
/// Every hand sample due by a tick goes through noise, calibration and
/// smoothing in stream order; the FSM sees the latest filtered pose. The run
/// stops at a terminal state or when the scenario duration is used up.
pub fn run_scenario(scenario: &Scenario, mode: HandoverMode) -> Result<RunLog, HarnessError> {
    let rate = scenario.planner.loop_rate;
    let mut fsm = HandoverFsm::new(
        mode,
        scenario.planner.clone(),
        scenario.robot.thresholds,
        scenario.catalog.clone(),
        scenario.robot.model.clone(),
        scenario.robot.home.clone(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise.rng_seed());
    let mut next_sample = 0;
    let mut filtered: Option<Pose> = None;
    let mut ticks = Vec::new();
    let mut plans = Vec::new();
    let mut events = Vec::new();

    let last_tick = (scenario.duration * rate + 1e-9).floor() as usize;
    for index in 0..=last_tick {
        let time = index as f64 / rate;
        while let Some(sample) = scenario.stream.get(next_sample) {
            if sample.timestamp > time {
                break;
            }
            next_sample += 1;
            if let Some(noisy) = apply_noise(sample, &scenario.noise, &mut rng) {
                let raw = to_base_frame(&noisy, &scenario.calibration).expect("calibration is Base->Camera").pose;
                filtered = Some(smooth(filtered.as_ref(), &raw, &scenario.smoothing));
            }
        }
        let input = TickInput {
            time,
            hand: filtered,
            task: scenario.task,
            object_in_gripper: scenario.signal(ScriptedEventKind::ObjectInGripper, time),
            release: scenario.signal(ScriptedEventKind::Release, time),
        };
        let out = fsm.tick(&input)?;
        if let Some(plan) = out.new_plan {
            plans.push(plan);
        }
        for e in &out.events {
            events.push(LoggedEvent {
                tick: index,
                time,
                event: e.clone(),
            });
        }
        ticks.push(TickRecord {
            index,
            time,
            state: out.state,
            commanded_pose: out.commanded_pose,
            motion: out.motion,
            events: out.events,
        });
        if out.state.is_terminal() {
            break;
        }
    }

    let terminal_state = fsm.state();
    let header = RunHeader {
        format_version: LOG_FORMAT_VERSION,
        scenario_id: scenario.id.clone(),
        mode,
        task: scenario.task,
        config_digest: scenario.digest.clone(),
        seed: scenario.noise.rng_seed(),
        loop_rate: rate,
        duration: scenario.duration,
    };
    let metrics = compute_metrics(&ticks, &plans, &events, terminal_state);
    Ok(RunLog {
        header,
        ticks,
        plans,
        events,
        terminal_state,
        metrics,
    })
}

fn compute_metrics(ticks: &[TickRecord], plans: &[PlanRecord], events: &[LoggedEvent], terminal: FsmState) -> RunMetrics {
    let last_plan = plans.last();
    let final_pose = ticks.iter().rev().find_map(|t| t.commanded_pose);
    let (final_pos_error, final_rot_error) = match (final_pose, last_plan) {
        (Some(p), Some(plan)) => {
            let (dp, dr) = p.distance_to(&plan.target);
            (Some(dp), Some(dr))
        }
        _ => (None, None),
    };
    let count = |kind: &str| events.iter().filter(|e| e.event.kind() == kind).count();
    RunMetrics {
        duration_t: last_plan.map_or(0.0, |p| p.trajectory.duration()),
        final_pos_error,
        final_rot_error,
        max_cartesian_jerk: plans
            .iter()
            .map(|p| p.trajectory.max_cartesian_jerk(JERK_SAMPLES))
            .fold(0.0, f64::max),
        orientation_settle_s: last_plan.map(|p| orientation_settle_s(&p.trajectory)),
        n_replans: count("Replanned"),
        n_alpha_scalings: count("ScaledAlpha"),
        feasible: terminal != FsmState::Fault && count("ValidationFailed") == 0,
    }
}

/// Smallest path parameter from which the orientation stays at the target,
/// found by bisection on the (monotone) remaining angle.
pub fn orientation_settle_s(traj: &PoseTrajectory) -> f64 {
    let target = traj.orientation.target();
    let settled = |s: f64| traj.orientation.orientation(s).expect("s in range").angle_to(&target) <= SETTLE_ANGLE;
    if settled(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if settled(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: HandoverMode,
    pub terminal_state: FsmState,
    pub exit_code: i32,
    pub final_pose: Option<Pose>,
    pub metrics: RunMetrics,
}

impl ModeSummary {
    fn from_log(log: &RunLog) -> Self {
        Self {
            mode: log.header.mode,
            terminal_state: log.terminal_state,
            exit_code: log.exit_code(),
            final_pose: log.final_commanded_pose(),
            metrics: log.metrics.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub adaptive: ModeSummary,
    #[serde(rename = "static")]
    pub static_mode: ModeSummary,
    /// Adaptive final position minus Static final position.
    pub final_translation_delta: Option<[f64; 3]>,
    /// Rotation angle between the two final orientations.
    pub final_rotation_delta: Option<f64>,
}

impl ComparisonReport {
    pub fn exit_code(&self) -> i32 {
        self.adaptive.exit_code.max(self.static_mode.exit_code)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Side-by-side plain-text table.
    pub fn render(&self) -> String {
        fn sci(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
        }
        fn fixed(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
        }
        let a = &self.adaptive;
        let s = &self.static_mode;
        let rows: Vec<(&str, String, String, String)> = vec![
            ("terminal_state", a.terminal_state.to_string(), s.terminal_state.to_string(), String::new()),
            ("feasible", a.metrics.feasible.to_string(), s.metrics.feasible.to_string(), String::new()),
            (
                "duration_T [s]",
                format!("{:.6}", a.metrics.duration_t),
                format!("{:.6}", s.metrics.duration_t),
                format!("{:+.6}", a.metrics.duration_t - s.metrics.duration_t),
            ),
            ("final_pos_error [m]", sci(a.metrics.final_pos_error), sci(s.metrics.final_pos_error), String::new()),
            ("final_rot_error [rad]", sci(a.metrics.final_rot_error), sci(s.metrics.final_rot_error), String::new()),
            (
                "max_cartesian_jerk [m/s^3]",
                format!("{:.6}", a.metrics.max_cartesian_jerk),
                format!("{:.6}", s.metrics.max_cartesian_jerk),
                format!("{:+.6}", a.metrics.max_cartesian_jerk - s.metrics.max_cartesian_jerk),
            ),
            (
                "orientation_settle_s",
                fixed(a.metrics.orientation_settle_s),
                fixed(s.metrics.orientation_settle_s),
                String::new(),
            ),
            (
                "n_replans",
                a.metrics.n_replans.to_string(),
                s.metrics.n_replans.to_string(),
                format!("{:+}", a.metrics.n_replans as i64 - s.metrics.n_replans as i64),
            ),
            (
                "n_alpha_scalings",
                a.metrics.n_alpha_scalings.to_string(),
                s.metrics.n_alpha_scalings.to_string(),
                format!("{:+}", a.metrics.n_alpha_scalings as i64 - s.metrics.n_alpha_scalings as i64),
            ),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}", self.scenario_id);
        let _ = writeln!(out, "digest:   {}", self.config_digest);
        let _ = writeln!(out, "seed:     {}", self.seed);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<28} {:>16} {:>16} {:>16}", "metric", "adaptive", "static", "delta");
        for (name, av, sv, d) in rows {
            let _ = writeln!(out, "{name:<28} {av:>16} {sv:>16} {d:>16}");
        }
        let delta = match (self.final_translation_delta, self.final_rotation_delta) {
            (Some([x, y, z]), Some(r)) => format!("dx={x:+.6} dy={y:+.6} dz={z:+.6} [m], angle={r:.6} [rad]"),
            _ => "n/a".to_string(),
        };
        let _ = writeln!(out, "{:<28} {delta}", "final pose delta");
        out
    }
}

/// Runs both modes on the same scenario, seed and hand inputs.
pub fn compare_modes(scenario: &Scenario) -> Result<ComparisonReport, HarnessError> {
    let (adaptive, static_log) = std::thread::scope(|scope| {
        let a = scope.spawn(|| run_scenario(scenario, HandoverMode::Adaptive));
        let s = run_scenario(scenario, HandoverMode::Static);
        (a.join().expect("adaptive run thread"), s)
    });
    let (adaptive, static_log) = (adaptive?, static_log?);
    let a = ModeSummary::from_log(&adaptive);
    let s = ModeSummary::from_log(&static_log);
    let (final_translation_delta, final_rotation_delta) = match (a.final_pose, s.final_pose) {
        (Some(pa), Some(ps)) => (
            Some((pa.translation - ps.translation).into()),
            Some(pa.rotation.angle_to(&ps.rotation)),
        ),
        _ => (None, None),
    };
    Ok(ComparisonReport {
        scenario_id: scenario.id.clone(),
        config_digest: scenario.digest.clone(),
        seed: scenario.noise.rng_seed(),
        adaptive: a,
        static_mode: s,
        final_translation_delta,
        final_rotation_delta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ExportFormat::Json,
            _ => ExportFormat::Csv,
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(format!("unknown export format '{s}' (expected csv or json)")),
        }
    }
}

pub const EXPORT_COLUMNS: [&str; 12] = ["t", "s", "x", "y", "z", "qw", "qx", "qy", "qz", "speed", "jerk_norm", "state"];

/// One exported motion sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub speed: f64,
    pub jerk_norm: f64,
    pub state: FsmState,
}

/// Ticks spent moving along a plan: every `Approach` tick plus the arrival
/// tick that enters `OfferHold`.
pub fn motion_records(log: &RunLog) -> Vec<ExportRecord> {
    let mut out = Vec::new();
    let mut prev = FsmState::Idle;
    for tick in &log.ticks {
        let arriving = tick.state == FsmState::OfferHold && prev == FsmState::Approach;
        prev = tick.state;
        if !(tick.state == FsmState::Approach || arriving) {
            continue;
        }
        let (Some(pose), Some(m)) = (tick.commanded_pose, tick.motion) else {
            continue;
        };
        let [qw, qx, qy, qz] = pose.rotation.wxyz();
        out.push(ExportRecord {
            t: tick.time,
            s: m.s,
            x: pose.translation.x,
            y: pose.translation.y,
            z: pose.translation.z,
            qw,
            qx,
            qy,
            qz,
            speed: m.speed,
            jerk_norm: m.jerk_norm,
            state: tick.state,
        });
    }
    out
}

pub fn write_records<W: Write>(records: &[ExportRecord], format: ExportFormat, writer: W) -> Result<(), HarnessError> {
    let fmt_err = |e: &dyn std::fmt::Display| HarnessError::Format(e.to_string());
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
            w.write_record(EXPORT_COLUMNS).map_err(|e| fmt_err(&e))?;
            for r in records {
                w.serialize(r).map_err(|e| fmt_err(&e))?;
            }
            w.flush().map_err(|e| fmt_err(&e))?;
        }
        ExportFormat::Json => {
            let mut w = writer;
            serde_json::to_writer_pretty(&mut w, records).map_err(|e| fmt_err(&e))?;
            w.write_all(b"\n").map_err(|e| fmt_err(&e))?;
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(format: ExportFormat, reader: R) -> Result<Vec<ExportRecord>, HarnessError> {
    match format {
        ExportFormat::Csv => {
            let mut r = csv::Reader::from_reader(reader);
            let headers = r.headers().map_err(|e| HarnessError::Format(e.to_string()))?;
            if headers.iter().ne(EXPORT_COLUMNS) {
                return Err(HarnessError::Format(format!("unexpected CSV header: {headers:?}")));
            }
            r.deserialize()
                .collect::<Result<Vec<ExportRecord>, _>>()
                .map_err(|e| HarnessError::Format(e.to_string()))
        }
        ExportFormat::Json => serde_json::from_reader(reader).map_err(|e| HarnessError::Format(e.to_string())),
    }
}

/// Writes the motion samples of `log` to `path`.
pub fn export_trajectory(log: &RunLog, format: ExportFormat, path: &Path) -> Result<usize, HarnessError> {
    let records = motion_records(log);
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_records(&records, format, std::io::BufWriter::new(file))?;
    Ok(records.len())
}

pub fn import_trajectory(format: ExportFormat, path: &Path) -> Result<Vec<ExportRecord>, HarnessError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_records(format, std::io::BufReader::new(file))
}
