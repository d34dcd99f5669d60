//! Scenario files: one TOML document describing the camera, calibration,
//! planner, robot, grasp catalog, hand stream and scripted events.
//!
//! Overrides are applied to the parsed document before anything is
//! interpreted, so they are validated exactly like file content and they
//! take part in the config digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hand_stream::{
    grasp_offset_for, load_stream, GraspCatalog, HandSample, NoiseSpec, SmoothingSpec, StreamError, StreamSection,
    TaskId, DEFAULT_CATALOG_TOML,
};
use crate::kinematics::{KinematicsError, RobotConfig, ValidationThresholds, PANDA_TOML};
use crate::orchestrator::PlannerConfig;
use crate::se3::{CameraIntrinsics, FrameTag, FramedPose, Pose};

/// Reference value that selects the bundled grasp catalog.
pub const BUILTIN_CATALOG: &str = "builtin";
/// Reference value that selects the bundled robot model.
pub const BUILTIN_ROBOT: &str = "panda";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {source}")]
    Toml {
        origin: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid field {field}: {message}")]
    Field { field: String, message: String },
    #[error("invalid override '{0}': {1}")]
    Override(String, String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("robot model: {0}")]
    Robot(#[from] KinematicsError),
}

fn field(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

/// A `key=value` assignment into the scenario document. The key is a dotted
/// path of table names; the value is parsed as a TOML value and falls back to
/// a plain string.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
    raw: String,
}

impl Override {
    pub fn parse(raw: &str) -> Result<Self, ScenarioError> {
        let bad = |m: &str| ScenarioError::Override(raw.to_string(), m.to_string());
        let (key, value) = raw.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(bad("empty key segment"));
        }
        let text = value.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {text}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(text.to_string()),
        };
        Ok(Self {
            path,
            value,
            raw: raw.to_string(),
        })
    }

    pub fn seed(seed: u64) -> Self {
        Self {
            path: vec!["noise".into(), "rng_seed".into()],
            value: toml::Value::Integer(seed as i64),
            raw: format!("noise.rng_seed={seed}"),
        }
    }

    pub fn apply(&self, doc: &mut toml::Table) -> Result<(), ScenarioError> {
        let (last, parents) = self.path.split_last().expect("non-empty path");
        let mut table = doc;
        for (i, seg) in parents.iter().enumerate() {
            let entry = table
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| {
                ScenarioError::Override(self.raw.clone(), format!("{} is not a table", self.path[..=i].join(".")))
            })?;
        }
        table.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedEventKind {
    ObjectInGripper,
    Release,
}

/// A latched signal: once its time has passed it stays asserted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub t: f64,
    pub kind: ScriptedEventKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: String,
    task: TaskId,
    duration: f64,
    #[serde(default)]
    description: String,
    camera: CameraIntrinsics,
    calibration: Pose,
    planner: PlannerConfig,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    smoothing: SmoothingSpec,
    hand: StreamSection,
    #[serde(default)]
    events: Vec<ScriptedEvent>,
}

/// A fully resolved and validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: String,
    pub description: String,
    pub task: TaskId,
    /// Simulated run length in seconds.
    pub duration: f64,
    pub intrinsics: CameraIntrinsics,
    /// T_B_C.
    pub calibration: FramedPose,
    pub planner: PlannerConfig,
    /// Robot model with scenario threshold overrides merged in.
    pub robot: RobotConfig,
    pub catalog: GraspCatalog,
    pub noise: NoiseSpec,
    pub smoothing: SmoothingSpec,
    pub stream: Vec<HandSample>,
    pub events: Vec<ScriptedEvent>,
    /// Hex SHA-256 of the canonical resolved configuration.
    pub digest: String,
}

impl Scenario {
    pub fn load(path: &Path, overrides: &[Override]) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base, overrides)
    }

    /// Parses `text`; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, origin: &str, base_dir: &Path, overrides: &[Override]) -> Result<Self, ScenarioError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|source| ScenarioError::Toml {
            origin: origin.to_string(),
            source,
        })?;
        for o in overrides {
            o.apply(&mut doc)?;
        }
        let digest_doc = toml::Value::Table(doc.clone());

        let (catalog, catalog_source) = resolve_catalog(doc.remove("grasp_catalog"), base_dir)?;
        let (robot_source, robot_text) = resolve_robot(doc.remove("robot"), base_dir)?;
        let threshold_patch = doc.remove("thresholds");

        let mut robot = RobotConfig::from_toml_str(&robot_text)?;
        if let Some(patch) = threshold_patch {
            robot.thresholds = merge_thresholds(&robot.thresholds, patch)?;
        }

        let file = ScenarioFile::deserialize(toml::Value::Table(doc)).map_err(|source| ScenarioError::Toml {
            origin: origin.to_string(),
            source,
        })?;
        if !(file.duration > 0.0 && file.duration.is_finite()) {
            return Err(field("duration", format!("must be positive, got {}", file.duration)));
        }
        file.planner.validate().map_err(|m| field("planner", m))?;
        grasp_offset_for(file.task, &catalog)?;
        for (i, e) in file.events.iter().enumerate() {
            if !(e.t >= 0.0 && e.t.is_finite()) {
                return Err(field(&format!("events[{i}].t"), "must be finite and non-negative"));
            }
        }
        let stream = load_stream(&file.hand, &file.camera)?;

        let canonical = serde_json::json!({
            "scenario": digest_doc,
            "catalog_source": catalog_source,
            "catalog": catalog,
            "robot_source": robot_source,
            "robot": robot_text,
        });
        let digest = hex::encode(Sha256::digest(canonical.to_string().as_bytes()));

        Ok(Self {
            id: file.id,
            description: file.description,
            task: file.task,
            duration: file.duration,
            intrinsics: file.camera,
            calibration: FramedPose::new(FrameTag::Base, FrameTag::Camera, file.calibration),
            planner: file.planner,
            robot,
            catalog,
            noise: file.noise,
            smoothing: file.smoothing,
            stream,
            events: file.events,
            digest,
        })
    }

    /// Whether a latched scripted signal of `kind` is asserted at `time`.
    pub fn signal(&self, kind: ScriptedEventKind, time: f64) -> bool {
        self.events.iter().any(|e| e.kind == kind && e.t <= time)
    }
}

fn resolve_path(base_dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The catalog plus a description of where it came from, for the digest.
fn resolve_catalog(value: Option<toml::Value>, base_dir: &Path) -> Result<(GraspCatalog, String), ScenarioError> {
    match value {
        None => Err(field("grasp_catalog", "missing (use \"builtin\", a file path or an inline table)")),
        Some(toml::Value::String(s)) if s == BUILTIN_CATALOG => {
            Ok((GraspCatalog::from_toml_str(DEFAULT_CATALOG_TOML)?, BUILTIN_CATALOG.into()))
        }
        Some(toml::Value::String(s)) => {
            let path = resolve_path(base_dir, &s);
            let text = read(&path)?;
            let catalog = GraspCatalog::from_toml_str(&text).map_err(|e| match e {
                StreamError::Parse(source) => ScenarioError::Toml {
                    origin: path.display().to_string(),
                    source,
                },
                other => other.into(),
            })?;
            Ok((catalog, s))
        }
        Some(v @ toml::Value::Table(_)) => Ok((GraspCatalog::from_value(v)?, "inline".into())),
        Some(_) => Err(field("grasp_catalog", "expected a string or a table")),
    }
}

/// Returns the reference as written and the model file text.
fn resolve_robot(value: Option<toml::Value>, base_dir: &Path) -> Result<(String, String), ScenarioError> {
    match value {
        None => Ok((BUILTIN_ROBOT.into(), PANDA_TOML.into())),
        Some(toml::Value::String(s)) if s == BUILTIN_ROBOT => Ok((s, PANDA_TOML.into())),
        Some(toml::Value::String(s)) => {
            let text = read(&resolve_path(base_dir, &s))?;
            Ok((s, text))
        }
        Some(_) => Err(field("robot", "expected \"panda\" or a model file path")),
    }
}

fn merge_thresholds(base: &ValidationThresholds, patch: toml::Value) -> Result<ValidationThresholds, ScenarioError> {
    let patch = match patch {
        toml::Value::Table(t) => t,
        _ => return Err(field("thresholds", "expected a table")),
    };
    let mut merged = toml::Table::try_from(base).expect("thresholds serialize to a table");
    for (k, v) in patch {
        merged.insert(k, v);
    }
    let th = ValidationThresholds::deserialize(toml::Value::Table(merged)).map_err(|e| field("thresholds", e.to_string()))?;
    th.validate().map_err(|m| field("thresholds", m))?;
    Ok(th)
}
