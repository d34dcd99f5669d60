//! Recorded hand poses: stream records, calibration into the base frame,
//! smoothing, the handover volume and the per-task grasp offsets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{
    back_project, hand_in_base, CameraIntrinsics, FrameTag, FramedPose, Pose, PoseRepr, Se3Error, UnitQuaternion, Vec3,
};

pub const DEFAULT_CATALOG_TOML: &str = include_str!("../data/grasp_catalog.toml");

/// Grasp offsets further than this from the palm are rejected as typos.
pub const MAX_OFFSET_DISTANCE: f64 = 0.5;

pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.3;

/// Repeat expansions are capped so a bad `rate_hz` cannot exhaust memory.
const MAX_REPEAT_SAMPLES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("hand.samples[{index}].{field}: {message}")]
    Field {
        index: usize,
        field: &'static str,
        message: String,
    },
    #[error("hand.samples[{index}]: timestamp {t} does not increase (previous {prev})")]
    NonMonotone { index: usize, t: f64, prev: f64 },
    #[error("grasp catalog has no entry for task {0}")]
    MissingTask(TaskId),
    #[error("grasp catalog lists task {0} twice")]
    DuplicateTask(TaskId),
    #[error("grasp offset for {task}: {message}")]
    InvalidOffset { task: TaskId, message: String },
    #[error("invalid {name}: {message}")]
    InvalidSpec { name: &'static str, message: String },
    #[error("catalog parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    MugDrink,
    MugPass,
    MugDishwasher,
    PhonePlace,
    PhonePass,
    PhoneCharge,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::MugDrink,
        TaskId::MugPass,
        TaskId::MugDishwasher,
        TaskId::PhonePlace,
        TaskId::PhonePass,
        TaskId::PhoneCharge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskId::MugDrink => "MugDrink",
            TaskId::MugPass => "MugPass",
            TaskId::MugDishwasher => "MugDishwasher",
            TaskId::PhonePlace => "PhonePlace",
            TaskId::PhonePass => "PhonePass",
            TaskId::PhoneCharge => "PhoneCharge",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraspOffset {
    pub task: TaskId,
    /// T_H_G.
    pub offset: Pose,
    pub description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspEntry {
    task: TaskId,
    #[serde(default)]
    description: String,
    position: [f64; 3],
    #[serde(default = "identity_wxyz")]
    quaternion: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    grasp: Vec<GraspEntry>,
}

/// Task-to-offset table. Every task appears at most once; lookups for absent
/// tasks fail with [`StreamError::MissingTask`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraspCatalog {
    entries: Vec<GraspOffset>,
}

impl GraspCatalog {
    pub fn new(entries: Vec<GraspOffset>) -> Result<Self, StreamError> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.task == e.task) {
                return Err(StreamError::DuplicateTask(e.task));
            }
            let d = e.offset.translation.norm();
            if d >= MAX_OFFSET_DISTANCE {
                return Err(StreamError::InvalidOffset {
                    task: e.task,
                    message: format!("translation magnitude {d} m exceeds {MAX_OFFSET_DISTANCE} m"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, StreamError> {
        let file: CatalogFile = toml::from_str(text)?;
        Self::from_entries(file.grasp)
    }

    pub(crate) fn from_value(value: toml::Value) -> Result<Self, StreamError> {
        let file = CatalogFile::deserialize(value)?;
        Self::from_entries(file.grasp)
    }

    fn from_entries(raw: Vec<GraspEntry>) -> Result<Self, StreamError> {
        let mut entries = Vec::with_capacity(raw.len());
        for e in raw {
            let repr = PoseRepr {
                position: e.position,
                quaternion: e.quaternion,
            };
            let offset = Pose::try_from(repr).map_err(|err| StreamError::InvalidOffset {
                task: e.task,
                message: err.to_string(),
            })?;
            entries.push(GraspOffset {
                task: e.task,
                offset,
                description: e.description,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, StreamError> {
        let text = std::fs::read_to_string(path).map_err(|source| StreamError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The bundled placeholder catalog.
    pub fn default_catalog() -> Self {
        Self::from_toml_str(DEFAULT_CATALOG_TOML).expect("bundled grasp catalog is valid")
    }

    pub fn entries(&self) -> &[GraspOffset] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, task: TaskId) -> Option<&GraspOffset> {
        self.entries.iter().find(|e| e.task == task)
    }

    pub fn is_complete(&self) -> bool {
        TaskId::ALL.iter().all(|t| self.get(*t).is_some())
    }
}

/// T_H_G for `task`.
pub fn grasp_offset_for(task: TaskId, catalog: &GraspCatalog) -> Result<Pose, StreamError> {
    catalog.get(task).map(|e| e.offset).ok_or(StreamError::MissingTask(task))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelObservation {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// One hand observation in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HandSample {
    pub timestamp: f64,
    /// T_C_H. For pixel-encoded streams the translation is the back-projection.
    pub pose: Pose,
    pub pixel: Option<PixelObservation>,
}

impl HandSample {
    pub fn from_pose(timestamp: f64, pose: Pose) -> Self {
        Self {
            timestamp,
            pose,
            pixel: None,
        }
    }

    pub fn framed(&self) -> FramedPose {
        FramedPose::new(FrameTag::Camera, FrameTag::Hand, self.pose)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandEncoding {
    Pose,
    PixelDepth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Repeat {
    /// Last timestamp (inclusive) to emit.
    pub until: f64,
    pub rate_hz: f64,
}

/// A hand record as written in the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quaternion: Option<[f64; 4]>,
    /// Emits copies of this sample at `rate_hz` up to `until`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<Repeat>,
}

/// The `[hand]` section of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub encoding: HandEncoding,
    #[serde(default)]
    pub samples: Vec<SampleRecord>,
}

fn field_err(index: usize, field: &'static str, message: impl Into<String>) -> StreamError {
    StreamError::Field {
        index,
        field,
        message: message.into(),
    }
}

fn decode_record(
    index: usize,
    rec: &SampleRecord,
    encoding: HandEncoding,
    k: &CameraIntrinsics,
) -> Result<(Pose, Option<PixelObservation>), StreamError> {
    if !rec.t.is_finite() {
        return Err(field_err(index, "t", "must be finite"));
    }
    let rotation = match rec.quaternion {
        Some([w, x, y, z]) => UnitQuaternion::new(w, x, y, z).map_err(|e| field_err(index, "quaternion", e.to_string()))?,
        None => UnitQuaternion::IDENTITY,
    };
    match encoding {
        HandEncoding::Pose => {
            if rec.pixel.is_some() || rec.depth.is_some() {
                return Err(field_err(index, "pixel", "not allowed in a pose-encoded stream"));
            }
            let p = rec.position.ok_or_else(|| field_err(index, "position", "missing"))?;
            if p.iter().any(|c| !c.is_finite()) {
                return Err(field_err(index, "position", "must be finite"));
            }
            Ok((Pose::new(rotation, Vec3::from(p)), None))
        }
        HandEncoding::PixelDepth => {
            if rec.position.is_some() {
                return Err(field_err(index, "position", "not allowed in a pixel_depth stream"));
            }
            let [u, v] = rec.pixel.ok_or_else(|| field_err(index, "pixel", "missing"))?;
            let depth = rec.depth.ok_or_else(|| field_err(index, "depth", "missing"))?;
            let p = back_project(u, v, depth, k).map_err(|e| match e {
                Se3Error::NonPositiveDepth(_) => field_err(index, "depth", e.to_string()),
                _ => field_err(index, "pixel", e.to_string()),
            })?;
            Ok((Pose::new(rotation, p), Some(PixelObservation { u, v, depth })))
        }
    }
}

/// Decodes, expands and checks the records of a `[hand]` section.
///
/// Pixel records are back-projected with `intrinsics`. Timestamps must be
/// strictly increasing after repeat expansion.
pub fn load_stream(section: &StreamSection, intrinsics: &CameraIntrinsics) -> Result<Vec<HandSample>, StreamError> {
    let mut out: Vec<HandSample> = Vec::with_capacity(section.samples.len());
    for (index, rec) in section.samples.iter().enumerate() {
        let (pose, pixel) = decode_record(index, rec, section.encoding, intrinsics)?;
        let mut push = |t: f64| -> Result<(), StreamError> {
            if let Some(prev) = out.last() {
                if t <= prev.timestamp {
                    return Err(StreamError::NonMonotone {
                        index,
                        t,
                        prev: prev.timestamp,
                    });
                }
            }
            out.push(HandSample {
                timestamp: t,
                pose,
                pixel,
            });
            Ok(())
        };
        match rec.repeat {
            None => push(rec.t)?,
            Some(rep) => {
                if !(rep.rate_hz > 0.0 && rep.rate_hz.is_finite()) {
                    return Err(field_err(index, "repeat", "rate_hz must be positive"));
                }
                if !(rep.until >= rec.t && rep.until.is_finite()) {
                    return Err(field_err(index, "repeat", "until must be finite and not before t"));
                }
                // Integer stepping keeps the timestamps free of accumulated drift.
                let n = ((rep.until - rec.t) * rep.rate_hz + 1e-9).floor() as usize;
                if n >= MAX_REPEAT_SAMPLES {
                    return Err(field_err(index, "repeat", "expands to too many samples"));
                }
                for i in 0..=n {
                    push(rec.t + i as f64 / rep.rate_hz)?;
                }
            }
        }
    }
    Ok(out)
}

/// T_B_H from a camera-frame sample and the T_B_C calibration.
pub fn to_base_frame(sample: &HandSample, calib: &FramedPose) -> Result<FramedPose, Se3Error> {
    hand_in_base(calib, &sample.framed())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    None,
    ExponentialMa,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SmoothingRepr", into = "SmoothingRepr")]
pub struct SmoothingSpec {
    kind: SmoothingKind,
    alpha: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingRepr {
    pub kind: SmoothingKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_SMOOTHING_ALPHA
}

impl TryFrom<SmoothingRepr> for SmoothingSpec {
    type Error = StreamError;

    fn try_from(r: SmoothingRepr) -> Result<Self, Self::Error> {
        SmoothingSpec::new(r.kind, r.alpha)
    }
}

impl From<SmoothingSpec> for SmoothingRepr {
    fn from(s: SmoothingSpec) -> Self {
        SmoothingRepr {
            kind: s.kind,
            alpha: s.alpha,
        }
    }
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            kind: SmoothingKind::ExponentialMa,
            alpha: DEFAULT_SMOOTHING_ALPHA,
        }
    }
}

impl SmoothingSpec {
    pub fn new(kind: SmoothingKind, alpha: f64) -> Result<Self, StreamError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(StreamError::InvalidSpec {
                name: "smoothing",
                message: format!("alpha must be in (0, 1], got {alpha}"),
            });
        }
        Ok(Self { kind, alpha })
    }

    pub fn none() -> Self {
        Self {
            kind: SmoothingKind::None,
            alpha: 1.0,
        }
    }

    pub fn kind(&self) -> SmoothingKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// One exponential-moving-average step toward `raw`. The first sample passes
/// through unchanged.
pub fn smooth(prev_filtered: Option<&Pose>, raw: &Pose, spec: &SmoothingSpec) -> Pose {
    let prev = match (spec.kind, prev_filtered) {
        (SmoothingKind::ExponentialMa, Some(p)) if spec.alpha < 1.0 => p,
        _ => return *raw,
    };
    let a = spec.alpha;
    let translation = prev.translation + (raw.translation - prev.translation) * a;
    let rotation = prev.rotation.slerp(&raw.rotation, a);
    Pose::new(rotation, translation)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseRepr", into = "NoiseRepr")]
pub struct NoiseSpec {
    position_sigma: f64,
    rotation_sigma: f64,
    dropout_prob: f64,
    rng_seed: u64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRepr {
    #[serde(default)]
    pub position_sigma: f64,
    #[serde(default)]
    pub rotation_sigma: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl TryFrom<NoiseRepr> for NoiseSpec {
    type Error = StreamError;

    fn try_from(r: NoiseRepr) -> Result<Self, Self::Error> {
        NoiseSpec::new(r.position_sigma, r.rotation_sigma, r.dropout_prob, r.rng_seed)
    }
}

impl From<NoiseSpec> for NoiseRepr {
    fn from(n: NoiseSpec) -> Self {
        NoiseRepr {
            position_sigma: n.position_sigma,
            rotation_sigma: n.rotation_sigma,
            dropout_prob: n.dropout_prob,
            rng_seed: n.rng_seed,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            position_sigma: 0.0,
            rotation_sigma: 0.0,
            dropout_prob: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn new(position_sigma: f64, rotation_sigma: f64, dropout_prob: f64, rng_seed: u64) -> Result<Self, StreamError> {
        let bad = |message: String| StreamError::InvalidSpec { name: "noise", message };
        if !(position_sigma >= 0.0 && position_sigma.is_finite()) {
            return Err(bad(format!("position_sigma must be >= 0, got {position_sigma}")));
        }
        if !(rotation_sigma >= 0.0 && rotation_sigma.is_finite()) {
            return Err(bad(format!("rotation_sigma must be >= 0, got {rotation_sigma}")));
        }
        if !(0.0..1.0).contains(&dropout_prob) {
            return Err(bad(format!("dropout_prob must be in [0, 1), got {dropout_prob}")));
        }
        Ok(Self {
            position_sigma,
            rotation_sigma,
            dropout_prob,
            rng_seed,
        })
    }

    pub fn position_sigma(&self) -> f64 {
        self.position_sigma
    }
    pub fn rotation_sigma(&self) -> f64 {
        self.rotation_sigma
    }
    pub fn dropout_prob(&self) -> f64 {
        self.dropout_prob
    }
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        Self { rng_seed, ..self }
    }
}

/// Perturbs a camera-frame sample, or drops it.
///
/// Draw order per call: one uniform for dropout, then three normals for the
/// position and three for a rotation vector applied on the left. Draws for a
/// zero sigma are skipped, so a zero spec leaves the sample bit-identical.
pub fn apply_noise<R: Rng + ?Sized>(sample: &HandSample, spec: &NoiseSpec, rng: &mut R) -> Option<HandSample> {
    if spec.dropout_prob > 0.0 && rng.gen::<f64>() < spec.dropout_prob {
        return None;
    }
    let mut out = sample.clone();
    if spec.position_sigma > 0.0 {
        let n = Normal::new(0.0, spec.position_sigma).expect("validated sigma");
        let d = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        out.pose.translation += d;
    }
    if spec.rotation_sigma > 0.0 {
        let n = Normal::new(0.0, spec.rotation_sigma).expect("validated sigma");
        let v = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        out.pose.rotation = UnitQuaternion::from_rotation_vector(&v) * out.pose.rotation;
    }
    Some(out)
}

/// Axis-aligned box in the base frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VolumeRepr", into = "VolumeRepr")]
pub struct HandoverVolume {
    min: Vec3,
    max: Vec3,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeRepr {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl TryFrom<VolumeRepr> for HandoverVolume {
    type Error = StreamError;

    fn try_from(r: VolumeRepr) -> Result<Self, Self::Error> {
        HandoverVolume::new(Vec3::from(r.min), Vec3::from(r.max))
    }
}

impl From<HandoverVolume> for VolumeRepr {
    fn from(v: HandoverVolume) -> Self {
        VolumeRepr {
            min: v.min.into(),
            max: v.max.into(),
        }
    }
}

impl HandoverVolume {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, StreamError> {
        for i in 0..3 {
            if !(min[i] < max[i]) || !min[i].is_finite() || !max[i].is_finite() {
                return Err(StreamError::InvalidSpec {
                    name: "handover volume",
                    message: format!("min must be below max on every axis (axis {i}: {} vs {})", min[i], max[i]),
                });
            }
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

/// Inclusive containment test of the hand position.
pub fn in_handover_volume(pose: &Pose, volume: &HandoverVolume) -> bool {
    volume.contains(&pose.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0).unwrap()
    }

    fn section(text: &str) -> StreamSection {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn empty_stream() {
        let s = section("encoding = \"pose\"");
        assert!(load_stream(&s, &k()).unwrap().is_empty());
    }

    #[test]
    fn single_pose_sample() {
        let s = section(
            "encoding = \"pose\"\n[[samples]]\nt = 0.5\nposition = [0.1, -0.2, 0.7]\nquaternion = [0.0, 1.0, 0.0, 0.0]\n",
        );
        let out = load_stream(&s, &k()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].timestamp, 0.5);
        assert_eq!(out[0].pose.translation, Vec3::new(0.1, -0.2, 0.7));
        assert_eq!(out[0].pose.rotation.wxyz(), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn principal_point_back_projects_onto_axis() {
        let s = section("encoding = \"pixel_depth\"\n[[samples]]\nt = 0.0\npixel = [320.0, 240.0]\ndepth = 0.6\n");
        let out = load_stream(&s, &k()).unwrap();
        assert_eq!(out[0].pose.translation, Vec3::new(0.0, 0.0, 0.6));
        assert_eq!(out[0].pose.rotation, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn record_errors_name_the_field() {
        let s = section("encoding = \"pixel_depth\"\n[[samples]]\nt = 0.0\npixel = [1.0, 2.0]\n");
        let e = load_stream(&s, &k()).unwrap_err();
        assert!(matches!(e, StreamError::Field { index: 0, field: "depth", .. }), "{e}");
        let s = section("encoding = \"pose\"\n[[samples]]\nt = 0.0\npixel = [1.0, 2.0]\ndepth = 1.0\n");
        assert!(load_stream(&s, &k()).is_err());
        let s = section("encoding = \"pixel_depth\"\n[[samples]]\nt = 0.0\npixel = [1.0, 2.0]\ndepth = -1.0\n");
        let e = load_stream(&s, &k()).unwrap_err();
        assert!(e.to_string().contains("samples[0].depth"), "{e}");
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let s = section(
            "encoding = \"pose\"\n[[samples]]\nt = 1.0\nposition = [0,0,1]\n[[samples]]\nt = 1.0\nposition = [0,0,1]\n",
        );
        assert!(matches!(load_stream(&s, &k()), Err(StreamError::NonMonotone { index: 1, .. })));
    }

    #[test]
    fn repeat_expands_on_an_exact_grid() {
        let s = section(
            "encoding = \"pose\"\n[[samples]]\nt = 0.0\nposition = [0,0,1]\nrepeat = { until = 1.0, rate_hz = 30.0 }\n\
             [[samples]]\nt = 1.05\nposition = [0,0,2]\n",
        );
        let out = load_stream(&s, &k()).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(out[30].timestamp, 1.0);
        assert_eq!(out[3].timestamp, 3.0 / 30.0);
        assert_eq!(out[31].pose.translation.z, 2.0);
    }

    #[test]
    fn default_catalog_has_one_entry_per_task() {
        let c = GraspCatalog::default_catalog();
        assert_eq!(c.len(), 6);
        assert!(c.is_complete());
        let drink = grasp_offset_for(TaskId::MugDrink, &c).unwrap();
        assert_eq!(drink.translation, Vec3::new(0.0, 0.0, 0.08));
        assert_eq!(drink.rotation, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn catalog_errors() {
        let c = GraspCatalog::from_toml_str("[[grasp]]\ntask = \"PhonePass\"\nposition = [0,0,0]\n").unwrap();
        assert_eq!(grasp_offset_for(TaskId::PhonePass, &c).unwrap(), Pose::IDENTITY);
        assert!(matches!(grasp_offset_for(TaskId::MugDrink, &c), Err(StreamError::MissingTask(TaskId::MugDrink))));
        assert!(GraspCatalog::from_toml_str("[[grasp]]\ntask = \"Teapot\"\nposition = [0,0,0]\n").is_err());
        assert!(GraspCatalog::from_toml_str("[[grasp]]\ntask = \"MugPass\"\nposition = [0,0,0.6]\n").is_err());
        let dup = "[[grasp]]\ntask = \"MugPass\"\nposition = [0,0,0]\n[[grasp]]\ntask = \"MugPass\"\nposition = [0,0,0]\n";
        assert!(matches!(GraspCatalog::from_toml_str(dup), Err(StreamError::DuplicateTask(_))));
    }

    #[test]
    fn smoothing_examples() {
        let raw = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let prev = Pose::IDENTITY;
        assert_eq!(smooth(Some(&prev), &raw, &SmoothingSpec::none()), raw);
        let one = SmoothingSpec::new(SmoothingKind::ExponentialMa, 1.0).unwrap();
        assert_eq!(smooth(Some(&prev), &raw, &one), raw);
        let half = SmoothingSpec::new(SmoothingKind::ExponentialMa, 0.5).unwrap();
        assert_eq!(smooth(Some(&prev), &raw, &half).translation, Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(smooth(None, &raw, &half), raw);
        assert!(SmoothingSpec::new(SmoothingKind::ExponentialMa, 0.0).is_err());
        assert!(SmoothingSpec::new(SmoothingKind::ExponentialMa, 1.5).is_err());
    }

    #[test]
    fn volume_containment() {
        let v = HandoverVolume::new(Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.7, 0.2, 0.5)).unwrap();
        let at = |x, y, z| Pose::from_translation(Vec3::new(x, y, z));
        assert!(in_handover_volume(&at(0.5, 0.0, 0.3), &v));
        assert!(in_handover_volume(&at(0.3, -0.2, 0.1), &v));
        assert!(in_handover_volume(&at(0.7, 0.2, 0.5), &v));
        assert!(!in_handover_volume(&at(0.701, 0.0, 0.3), &v));
        assert!(!in_handover_volume(&at(0.5, -0.201, 0.3), &v));
        assert!(!in_handover_volume(&at(0.5, 0.0, 0.099), &v));
        assert!(HandoverVolume::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = HandSample::from_pose(0.1, Pose::new(UnitQuaternion::from_rotation_vector(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(0.1, 0.2, 0.3)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_noise(&s, &NoiseSpec::default(), &mut rng), Some(s));
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let spec = NoiseSpec::new(0.01, 0.02, 0.2, 9).unwrap();
        let s = HandSample::from_pose(0.0, Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| apply_noise(&s, &spec, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn dropout_pass_through_matches_binomial() {
        let eps = 0.05;
        let n = 10_000;
        let spec = NoiseSpec::new(0.0, 0.0, 1.0 - eps, 3).unwrap();
        let s = HandSample::from_pose(0.0, Pose::IDENTITY);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kept = (0..n).filter(|_| apply_noise(&s, &spec, &mut rng).is_some()).count() as f64;
        let mean = eps * n as f64;
        let sd = (n as f64 * eps * (1.0 - eps)).sqrt();
        assert!((kept - mean).abs() <= 4.0 * sd, "kept {kept}, expected {mean} +- {}", 4.0 * sd);
    }

    #[test]
    fn noise_spec_ranges() {
        assert!(NoiseSpec::new(-0.1, 0.0, 0.0, 0).is_err());
        assert!(NoiseSpec::new(0.0, -0.1, 0.0, 0).is_err());
        assert!(NoiseSpec::new(0.0, 0.0, 1.0, 0).is_err());
        assert!(NoiseSpec::new(0.0, 0.0, 0.999, 0).is_ok());
    }

    #[test]
    fn calibration_applies_on_the_left() {
        let calib = FramedPose::new(
            FrameTag::Base,
            FrameTag::Camera,
            Pose::new(UnitQuaternion::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2), Vec3::new(1.0, 0.0, 0.5)),
        );
        let s = HandSample::from_pose(0.0, Pose::from_translation(Vec3::new(0.2, 0.0, 0.0)));
        let hb = to_base_frame(&s, &calib).unwrap();
        assert_eq!(hb.parent, FrameTag::Base);
        assert_eq!(hb.child, FrameTag::Hand);
        assert!((hb.pose.translation - Vec3::new(1.0, 0.2, 0.5)).norm() < 1e-12);
    }
}
