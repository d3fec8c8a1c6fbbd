//! Scenes, agent tracks and map features, plus the versioned JSON schema.
//!
//! A scene file looks like this (snapshots are flat arrays
//! `[x, y, vx, vy, heading, length, width, valid]`, SI units throughout):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "scene_id": "demo",
//!   "timestep": 0.1,
//!   "map_features": [{ "kind": "RoadEdge", "polyline": [[0, -2], [50, -2]] }],
//!   "tracks": [{
//!     "agent_id": "ego",
//!     "object_type": "Vehicle",
//!     "is_prediction_target": true,
//!     "history": [[0, 0, 10, 0, 0, 4.5, 2, true], "... 11 entries ..."],
//!     "future": ["... 80 entries, or the key is omitted ..."]
//!   }]
//! }
//! ```
//!
//! Numeric fields of invalid snapshots may be written as `null`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

pub const SCHEMA_VERSION: u32 = 1;
/// History snapshots per track: 10 past + 1 current, at 10 Hz.
pub const HISTORY_LEN: usize = 11;
/// Future steps per track: 8 s at 10 Hz.
pub const FUTURE_LEN: usize = 80;
pub const TIMESTEP: f64 = 0.1;
pub const MAX_TARGETS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentSnapshot {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub valid: bool,
}

impl AgentSnapshot {
    pub fn invalid() -> Self {
        AgentSnapshot {
            position: Vec2::ZERO,
            velocity: Vec2::ZERO,
            heading: 0.0,
            length: 0.0,
            width: 0.0,
            valid: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ValidFlag {
    Bool(bool),
    Int(u8),
}

type SnapshotRow = (
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    ValidFlag,
);

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Serialize for AgentSnapshot {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (
            finite_or_null(self.position.x),
            finite_or_null(self.position.y),
            finite_or_null(self.velocity.x),
            finite_or_null(self.velocity.y),
            finite_or_null(self.heading),
            finite_or_null(self.length),
            finite_or_null(self.width),
            self.valid,
        )
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AgentSnapshot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (x, y, vx, vy, heading, length, width, valid) = SnapshotRow::deserialize(d)?;
        let valid = match valid {
            ValidFlag::Bool(b) => b,
            ValidFlag::Int(0) => false,
            ValidFlag::Int(1) => true,
            ValidFlag::Int(other) => {
                return Err(serde::de::Error::custom(format!(
                    "valid flag must be 0 or 1, got {other}"
                )))
            }
        };
        let n = |v: Option<f64>| v.unwrap_or(f64::NAN);
        Ok(AgentSnapshot {
            position: Vec2::new(n(x), n(y)),
            velocity: Vec2::new(n(vx), n(vy)),
            heading: n(heading),
            length: n(length),
            width: n(width),
            valid,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ObjectType {
    pub const ALL: [ObjectType; 3] = [ObjectType::Vehicle, ObjectType::Pedestrian, ObjectType::Cyclist];
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub agent_id: String,
    pub object_type: ObjectType,
    /// Oldest first; the last entry is the current snapshot.
    pub history: Vec<AgentSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub future: Option<Vec<AgentSnapshot>>,
    pub is_prediction_target: bool,
}

impl Track {
    pub fn current(&self) -> Option<&AgentSnapshot> {
        self.history.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapFeatureKind {
    LaneCenter,
    RoadLine,
    RoadEdge,
    Crosswalk,
    StopSign,
    TrafficLightLane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFeature {
    pub kind: MapFeatureKind,
    pub polyline: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_state: Option<LightState>,
}

impl MapFeature {
    pub fn new(kind: MapFeatureKind, polyline: Vec<Vec2>) -> Self {
        MapFeature {
            kind,
            polyline,
            light_state: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneDoc", into = "SceneDoc")]
pub struct Scene {
    pub scene_id: String,
    pub timestep: f64,
    pub map_features: Vec<MapFeature>,
    pub tracks: Vec<Track>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    schema_version: u32,
    scene_id: String,
    timestep: f64,
    map_features: Vec<MapFeature>,
    tracks: Vec<Track>,
}

impl TryFrom<SceneDoc> for Scene {
    type Error = String;

    fn try_from(doc: SceneDoc) -> std::result::Result<Self, String> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            ));
        }
        Ok(Scene {
            scene_id: doc.scene_id,
            timestep: doc.timestep,
            map_features: doc.map_features,
            tracks: doc.tracks,
        })
    }
}

impl From<Scene> for SceneDoc {
    fn from(s: Scene) -> Self {
        SceneDoc {
            schema_version: SCHEMA_VERSION,
            scene_id: s.scene_id,
            timestep: s.timestep,
            map_features: s.map_features,
            tracks: s.tracks,
        }
    }
}

impl Scene {
    pub fn track(&self, agent_id: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.agent_id == agent_id)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_prediction_target)
    }

    /// The scene moved by a rotation about the origin followed by a
    /// translation: `p ↦ R(rotation)·p + translation`.
    pub fn rigid_transformed(&self, rotation: f64, translation: Vec2) -> Scene {
        let point = |p: Vec2| p.rotate(rotation) + translation;
        let snap = |s: &AgentSnapshot| AgentSnapshot {
            position: point(s.position),
            velocity: s.velocity.rotate(rotation),
            heading: if s.heading.is_finite() {
                wrap_angle(s.heading + rotation)
            } else {
                s.heading
            },
            ..*s
        };
        let mut out = self.clone();
        for f in &mut out.map_features {
            f.polyline.iter_mut().for_each(|p| *p = point(*p));
        }
        for t in &mut out.tracks {
            t.history.iter_mut().for_each(|s| *s = snap(s));
            if let Some(future) = &mut t.future {
                future.iter_mut().for_each(|s| *s = snap(s));
            }
        }
        out
    }
}

/// A single failed invariant, located by a field path such as
/// `tracks[2].history`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn check_snapshot(path: &str, s: &AgentSnapshot, out: &mut Vec<Violation>) {
    if !s.valid {
        return;
    }
    let mut push = |message: String| {
        out.push(Violation {
            field: path.to_string(),
            message,
        })
    };
    if !(s.position.is_finite() && s.velocity.is_finite() && s.heading.is_finite()) {
        push("valid snapshot has non-finite state".into());
    }
    if s.heading.is_finite() && !(s.heading > -std::f64::consts::PI && s.heading <= std::f64::consts::PI) {
        push(format!("heading {} outside (-pi, pi]", s.heading));
    }
    if !(s.width > 0.0 && s.length >= s.width) {
        push(format!(
            "extent must satisfy length >= width > 0, got length {} width {}",
            s.length, s.width
        ));
    }
}

/// Checks every scene invariant and returns the violations found. An empty
/// list means the scene is accepted by [`load_scene`].
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    if scene.timestep != TIMESTEP {
        out.push(Violation {
            field: "timestep".into(),
            message: format!("timestep {} != {TIMESTEP}", scene.timestep),
        });
    }

    for (i, f) in scene.map_features.iter().enumerate() {
        let field = format!("map_features[{i}]");
        let min_points = if f.kind == MapFeatureKind::StopSign { 1 } else { 2 };
        if f.polyline.len() < min_points {
            out.push(Violation {
                field: format!("{field}.polyline"),
                message: format!(
                    "{:?} polyline has {} points, needs at least {min_points}",
                    f.kind,
                    f.polyline.len()
                ),
            });
        }
        if f.polyline.iter().any(|p| !p.is_finite()) {
            out.push(Violation {
                field: format!("{field}.polyline"),
                message: "non-finite polyline point".into(),
            });
        }
        if f.light_state.is_some() && f.kind != MapFeatureKind::TrafficLightLane {
            out.push(Violation {
                field: format!("{field}.light_state"),
                message: format!("light_state only allowed on TrafficLightLane, found on {:?}", f.kind),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut targets = 0usize;
    for (i, t) in scene.tracks.iter().enumerate() {
        let field = format!("tracks[{i}]");
        if !seen.insert(t.agent_id.as_str()) {
            out.push(Violation {
                field: format!("{field}.agent_id"),
                message: format!("duplicate agent_id `{}`", t.agent_id),
            });
        }
        if t.history.len() != HISTORY_LEN {
            out.push(Violation {
                field: format!("{field}.history"),
                message: format!("history length {} ≠ {HISTORY_LEN}", t.history.len()),
            });
        }
        for (j, s) in t.history.iter().enumerate() {
            check_snapshot(&format!("{field}.history[{j}]"), s, &mut out);
        }
        if let Some(future) = &t.future {
            if future.len() != FUTURE_LEN {
                out.push(Violation {
                    field: format!("{field}.future"),
                    message: format!("future length {} ≠ {FUTURE_LEN}", future.len()),
                });
            }
            for (j, s) in future.iter().enumerate() {
                check_snapshot(&format!("{field}.future[{j}]"), s, &mut out);
            }
        }
        if t.is_prediction_target {
            targets += 1;
            if !t.current().is_some_and(|c| c.valid) {
                out.push(Violation {
                    field: format!("{field}.history[{}]", t.history.len().saturating_sub(1)),
                    message: format!("current snapshot of prediction target `{}` is invalid", t.agent_id),
                });
            }
        }
    }
    if !(1..=MAX_TARGETS).contains(&targets) {
        out.push(Violation {
            field: "tracks".into(),
            message: format!("{targets} prediction targets, expected 1..={MAX_TARGETS}"),
        });
    }
    out
}

/// Parses and validates a scene from JSON text.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        scene_id: "<unknown>".into(),
        message: e.to_string(),
    })?;
    let scene_id = value
        .get("scene_id")
        .and_then(|v| v.as_str())
        .unwrap_or("<unknown>")
        .to_string();
    let scene: Scene = serde_path_to_error::deserialize(&value).map_err(|e| {
        let field = e.path().to_string();
        Error::Schema {
            scene_id: scene_id.clone(),
            field,
            message: e.into_inner().to_string(),
        }
    })?;
    let violations = validate_scene(&scene);
    if let Some(first) = violations.first() {
        let extra = match violations.len() {
            1 => String::new(),
            n => format!(" (and {} more)", n - 1),
        };
        return Err(Error::Invariant {
            scene_id,
            field: first.field.clone(),
            message: format!("{}{extra}", first.message),
        });
    }
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        scene_id: "<unknown>".into(),
        message: format!("{}: not UTF-8: {e}", path.display()),
    })?;
    parse_scene(&text)
}

pub fn scene_to_json(scene: &Scene) -> String {
    serde_json::to_string(scene).expect("scene serialization is infallible")
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_json(scene)).map_err(|e| Error::io(path, e))
}

/// Loads every `*.json` scene in a directory, sorted by file name. Files
/// whose names start with `_` (e.g. a generation manifest) are skipped.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('_')))
        .collect();
    paths.sort();
    paths.iter().map(load_scene).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn snapshot(x: f64, y: f64, vx: f64, vy: f64) -> AgentSnapshot {
        AgentSnapshot {
            position: Vec2::new(x, y),
            velocity: Vec2::new(vx, vy),
            heading: vy.atan2(vx),
            length: 4.5,
            width: 2.0,
            valid: true,
        }
    }

    pub fn straight_track(id: &str, target: bool) -> Track {
        let history = (0..HISTORY_LEN)
            .map(|i| snapshot((i as f64 - 10.0) * 1.0, 0.0, 10.0, 0.0))
            .collect();
        let future = (1..=FUTURE_LEN).map(|i| snapshot(i as f64, 0.0, 10.0, 0.0)).collect();
        Track {
            agent_id: id.into(),
            object_type: ObjectType::Vehicle,
            history,
            future: Some(future),
            is_prediction_target: target,
        }
    }

    pub fn minimal_scene() -> Scene {
        Scene {
            scene_id: "minimal".into(),
            timestep: TIMESTEP,
            map_features: vec![MapFeature::new(
                MapFeatureKind::RoadEdge,
                vec![Vec2::new(-50.0, -2.0), Vec2::new(50.0, -2.0)],
            )],
            tracks: vec![straight_track("ego", true)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_scene_round_trips() {
        let scene = minimal_scene();
        let parsed = parse_scene(&scene_to_json(&scene)).unwrap();
        assert_eq!(parsed, scene);
        assert_eq!(parsed.tracks.len(), 1);
        assert_eq!(parsed.map_features.len(), 1);
    }

    #[test]
    fn rigid_transform_preserves_relative_geometry() {
        let scene = minimal_scene();
        let moved = scene.rigid_transformed(1.0, Vec2::new(5.0, -2.0));
        let (a, b) = (&scene.tracks[0].history, &moved.tracks[0].history);
        let d0 = a[0].position.distance(a[10].position);
        let d1 = b[0].position.distance(b[10].position);
        assert!((d0 - d1).abs() < 1e-12);
        assert!((wrap_angle(b[3].heading - a[3].heading) - 1.0).abs() < 1e-12);
        assert!(validate_scene(&moved).is_empty());
    }

    #[test]
    fn valid_scene_has_no_violations() {
        assert!(validate_scene(&minimal_scene()).is_empty());
    }

    #[test]
    fn nine_targets_rejected() {
        let mut scene = minimal_scene();
        scene.tracks = (0..9).map(|i| straight_track(&format!("a{i}"), true)).collect();
        match parse_scene(&scene_to_json(&scene)) {
            Err(Error::Invariant { message, scene_id, .. }) => {
                assert!(message.contains('9'), "{message}");
                assert_eq!(scene_id, "minimal");
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn short_history_rejected() {
        let mut scene = minimal_scene();
        scene.tracks[0].history.remove(0);
        match parse_scene(&scene_to_json(&scene)) {
            Err(Error::Invariant { message, field, .. }) => {
                assert_eq!(message, "history length 10 ≠ 11");
                assert_eq!(field, "tracks[0].history");
            }
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_agent_id_is_one_violation() {
        let mut scene = minimal_scene();
        scene.tracks.push(straight_track("ego", false));
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("ego"));
    }

    #[test]
    fn invalid_current_target_is_one_violation() {
        let mut scene = minimal_scene();
        scene.tracks[0].history[HISTORY_LEN - 1] = AgentSnapshot::invalid();
        let v = validate_scene(&scene);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "tracks[0].history[10]");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_scene("{ not json"), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_field_is_schema_error() {
        let mut v: serde_json::Value = serde_json::from_str(&scene_to_json(&minimal_scene())).unwrap();
        v["tracks"][0]["colour"] = serde_json::json!("red");
        match parse_scene(&v.to_string()) {
            Err(Error::Schema { field, scene_id, .. }) => {
                assert!(field.starts_with("tracks[0]"), "{field}");
                assert_eq!(scene_id, "minimal");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let mut v: serde_json::Value = serde_json::from_str(&scene_to_json(&minimal_scene())).unwrap();
        v.as_object_mut().unwrap().remove("timestep");
        assert!(matches!(parse_scene(&v.to_string()), Err(Error::Schema { .. })));
    }

    #[test]
    fn invalid_snapshot_fields_may_be_null() {
        let mut scene = minimal_scene();
        scene.tracks[0].history[0] = AgentSnapshot {
            heading: f64::NAN,
            ..AgentSnapshot::invalid()
        };
        let json = scene_to_json(&scene);
        assert!(json.contains("null"));
        let back = parse_scene(&json).unwrap();
        assert!(back.tracks[0].history[0].heading.is_nan());
        assert!(!back.tracks[0].history[0].valid);
    }

    #[test]
    fn numeric_valid_flag_accepted() {
        let json = scene_to_json(&minimal_scene()).replace("true]", "1]");
        assert!(parse_scene(&json).is_ok());
    }
}
