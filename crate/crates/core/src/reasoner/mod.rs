//! Gaze reasoning over scripted scenario streams.
//!
//! One cycle runs mark → prompt → backend → parse → localize, then advances
//! the interaction memory. Any failure along the way holds the previous gaze
//! target, so every cycle emits a record.

mod backend;
mod localize;
mod marking;
mod pipeline;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::so3::RotationMatrix;

pub use backend::{
    request_body, Backend, BackendError, RemoteBackend, RemoteConfig, ScriptedBackend, CYCLE_BUDGET,
    MAX_REMOTE_TIMEOUT,
};
pub use localize::{back_project, localize, project, Localized};
pub use marking::{mark_scene, MarkedCandidate, MarkedScene};
pub use pipeline::{
    parse_response, replay_evaluate, run_scenario, step_cycle, CycleLog, Fallback, GazeTargetRecord, GroupStats, HistoryEntry,
    MemoryBuffer, ParseError, ReplayReport, TrialResult, HISTORY_CAPACITY, REST_POSITION,
};
pub use prompt::{synthesize_prompt, Prompt, SYSTEM_INSTRUCTIONS};

pub const SCENARIO_FORMAT: &str = "rgs-scenario";
pub const SCENARIO_VERSION: u32 = 1;

/// Category treated as a human (face box preferred for localization).
pub const PERSON: &str = "person";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario i/o ({path}): {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario json")]
    Json(#[from] serde_json::Error),
    #[error("scenario `{scenario}`: {message}")]
    Invalid { scenario: String, message: String },
}

/// Gaze-orienting regularity a scenario probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regularity {
    H1,
    H2,
    H3,
    H4,
}

impl Regularity {
    pub const ALL: [Regularity; 4] = [Regularity::H1, Regularity::H2, Regularity::H3, Regularity::H4];

    pub fn description(self) -> &'static str {
        match self {
            Regularity::H1 => "Deictic orienting of attention",
            Regularity::H2 => "Social orienting reflex",
            Regularity::H3 => "Turn-taking",
            Regularity::H4 => "Responsive joint attention",
        }
    }
}

/// Axis-aligned pixel box `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x0, y0, x1, y1]: [f64; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x0..=self.x1).contains(&p[0]) && (self.y0..=self.y1).contains(&p[1])
    }

    fn is_valid_within(&self, width: f64, height: f64) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= width
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

/// `p_base = rotation · p_camera + translation`; rotation is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * p + Vector3::from(self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Stable across cycles.
    pub id: String,
    pub category: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_bbox: Option<BoundingBox>,
    /// Representative depth along the optical axis, meters.
    pub depth: f64,
}

impl Instance {
    pub fn is_person(&self) -> bool {
        self.category == PERSON
    }
}

/// One timestamp-aligned observation. `semantics` refers to instances with
/// `{instance-id}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCycle {
    pub t: usize,
    pub semantics: String,
    pub image: String,
    pub instances: Vec<Instance>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cue_onset: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_target: Option<String>,
}

/// A scripted interaction clip. `scripts` holds canned backend responses,
/// keyed by script name and then by cycle index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub group: Regularity,
    #[serde(default)]
    pub description: String,
    pub camera: Camera,
    pub base_from_camera: RigidTransform,
    pub cycles: Vec<ScenarioCycle>,
    #[serde(default)]
    pub scripts: BTreeMap<String, BTreeMap<usize, String>>,
}

/// Cue onset and the instance expected to be selected after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationMeta {
    pub cue_onset: usize,
    pub expected_target: String,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// All `*.json` scenarios in a directory, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, ScenarioError> {
        let io = |source| ScenarioError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        paths.iter().map(|p| Self::load(p)).collect()
    }

    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            scenario: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.format != SCENARIO_FORMAT || self.version != SCENARIO_VERSION {
            return Err(self.invalid(format!("unsupported format {} v{}", self.format, self.version)));
        }
        let cam = &self.camera;
        if !(cam.fx > 0.0 && cam.fy > 0.0 && cam.width > 0.0 && cam.height > 0.0)
            || ![cam.cx, cam.cy].iter().all(|v| v.is_finite())
        {
            return Err(self.invalid("intrinsics need fx, fy, width, height > 0"));
        }
        RotationMatrix::try_from_matrix(self.base_from_camera.matrix())
            .map_err(|e| self.invalid(format!("base_from_camera: {e}")))?;
        if !self.base_from_camera.translation.iter().all(|v| v.is_finite()) {
            return Err(self.invalid("base_from_camera translation must be finite"));
        }
        let mut onsets = 0;
        for (i, cycle) in self.cycles.iter().enumerate() {
            if cycle.t != i {
                return Err(self.invalid(format!("cycle at position {i} has t = {}", cycle.t)));
            }
            let mut ids = BTreeSet::new();
            for inst in &cycle.instances {
                if !ids.insert(inst.id.as_str()) {
                    return Err(self.invalid(format!("cycle {i}: duplicate instance id `{}`", inst.id)));
                }
                let boxes_ok = inst.bbox.is_valid_within(cam.width, cam.height)
                    && inst.face_bbox.is_none_or(|f| f.is_valid_within(cam.width, cam.height));
                if !boxes_ok {
                    return Err(self.invalid(format!("cycle {i}: `{}` has a box outside the image", inst.id)));
                }
                if !(inst.depth > 0.0 && inst.depth.is_finite()) {
                    return Err(self.invalid(format!("cycle {i}: `{}` needs depth > 0", inst.id)));
                }
            }
            for id in marking::placeholders(&cycle.semantics) {
                if !ids.contains(id) {
                    return Err(self.invalid(format!("cycle {i}: semantics mention unknown instance `{id}`")));
                }
            }
            if cycle.cue_onset {
                onsets += 1;
                if cycle.expected_target.is_none() {
                    return Err(self.invalid(format!("cycle {i}: cue onset without an expected target")));
                }
            }
        }
        if onsets > 1 {
            return Err(self.invalid("more than one cue-onset cycle"));
        }
        for (name, script) in &self.scripts {
            if let Some(t) = script.keys().find(|t| **t >= self.cycles.len()) {
                return Err(self.invalid(format!("script `{name}` answers cycle {t}, which does not exist")));
            }
        }
        Ok(())
    }

    pub fn evaluation(&self) -> Option<EvaluationMeta> {
        self.cycles.iter().find(|c| c.cue_onset).map(|c| EvaluationMeta {
            cue_onset: c.t,
            expected_target: c.expected_target.clone().expect("validated"),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
