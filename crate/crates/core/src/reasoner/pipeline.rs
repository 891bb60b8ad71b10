use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::Backend;
use super::localize::localize;
use super::marking::{mark_scene, MarkedScene};
use super::prompt::synthesize_prompt;
use super::{BoundingBox, Regularity, Scenario};

/// Cycles of textual history kept in the memory buffer.
pub const HISTORY_CAPACITY: usize = 10;

/// Where the robot looks before any target has been selected: straight ahead.
pub const REST_POSITION: [f64; 3] = [1.0, 0.0, 0.0];

/// A complete gaze decision. `mark` and `instance_id` are `None` only for the
/// rest record emitted when the very first cycles fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeTargetRecord {
    /// Cycle in which the target was selected.
    pub t: Option<usize>,
    pub mark: Option<usize>,
    pub instance_id: Option<String>,
    pub category: String,
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_bbox: Option<BoundingBox>,
    pub point_2d: Option<[f64; 2]>,
    /// Base frame, meters.
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub face_fallback: bool,
}

impl GazeTargetRecord {
    pub fn rest() -> Self {
        Self {
            t: None,
            mark: None,
            instance_id: None,
            category: "rest".into(),
            bbox: None,
            face_bbox: None,
            point_2d: None,
            position: REST_POSITION,
            face_fallback: false,
        }
    }

    pub fn summary(&self) -> String {
        match (&self.mark, &self.instance_id, self.t) {
            (Some(m), Some(id), Some(t)) => format!("[{m}] {} ({id}), selected in cycle {t}", self.category),
            _ => "rest pose (straight ahead)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: usize,
    pub semantics: String,
    pub target: String,
}

/// Interaction memory carried from one cycle to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    capacity: usize,
    previous_semantics: Option<String>,
    previous_image: Option<String>,
    previous_record: Option<GazeTargetRecord>,
    history: VecDeque<HistoryEntry>,
}

impl Default for MemoryBuffer {
    fn default() -> Self {
        Self::with_capacity(HISTORY_CAPACITY)
    }
}

impl MemoryBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            previous_semantics: None,
            previous_image: None,
            previous_record: None,
            history: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn previous_semantics(&self) -> Option<&str> {
        self.previous_semantics.as_deref()
    }

    pub fn previous_image(&self) -> Option<&str> {
        self.previous_image.as_deref()
    }

    pub fn previous_record(&self) -> Option<&GazeTargetRecord> {
        self.previous_record.as_ref()
    }

    pub fn history(&self) -> &VecDeque<HistoryEntry> {
        &self.history
    }

    fn advance(&mut self, semantics: String, image: String, record: GazeTargetRecord, entry: HistoryEntry) {
        self.previous_semantics = Some(semantics);
        self.previous_image = Some(image);
        self.previous_record = Some(record);
        self.history.push_back(entry);
        while self.history.len() > self.capacity {
            self.history.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `TARGET: <mark>` line in the response")]
    NoToken,
    #[error("mark {0} is not in the current scene")]
    UnknownMark(String),
}

/// First `TARGET: <n>` token (keyword case-insensitive, brackets around the
/// number allowed), validated against the scene's marks.
pub fn parse_response(raw: &str, marked: &MarkedScene) -> Result<usize, ParseError> {
    let digits = first_target_token(raw).ok_or(ParseError::NoToken)?;
    match digits.parse::<usize>() {
        Ok(m) if marked.instance_for(m).is_some() => Ok(m),
        _ => Err(ParseError::UnknownMark(digits.to_string())),
    }
}

fn first_target_token(raw: &str) -> Option<&str> {
    const KEY: &str = "target:";
    let lower = raw.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(KEY) {
        let start = from + pos + KEY.len();
        let rest = raw[start..].trim_start_matches([' ', '\t']);
        let rest = rest.strip_prefix('[').unwrap_or(rest);
        let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        if end > 0 {
            return Some(&rest[..end]);
        }
        from = start;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fallback {
    EmptyScene,
    Backend { message: String },
    Parse { message: String },
}

/// One output line per cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub t: usize,
    pub record: GazeTargetRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub latency_ms: f64,
}

impl CycleLog {
    /// Instance freshly selected in this cycle (not held over).
    pub fn selected(&self) -> Option<&str> {
        match self.fallback {
            None => self.record.instance_id.as_deref(),
            Some(_) => None,
        }
    }
}

fn hold(buffer: &MemoryBuffer) -> GazeTargetRecord {
    buffer.previous_record().cloned().unwrap_or_else(GazeTargetRecord::rest)
}

/// Runs cycle `t` of `scenario` and advances `buffer`. Never fails: any
/// problem re-emits the previous target and is reported in `fallback`.
pub fn step_cycle(scenario: &Scenario, t: usize, buffer: &mut MemoryBuffer, backend: &mut dyn Backend) -> CycleLog {
    let started = Instant::now();
    let cycle = &scenario.cycles[t];
    let Some(marked) = mark_scene(cycle) else {
        let record = hold(buffer);
        let entry = HistoryEntry {
            t,
            semantics: cycle.semantics.clone(),
            target: format!("held {}", record.summary()),
        };
        buffer.advance(cycle.semantics.clone(), cycle.image.clone(), record.clone(), entry);
        return CycleLog {
            t,
            record,
            fallback: Some(Fallback::EmptyScene),
            response: None,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        };
    };

    let prompt = synthesize_prompt(&marked, buffer);
    let (response, outcome) = match backend.query(t, &prompt) {
        Ok(raw) => {
            let parsed = parse_response(&raw, &marked).map_err(|e| Fallback::Parse { message: e.to_string() });
            (Some(raw), parsed)
        }
        Err(e) => {
            log::warn!("cycle {t}: backend failed: {e}");
            (None, Err(Fallback::Backend { message: e.to_string() }))
        }
    };

    let (record, fallback) = match outcome {
        Ok(mark) => {
            let cand = marked.instance_for(mark).expect("parse validated the mark");
            let inst = cycle
                .instances
                .iter()
                .find(|i| i.id == cand.instance_id)
                .expect("marks index the cycle's instances");
            let loc = localize(inst, &scenario.camera, &scenario.base_from_camera);
            let record = GazeTargetRecord {
                t: Some(t),
                mark: Some(mark),
                instance_id: Some(inst.id.clone()),
                category: inst.category.clone(),
                bbox: Some(inst.bbox),
                face_bbox: inst.face_bbox,
                point_2d: Some(loc.pixel),
                position: loc.position,
                face_fallback: loc.face_fallback,
            };
            (record, None)
        }
        Err(fb) => (hold(buffer), Some(fb)),
    };

    let target = match &fallback {
        None => format!("looked at {}", record.summary()),
        Some(_) => format!("held {}", record.summary()),
    };
    let entry = HistoryEntry {
        t,
        semantics: marked.semantics.clone(),
        target,
    };
    buffer.advance(marked.semantics, marked.image, record.clone(), entry);
    CycleLog {
        t,
        record,
        fallback,
        response,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

/// All cycles of a scenario with a fresh buffer.
pub fn run_scenario(scenario: &Scenario, backend: &mut dyn Backend) -> Vec<CycleLog> {
    let mut buffer = MemoryBuffer::default();
    (0..scenario.cycles.len())
        .map(|t| step_cycle(scenario, t, &mut buffer, backend))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: String,
    pub group: Regularity,
    pub cue_onset: usize,
    pub expected: String,
    /// Fresh selections at `t₀+1` and `t₀+2`.
    pub selected: Vec<Option<String>>,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub trials: usize,
    pub correct: usize,
}

impl GroupStats {
    pub fn success_rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.correct as f64 / self.trials as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub groups: BTreeMap<Regularity, GroupStats>,
    pub trials: Vec<TrialResult>,
    /// Scenarios without a cue onset.
    pub excluded: Vec<String>,
}

impl ReplayReport {
    pub fn new() -> Self {
        Self {
            groups: Regularity::ALL
                .iter()
                .map(|g| (*g, GroupStats { trials: 0, correct: 0 }))
                .collect(),
            trials: Vec::new(),
            excluded: Vec::new(),
        }
    }

    /// Scores one scenario run. A trial counts as correct when the expected
    /// instance is freshly selected in either of the two cycles after the cue
    /// onset; scenarios without a cue onset are listed as excluded.
    pub fn record(&mut self, scenario: &Scenario, logs: &[CycleLog]) {
        let Some(meta) = scenario.evaluation() else {
            log::warn!("scenario `{}` has no cue onset; excluded from replay scoring", scenario.name);
            self.excluded.push(scenario.name.clone());
            return;
        };
        let selected: Vec<Option<String>> = (1..=2)
            .map(|k| logs.get(meta.cue_onset + k).and_then(|l| l.selected()).map(str::to_owned))
            .collect();
        let correct = selected.iter().any(|s| s.as_deref() == Some(meta.expected_target.as_str()));
        let stats = self.groups.get_mut(&scenario.group).expect("all groups present");
        stats.trials += 1;
        stats.correct += usize::from(correct);
        self.trials.push(TrialResult {
            scenario: scenario.name.clone(),
            group: scenario.group,
            cue_onset: meta.cue_onset,
            expected: meta.expected_target,
            selected,
            correct,
        });
    }

    /// Per-group success table.
    pub fn table(&self) -> String {
        let mut out = String::from("| Regularity | Clips | Correct | Success rate (%) |\n|---|---|---|---|\n");
        for (g, s) in &self.groups {
            let rate = s.success_rate().map(|r| format!("{:.1}", 100.0 * r)).unwrap_or_else(|| "n/a".into());
            writeln!(out, "| ({g:?}) {} | {} | {} | {rate} |", g.description(), s.trials, s.correct).unwrap();
        }
        out
    }
}

impl Default for ReplayReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Runs every scored scenario against its backend and tallies the results.
pub fn replay_evaluate(
    scenarios: &[Scenario],
    mut backend_for: impl FnMut(&Scenario) -> Box<dyn Backend>,
) -> ReplayReport {
    let mut report = ReplayReport::new();
    for s in scenarios {
        if s.evaluation().is_none() {
            report.record(s, &[]);
            continue;
        }
        let mut backend = backend_for(s);
        report.record(s, &run_scenario(s, backend.as_mut()));
    }
    report
}
