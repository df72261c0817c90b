//! Trial manifests: one JSON object per line describing a trial, its
//! subject, cohort/outcome labels and the per-view frame locations (for raw
//! datasets) or sequence lengths (for feature-space datasets).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{Label, ViewId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Expert,
    Novice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

/// Which binary question the labels answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ExpertNovice,
    SuccessFailure,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "expert-novice" => Ok(Task::ExpertNovice),
            "success-failure" => Ok(Task::SuccessFailure),
            other => Err(Error::usage(format!(
                "unknown task '{other}' (expected expert-novice or success-failure)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::ExpertNovice => "expert-novice",
            Task::SuccessFailure => "success-failure",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewEntry {
    pub view: ViewId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
    pub frame_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialManifest {
    pub trial_id: String,
    pub subject_id: String,
    pub cohort: Cohort,
    pub outcome: Outcome,
    pub views: Vec<ViewEntry>,
}

impl TrialManifest {
    /// The binary label of this trial under the given task. Class1 is the
    /// positive class: expert, or success.
    pub fn label(&self, task: Task) -> Label {
        match task {
            Task::ExpertNovice => match self.cohort {
                Cohort::Expert => Label::Class1,
                Cohort::Novice => Label::Class0,
            },
            Task::SuccessFailure => match self.outcome {
                Outcome::Success => Label::Class1,
                Outcome::Failure => Label::Class0,
            },
        }
    }
}

pub fn save_manifest(path: &Path, trials: &[TrialManifest]) -> Result<()> {
    let mut out = Vec::new();
    for t in trials {
        serde_json::to_writer(&mut out, t).expect("manifest serialises");
        writeln!(out).expect("in-memory write");
    }
    super::formats::write_atomic(path, &out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<TrialManifest>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut trials = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TrialManifest = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {}", lineno + 1, e)))?;
        trials.push(t);
    }
    if trials.is_empty() {
        return Err(Error::format(path, "manifest has no trials"));
    }
    // Synchronised views must agree on frame counts.
    for t in &trials {
        if t.views.is_empty() {
            return Err(Error::format(path, format!("trial {} has no views", t.trial_id)));
        }
        let t0 = t.views[0].frame_count;
        if t.views.iter().any(|v| v.frame_count != t0) {
            return Err(Error::format(
                path,
                format!("trial {}: views disagree on frame count", t.trial_id),
            ));
        }
    }
    Ok(trials)
}
