//! Append-only session journal.
//!
//! Layout under the journal root, one directory per session:
//!
//! ```text
//! <root>/<session_id>/journal.jsonl
//! <root>/<session_id>/snapshots/<snapshot_id>/{meta.json,color.png,depth.f32}
//! <root>/<session_id>/guidance/<step_index>.json
//! ```
//!
//! Snapshot and guidance files are written before the journal line that
//! refers to them, so every complete line points at complete files. A torn
//! final line is ignored on recovery.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compiler::CompiledStep;
use crate::plan::{plan_from_value, TaskPlan};
use crate::scene::SceneSnapshot;

const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEntry {
    Created { query: String, plan: Value, initial_snapshot: String },
    Compiled { step_index: usize, snapshot_id: String },
    Moved { step_index: usize },
}

/// Session state rebuilt from a journal.
#[derive(Debug, Clone)]
pub struct RecoveredSession {
    pub session_id: String,
    pub plan: TaskPlan,
    pub initial: SceneSnapshot,
    pub current_step: usize,
    pub snapshots: BTreeMap<usize, SceneSnapshot>,
    pub compiled: BTreeMap<usize, CompiledStep>,
}

#[derive(Debug, Clone)]
pub struct Journal {
    root: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> JournalError + '_ {
    move |e| JournalError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

impl Journal {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Journal { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn snapshot_dir(&self, id: &str, snapshot_id: &str) -> PathBuf {
        self.session_dir(id).join("snapshots").join(snapshot_id)
    }

    fn guidance_path(&self, id: &str, step: usize) -> PathBuf {
        self.session_dir(id).join("guidance").join(format!("{step}.json"))
    }

    fn append(&self, id: &str, entry: &JournalEntry) -> Result<(), JournalError> {
        let dir = self.session_dir(id);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let path = dir.join(JOURNAL_FILE);
        let mut line = serde_json::to_string(entry).expect("journal entries serialize");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
        f.write_all(line.as_bytes()).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    fn save_snapshot(&self, id: &str, snap: &SceneSnapshot) -> Result<(), JournalError> {
        let dir = self.snapshot_dir(id, &snap.id);
        if dir.join("meta.json").exists() {
            return Ok(());
        }
        snap.save(&dir).map_err(|e| JournalError::Io { path: dir.clone(), reason: e.to_string() })
    }

    pub fn record_created(&self, id: &str, plan: &TaskPlan, initial: &SceneSnapshot) -> Result<(), JournalError> {
        self.save_snapshot(id, initial)?;
        let plan_value = serde_json::to_value(plan).expect("plans serialize");
        self.append(id, &JournalEntry::Created { query: plan.source_query.clone(), plan: plan_value, initial_snapshot: initial.id.clone() })
    }

    pub fn record_compiled(&self, id: &str, step: usize, snap: &SceneSnapshot, compiled: &CompiledStep) -> Result<(), JournalError> {
        self.save_snapshot(id, snap)?;
        let path = self.guidance_path(id, step);
        let parent = path.parent().expect("guidance path has a parent");
        std::fs::create_dir_all(parent).map_err(io(parent))?;
        let text = serde_json::to_string(compiled).expect("compiled steps serialize");
        std::fs::write(&path, text).map_err(io(&path))?;
        self.append(id, &JournalEntry::Compiled { step_index: step, snapshot_id: snap.id.clone() })
    }

    pub fn record_moved(&self, id: &str, step: usize) -> Result<(), JournalError> {
        self.append(id, &JournalEntry::Moved { step_index: step })
    }

    /// Ids of every session directory that has a journal.
    pub fn session_ids(&self) -> Result<Vec<String>, JournalError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            if entry.path().join(JOURNAL_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn read_entries(&self, id: &str) -> Result<Vec<JournalEntry>, JournalError> {
        let path = self.session_dir(id).join(JOURNAL_FILE);
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let complete = match text.rfind('\n') {
            Some(end) => &text[..end],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| JournalError::Corrupt { path: path.clone(), line: i + 1, reason: e.to_string() })
            })
            .collect()
    }

    pub fn recover(&self, id: &str) -> Result<RecoveredSession, JournalError> {
        let path = self.session_dir(id).join(JOURNAL_FILE);
        let corrupt = |line: usize, reason: String| JournalError::Corrupt { path: path.clone(), line, reason };
        let load_snapshot = |snapshot_id: &str| {
            let dir = self.snapshot_dir(id, snapshot_id);
            SceneSnapshot::load(&dir).map_err(|e| JournalError::Io { path: dir.clone(), reason: e.to_string() })
        };
        let entries = self.read_entries(id)?;
        let mut it = entries.into_iter().enumerate();
        let Some((_, JournalEntry::Created { query, plan, initial_snapshot })) = it.next() else {
            return Err(corrupt(1, "journal does not start with a created entry".into()));
        };
        let mut plan = plan_from_value(&plan).map_err(|e| corrupt(1, e.to_string()))?;
        plan.source_query = query;
        let initial = load_snapshot(&initial_snapshot)?;
        let mut session = RecoveredSession {
            session_id: id.to_string(),
            plan,
            initial,
            current_step: 0,
            snapshots: BTreeMap::new(),
            compiled: BTreeMap::new(),
        };
        for (i, entry) in it {
            match entry {
                JournalEntry::Created { .. } => return Err(corrupt(i + 1, "second created entry".into())),
                JournalEntry::Compiled { step_index, snapshot_id } => {
                    let g = self.guidance_path(id, step_index);
                    let text = std::fs::read_to_string(&g).map_err(io(&g))?;
                    let compiled = serde_json::from_str(&text).map_err(|e| corrupt(i + 1, e.to_string()))?;
                    session.snapshots.insert(step_index, load_snapshot(&snapshot_id)?);
                    session.compiled.insert(step_index, compiled);
                }
                JournalEntry::Moved { step_index } => {
                    if step_index >= session.plan.len() {
                        return Err(corrupt(i + 1, format!("step {step_index} is outside the plan")));
                    }
                    session.current_step = step_index;
                }
            }
        }
        Ok(session)
    }
}
