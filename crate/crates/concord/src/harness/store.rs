//! Append-only line-delimited trial store.
//!
//! One trial per line, flushed on every append: a crash loses at most the
//! record that was in flight. Stores are never rewritten; derived
//! artifacts (labels, reports) go to new files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::{FilterVerdict, Method, RejectReason, TrialRecord};

pub struct TrialStore {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl TrialStore {
    /// Open a store for appending, creating it if absent.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(TrialStore {
            writer: BufWriter::new(file),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Serialize one record as a single line and flush it to the OS.
    pub fn append(&mut self, trial: &TrialRecord) -> Result<()> {
        let line = serde_json::to_string(trial).map_err(|e| Error::Store {
            path: self.path.clone(),
            message: format!("serialize failed: {e}"),
        })?;
        writeln!(self.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Record filters for [`load_trials`]; `None` fields match everything.
#[derive(Debug, Default, Clone)]
pub struct TrialFilter {
    pub question_id: Option<String>,
    pub method: Option<Method>,
    pub accepted: Option<bool>,
    /// Keep only rejections with this exact reason.
    pub reason: Option<RejectReason>,
}

impl TrialFilter {
    pub fn matches(&self, t: &TrialRecord) -> bool {
        self.question_id
            .as_deref()
            .is_none_or(|id| t.question_id == id)
            && self.method.as_ref().is_none_or(|m| *m == t.method)
            && self.accepted.is_none_or(|a| t.is_accepted() == a)
            && self
                .reason
                .is_none_or(|r| t.verdict == FilterVerdict::Rejected(r))
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push((idx + 1, line));
    }
    Ok(lines)
}

/// Group records by question in first-appearance order, draw-index order
/// within each question.
fn into_stream_order(records: Vec<TrialRecord>) -> Vec<TrialRecord> {
    let mut by_question: indexmap::IndexMap<String, Vec<TrialRecord>> = indexmap::IndexMap::new();
    for r in records {
        by_question
            .entry(r.question_id.clone())
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_question {
        group.sort_by_key(|t| t.draw_index);
        out.append(&mut group);
    }
    out
}

/// Load matching trials in deterministic stream order. Every malformed
/// line is an error, reported with its line number; nothing is silently
/// truncated.
pub fn load_trials(path: &Path, filter: &TrialFilter) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (line_no, line) in read_lines(path)? {
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(t) => {
                if filter.matches(&t) {
                    records.push(t);
                }
            }
            Err(e) => bad.push((line_no, e.to_string())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::MalformedStore {
            path: path.to_path_buf(),
            lines: bad,
        });
    }
    Ok(into_stream_order(records))
}

/// Load a store for resuming a crashed run. A malformed FINAL line is the
/// at-most-one in-flight record a crash may lose; it is dropped and its
/// line number returned. Malformed interior lines are still hard errors.
pub fn load_trials_for_resume(path: &Path) -> Result<(Vec<TrialRecord>, Option<usize>)> {
    let lines = read_lines(path)?;
    let total = lines.len();
    let mut records = Vec::new();
    let mut torn_tail = None;
    for (pos, (line_no, line)) in lines.into_iter().enumerate() {
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(t) => records.push(t),
            Err(e) if pos + 1 == total => {
                log::warn!("dropping torn final store line {line_no}: {e}");
                torn_tail = Some(line_no);
            }
            Err(e) => {
                return Err(Error::MalformedStore {
                    path: path.to_path_buf(),
                    lines: vec![(line_no, e.to_string())],
                })
            }
        }
    }
    Ok((into_stream_order(records), torn_tail))
}
