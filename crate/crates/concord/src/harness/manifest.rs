//! Run manifest: config snapshot, per-question draw counts, totals, and
//! artifact list. Rewritten atomically after every completed question so
//! a resumed run knows what is already done.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{FilterVerdict, TrialRecord};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub accepted: usize,
    /// Rejections keyed by reason name.
    pub rejected: IndexMap<String, usize>,
    pub post_stop: usize,
}

impl RunTotals {
    pub fn record(&mut self, trial: &TrialRecord) {
        if trial.post_stop {
            self.post_stop += 1;
        }
        match &trial.verdict {
            FilterVerdict::Accepted => self.accepted += 1,
            FilterVerdict::Rejected(reason) => {
                *self.rejected.entry(reason.name().to_string()).or_insert(0) += 1;
            }
        }
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hash of the run configuration snapshot.
    pub config_hash: String,
    pub backend: String,
    pub method: String,
    pub started_at_ms: u64,
    pub finished_at_ms: Option<u64>,
    /// Stored-record count per question; must equal the store line counts.
    pub draw_counts: IndexMap<String, usize>,
    /// Questions whose sampling is finished.
    pub completed: Vec<String>,
    pub totals: RunTotals,
    pub artifacts: Vec<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_hash: String, backend: String, method: String) -> Self {
        RunManifest {
            config_hash,
            backend,
            method,
            started_at_ms: now_ms(),
            finished_at_ms: None,
            draw_counts: IndexMap::new(),
            completed: Vec::new(),
            totals: RunTotals::default(),
            artifacts: Vec::new(),
        }
    }

    pub fn record_trial(&mut self, trial: &TrialRecord) {
        *self
            .draw_counts
            .entry(trial.question_id.clone())
            .or_insert(0) += 1;
        self.totals.record(trial);
    }

    pub fn mark_completed(&mut self, question_id: &str) {
        if !self.completed.iter().any(|q| q == question_id) {
            self.completed.push(question_id.to_string());
        }
    }

    pub fn is_completed(&self, question_id: &str) -> bool {
        self.completed.iter().any(|q| q == question_id)
    }

    pub fn mean_draws_per_question(&self) -> Option<f64> {
        if self.draw_counts.is_empty() {
            return None;
        }
        let total: usize = self.draw_counts.values().sum();
        Some(total as f64 / self.draw_counts.len() as f64)
    }

    /// Atomic write: temp file then rename, so a crash never leaves a
    /// half-written manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Store {
            path: path.to_path_buf(),
            message: format!("manifest serialize failed: {e}"),
        })?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, &json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Store {
            path: path.to_path_buf(),
            message: format!("manifest parse failed: {e}"),
        })
    }

    /// Audit: manifest draw counts must equal the per-question record
    /// counts actually present in the store.
    pub fn audit(&self, trials: &[TrialRecord]) -> Result<()> {
        let mut counts: IndexMap<&str, usize> = IndexMap::new();
        for t in trials {
            *counts.entry(t.question_id.as_str()).or_insert(0) += 1;
        }
        let mut problems = Vec::new();
        for (qid, expected) in &self.draw_counts {
            let actual = counts.get(qid.as_str()).copied().unwrap_or(0);
            if actual != *expected {
                problems.push(format!("{qid}: manifest {expected} vs store {actual}"));
            }
        }
        for (qid, actual) in &counts {
            if !self.draw_counts.contains_key(*qid) {
                problems.push(format!(
                    "{qid}: {actual} stored records missing from manifest"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Store {
                path: Path::new("manifest").to_path_buf(),
                message: format!("draw-count audit failed: {}", problems.join("; ")),
            })
        }
    }

    /// Rebuild counts/totals from a store, for manifests that lag behind
    /// after a crash.
    pub fn reconcile_with(&mut self, trials: &[TrialRecord]) {
        self.draw_counts.clear();
        self.totals = RunTotals::default();
        for t in trials {
            self.record_trial(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FinishReason, SampledResponse};
    use crate::pipeline::{Method, RejectReason};

    fn trial(qid: &str, accepted: bool) -> TrialRecord {
        TrialRecord {
            question_id: qid.to_string(),
            method: Method::Zeroshot,
            draw_index: 0,
            reasoning: SampledResponse {
                text: "x 4".to_string(),
                token_count: 2,
                token_logprobs: None,
                token_texts: None,
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
            },
            answer_raw: String::new(),
            answer: None,
            verdict: if accepted {
                FilterVerdict::Accepted
            } else {
                FilterVerdict::Rejected(RejectReason::Empty)
            },
            bucket: Some(0),
            blurt: None,
            blurt_source: None,
            cot_label: None,
            post_stop: false,
        }
    }

    #[test]
    fn counts_and_audit() {
        let mut m = RunManifest::new("hash".into(), "sim".into(), "zeroshot".into());
        let trials = vec![trial("q1", true), trial("q1", false), trial("q2", true)];
        for t in &trials {
            m.record_trial(t);
        }
        assert_eq!(m.draw_counts["q1"], 2);
        assert_eq!(m.totals.accepted, 2);
        assert_eq!(m.totals.rejected["empty"], 1);
        m.audit(&trials).unwrap();

        let fewer = &trials[..2];
        assert!(m.audit(fewer).is_err());
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new("hash".into(), "sim".into(), "zeroshot".into());
        m.record_trial(&trial("q1", true));
        m.mark_completed("q1");
        m.finished_at_ms = Some(now_ms());
        m.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.draw_counts, m.draw_counts);
        assert!(loaded.is_completed("q1"));
    }
}
