//! Report emission: comma-separated tables with a metadata sidecar.
//! Reports carry no timestamps, so recomputing one from the same store is
//! byte-identical.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde_json::json;

use crate::analysis::{BucketConfig, BucketStats, LikelihoodBucket, ProbabilityReport};
use crate::consistency::{sweep_thresholds, ConsistencyResult};
use crate::dataset::CanonicalAnswer;
use crate::error::{Error, Result};
use crate::pipeline::TrialRecord;

pub const REPORT_KINDS: [&str; 5] = [
    "method-table",
    "bucket-figure",
    "threshold-sweep",
    "blurt-table",
    "likelihood-figure",
];

fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

// Sequence probabilities span many orders of magnitude across buckets.
fn fmt_prob(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_default()
}

/// Self-consistency accuracy of one method over a question set: the
/// fraction of questions whose modal answer at the stop point equals
/// gold (no modal answer counts as incorrect).
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub questions: usize,
    pub correct: usize,
    pub reached: usize,
    pub mean_draws: f64,
    pub mean_accepted: f64,
}

impl MethodSummary {
    pub fn from_results(
        method: &str,
        results: &[ConsistencyResult],
        golds: &HashMap<String, CanonicalAnswer>,
    ) -> Self {
        let correct = results
            .iter()
            .filter(
                |r| matches!((&r.modal, golds.get(&r.question_id)), (Some(m), Some(g)) if m == g),
            )
            .count();
        let n = results.len().max(1);
        MethodSummary {
            method: method.to_string(),
            questions: results.len(),
            correct,
            reached: results.iter().filter(|r| r.reached_threshold).count(),
            mean_draws: results.iter().map(|r| r.total_draws).sum::<usize>() as f64 / n as f64,
            mean_accepted: results.iter().map(|r| r.accepted_samples).sum::<usize>() as f64
                / n as f64,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.questions == 0 {
            0.0
        } else {
            self.correct as f64 / self.questions as f64
        }
    }
}

pub fn method_table(rows: &[MethodSummary]) -> String {
    let mut out = String::from(
        "method,questions,correct,accuracy,reached_threshold,mean_draws,mean_accepted\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.questions,
            r.correct,
            fmt_f64(r.accuracy()),
            r.reached,
            fmt_f64(r.mean_draws),
            fmt_f64(r.mean_accepted),
        ));
    }
    out
}

pub fn bucket_table(stats: &[Option<BucketStats>], cfg: &BucketConfig) -> String {
    let mut out = String::from(
        "bucket,lo,hi,n_questions,mean_modal_freq,mean_accuracy,cot_pct,mean_seq_prob\n",
    );
    for (b, entry) in stats.iter().enumerate() {
        let (lo, hi) = cfg.range(b);
        match entry {
            Some(s) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                b,
                lo,
                hi,
                s.n_questions,
                fmt_f64(s.mean_modal_freq),
                fmt_f64(s.mean_accuracy),
                fmt_f64(s.cot_pct),
                fmt_prob(s.mean_seq_prob),
            )),
            None => out.push_str(&format!("{b},{lo},{hi},0,,,,\n")),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweepRow {
    pub method: String,
    pub threshold: u32,
    pub questions: usize,
    pub correct: usize,
    pub reached: usize,
    pub mean_draws: f64,
}

/// Replay each question's stored stream at every threshold.
pub fn build_threshold_sweep(
    method: &str,
    by_question: &IndexMap<String, Vec<TrialRecord>>,
    golds: &HashMap<String, CanonicalAnswer>,
    thresholds: &[u32],
) -> Vec<ThresholdSweepRow> {
    thresholds
        .iter()
        .map(|&t| {
            let mut correct = 0usize;
            let mut reached = 0usize;
            let mut draws = 0usize;
            for (qid, stream) in by_question {
                let point = sweep_thresholds(stream, &[t]).remove(0);
                if point.reached {
                    reached += 1;
                }
                draws += point.total_draws;
                if matches!((&point.modal, golds.get(qid)), (Some(m), Some(g)) if m == g) {
                    correct += 1;
                }
            }
            let n = by_question.len();
            ThresholdSweepRow {
                method: method.to_string(),
                threshold: t,
                questions: n,
                correct,
                reached,
                mean_draws: if n == 0 { 0.0 } else { draws as f64 / n as f64 },
            }
        })
        .collect()
}

pub fn threshold_sweep_table(rows: &[ThresholdSweepRow]) -> String {
    let mut out = String::from("method,threshold,questions,correct,accuracy,reached,mean_draws\n");
    for r in rows {
        let accuracy = if r.questions == 0 {
            0.0
        } else {
            r.correct as f64 / r.questions as f64
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.threshold,
            r.questions,
            r.correct,
            fmt_f64(accuracy),
            r.reached,
            fmt_f64(r.mean_draws),
        ));
    }
    out
}

pub fn blurt_table(report: &ProbabilityReport) -> String {
    let mut out = String::from("metric,numerator,denominator,value\n");
    for (name, entry) in report.entries() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            name,
            entry.numerator,
            entry.denominator,
            fmt_opt(entry.value()),
        ));
    }
    out
}

pub fn likelihood_table(buckets: &[LikelihoodBucket]) -> String {
    let mut out = String::from("bucket,lo,hi,n_trials,n_missing_logprobs,mean_seq_prob\n");
    for b in buckets {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.bucket,
            b.range.0,
            b.range.1,
            b.n_trials,
            b.n_missing_logprobs,
            fmt_prob(b.mean_seq_prob),
        ));
    }
    out
}

/// Sidecar describing how a report was produced. Inputs are recorded by
/// file name only so reports stay byte-identical across directories.
pub fn report_meta(
    kind: &str,
    config_hash: Option<&str>,
    inputs: &[&Path],
    notes: serde_json::Value,
) -> serde_json::Value {
    let names: Vec<String> = inputs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    json!({
        "kind": kind,
        "config_hash": config_hash,
        "inputs": names,
        "notes": notes,
    })
}

pub struct ReportFiles {
    pub table: PathBuf,
    pub meta: PathBuf,
}

pub fn write_report(
    out_dir: &Path,
    stem: &str,
    csv: &str,
    meta: &serde_json::Value,
) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let table = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&table, csv).map_err(|e| Error::io(&table, e))?;
    let meta_path = out_dir.join(format!("{stem}.meta.json"));
    let body = serde_json::to_string_pretty(meta).map_err(|e| Error::Store {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&meta_path, body).map_err(|e| Error::io(&meta_path, e))?;
    Ok(ReportFiles {
        table,
        meta: meta_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ProbEntry;

    fn result(qid: &str, modal: Option<&str>, reached: bool) -> ConsistencyResult {
        ConsistencyResult {
            question_id: qid.to_string(),
            modal: modal.map(CanonicalAnswer::from_normalized),
            modal_count: modal.map_or(0, |_| 3),
            accepted_samples: 5,
            total_draws: 8,
            reached_threshold: reached,
        }
    }

    #[test]
    fn method_table_is_one_row_per_method() {
        let golds = HashMap::from([
            ("q1".to_string(), CanonicalAnswer::from_normalized("4")),
            ("q2".to_string(), CanonicalAnswer::from_normalized("7")),
        ]);
        let rows: Vec<MethodSummary> = ["zeroshot", "zeroshot-cot", "zeroshot-length"]
            .iter()
            .map(|m| {
                MethodSummary::from_results(
                    m,
                    &[
                        result("q1", Some("4"), true),
                        result("q2", Some("4"), false),
                    ],
                    &golds,
                )
            })
            .collect();
        let csv = method_table(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("method,"));
        assert!(csv.contains("zeroshot,2,1,0.500000,1,8.000000,5.000000"));
    }

    #[test]
    fn bucket_table_has_ten_rows_plus_header() {
        let cfg = BucketConfig::default();
        let stats: Vec<Option<BucketStats>> = (0..10)
            .map(|b| {
                (b != 3).then(|| BucketStats {
                    bucket: b,
                    range: cfg.range(b),
                    mean_modal_freq: 7.0,
                    mean_accuracy: 0.5,
                    cot_pct: 0.25,
                    mean_seq_prob: None,
                    n_questions: 4,
                })
            })
            .collect();
        let csv = bucket_table(&stats, &cfg);
        assert_eq!(csv.lines().count(), 11);
        // The undefined bucket is flagged by an empty row, not zeros.
        assert!(csv.contains("3,30,40,0,,,,"));
    }

    #[test]
    fn blurt_table_lists_all_six_entries_with_denominators() {
        let entry = ProbEntry {
            numerator: 1,
            denominator: 4,
        };
        let undefined = ProbEntry {
            numerator: 0,
            denominator: 0,
        };
        let report = ProbabilityReport {
            p_blurt: entry,
            p_cot: entry,
            p_correct_given_blurt: entry,
            p_correct_given_cot: undefined,
            p_cot_given_correct_consistent: entry,
            p_blurt_given_correct_consistent: entry,
        };
        let csv = blurt_table(&report);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("p_correct_given_blurt,1,4,0.250000"));
        // Undefined stays visibly empty.
        assert!(csv.contains("p_correct_given_cot,0,0,\n"));
    }

    #[test]
    fn report_meta_uses_file_names_only() {
        let meta = report_meta(
            "method-table",
            Some("abc123"),
            &[Path::new("/tmp/run-x/trials.jsonl")],
            json!({"threshold": 12}),
        );
        assert_eq!(meta["inputs"][0], "trials.jsonl");
        assert_eq!(meta["config_hash"], "abc123");
    }
}
