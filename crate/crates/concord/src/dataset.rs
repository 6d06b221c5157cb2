//! Benchmark items and answer canonicalization.
//!
//! Questions are loaded from line-delimited JSON (one object per line with
//! `id`, `question`, `gold`, and optionally `options`). Raw model outputs
//! are canonicalized into comparable answers per task kind; canonical
//! string equality is the only equality consistency tallies ever use.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What counts as a valid answer for a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Free-form generation scored by the last integer literal.
    IntegerGenerative,
    /// Lettered options, `A` through at most `E`, in order.
    MultipleChoice { options: Vec<char> },
    /// Two case-normalized labels, e.g. positive/negative.
    BinaryLabel { labels: [String; 2] },
}

impl TaskKind {
    /// Standard five-way multiple choice (A through E).
    pub fn multiple_choice_a_to_e() -> Self {
        TaskKind::MultipleChoice {
            options: vec!['A', 'B', 'C', 'D', 'E'],
        }
    }

    pub fn binary(first: &str, second: &str) -> Self {
        TaskKind::BinaryLabel {
            labels: [first.to_lowercase(), second.to_lowercase()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskKind::IntegerGenerative => Ok(()),
            TaskKind::MultipleChoice { options } => {
                if options.is_empty() {
                    return Err(Error::InvalidInput("multiple choice needs options".into()));
                }
                let expected: Vec<char> = ('A'..='E').take(options.len()).collect();
                if *options != expected {
                    return Err(Error::InvalidInput(format!(
                        "options must be the letters A.. in order, got {options:?}"
                    )));
                }
                Ok(())
            }
            TaskKind::BinaryLabel { labels } => {
                let [a, b] = labels;
                if a.is_empty() || b.is_empty() || a.to_lowercase() == b.to_lowercase() {
                    return Err(Error::InvalidInput(format!(
                        "binary labels must be distinct and non-empty, got {labels:?}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A normalized answer string. Two answers are equal exactly when their
/// normalized strings are equal; nothing else is ever compared.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalAnswer(String);

impl CanonicalAnswer {
    pub fn value(&self) -> &str {
        &self.0
    }

    /// Wraps an already-normalized string. Callers that hold raw model
    /// output should go through [`canonicalize_answer`] instead.
    pub fn from_normalized(value: impl Into<String>) -> Self {
        CanonicalAnswer(value.into())
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub gold: CanonicalAnswer,
    pub task: TaskKind,
}

// Integer literals with optional sign; comma-grouped digits ("1,000") are
// treated as one literal only when the groups are exactly three digits.
// ASCII digits only: canonical answers are plain decimal strings.
static INT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[+-]?[0-9]{1,3}(?:,[0-9]{3})+|[+-]?[0-9]+").unwrap());

/// Canonicalize raw model output into a comparable answer, or `None` when
/// the text contains no valid prediction for the task.
///
/// The last occurrence always wins: the final mention is taken as the
/// model's final commitment.
pub fn canonicalize_answer(raw: &str, task: &TaskKind) -> Option<CanonicalAnswer> {
    match task {
        TaskKind::IntegerGenerative => {
            let m = INT_RE.find_iter(raw).last()?;
            Some(CanonicalAnswer(normalize_integer(m.as_str())))
        }
        TaskKind::MultipleChoice { options } => {
            let mut best: Option<(usize, char)> = None;
            for &letter in options {
                if let Some(pos) = last_option_occurrence(raw, letter) {
                    if best.is_none_or(|(p, _)| pos > p) {
                        best = Some((pos, letter));
                    }
                }
            }
            best.map(|(_, letter)| CanonicalAnswer(letter.to_string()))
        }
        TaskKind::BinaryLabel { labels } => {
            let lower = raw.to_lowercase();
            let mut best: Option<(usize, &str)> = None;
            for label in labels {
                let norm = label.to_lowercase();
                if let Some(pos) = lower.rfind(&norm) {
                    // Later start wins; on nested matches the longer label wins.
                    let better =
                        best.is_none_or(|(p, l)| pos > p || (pos == p && norm.len() > l.len()));
                    if better {
                        best = Some((pos, label));
                    }
                }
            }
            best.map(|(_, label)| CanonicalAnswer(label.to_lowercase()))
        }
    }
}

/// Strips comma grouping and leading zeros; `-0` collapses to `0`.
fn normalize_integer(literal: &str) -> String {
    let cleaned: String = literal.chars().filter(|c| *c != ',' && *c != '+').collect();
    let (neg, digits) = match cleaned.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cleaned.as_str()),
    };
    let trimmed = digits.trim_start_matches('0');
    if trimmed.is_empty() {
        return "0".to_string();
    }
    if neg {
        format!("-{trimmed}")
    } else {
        trimmed.to_string()
    }
}

/// Byte position of the last occurrence of an option letter, either
/// parenthesized `(B)` (any case) or as a standalone uppercase word.
/// Bare lowercase letters are not matched so that the article "a" never
/// reads as option A.
fn last_option_occurrence(raw: &str, letter: char) -> Option<usize> {
    let bytes = raw.as_bytes();
    let upper = letter.to_ascii_uppercase() as u8;
    let lower = letter.to_ascii_lowercase() as u8;
    let mut last = None;
    for (i, &b) in bytes.iter().enumerate() {
        if b == upper || b == lower {
            let parenthesized =
                i > 0 && bytes[i - 1] == b'(' && bytes.get(i + 1).copied() == Some(b')');
            let standalone = b == upper
                && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric())
                && !bytes.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric());
            if parenthesized || standalone {
                last = Some(i);
            }
        }
    }
    last
}

/// On-disk line format for the canonical dataset.
#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: String,
    question: String,
    gold: String,
    #[serde(default)]
    options: Option<Vec<String>>,
}

/// Loads a line-delimited dataset, canonicalizing every gold label under
/// `task`. Per-record `options` texts, when present on a multiple-choice
/// task, are appended to the question as lettered answer choices.
pub fn load_dataset(path: &Path, task: &TaskKind) -> Result<Vec<QuestionRecord>> {
    task.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(dataset_err(path, line_no, "empty id"));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(dataset_err(
                path,
                line_no,
                format!("duplicate id {:?}", raw.id),
            ));
        }
        let gold = canonicalize_answer(&raw.gold, task).ok_or_else(|| {
            dataset_err(
                path,
                line_no,
                format!("gold {:?} is not a valid answer for the task", raw.gold),
            )
        })?;
        let question = match (&raw.options, task) {
            (Some(opts), TaskKind::MultipleChoice { options }) => {
                if opts.len() > options.len() {
                    return Err(dataset_err(
                        path,
                        line_no,
                        format!(
                            "{} option texts but task has {} letters",
                            opts.len(),
                            options.len()
                        ),
                    ));
                }
                let mut q = raw.question.clone();
                q.push_str("\nAnswer choices:");
                for (letter, text) in options.iter().zip(opts) {
                    q.push_str(&format!(" ({letter}) {text}"));
                }
                q
            }
            _ => raw.question,
        };
        records.push(QuestionRecord {
            id: raw.id,
            question,
            gold,
            task: task.clone(),
        });
    }
    Ok(records)
}

fn dataset_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn integer() -> TaskKind {
        TaskKind::IntegerGenerative
    }

    #[test]
    fn last_integer_wins() {
        let t = integer();
        assert_eq!(
            canonicalize_answer("the answer is 42.", &t)
                .unwrap()
                .value(),
            "42"
        );
        assert_eq!(
            canonicalize_answer("maybe 3, no — 7", &t).unwrap().value(),
            "7"
        );
        assert_eq!(canonicalize_answer("no digits here", &t), None);
    }

    #[test]
    fn comma_grouping_and_signs() {
        let t = integer();
        assert_eq!(
            canonicalize_answer("about 1,000 total", &t)
                .unwrap()
                .value(),
            "1000"
        );
        assert_eq!(
            canonicalize_answer("delta is -15", &t).unwrap().value(),
            "-15"
        );
        assert_eq!(canonicalize_answer("write 007", &t).unwrap().value(), "7");
        assert_eq!(canonicalize_answer("exactly -0", &t).unwrap().value(), "0");
        // Comma not followed by a 3-digit group is a separator, not grouping.
        assert_eq!(
            canonicalize_answer("first 12, then 9", &t).unwrap().value(),
            "9"
        );
    }

    #[test]
    fn multiple_choice_last_occurrence() {
        let t = TaskKind::multiple_choice_a_to_e();
        let raw = "I choose (B) over (A)… final: (A)";
        assert_eq!(canonicalize_answer(raw, &t).unwrap().value(), "A");
        assert_eq!(
            canonicalize_answer("the answer is B", &t).unwrap().value(),
            "B"
        );
        // The article "a" and letters inside words never match.
        assert_eq!(canonicalize_answer("there is a cab here", &t), None);
        assert_eq!(
            canonicalize_answer("(c) looks right", &t).unwrap().value(),
            "C"
        );
    }

    #[test]
    fn binary_label_last_occurrence() {
        let t = TaskKind::binary("positive", "negative");
        assert_eq!(
            canonicalize_answer("Negative... no wait, POSITIVE", &t)
                .unwrap()
                .value(),
            "positive"
        );
        assert_eq!(canonicalize_answer("nothing relevant", &t), None);
    }

    #[test]
    fn canonicalization_is_idempotent_on_examples() {
        let cases = [
            (integer(), "the total is 1,234"),
            (TaskKind::multiple_choice_a_to_e(), "final: (D)"),
            (TaskKind::binary("positive", "negative"), "Positive!"),
        ];
        for (task, raw) in cases {
            let once = canonicalize_answer(raw, &task).unwrap();
            let twice = canonicalize_answer(once.value(), &task).unwrap();
            assert_eq!(once, twice);
        }
    }

    fn is_valid_for(answer: &CanonicalAnswer, task: &TaskKind) -> bool {
        match task {
            TaskKind::IntegerGenerative => {
                let v = answer.value();
                let digits = v.strip_prefix('-').unwrap_or(v);
                !digits.is_empty()
                    && digits.chars().all(|c| c.is_ascii_digit())
                    && (digits == "0" || !digits.starts_with('0'))
                    && !(v.starts_with('-') && digits == "0")
            }
            TaskKind::MultipleChoice { options } => {
                let mut chars = answer.value().chars();
                matches!((chars.next(), chars.next()), (Some(c), None) if options.contains(&c))
            }
            TaskKind::BinaryLabel { labels } => {
                labels.iter().any(|l| l.to_lowercase() == answer.value())
            }
        }
    }

    proptest! {
        #[test]
        fn result_is_invalid_or_valid_under_task(raw in ".{0,200}") {
            for task in [
                integer(),
                TaskKind::multiple_choice_a_to_e(),
                TaskKind::binary("positive", "negative"),
            ] {
                if let Some(ans) = canonicalize_answer(&raw, &task) {
                    prop_assert!(is_valid_for(&ans, &task), "{:?} invalid under {:?}", ans, task);
                }
            }
        }

        #[test]
        fn canonical_values_are_fixed_points(n in -1_000_000i64..1_000_000) {
            let t = integer();
            let ans = canonicalize_answer(&n.to_string(), &t).unwrap();
            let again = canonicalize_answer(ans.value(), &t).unwrap();
            prop_assert_eq!(ans, again);
        }
    }

    fn write_temp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_single_record() {
        let f = write_temp(&[r#"{"id":"q1","question":"2+2?","gold":"4"}"#]);
        let records = load_dataset(f.path(), &integer()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].id, "q1");
        assert_eq!(records[0].gold.value(), "4");
    }

    #[test]
    fn load_empty_file() {
        let f = write_temp(&[]);
        assert!(load_dataset(f.path(), &integer()).unwrap().is_empty());
    }

    #[test]
    fn load_reports_line_numbers() {
        let f = write_temp(&[r#"{"id":"q1","question":"2+2?"}"#]);
        let err = load_dataset(f.path(), &integer()).unwrap_err();
        match err {
            Error::Dataset { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_gold_and_duplicates() {
        let f = write_temp(&[r#"{"id":"q1","question":"?","gold":"none"}"#]);
        assert!(matches!(
            load_dataset(f.path(), &integer()),
            Err(Error::Dataset { line: 1, .. })
        ));
        let f = write_temp(&[
            r#"{"id":"q1","question":"a","gold":"1"}"#,
            r#"{"id":"q1","question":"b","gold":"2"}"#,
        ]);
        assert!(matches!(
            load_dataset(f.path(), &integer()),
            Err(Error::Dataset { line: 2, .. })
        ));
    }

    #[test]
    fn load_folds_options_into_question() {
        let f = write_temp(&[
            r#"{"id":"m1","question":"pick one","gold":"(B)","options":["first","second","third"]}"#,
        ]);
        let records = load_dataset(f.path(), &TaskKind::multiple_choice_a_to_e()).unwrap();
        assert_eq!(records[0].gold.value(), "B");
        assert!(records[0].question.contains("(A) first"));
        assert!(records[0].question.contains("(C) third"));
    }

    proptest! {
        #[test]
        fn dataset_roundtrip(ids in proptest::collection::vec("[a-z][a-z0-9]{0,8}", 1..8)) {
            let mut unique: Vec<String> = ids;
            unique.sort();
            unique.dedup();
            let lines: Vec<String> = unique
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    serde_json::to_string(&serde_json::json!({
                        "id": id, "question": format!("q {i}"), "gold": i.to_string()
                    }))
                    .unwrap()
                })
                .collect();
            let f = write_temp(&lines.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let records = load_dataset(f.path(), &integer()).unwrap();
            // Serialize back through the on-disk shape and reload.
            let reserialized: Vec<String> = records
                .iter()
                .map(|r| {
                    serde_json::to_string(&serde_json::json!({
                        "id": r.id, "question": r.question, "gold": r.gold.value()
                    }))
                    .unwrap()
                })
                .collect();
            let f2 = write_temp(&reserialized.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let records2 = load_dataset(f2.path(), &integer()).unwrap();
            prop_assert_eq!(records, records2);
        }
    }
}
