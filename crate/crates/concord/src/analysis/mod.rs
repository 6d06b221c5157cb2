//! Length buckets, per-bucket statistics, blurt detection, CoT judging,
//! conditional-probability reports, and likelihood-by-bucket curves.

mod judge;

pub use judge::{
    classify_cot, fill_judge_prompt, judge_params, judge_template, parse_judge_label,
    JUDGE_PROMPT_GENERATIVE, JUDGE_PROMPT_MULTIPLE_CHOICE,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{sequence_probability, SampledResponse, TextBackend};
use crate::consistency::{modal_answer, tally, ConsistencyResult};
use crate::dataset::{CanonicalAnswer, QuestionRecord};
use crate::error::{Error, Result};
use crate::pipeline::{run_trial, CotLabel, Method, PipelineConfig, TrialRecord};

/// Token-length bucketing of responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketConfig {
    #[serde(default = "default_max_len")]
    pub max_len: u32,
    #[serde(default = "default_n_buckets")]
    pub n_buckets: u32,
    #[serde(default = "default_quota")]
    pub per_bucket_quota: u32,
    /// Per-question cap on draws spent trying to fill the buckets.
    #[serde(default = "default_resample_cap")]
    pub resample_cap: u32,
}

fn default_max_len() -> u32 {
    100
}

fn default_n_buckets() -> u32 {
    10
}

fn default_quota() -> u32 {
    10
}

fn default_resample_cap() -> u32 {
    2000
}

impl Default for BucketConfig {
    fn default() -> Self {
        BucketConfig {
            max_len: default_max_len(),
            n_buckets: default_n_buckets(),
            per_bucket_quota: default_quota(),
            resample_cap: default_resample_cap(),
        }
    }
}

impl BucketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0
            || self.n_buckets == 0
            || self.per_bucket_quota == 0
            || self.resample_cap == 0
        {
            return Err(Error::Config(
                "bucket config fields must be positive".into(),
            ));
        }
        if !self.max_len.is_multiple_of(self.n_buckets) {
            return Err(Error::Config(format!(
                "max_len {} must be divisible by n_buckets {}",
                self.max_len, self.n_buckets
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.max_len / self.n_buckets
    }

    /// Half-open-below interval (lo, hi] covered by a bucket.
    pub fn range(&self, bucket: usize) -> (u32, u32) {
        let w = self.width();
        (bucket as u32 * w, (bucket as u32 + 1) * w)
    }
}

/// Bucket index for a completion-token count: bucket `b` covers the
/// interval `(b*width, (b+1)*width]`. Zero-token responses and responses
/// longer than `max_len` fall outside every bucket.
pub fn assign_bucket(token_count: u32, cfg: &BucketConfig) -> Option<usize> {
    if token_count == 0 || token_count > cfg.max_len {
        return None;
    }
    Some(((token_count - 1) / cfg.width()) as usize)
}

/// Where token boundaries for the blurt prefix came from.
pub const BLURT_SOURCE_BACKEND: &str = "backend_tokens";
pub const BLURT_SOURCE_WHITESPACE: &str = "whitespace";

/// True when the answer already appears within the first ten tokens of
/// the reasoning text. Uses backend-reported token boundaries when the
/// response carries them, whitespace pieces otherwise; the second element
/// records which.
pub fn detect_blurt(resp: &SampledResponse, answer: &CanonicalAnswer) -> (bool, &'static str) {
    let take = 10.min(resp.token_count as usize);
    match &resp.token_texts {
        Some(tokens) => {
            let prefix: String = tokens.iter().take(take).map(String::as_str).collect();
            (prefix.contains(answer.value()), BLURT_SOURCE_BACKEND)
        }
        None => {
            let prefix = resp
                .text
                .split_whitespace()
                .take(take)
                .collect::<Vec<_>>()
                .join(" ");
            (prefix.contains(answer.value()), BLURT_SOURCE_WHITESPACE)
        }
    }
}

/// Accepted trials gathered per bucket for one question, with explicit
/// shortfalls where the draw cap ran out first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketedCollection {
    pub question_id: String,
    pub buckets: Vec<Vec<TrialRecord>>,
    pub draws_spent: usize,
    /// Missing trials per bucket (zero when the quota was met).
    pub shortfalls: Vec<u32>,
}

impl BucketedCollection {
    pub fn empty(question_id: &str, cfg: &BucketConfig) -> Self {
        BucketedCollection {
            question_id: question_id.to_string(),
            buckets: vec![Vec::new(); cfg.n_buckets as usize],
            draws_spent: 0,
            shortfalls: vec![cfg.per_bucket_quota; cfg.n_buckets as usize],
        }
    }

    pub fn quota_met(&self, bucket: usize) -> bool {
        self.shortfalls[bucket] == 0
    }

    pub fn complete(&self, _cfg: &BucketConfig) -> bool {
        self.shortfalls.iter().all(|s| *s == 0)
    }

    fn absorb(&mut self, trial: &TrialRecord, cfg: &BucketConfig) {
        if trial.post_stop {
            return;
        }
        self.draws_spent += 1;
        if !trial.is_accepted() {
            return;
        }
        let Some(b) = trial.bucket.filter(|b| *b < cfg.n_buckets as usize) else {
            return;
        };
        if self.buckets[b].len() < cfg.per_bucket_quota as usize {
            self.buckets[b].push(trial.clone());
            self.shortfalls[b] -= 1;
        }
    }
}

/// Rebuild a collection from an already-stored trial stream.
pub fn fill_buckets(
    question_id: &str,
    stream: &[TrialRecord],
    cfg: &BucketConfig,
) -> BucketedCollection {
    let mut state = BucketedCollection::empty(question_id, cfg);
    for t in stream {
        state.absorb(t, cfg);
    }
    state
}

/// Continue filling a collection by drawing fresh trials until every
/// bucket holds its quota or the cap is spent. Shortfall is data, not
/// failure. Every draw, accepted or not, is handed to `on_trial`.
pub fn resume_bucket_collection<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    backend: &B,
    cfg: &PipelineConfig,
    mut state: BucketedCollection,
    mut on_trial: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<BucketedCollection> {
    cfg.validate()?;
    let bucket_cfg = &cfg.bucket;
    while state.draws_spent < bucket_cfg.resample_cap as usize && !state.complete(bucket_cfg) {
        let trial = run_trial(q, &Method::Zeroshot, backend, cfg, state.draws_spent as u64)?;
        on_trial(&trial)?;
        state.absorb(&trial, bucket_cfg);
    }
    Ok(state)
}

pub fn collect_bucketed_with<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    backend: &B,
    cfg: &PipelineConfig,
    on_trial: impl FnMut(&TrialRecord) -> Result<()>,
) -> Result<BucketedCollection> {
    resume_bucket_collection(
        q,
        backend,
        cfg,
        BucketedCollection::empty(&q.id, &cfg.bucket),
        on_trial,
    )
}

pub fn collect_bucketed<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    backend: &B,
    cfg: &PipelineConfig,
) -> Result<BucketedCollection> {
    collect_bucketed_with(q, backend, cfg, |_| Ok(()))
}

/// Per-bucket aggregates across questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: usize,
    /// (lo, hi] token interval.
    pub range: (u32, u32),
    /// Mean, over questions, of the modal answer's frequency among the
    /// quota trials.
    pub mean_modal_freq: f64,
    /// Mean, over questions, of whether the modal answer was gold.
    pub mean_accuracy: f64,
    /// Fraction of pooled trials labeled CoT.
    pub cot_pct: f64,
    /// Mean sequence probability over pooled trials that carry logprobs.
    pub mean_seq_prob: Option<f64>,
    pub n_questions: usize,
}

/// One question's gold answer and bucketed trials, as consumed by
/// [`bucket_stats`].
pub struct BucketedQuestion<'a> {
    pub gold: &'a CanonicalAnswer,
    pub collection: &'a BucketedCollection,
}

/// Aggregate bucket statistics over questions. Only buckets that met
/// their quota contribute for a given question; a bucket no question
/// filled is `None`.
pub fn bucket_stats(
    items: &[BucketedQuestion<'_>],
    cfg: &BucketConfig,
) -> Vec<Option<BucketStats>> {
    let n = cfg.n_buckets as usize;
    (0..n)
        .map(|b| {
            let mut modal_freqs = Vec::new();
            let mut accuracies = Vec::new();
            let mut pooled: Vec<&TrialRecord> = Vec::new();
            for item in items {
                if !item.collection.quota_met(b) {
                    continue;
                }
                let trials = &item.collection.buckets[b];
                let counts = tally(trials.iter().filter_map(|t| t.answer.as_ref()));
                let Some((modal, freq)) = modal_answer(&counts) else {
                    continue;
                };
                modal_freqs.push(freq as f64);
                accuracies.push(if modal == item.gold { 1.0 } else { 0.0 });
                pooled.extend(trials.iter());
            }
            if modal_freqs.is_empty() {
                return None;
            }
            let n_questions = modal_freqs.len();
            let cot = pooled
                .iter()
                .filter(|t| t.cot_label == Some(CotLabel::Cot))
                .count();
            let probs: Vec<f64> = pooled
                .iter()
                .filter_map(|t| t.reasoning.token_logprobs.as_deref())
                .filter_map(|lp| sequence_probability(lp).ok())
                .collect();
            Some(BucketStats {
                bucket: b,
                range: cfg.range(b),
                mean_modal_freq: mean(&modal_freqs),
                mean_accuracy: mean(&accuracies),
                cot_pct: cot as f64 / pooled.len() as f64,
                mean_seq_prob: if probs.is_empty() {
                    None
                } else {
                    Some(mean(&probs))
                },
                n_questions,
            })
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// A probability together with the counts it came from; `value` is
/// undefined (never zero-by-default) when the conditioning event is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbEntry {
    pub numerator: usize,
    pub denominator: usize,
}

impl ProbEntry {
    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

/// The six blurt/CoT conditional probabilities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbabilityReport {
    pub p_blurt: ProbEntry,
    pub p_cot: ProbEntry,
    pub p_correct_given_blurt: ProbEntry,
    pub p_correct_given_cot: ProbEntry,
    pub p_cot_given_correct_consistent: ProbEntry,
    pub p_blurt_given_correct_consistent: ProbEntry,
}

impl ProbabilityReport {
    pub fn entries(&self) -> [(&'static str, ProbEntry); 6] {
        [
            ("p_blurt", self.p_blurt),
            ("p_cot", self.p_cot),
            ("p_correct_given_blurt", self.p_correct_given_blurt),
            ("p_correct_given_cot", self.p_correct_given_cot),
            (
                "p_cot_given_correct_consistent",
                self.p_cot_given_correct_consistent,
            ),
            (
                "p_blurt_given_correct_consistent",
                self.p_blurt_given_correct_consistent,
            ),
        ]
    }
}

fn is_cot(t: &TrialRecord) -> bool {
    t.cot_label == Some(CotLabel::Cot)
}

fn is_blurt(t: &TrialRecord) -> bool {
    t.blurt == Some(true)
}

/// Compute the six conditional probabilities over pooled accepted trials.
///
/// The first four pool every accepted pre-stop trial. The last two
/// restrict to questions whose modal answer equals gold and pool their
/// supporting trials (answer equal to the modal answer). Trials missing
/// the label an entry conditions on are excluded from that entry's
/// denominator.
pub fn conditional_probabilities(
    trials: &[TrialRecord],
    results: &[ConsistencyResult],
    golds: &HashMap<String, CanonicalAnswer>,
) -> ProbabilityReport {
    let accepted: Vec<&TrialRecord> = trials
        .iter()
        .filter(|t| t.is_accepted() && !t.post_stop)
        .collect();
    let correct = |t: &TrialRecord| -> bool {
        match (golds.get(&t.question_id), &t.answer) {
            (Some(gold), Some(ans)) => gold == ans,
            _ => false,
        }
    };

    let blurt_labeled: Vec<&&TrialRecord> = accepted.iter().filter(|t| t.blurt.is_some()).collect();
    let cot_labeled: Vec<&&TrialRecord> =
        accepted.iter().filter(|t| t.cot_label.is_some()).collect();
    let blurted: Vec<&&TrialRecord> = accepted.iter().filter(|t| is_blurt(t)).collect();
    let cots: Vec<&&TrialRecord> = accepted.iter().filter(|t| is_cot(t)).collect();

    // Supporting trials of questions whose modal answer is gold.
    let mut supporting: Vec<&TrialRecord> = Vec::new();
    for r in results {
        let (Some(modal), Some(gold)) = (&r.modal, golds.get(&r.question_id)) else {
            continue;
        };
        if modal != gold {
            continue;
        }
        supporting.extend(
            accepted
                .iter()
                .filter(|t| t.question_id == r.question_id && t.answer.as_ref() == Some(modal))
                .copied(),
        );
    }
    let supporting_cot_labeled = supporting.iter().filter(|t| t.cot_label.is_some()).count();
    let supporting_blurt_labeled = supporting.iter().filter(|t| t.blurt.is_some()).count();

    ProbabilityReport {
        p_blurt: ProbEntry {
            numerator: blurted.len(),
            denominator: blurt_labeled.len(),
        },
        p_cot: ProbEntry {
            numerator: cots.len(),
            denominator: cot_labeled.len(),
        },
        p_correct_given_blurt: ProbEntry {
            numerator: blurted.iter().filter(|t| correct(t)).count(),
            denominator: blurted.len(),
        },
        p_correct_given_cot: ProbEntry {
            numerator: cots.iter().filter(|t| correct(t)).count(),
            denominator: cots.len(),
        },
        p_cot_given_correct_consistent: ProbEntry {
            numerator: supporting.iter().filter(|t| is_cot(t)).count(),
            denominator: supporting_cot_labeled,
        },
        p_blurt_given_correct_consistent: ProbEntry {
            numerator: supporting.iter().filter(|t| is_blurt(t)).count(),
            denominator: supporting_blurt_labeled,
        },
    }
}

/// Mean sequence probability of accepted trials per bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodBucket {
    pub bucket: usize,
    pub range: (u32, u32),
    pub mean_seq_prob: Option<f64>,
    pub n_trials: usize,
    /// Accepted trials in range that carried no logprobs.
    pub n_missing_logprobs: usize,
}

pub fn likelihood_by_bucket(trials: &[TrialRecord], cfg: &BucketConfig) -> Vec<LikelihoodBucket> {
    let n = cfg.n_buckets as usize;
    let mut per_bucket: Vec<(Vec<f64>, usize)> = vec![(Vec::new(), 0); n];
    for t in trials.iter().filter(|t| t.is_accepted() && !t.post_stop) {
        let Some(b) = t.bucket.filter(|b| *b < n) else {
            continue;
        };
        match t.reasoning.token_logprobs.as_deref() {
            Some(lp) => {
                if let Ok(p) = sequence_probability(lp) {
                    per_bucket[b].0.push(p);
                }
            }
            None => per_bucket[b].1 += 1,
        }
    }
    per_bucket
        .into_iter()
        .enumerate()
        .map(|(b, (probs, missing))| LikelihoodBucket {
            bucket: b,
            range: cfg.range(b),
            mean_seq_prob: if probs.is_empty() {
                None
            } else {
                Some(mean(&probs))
            },
            n_trials: probs.len(),
            n_missing_logprobs: missing,
        })
        .collect()
}

/// Three-way style summary with blurt taking precedence over CoT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasoningStyle {
    Blurt,
    Cot,
    Noisy,
}

pub fn style_summary(trial: &TrialRecord) -> ReasoningStyle {
    if trial.blurt == Some(true) {
        ReasoningStyle::Blurt
    } else if trial.cot_label == Some(CotLabel::Cot) {
        ReasoningStyle::Cot
    } else {
        ReasoningStyle::Noisy
    }
}
