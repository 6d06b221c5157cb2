//! Deterministic seeded simulator standing in for a real model.
//!
//! Each draw is a pure function of `(seed, question id, draw index,
//! profile, params)`. The per-question-and-bucket dominant answer is
//! derived separately so that answer consistency is a stable property of
//! a question at a given response length: every adherent trial in a bucket
//! repeats that bucket's dominant answer, and whether the dominant answer
//! is the gold one is governed by the bucket's correctness probability.
//! Tokens are whitespace-separated pieces and the reported `token_count`
//! is the number of pieces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::rng::draw_rng;
use crate::backend::{FinishReason, GenParams, GenRequest, Route, SampledResponse, TextBackend};
use crate::dataset::{CanonicalAnswer, QuestionRecord, TaskKind};
use crate::error::BackendError;

const TAG_DRAW: u8 = 0;
const TAG_DOMINANT: u8 = 1;
const TAG_DISTRACTOR: u8 = 2;

const FILLER: [&str; 17] = [
    "let", "me", "think", "this", "through", "step", "by", "step", "first", "consider", "then",
    "we", "combine", "and", "refine", "the", "result",
];

const NOISE: [&str; 8] = [
    "mumble", "static", "hiss", "crackle", "drift", "fuzz", "blur", "echo",
];

/// Generative behavior of the simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    /// Relative weight of each of the ten response-length buckets.
    pub length_weights: [f64; 10],
    /// Probability, per bucket, that the bucket's dominant answer is gold.
    pub correctness: [f64; 10],
    /// Probability that a trial repeats its bucket's dominant answer
    /// rather than scattering uniformly over the vocabulary.
    #[serde(default = "default_consistency")]
    pub consistency: f64,
    /// Probability that a response states its answer in the opening tokens.
    pub blurt_probability: f64,
    /// Probability that a response is meaningless and carries no answer.
    pub noise_probability: f64,
    /// Constant per-token natural-log probability to report, if any.
    #[serde(default)]
    pub per_token_logprob: Option<f64>,
    /// Answer pool; must contain every gold the simulator will be asked
    /// about. Non-gold entries serve as distractors.
    pub answer_vocabulary: Vec<CanonicalAnswer>,
}

fn default_consistency() -> f64 {
    1.0
}

impl SimProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        let total: f64 = self.length_weights.iter().sum();
        if !total.is_finite()
            || total <= 0.0
            || self
                .length_weights
                .iter()
                .any(|w| *w < 0.0 || !w.is_finite())
        {
            return Err(BackendError::InvalidRequest(
                "length weights must be non-negative with a positive sum".into(),
            ));
        }
        for (name, values) in [("correctness", &self.correctness[..])] {
            if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(BackendError::InvalidRequest(format!(
                    "{name} probabilities must lie in [0, 1]"
                )));
            }
        }
        for (name, p) in [
            ("consistency", self.consistency),
            ("blurt_probability", self.blurt_probability),
            ("noise_probability", self.noise_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::InvalidRequest(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if let Some(lp) = self.per_token_logprob {
            if lp > 0.0 || lp.is_nan() {
                return Err(BackendError::InvalidRequest(format!(
                    "per_token_logprob must be <= 0, got {lp}"
                )));
            }
        }
        if self.answer_vocabulary.is_empty() {
            return Err(BackendError::InvalidRequest(
                "answer vocabulary is empty".into(),
            ));
        }
        Ok(())
    }
}

/// Which pipeline stage is being simulated for a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStage {
    Reasoning,
    AnswerExtraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Cot,
    Blurt,
    Noisy,
}

struct DrawOutcome {
    length: u64,
    style: Style,
    answer: CanonicalAnswer,
}

/// The per-question distractor: incorrect buckets of one question all
/// agree on it, mirroring a model with one tempting wrong answer.
fn question_distractor(
    seed: u64,
    question: &QuestionRecord,
    profile: &SimProfile,
) -> CanonicalAnswer {
    let candidates: Vec<&CanonicalAnswer> = profile
        .answer_vocabulary
        .iter()
        .filter(|a| **a != question.gold)
        .collect();
    if candidates.is_empty() {
        return question.gold.clone();
    }
    let mut rng = draw_rng(seed, &question.id, TAG_DISTRACTOR, 0);
    candidates[rng.next_below(candidates.len() as u64) as usize].clone()
}

fn dominant_answer(
    seed: u64,
    question: &QuestionRecord,
    profile: &SimProfile,
    bucket: usize,
) -> CanonicalAnswer {
    let mut rng = draw_rng(seed, &question.id, TAG_DOMINANT, bucket as u64);
    if rng.bernoulli(profile.correctness[bucket]) {
        question.gold.clone()
    } else {
        question_distractor(seed, question, profile)
    }
}

fn draw_outcome(
    seed: u64,
    question: &QuestionRecord,
    profile: &SimProfile,
    draw_index: u64,
) -> DrawOutcome {
    let mut rng = draw_rng(seed, &question.id, TAG_DRAW, draw_index);
    // Fixed draw order; every draw consumes all six values so the stream
    // never depends on branches taken.
    let bucket = rng.categorical(&profile.length_weights);
    let length = 10 * bucket as u64 + 1 + rng.next_below(10);
    let adherent = rng.bernoulli(profile.consistency);
    let blurt = rng.bernoulli(profile.blurt_probability);
    let noise = rng.bernoulli(profile.noise_probability);
    let scatter = rng.next_below(profile.answer_vocabulary.len() as u64) as usize;

    let answer = if adherent {
        dominant_answer(seed, question, profile, bucket)
    } else {
        profile.answer_vocabulary[scatter].clone()
    };
    let style = if noise {
        Style::Noisy
    } else if blurt {
        Style::Blurt
    } else {
        Style::Cot
    };
    DrawOutcome {
        length,
        style,
        answer,
    }
}

/// Surface form of an answer as it appears in generated text.
fn answer_piece(answer: &CanonicalAnswer, task: &TaskKind) -> String {
    match task {
        TaskKind::MultipleChoice { .. } => format!("({})", answer.value()),
        _ => answer.value().to_string(),
    }
}

fn filler_cycle(n: usize, skip: usize) -> impl Iterator<Item = &'static str> {
    FILLER.iter().cycle().skip(skip).take(n).copied()
}

fn reasoning_pieces(outcome: &DrawOutcome, task: &TaskKind, len: usize) -> Vec<String> {
    match outcome.style {
        Style::Noisy => NOISE
            .iter()
            .cycle()
            .take(len)
            .map(|s| s.to_string())
            .collect(),
        Style::Blurt => {
            let mut pieces = vec![answer_piece(&outcome.answer, task)];
            pieces.extend(filler_cycle(len.saturating_sub(1), 0).map(str::to_string));
            pieces
        }
        Style::Cot => {
            // Answer lands right after the ten-piece opening, or last when
            // the response is too short to fit the full opening.
            let answer_pos = len.min(11);
            let mut pieces: Vec<String> = filler_cycle(answer_pos - 1, 0)
                .map(str::to_string)
                .collect();
            pieces.push(answer_piece(&outcome.answer, task));
            pieces.extend(filler_cycle(len - answer_pos, 10).map(str::to_string));
            pieces
        }
    }
}

/// Produce the deterministic response for one (question, draw, stage).
pub fn simulate(
    question: &QuestionRecord,
    profile: &SimProfile,
    params: &GenParams,
    draw_index: u64,
    stage: SimStage,
) -> Result<SampledResponse, BackendError> {
    profile.validate()?;
    let seed = params
        .seed
        .ok_or_else(|| BackendError::InvalidRequest("simulator requires params.seed".into()))?;
    let outcome = draw_outcome(seed, question, profile, draw_index);

    let pieces = match stage {
        SimStage::Reasoning => {
            let len = outcome.length.min(u64::from(params.max_new_tokens)) as usize;
            reasoning_pieces(&outcome, &question.task, len)
        }
        SimStage::AnswerExtraction => match outcome.style {
            Style::Noisy => vec!["static".to_string(), "drift".to_string()],
            _ => vec![answer_piece(&outcome.answer, &question.task)],
        },
    };

    let token_count = pieces.len() as u32;
    let finish_reason = if token_count == params.max_new_tokens {
        FinishReason::Length
    } else {
        FinishReason::Stop
    };
    Ok(SampledResponse {
        text: pieces.join(" "),
        token_count,
        token_logprobs: profile
            .per_token_logprob
            .map(|lp| vec![lp; token_count as usize]),
        token_texts: None,
        finish_reason,
        latency_ms: 0,
    })
}

/// [`TextBackend`] over a fixed question set and profile.
pub struct SimBackend {
    profile: SimProfile,
    questions: HashMap<String, QuestionRecord>,
}

impl SimBackend {
    pub fn new(
        profile: SimProfile,
        questions: impl IntoIterator<Item = QuestionRecord>,
    ) -> Result<Self, BackendError> {
        profile.validate()?;
        let questions: HashMap<String, QuestionRecord> =
            questions.into_iter().map(|q| (q.id.clone(), q)).collect();
        for q in questions.values() {
            if !profile.answer_vocabulary.contains(&q.gold) {
                return Err(BackendError::InvalidRequest(format!(
                    "gold answer {:?} of question {} is missing from the answer vocabulary",
                    q.gold.value(),
                    q.id
                )));
            }
        }
        Ok(SimBackend { profile, questions })
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    fn question(&self, id: &str) -> Result<&QuestionRecord, BackendError> {
        self.questions
            .get(id)
            .ok_or_else(|| BackendError::InvalidRequest(format!("unknown question id {id:?}")))
    }
}

impl TextBackend for SimBackend {
    fn generate(&self, request: &GenRequest<'_>) -> Result<SampledResponse, BackendError> {
        let (question_id, draw_index, stage) = match request.route {
            Route::Reasoning {
                question_id,
                draw_index,
            } => (question_id, draw_index, SimStage::Reasoning),
            Route::Answer {
                question_id,
                draw_index,
            } => (question_id, draw_index, SimStage::AnswerExtraction),
            Route::Free => {
                return Err(BackendError::InvalidRequest(
                    "simulator calls must be routed to a question draw".into(),
                ))
            }
        };
        let question = self.question(question_id)?;
        simulate(question, &self.profile, request.params, draw_index, stage)
    }

    fn describe(&self) -> String {
        format!("simulator over {} question(s)", self.questions.len())
    }
}

/// Deterministic judge stand-in: reads the final thought/answer pair out
/// of the judge prompt and labels it 1 when the answer already appears in
/// the thought's first ten whitespace pieces, 0 otherwise.
pub struct SimJudge;

impl SimJudge {
    fn label(prompt: &str) -> Option<&'static str> {
        let thought_start = prompt.rfind("Thought:")?;
        let rest = &prompt[thought_start + "Thought:".len()..];
        let answer_start = rest.find("Answer:")?;
        let thought = rest[..answer_start].trim();
        let after_answer = &rest[answer_start + "Answer:".len()..];
        let answer = after_answer
            .split("Explanation:")
            .next()
            .unwrap_or(after_answer)
            .trim();
        if answer.is_empty() {
            return None;
        }
        let prefix: Vec<&str> = thought.split_whitespace().take(10).collect();
        if prefix.join(" ").contains(answer) {
            Some("1")
        } else {
            Some("0")
        }
    }
}

impl TextBackend for SimJudge {
    fn generate(&self, request: &GenRequest<'_>) -> Result<SampledResponse, BackendError> {
        let text = match Self::label(request.prompt) {
            Some(label) => {
                format!("The placement of the answer dictates the label.\nLabel: {label}")
            }
            None => "I cannot audit this sample.".to_string(),
        };
        let token_count = text.split_whitespace().count() as u32;
        Ok(SampledResponse {
            text,
            token_count,
            token_logprobs: None,
            token_texts: None,
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        })
    }

    fn describe(&self) -> String {
        "simulated judge".to_string()
    }
}
