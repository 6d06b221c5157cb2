//! Two-stage prompting pipeline: reasoning extraction, greedy answer
//! extraction, method variants, the response-length gate, and the
//! ill-formed-response filters. Every draw yields a complete
//! [`TrialRecord`] whether it was accepted or rejected.

use serde::{Deserialize, Serialize};

use crate::analysis::{assign_bucket, detect_blurt, BucketConfig};
use crate::backend::{GenParams, GenRequest, Route, SampledResponse, TextBackend};
use crate::dataset::{canonicalize_answer, CanonicalAnswer, QuestionRecord, TaskKind};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_TOKENS: u32 = 60;

/// Prompting method variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Method {
    Zeroshot,
    ZeroshotCot,
    /// No prefix; responses are kept only when strictly longer than
    /// `min_tokens` completion tokens.
    ZeroshotLength {
        min_tokens: u32,
    },
}

impl Method {
    pub fn zeroshot_length() -> Self {
        Method::ZeroshotLength {
            min_tokens: DEFAULT_MIN_TOKENS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Zeroshot => "zeroshot",
            Method::ZeroshotCot => "zeroshot-cot",
            Method::ZeroshotLength { .. } => "zeroshot-length",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zeroshot" => Ok(Method::Zeroshot),
            "zeroshot-cot" => Ok(Method::ZeroshotCot),
            "zeroshot-length" => Ok(Method::zeroshot_length()),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected zeroshot, zeroshot-cot, or zeroshot-length)"
            ))),
        }
    }
}

/// Why a response was rejected, checked in this fixed order; the first
/// failing check wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    Unfinished,
    EndsWithQuestionMark,
    InvalidPrediction,
    AnswerNotInReasoning,
    BelowLengthGate,
}

impl RejectReason {
    pub const ALL: [RejectReason; 6] = [
        RejectReason::Empty,
        RejectReason::Unfinished,
        RejectReason::EndsWithQuestionMark,
        RejectReason::InvalidPrediction,
        RejectReason::AnswerNotInReasoning,
        RejectReason::BelowLengthGate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RejectReason::Empty => "empty",
            RejectReason::Unfinished => "unfinished",
            RejectReason::EndsWithQuestionMark => "ends_with_question_mark",
            RejectReason::InvalidPrediction => "invalid_prediction",
            RejectReason::AnswerNotInReasoning => "answer_not_in_reasoning",
            RejectReason::BelowLengthGate => "below_length_gate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum FilterVerdict {
    Accepted,
    Rejected(RejectReason),
}

impl FilterVerdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, FilterVerdict::Accepted)
    }
}

/// Judge label for one reasoning text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotLabel {
    Cot,
    NotCot,
    Unparsable,
}

/// One sampled reasoning attempt with everything needed to re-derive any
/// statistic offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub question_id: String,
    pub method: Method,
    pub draw_index: u64,
    pub reasoning: SampledResponse,
    pub answer_raw: String,
    pub answer: Option<CanonicalAnswer>,
    pub verdict: FilterVerdict,
    pub bucket: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurt: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurt_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot_label: Option<CotLabel>,
    /// Set on draws issued concurrently that landed after the stopping
    /// rule had already fired; excluded from all tallies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub post_stop: bool,
}

impl TrialRecord {
    pub fn is_accepted(&self) -> bool {
        self.verdict.is_accepted()
    }
}

/// Prompt templates; the defaults follow the standard zero-shot two-stage
/// pipeline and every piece can be overridden from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    /// Must contain `{question}`.
    pub reasoning_template: String,
    /// Appended to the reasoning prompt for the CoT variant.
    pub cot_prefix: String,
    /// Must contain `{reasoning_prompt}`, `{reasoning}` and `{hint}`.
    pub answer_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            reasoning_template: "Q: {question}\nA:".to_string(),
            cot_prefix: " Let's think step by step".to_string(),
            answer_template: "{reasoning_prompt}{reasoning}\nTherefore, the answer is{hint}"
                .to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        if !self.reasoning_template.contains("{question}") {
            return Err(Error::Config(
                "reasoning_template must contain {question}".into(),
            ));
        }
        for required in ["{reasoning_prompt}", "{reasoning}"] {
            if !self.answer_template.contains(required) {
                return Err(Error::Config(format!(
                    "answer_template must contain {required}"
                )));
            }
        }
        Ok(())
    }
}

/// Prompt sent to the model for the reasoning-extraction stage.
pub fn build_reasoning_prompt(q: &QuestionRecord, m: &Method, t: &PromptTemplates) -> String {
    let base = t.reasoning_template.replace("{question}", &q.question);
    match m {
        Method::ZeroshotCot => format!("{base}{}", t.cot_prefix),
        Method::Zeroshot | Method::ZeroshotLength { .. } => base,
    }
}

fn answer_hint(task: &TaskKind) -> String {
    match task {
        TaskKind::IntegerGenerative => String::new(),
        TaskKind::MultipleChoice { options } => {
            let first = options.first().copied().unwrap_or('A');
            let last = options.last().copied().unwrap_or('E');
            format!(" (one of {first} through {last})")
        }
        TaskKind::BinaryLabel { labels } => format!(" ({} or {})", labels[0], labels[1]),
    }
}

/// Prompt for the greedy answer-extraction stage: the full reasoning-stage
/// transcript followed by the answer trigger.
pub fn build_answer_prompt(
    q: &QuestionRecord,
    m: &Method,
    reasoning: &str,
    t: &PromptTemplates,
) -> Result<String> {
    if reasoning.trim().is_empty() {
        return Err(Error::InvalidInput(
            "answer extraction requires a non-empty reasoning text".into(),
        ));
    }
    Ok(t.answer_template
        .replace("{reasoning_prompt}", &build_reasoning_prompt(q, m, t))
        .replace("{reasoning}", reasoning)
        .replace("{hint}", &answer_hint(&q.task)))
}

/// Apply the ill-formed-response filters in their fixed order.
///
/// Order: blank text, truncated at the token budget, trailing question
/// mark, no valid prediction, prediction missing from the reasoning, and
/// finally the length gate (zeroshot-length only, strict: a response of
/// exactly `min_tokens` tokens is rejected).
pub fn apply_filters(
    resp: &SampledResponse,
    answer: Option<&CanonicalAnswer>,
    params: &GenParams,
    m: &Method,
) -> FilterVerdict {
    let trimmed = resp.text.trim();
    if trimmed.is_empty() {
        return FilterVerdict::Rejected(RejectReason::Empty);
    }
    if resp.token_count == params.max_new_tokens {
        return FilterVerdict::Rejected(RejectReason::Unfinished);
    }
    if trimmed.ends_with('?') {
        return FilterVerdict::Rejected(RejectReason::EndsWithQuestionMark);
    }
    let Some(answer) = answer else {
        return FilterVerdict::Rejected(RejectReason::InvalidPrediction);
    };
    if !resp.text.contains(answer.value()) {
        return FilterVerdict::Rejected(RejectReason::AnswerNotInReasoning);
    }
    if let Method::ZeroshotLength { min_tokens } = m {
        if resp.token_count <= *min_tokens {
            return FilterVerdict::Rejected(RejectReason::BelowLengthGate);
        }
    }
    FilterVerdict::Accepted
}

/// Everything fixed across the trials of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub templates: PromptTemplates,
    pub reasoning_params: GenParams,
    pub answer_params: GenParams,
    #[serde(default)]
    pub bucket: BucketConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            templates: PromptTemplates::default(),
            reasoning_params: GenParams::reasoning_defaults(),
            answer_params: GenParams::answer_defaults(),
            bucket: BucketConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.templates.validate()?;
        self.reasoning_params.validate()?;
        self.answer_params.validate()?;
        self.bucket.validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.reasoning_params.seed = Some(seed);
        self.answer_params.seed = Some(seed);
        self
    }
}

/// Run one complete trial: reasoning generation, answer extraction,
/// canonicalization, filtering, bucket assignment. Rejected trials are
/// returned like any other; nothing is silently dropped.
pub fn run_trial<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    m: &Method,
    backend: &B,
    cfg: &PipelineConfig,
    draw_index: u64,
) -> Result<TrialRecord> {
    let tag_err = |source| Error::Trial {
        question_id: q.id.clone(),
        draw_index,
        source,
    };

    let reasoning_prompt = build_reasoning_prompt(q, m, &cfg.templates);
    let reasoning = backend
        .generate(&GenRequest {
            prompt: &reasoning_prompt,
            params: &cfg.reasoning_params,
            route: Route::Reasoning {
                question_id: &q.id,
                draw_index,
            },
        })
        .map_err(tag_err)?;

    // A blank reasoning text cannot seed the answer prompt; it is doomed
    // to the Empty verdict anyway.
    let (answer_raw, answer) = if reasoning.text.trim().is_empty() {
        (String::new(), None)
    } else {
        let answer_prompt = build_answer_prompt(q, m, &reasoning.text, &cfg.templates)?;
        let extraction = backend
            .generate(&GenRequest {
                prompt: &answer_prompt,
                params: &cfg.answer_params,
                route: Route::Answer {
                    question_id: &q.id,
                    draw_index,
                },
            })
            .map_err(tag_err)?;
        let answer = canonicalize_answer(&extraction.text, &q.task);
        (extraction.text, answer)
    };

    let verdict = apply_filters(&reasoning, answer.as_ref(), &cfg.reasoning_params, m);
    let bucket = assign_bucket(reasoning.token_count, &cfg.bucket);
    let (blurt, blurt_source) = match (&verdict, &answer) {
        (FilterVerdict::Accepted, Some(ans)) => {
            let (flag, source) = detect_blurt(&reasoning, ans);
            (Some(flag), Some(source.to_string()))
        }
        _ => (None, None),
    };

    Ok(TrialRecord {
        question_id: q.id.clone(),
        method: m.clone(),
        draw_index,
        reasoning,
        answer_raw,
        answer,
        verdict,
        bucket,
        blurt,
        blurt_source,
        cot_label: None,
        post_stop: false,
    })
}
