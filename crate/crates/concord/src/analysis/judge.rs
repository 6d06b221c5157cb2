//! CoT-style judging via a few-shot auditor prompt.
//!
//! The judge receives a (question, thought, answer) triple inside a
//! bundled few-shot template and replies with `Label: 0` when the
//! reasoning precedes the answer (CoT-style) or `Label: 1` when the
//! answer comes first. Two template variants ship as assets: one built
//! from generative arithmetic exemplars and one from choice-style
//! exemplars.

use std::sync::LazyLock;

use regex::Regex;

use crate::backend::{GenParams, GenRequest, TextBackend};
use crate::dataset::{CanonicalAnswer, QuestionRecord, TaskKind};
use crate::error::BackendError;
use crate::pipeline::CotLabel;

pub const JUDGE_PROMPT_GENERATIVE: &str = include_str!("assets/judge_generative.txt");
pub const JUDGE_PROMPT_MULTIPLE_CHOICE: &str = include_str!("assets/judge_multiple_choice.txt");

static LABEL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Label:\s*([01])").unwrap());

/// Template variant for a task family.
pub fn judge_template(task: &TaskKind) -> &'static str {
    match task {
        TaskKind::IntegerGenerative => JUDGE_PROMPT_GENERATIVE,
        TaskKind::MultipleChoice { .. } | TaskKind::BinaryLabel { .. } => {
            JUDGE_PROMPT_MULTIPLE_CHOICE
        }
    }
}

/// Greedy decoding parameters for judge calls. The separator between
/// exemplars doubles as a stop sequence so the judge cannot wander into
/// inventing further examples.
pub fn judge_params() -> GenParams {
    GenParams {
        temperature: 0.0,
        top_k: 1,
        max_new_tokens: 200,
        stop_sequences: vec!["###".to_string()],
        seed: None,
    }
}

pub fn fill_judge_prompt(template: &str, question: &str, thought: &str, answer: &str) -> String {
    template
        .replace("{question}", question)
        .replace("{thought}", thought)
        .replace("{answer}", answer)
}

/// The last `Label: 0|1` in a judge completion decides the label; a
/// completion without one is `Unparsable`.
pub fn parse_judge_label(completion: &str) -> CotLabel {
    match LABEL_RE
        .captures_iter(completion)
        .last()
        .map(|c| c[1].to_string())
    {
        Some(digit) if digit == "0" => CotLabel::Cot,
        Some(_) => CotLabel::NotCot,
        None => CotLabel::Unparsable,
    }
}

/// Label one reasoning text as CoT-style or not using the judge backend.
pub fn classify_cot<B: TextBackend + ?Sized>(
    q: &QuestionRecord,
    reasoning: &str,
    answer: &CanonicalAnswer,
    judge: &B,
    params: &GenParams,
) -> Result<CotLabel, BackendError> {
    let prompt = fill_judge_prompt(
        judge_template(&q.task),
        &q.question,
        reasoning,
        answer.value(),
    );
    let completion = judge.generate(&GenRequest::free(&prompt, params))?;
    Ok(parse_judge_label(&completion.text))
}
