//! Concord: a harness for length-conditioned self-consistency decoding
//! experiments with language models.
//!
//! The pipeline samples free-form reasoning texts from an inference
//! backend, extracts an answer with a second greedy pass, filters
//! ill-formed responses, and aggregates answers by majority vote with a
//! minimum-consistency stopping rule. Analyses cover response-length
//! buckets, answer-blurting detection, CoT-style judging, conditional
//! probabilities, and sequence-likelihood curves — all replayable offline
//! from an append-only trial store.
//!
//! ```no_run
//! use concord::{
//!     run_until_threshold, ConsistencyConfig, Method, PipelineConfig, SimBackend, SimProfile,
//! };
//! # fn demo(questions: Vec<concord::QuestionRecord>, profile: SimProfile) -> concord::Result<()> {
//! let backend = SimBackend::new(profile, questions.clone())?;
//! let pipeline = PipelineConfig::default().with_seed(0);
//! let cfg = ConsistencyConfig::default(); // threshold 12, cap 512
//! let (result, trials) =
//!     run_until_threshold(&questions[0], &Method::Zeroshot, &cfg, &backend, &pipeline)?;
//! println!("{}: modal {:?} after {} draws", result.question_id, result.modal, trials.len());
//! # Ok(())
//! # }
//! ```
//!
//! Runnable walkthroughs for every capability live in `examples/`; the
//! `concord` binary exposes the same flows as subcommands (`run`,
//! `buckets`, `classify`, `analyze`, `report`).

pub mod analysis;
pub mod backend;
pub mod consistency;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod pipeline;

pub use analysis::{
    assign_bucket, bucket_stats, classify_cot, collect_bucketed, conditional_probabilities,
    detect_blurt, likelihood_by_bucket, BucketConfig, BucketStats, BucketedCollection,
    BucketedQuestion, LikelihoodBucket, ProbEntry, ProbabilityReport, ReasoningStyle,
};
pub use backend::{
    sequence_probability, FinishReason, GenParams, GenRequest, HttpBackend, HttpConfig, Route,
    SampledResponse, SimBackend, SimJudge, SimProfile, SplitMix64, TextBackend,
};
pub use consistency::{
    modal_answer, run_until_threshold, sweep_sample_counts, sweep_thresholds, tally,
    ConsistencyConfig, ConsistencyResult, SweepPoint,
};
pub use dataset::{canonicalize_answer, load_dataset, CanonicalAnswer, QuestionRecord, TaskKind};
pub use error::{BackendError, Error, Result};
pub use harness::{RunConfig, RunManifest, TrialFilter, TrialStore};
pub use pipeline::{
    apply_filters, build_answer_prompt, build_reasoning_prompt, run_trial, CotLabel, FilterVerdict,
    Method, PipelineConfig, PromptTemplates, RejectReason, TrialRecord,
};
