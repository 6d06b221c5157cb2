//! Uniform generation interface over a remote HTTP endpoint and a
//! deterministic seeded simulator, plus sequence-probability math.

mod http;
mod rng;
mod sim;

pub use http::{HttpBackend, HttpConfig};
pub use rng::{draw_rng, SplitMix64};
pub use sim::{simulate, SimBackend, SimJudge, SimProfile, SimStage};

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};

/// Sampling configuration for one generation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Simulator runs only; HTTP backends ignore it.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenParams {
    /// Defaults for the reasoning-extraction stage: high-temperature
    /// top-k sampling to encourage diverse reasoning texts.
    pub fn reasoning_defaults() -> Self {
        GenParams {
            temperature: 1.2,
            top_k: 40,
            max_new_tokens: 256,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    /// Defaults for the answer-extraction stage: 50 tokens, greedy.
    pub fn answer_defaults() -> Self {
        GenParams {
            temperature: 0.0,
            top_k: 1,
            max_new_tokens: 50,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "temperature must be a non-negative real, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidInput("top_k must be positive".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidInput(
                "max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

/// One completion as reported by a backend. `token_count` is the backend's
/// completion-token count and is the single authority for all length logic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub text: String,
    pub token_count: u32,
    /// Natural-log probability per completion token, when the backend
    /// reports them; absence is the no-logprob-support flag.
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
    /// Token strings aligned with `token_logprobs`, when reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_texts: Option<Vec<String>>,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

/// Which pipeline stage a generation call belongs to. The simulator uses
/// this to derive its deterministic response; HTTP backends ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route<'a> {
    /// Reasoning extraction for one (question, draw).
    Reasoning {
        question_id: &'a str,
        draw_index: u64,
    },
    /// Greedy answer extraction for the same (question, draw).
    Answer {
        question_id: &'a str,
        draw_index: u64,
    },
    /// Free-standing call: judge prompts, smoke tests.
    Free,
}

/// A single generation request.
#[derive(Debug, Clone, Copy)]
pub struct GenRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a GenParams,
    pub route: Route<'a>,
}

impl<'a> GenRequest<'a> {
    pub fn free(prompt: &'a str, params: &'a GenParams) -> Self {
        GenRequest {
            prompt,
            params,
            route: Route::Free,
        }
    }
}

/// A text-generation backend safe to call from many workers at once.
pub trait TextBackend: Send + Sync {
    fn generate(&self, request: &GenRequest<'_>) -> Result<SampledResponse, BackendError>;

    /// Human-readable identity for manifests and reports.
    fn describe(&self) -> String;
}

impl<B: TextBackend + ?Sized> TextBackend for &B {
    fn generate(&self, request: &GenRequest<'_>) -> Result<SampledResponse, BackendError> {
        (**self).generate(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// exp of the summed per-token log-probabilities: the probability of the
/// whole sequence. The empty product is 1.
pub fn sequence_probability(token_logprobs: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &lp) in token_logprobs.iter().enumerate() {
        if lp > 0.0 || lp.is_nan() {
            return Err(Error::InvalidInput(format!(
                "log-probability at index {i} is {lp}; entries must be <= 0"
            )));
        }
        sum += lp;
    }
    Ok(sum.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_product_is_one() {
        assert_eq!(sequence_probability(&[]).unwrap(), 1.0);
    }

    #[test]
    fn analytic_cases() {
        let p = sequence_probability(&[-0.1, -0.2]).unwrap();
        assert!((p - (-0.3f64).exp()).abs() < 1e-15);
        assert!((p - 0.740818).abs() < 1e-6);

        let half = 0.5f64.ln();
        let p = sequence_probability(&[half, half, half]).unwrap();
        assert!((p - 0.125).abs() < 1e-12);
    }

    #[test]
    fn positive_entry_rejected() {
        assert!(sequence_probability(&[-0.1, 0.2]).is_err());
        // Exactly zero is a valid logprob (probability 1 token).
        assert_eq!(sequence_probability(&[0.0]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn appending_strictly_decreases(
            mut lps in proptest::collection::vec(-3.0f64..=-1e-9, 0..20),
            extra in -3.0f64..=-1e-3,
        ) {
            let before = sequence_probability(&lps).unwrap();
            lps.push(extra);
            let after = sequence_probability(&lps).unwrap();
            prop_assert!(after < before);
        }
    }
}
