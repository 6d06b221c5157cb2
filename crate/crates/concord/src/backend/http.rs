//! OpenAI-compatible HTTP backend (completions and chat variants).

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{FinishReason, GenRequest, SampledResponse, TextBackend};
use crate::error::BackendError;

pub const API_KEY_ENV: &str = "CONCORD_API_KEY";

const MAX_ATTEMPTS: u32 = 6; // first try + 5 retries
const BACKOFF_START_MS: u64 = 250;

/// Wire flavor spoken by the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    #[default]
    Completions,
    Chat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api: ApiFlavor,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Whether to pass `top_k` through (endpoints that reject unknown
    /// fields need this off).
    #[serde(default = "default_true")]
    pub send_top_k: bool,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
}

fn default_api_key_env() -> String {
    API_KEY_ENV.to_string()
}

fn default_true() -> bool {
    true
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    120_000
}

/// Counting semaphore bounding in-flight requests.
struct InFlight {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            permits: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        InFlightGuard { sem: self }
    }
}

struct InFlightGuard<'a> {
    sem: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    /// Test hook: overrides the exponential backoff schedule.
    backoff_base_ms: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: format!("client construction failed: {e}"),
            })?;
        Ok(HttpBackend {
            in_flight: InFlight::new(config.max_in_flight),
            api_key,
            client,
            backoff_base_ms: BACKOFF_START_MS,
            config,
        })
    }

    #[cfg(test)]
    fn with_backoff_ms(mut self, ms: u64) -> Self {
        self.backoff_base_ms = ms;
        self
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.api {
            ApiFlavor::Completions => format!("{base}/v1/completions"),
            ApiFlavor::Chat => format!("{base}/v1/chat/completions"),
        }
    }

    fn body(&self, request: &GenRequest<'_>) -> serde_json::Value {
        let params = request.params;
        let mut body = json!({
            "model": self.config.model,
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if self.config.send_top_k {
            body["top_k"] = json!(params.top_k);
        }
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        match self.config.api {
            ApiFlavor::Completions => {
                body["prompt"] = json!(request.prompt);
                body["logprobs"] = json!(1);
            }
            ApiFlavor::Chat => {
                body["messages"] = json!([{ "role": "user", "content": request.prompt }]);
                body["logprobs"] = json!(true);
            }
        }
        body
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<reqwest::blocking::Response, String> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        req.send().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    completion_tokens: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    // Legacy completions shape.
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
    // Chat shape.
    #[serde(default)]
    content: Option<Vec<WireChatLogprob>>,
}

#[derive(Debug, Deserialize)]
struct WireChatLogprob {
    token: String,
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

fn retryable_status(status: reqwest::StatusCode) -> bool {
    status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error()
}

/// Extract (logprobs, token texts); both `None` unless every position
/// carries a value, since partial vectors cannot satisfy the per-token
/// alignment contract.
fn extract_logprobs(lp: Option<WireLogprobs>) -> (Option<Vec<f64>>, Option<Vec<String>>) {
    let Some(lp) = lp else { return (None, None) };
    if let Some(content) = lp.content {
        let values: Vec<f64> = content.iter().map(|c| c.logprob).collect();
        let texts: Vec<String> = content.into_iter().map(|c| c.token).collect();
        return (Some(values), Some(texts));
    }
    let values = lp
        .token_logprobs
        .and_then(|v| v.into_iter().collect::<Option<Vec<f64>>>());
    match values {
        Some(values) => (Some(values), lp.tokens),
        None => (None, None),
    }
}

fn normalize_finish(server: Option<&str>, token_count: u32, max_new_tokens: u32) -> FinishReason {
    if token_count == max_new_tokens {
        return FinishReason::Length;
    }
    match server {
        Some("stop") => FinishReason::Stop,
        // A server-side "length" that does not match the requested budget
        // cannot be represented as Length without breaking the invariant.
        _ => FinishReason::Other,
    }
}

impl HttpBackend {
    fn parse(
        &self,
        wire: WireResponse,
        request: &GenRequest<'_>,
        latency_ms: u64,
    ) -> Result<SampledResponse, BackendError> {
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let mut text = match self.config.api {
            ApiFlavor::Completions => choice.text.unwrap_or_default(),
            ApiFlavor::Chat => choice.message.and_then(|m| m.content).unwrap_or_default(),
        };
        // Echo stripping: completions servers configured to echo return
        // the prompt as a prefix of the text.
        if let Some(stripped) = text.strip_prefix(request.prompt) {
            text = stripped.to_string();
        }

        let (token_logprobs, token_texts) = extract_logprobs(choice.logprobs);
        let reported = wire.usage.and_then(|u| u.completion_tokens);
        let token_count = match (reported, &token_logprobs) {
            (Some(n), _) => n,
            (None, Some(lp)) => lp.len() as u32,
            (None, None) => {
                let n = text.split_whitespace().count() as u32;
                log::warn!(
                    "endpoint reported no completion token count; using whitespace count {n}"
                );
                n
            }
        };
        // Misaligned logprob vectors cannot be trusted for per-token math.
        let token_logprobs = token_logprobs.filter(|lp| lp.len() as u32 == token_count);
        if token_logprobs.is_none() {
            log::warn!("endpoint returned no usable token logprobs; sequence probabilities unavailable for this trial");
        }
        let token_texts = token_texts.filter(|t| t.len() as u32 == token_count);

        Ok(SampledResponse {
            text,
            token_count,
            token_logprobs,
            token_texts,
            finish_reason: normalize_finish(
                choice.finish_reason.as_deref(),
                token_count,
                request.params.max_new_tokens,
            ),
            latency_ms,
        })
    }
}

impl TextBackend for HttpBackend {
    fn generate(&self, request: &GenRequest<'_>) -> Result<SampledResponse, BackendError> {
        let _permit = self.in_flight.acquire();
        let body = self.body(request);
        let started = Instant::now();

        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = self.post_once(&body);
            let failure = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        let detail = resp.text().unwrap_or_default();
                        return Err(BackendError::Auth(format!("HTTP {status}: {detail}")));
                    }
                    if status.is_success() {
                        let latency_ms = started.elapsed().as_millis() as u64;
                        let wire: WireResponse = resp.json().map_err(|e| {
                            BackendError::MalformedResponse(format!("JSON decode failed: {e}"))
                        })?;
                        return self.parse(wire, request, latency_ms);
                    }
                    if retryable_status(status) {
                        format!("HTTP {status}")
                    } else {
                        let detail = resp.text().unwrap_or_default();
                        return Err(BackendError::MalformedResponse(format!(
                            "HTTP {status}: {detail}"
                        )));
                    }
                }
                Err(e) => e,
            };
            if attempt >= MAX_ATTEMPTS {
                return Err(BackendError::Transport {
                    attempts: attempt,
                    message: failure,
                });
            }
            let backoff = self.backoff_base_ms << (attempt - 1);
            log::warn!("attempt {attempt} failed ({failure}); retrying in {backoff} ms");
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }

    fn describe(&self) -> String {
        format!(
            "{} ({:?} API) model {}",
            self.config.base_url, self.config.api, self.config.model
        )
    }
}
