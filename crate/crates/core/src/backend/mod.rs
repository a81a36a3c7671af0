//! Text-completion backends and the extraction loop.
//!
//! A backend turns an inference prompt into the model's continuation. The
//! HTTP backend speaks a minimal JSON protocol:
//!
//! ```text
//! POST {endpoint}
//! {"prompt": "...", "max_new_tokens": 30, "temperature": 0.01, "top_k": 5, "do_sample": true}
//! -> {"text": "<continuation only>"}
//! ```

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Answer, Corpus, NECategory};
use crate::prompting::PromptTemplate;
use crate::scoring::Prediction;

pub use http::HttpBackend;
pub use mock::MockBackend;

/// Sampling settings forwarded to the model server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_k: u32,
    pub do_sample: bool,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            top_k: 5,
            do_sample: true,
            max_new_tokens: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Completion URL; required for `http`, absent for `mock`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub max_concurrent: usize,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Base delay before a retry; doubles on each further retry.
    pub retry_backoff_ms: u64,
    /// Free-form model name recorded in manifests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Fine-tuning iterations of the served checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            timeout_secs: 60.0,
            max_concurrent: 4,
            retries: 2,
            retry_backoff_ms: 200,
            label: None,
            iterations: None,
        }
    }
}

impl BackendConfig {
    pub fn http(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.kind, &self.endpoint) {
            (BackendKind::Http, None) => {
                return Err(BackendError::Config(
                    "http backend needs an endpoint".into(),
                ))
            }
            (BackendKind::Mock, Some(_)) => {
                return Err(BackendError::Config(
                    "mock backend takes no endpoint".into(),
                ))
            }
            _ => {}
        }
        if self.max_concurrent == 0 {
            return Err(BackendError::Config(
                "max_concurrent must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("receipt `{receipt_id}` ({category}): gave up after {attempts} attempt(s): {last}")]
    Exhausted {
        receipt_id: String,
        category: NECategory,
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

/// One completion call, with the provenance needed for lookups and errors.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub receipt_id: &'a str,
    pub category: NECategory,
    pub prompt: &'a str,
    pub params: &'a GenerationParams,
}

pub trait Backend: Sync {
    /// The continuation of `request.prompt`, prompt excluded.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;

    /// Upper bound on simultaneous [`Backend::complete`] calls.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Runs every `(receipt, category)` pair of `corpus` through `backend` with
/// the reference prompt template.
pub fn run_extraction(
    corpus: &Corpus,
    backend: &dyn Backend,
    params: &GenerationParams,
) -> Vec<Prediction> {
    run_extraction_with(corpus, backend, params, &PromptTemplate::default())
}

/// Builds the inference prompt for every pair, completes it and parses the
/// answer.
///
/// Always returns `|records| × 6` rows sorted by receipt id, then category.
/// A failed pair becomes a row with an empty answer and the error message,
/// which scores like any other wrong answer.
pub fn run_extraction_with(
    corpus: &Corpus,
    backend: &dyn Backend,
    params: &GenerationParams,
    template: &PromptTemplate,
) -> Vec<Prediction> {
    let jobs: Vec<(usize, NECategory)> = (0..corpus.records.len())
        .flat_map(|i| NECategory::ALL.into_iter().map(move |c| (i, c)))
        .collect();
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = backend.max_concurrency().clamp(1, jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(rec_idx, cat)) = jobs.get(idx) else {
                    break;
                };
                let row = extract_one(
                    &corpus.records[rec_idx].id,
                    &corpus.records[rec_idx].text,
                    cat,
                    backend,
                    params,
                    template,
                );
                rows.lock().expect("worker panicked").push(row);
            });
        }
    });

    let mut rows = rows.into_inner().expect("worker panicked");
    rows.sort_by(|a, b| {
        a.receipt_id
            .cmp(&b.receipt_id)
            .then(a.category.cmp(&b.category))
    });
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        log::warn!(
            "{failures} of {} completions failed and were scored as empty answers",
            rows.len()
        );
    }
    rows
}

fn extract_one(
    receipt_id: &str,
    text: &str,
    category: NECategory,
    backend: &dyn Backend,
    params: &GenerationParams,
    template: &PromptTemplate,
) -> Prediction {
    let failed = |error: String| Prediction {
        receipt_id: receipt_id.to_string(),
        category,
        answer: Answer::Value(String::new()),
        terminated: false,
        raw: String::new(),
        error: Some(error),
    };
    let prompt = match template.inference_prompt(receipt_id, text, category) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let request = CompletionRequest {
        receipt_id,
        category,
        prompt: &prompt.text,
        params,
    };
    match backend.complete(&request) {
        Ok(raw) => {
            let completion = template.parse_completion(&raw);
            Prediction {
                receipt_id: receipt_id.to_string(),
                category,
                answer: completion.answer,
                terminated: completion.terminated,
                raw,
                error: None,
            }
        }
        Err(e) => failed(e.to_string()),
    }
}
