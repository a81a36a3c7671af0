use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendConfig, BackendError, BackendKind, CompletionRequest};

#[derive(Serialize)]
struct RequestBody<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    temperature: f64,
    top_k: u32,
    do_sample: bool,
}

#[derive(Deserialize)]
struct ResponseBody {
    text: String,
}

/// Blocking JSON client for a completion server.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    retries: u32,
    backoff: Duration,
    max_concurrent: usize,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        if config.kind != BackendKind::Http {
            return Err(BackendError::Config("not an http backend config".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone().expect("validated"),
            retries: config.retries,
            backoff: Duration::from_millis(config.retry_backoff_ms),
            max_concurrent: config.max_concurrent,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let p = request.params;
        let body = RequestBody {
            prompt: request.prompt,
            max_new_tokens: p.max_new_tokens,
            temperature: p.temperature,
            top_k: p.top_k,
            do_sample: p.do_sample,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str::<ResponseBody>(&text)
            .map(|r| r.text)
            .map_err(|e| BackendError::MalformedBody(e.to_string()))
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Connection(e.to_string())
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) if attempts > self.retries => {
                    return Err(BackendError::Exhausted {
                        receipt_id: request.receipt_id.to_string(),
                        category: request.category,
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => {
                    log::debug!(
                        "{} {}: attempt {attempts} failed: {e}",
                        request.receipt_id,
                        request.category
                    );
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrent
    }
}
