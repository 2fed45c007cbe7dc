use super::{CompletionBackend, CompletionRequest, GatewayError};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

pub const API_KEY_VAR: &str = "TRUSTLOOP_API_KEY";
pub const BASE_URL_VAR: &str = "TRUSTLOOP_BASE_URL";
pub const MODEL_VAR: &str = "TRUSTLOOP_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    pub max_concurrency: usize,
    /// Appends request/response pairs as JSONL; readable by the replay backend.
    pub log_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4.1-mini".into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(500),
            max_concurrency: 4,
            log_path: None,
        }
    }
}

impl RemoteConfig {
    /// Defaults overridden by the endpoint, model and key variables.
    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.trim().is_empty());
        let mut cfg = Self::default();
        if let Some(url) = var(BASE_URL_VAR) {
            cfg.base_url = url;
        }
        if let Some(model) = var(MODEL_VAR) {
            cfg.model = model;
        }
        cfg.api_key = var(API_KEY_VAR);
        cfg
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    purpose: String,
    system: &'a str,
    user: &'a str,
    response: &'a str,
}

enum Failure {
    Retry(String),
    Fatal(String),
}

/// OpenAI-compatible `/chat/completions` client.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    slots: Semaphore,
    log: Mutex<Option<File>>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let api_key = config
            .api_key
            .clone()
            .ok_or_else(|| GatewayError::Config(format!("remote backend needs an API key in {API_KEY_VAR}")))?;
        if config.attempts == 0 || config.max_concurrency == 0 {
            return Err(GatewayError::Config("attempts and max_concurrency must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .connect_timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        let log = match &config.log_path {
            Some(p) => Some(
                File::options()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| GatewayError::Config(format!("request log {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Ok(Self {
            slots: Semaphore { free: Mutex::new(config.max_concurrency), cv: Condvar::new() },
            config,
            api_key,
            client,
            log: Mutex::new(log),
        })
    }

    fn redact(&self, text: &str) -> String {
        text.replace(&self.api_key, "[redacted]")
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, Failure> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage { role: "system", content: &request.system_text },
                ChatMessage { role: "user", content: &request.user_text },
            ],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Failure::Retry(self.redact(&e.to_string())))?;
        let status = response.status();
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Failure::Retry(msg)
            } else {
                Failure::Fatal(msg)
            });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Failure::Retry(format!("bad response body: {}", self.redact(&e.to_string()))))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Retry("response has no message content".into()))
    }

    fn record(&self, request: &CompletionRequest, response: &str) {
        let mut guard = self.log.lock().expect("log lock");
        if let Some(file) = guard.as_mut() {
            let line = LogLine {
                purpose: request.purpose.to_string(),
                system: &request.system_text,
                user: &request.user_text,
                response,
            };
            let text = serde_json::to_string(&line).expect("log line serializes");
            if let Err(e) = writeln!(file, "{text}") {
                tracing::warn!("could not append to request log: {e}");
            }
        }
    }
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let _permit = self.slots.acquire();
        let mut delay = self.config.backoff;
        let mut last_error = String::new();
        for attempt in 1..=self.config.attempts {
            match self.attempt(request) {
                Ok(text) => {
                    self.record(request, &text);
                    return Ok(text);
                }
                Err(Failure::Fatal(e)) => {
                    return Err(GatewayError::TransportExhausted { attempts: attempt, last_error: e })
                }
                Err(Failure::Retry(e)) => {
                    tracing::warn!(attempt, endpoint = %self.config.base_url, "completion failed: {e}");
                    last_error = e;
                    if attempt < self.config.attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(GatewayError::TransportExhausted { attempts: self.config.attempts, last_error })
    }

    fn name(&self) -> String {
        format!("remote:{}", self.config.model)
    }
}
