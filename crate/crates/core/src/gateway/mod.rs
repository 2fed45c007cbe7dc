//! Completion backends: a remote chat endpoint, deterministic scripted
//! policies, and a replay log.

mod remote;
mod replay;
mod scripted;

pub use remote::{RemoteBackend, RemoteConfig, API_KEY_VAR, BASE_URL_VAR, MODEL_VAR};
pub use replay::ReplayBackend;
pub use scripted::{ScriptedBackend, ScriptedPolicy};

use crate::env::wordle::WordList;
use crate::env::{FieldKind, Value, Violation, ViolationCode};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempts: {last_error}")]
    TransportExhausted { attempts: u32, last_error: String },
    #[error("replay log exhausted after {served} responses")]
    ReplayExhausted { served: usize },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Action,
    RuleExtraction,
    Profiling,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::Action => "action",
            Purpose::RuleExtraction => "rule_extraction",
            Purpose::Profiling => "profiling",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub purpose: Purpose,
}

impl CompletionRequest {
    /// Temperature 0 and a 1024-token budget; adjust fields as needed.
    pub fn new(purpose: Purpose, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            purpose,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_text.trim().is_empty() || self.user_text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt text".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;

    fn name(&self) -> String;

    /// Whether responses are independent of call order. Order-sensitive
    /// backends force sequential trajectories.
    fn order_independent(&self) -> bool {
        true
    }
}

/// Which backend to build, as written on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Remote,
    Scripted(ScriptedPolicy),
    Replay(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "remote" {
            return Ok(BackendSpec::Remote);
        }
        if let Some(policy) = s.strip_prefix("scripted:") {
            return Ok(BackendSpec::Scripted(policy.parse()?));
        }
        if let Some(path) = s.strip_prefix("replay:") {
            if path.is_empty() {
                return Err(GatewayError::Config("replay backend needs a path".into()));
            }
            return Ok(BackendSpec::Replay(PathBuf::from(path)));
        }
        Err(GatewayError::Config(format!(
            "unknown backend `{s}` (expected remote, scripted:<policy> or replay:<path>)"
        )))
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Remote => f.write_str("remote"),
            BackendSpec::Scripted(p) => write!(f, "scripted:{p}"),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
        }
    }
}

impl BackendSpec {
    /// `words` is the list scripted Wordle policies search.
    pub fn build(
        &self,
        words: Arc<WordList>,
        remote: RemoteConfig,
    ) -> Result<Arc<dyn CompletionBackend>, GatewayError> {
        Ok(match self {
            BackendSpec::Remote => Arc::new(RemoteBackend::new(remote)?),
            BackendSpec::Scripted(policy) => Arc::new(ScriptedBackend::new(policy.clone(), words)),
            BackendSpec::Replay(path) => Arc::new(ReplayBackend::from_file(path)?),
        })
    }
}

/// Contents of the last fenced block tagged `tag`.
pub fn extract_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let opener = format!("```{tag}");
    let mut found = None;
    let mut rest = text;
    let mut offset = 0;
    while let Some(pos) = rest.find(&opener) {
        let after = &rest[pos + opener.len()..];
        // The tag must end the fence line.
        let Some(nl) = after.find('\n') else { break };
        if after[..nl].trim().is_empty() {
            let body = &after[nl + 1..];
            if let Some(end) = body.find("```") {
                let start = offset + pos + opener.len() + nl + 1;
                found = Some(&text[start..start + end]);
            }
        }
        let consumed = pos + opener.len();
        offset += consumed;
        rest = &rest[consumed..];
    }
    found.map(|b| b.trim_end_matches(['\n', '\r']))
}

/// Extracts the final answer block and coerces it to `kind`.
pub fn parse_action(text: &str, kind: FieldKind) -> Result<Value, Violation> {
    let block = extract_block(text, "answer")
        .ok_or_else(|| Violation::new(ViolationCode::ParseFailure, "no answer block in response"))?;
    let raw = block.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    if raw.is_empty() {
        return Err(Violation::new(ViolationCode::ParseFailure, "empty answer block"));
    }
    match kind {
        FieldKind::Integer => raw
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| Violation::new(ViolationCode::ParseFailure, format!("`{raw}` is not an integer"))),
        FieldKind::Word => {
            if raw.contains(char::is_whitespace) {
                Err(Violation::new(ViolationCode::ParseFailure, format!("`{raw}` is not a single word")))
            } else {
                Ok(Value::text(raw.to_ascii_lowercase()))
            }
        }
        FieldKind::Text => Ok(Value::text(raw)),
        FieldKind::List => serde_json::from_str::<Value>(raw)
            .ok()
            .filter(|v| v.as_list().is_some())
            .ok_or_else(|| Violation::new(ViolationCode::ParseFailure, format!("`{raw}` is not a JSON list"))),
    }
}

/// A response carrying a single answer block.
pub fn answer_text(action: &Value) -> String {
    let body = match action.as_str() {
        Some(s) => s.to_string(),
        None => action.to_string(),
    };
    format!("```answer\n{body}\n```")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integer_answers() {
        let text = "I will narrow it down.\n```answer\n4217\n```";
        assert_eq!(parse_action(text, FieldKind::Integer).unwrap(), Value::Int(4217));
    }

    #[test]
    fn parses_word_answers() {
        assert_eq!(parse_action("```answer\ncrane\n```", FieldKind::Word).unwrap(), Value::text("crane"));
    }

    #[test]
    fn last_block_wins() {
        let text = "```answer\n1\n```\nactually\n```answer\n2\n```";
        assert_eq!(parse_action(text, FieldKind::Integer).unwrap(), Value::Int(2));
    }

    #[test]
    fn missing_block_is_parse_failure() {
        let err = parse_action("just 4217", FieldKind::Integer).unwrap_err();
        assert_eq!(err.code, ViolationCode::ParseFailure);
        let err = parse_action("```answer\nforty\n```", FieldKind::Integer).unwrap_err();
        assert_eq!(err.code, ViolationCode::ParseFailure);
        assert!(parse_action("```answers\n3\n```", FieldKind::Integer).is_err());
    }

    #[test]
    fn answer_text_round_trips() {
        for v in [Value::Int(17), Value::text("slate")] {
            let kind = if v.as_int().is_some() { FieldKind::Integer } else { FieldKind::Word };
            assert_eq!(parse_action(&answer_text(&v), kind).unwrap(), v);
        }
    }

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("remote".parse::<BackendSpec>().unwrap(), BackendSpec::Remote);
        assert_eq!("replay:/tmp/x.jsonl".parse::<BackendSpec>().unwrap(), BackendSpec::Replay("/tmp/x.jsonl".into()));
        assert_eq!(
            "scripted:wordle_oracle".parse::<BackendSpec>().unwrap(),
            BackendSpec::Scripted(ScriptedPolicy::WordleOracle)
        );
        assert!("scripted:nope".parse::<BackendSpec>().is_err());
        assert!("local".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::new(Purpose::Action, "s", "u").validate().is_ok());
        assert!(CompletionRequest::new(Purpose::Action, "", "u").validate().is_err());
        let mut r = CompletionRequest::new(Purpose::Action, "s", "u");
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }
}
