use super::{CompletionBackend, CompletionRequest, GatewayError};
use serde::Deserialize;
use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

#[derive(Deserialize)]
struct Recorded {
    response: String,
}

/// Serves pre-recorded responses in order, one per call.
pub struct ReplayBackend {
    queue: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
    label: String,
}

impl ReplayBackend {
    pub fn new(responses: impl IntoIterator<Item = String>) -> Self {
        Self { queue: Mutex::new(responses.into_iter().collect()), served: Mutex::new(0), label: "replay".into() }
    }

    /// Reads a JSONL file of `{"response": ...}` objects, the format the
    /// remote backend's request log writes.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("replay log {}: {e}", path.display())))?;
        let mut responses = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: Recorded = serde_json::from_str(line)
                .map_err(|e| GatewayError::Config(format!("replay log {} line {}: {e}", path.display(), i + 1)))?;
            responses.push(rec.response);
        }
        let mut backend = Self::new(responses);
        backend.label = format!("replay:{}", path.display());
        Ok(backend)
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let mut served = self.served.lock().expect("replay lock");
        match self.queue.lock().expect("replay lock").pop_front() {
            Some(r) => {
                *served += 1;
                Ok(r)
            }
            None => Err(GatewayError::ReplayExhausted { served: *served }),
        }
    }

    fn name(&self) -> String {
        self.label.clone()
    }

    fn order_independent(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Purpose;
    use std::io::Write;

    #[test]
    fn third_call_is_exhausted() {
        let b = ReplayBackend::new(["a".to_string(), "b".to_string()]);
        let req = CompletionRequest::new(Purpose::Action, "s", "u");
        assert_eq!(b.complete(&req).unwrap(), "a");
        assert_eq!(b.complete(&req).unwrap(), "b");
        assert!(matches!(b.complete(&req), Err(GatewayError::ReplayExhausted { served: 2 })));
    }

    #[test]
    fn reads_jsonl() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{{\"response\": \"```answer\\n42\\n```\", \"purpose\": \"action\"}}").unwrap();
        writeln!(f).unwrap();
        let b = ReplayBackend::from_file(f.path()).unwrap();
        let req = CompletionRequest::new(Purpose::Action, "s", "u");
        assert_eq!(b.complete(&req).unwrap(), "```answer\n42\n```");
        writeln!(f, "not json").unwrap();
        assert!(ReplayBackend::from_file(f.path()).is_err());
    }
}
