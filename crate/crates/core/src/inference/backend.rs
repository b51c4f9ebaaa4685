//! Text-generation backends: a scripted mock and an HTTP client.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl BackendRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32) -> Self {
        Self { prompt: prompt.into(), max_tokens, temperature: 0.0, stop: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("backend returned HTTP {status}")]
    Status { status: u16 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
}

impl BackendError {
    /// Whether retrying the same request later could succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Timeout { .. } | BackendError::Transport { .. } => true,
            BackendError::Status { status } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Anything that turns a prompt into text. Implementations must accept
/// concurrent requests.
pub trait TextBackend: Send + Sync {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

fn check(request: &BackendRequest) -> Result<(), BackendError> {
    if request.max_tokens == 0 {
        return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
    }
    Ok(())
}

/// Replays canned responses in order, one per request.
#[derive(Debug)]
pub struct MockBackend {
    script: Vec<String>,
    state: Mutex<MockState>,
}

#[derive(Debug, Default)]
struct MockState {
    next: usize,
    prompts: Vec<String>,
}

impl MockBackend {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self { script: script.into_iter().map(Into::into).collect(), state: Mutex::default() }
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).prompts.clone()
    }

    pub fn served(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).next
    }
}

impl TextBackend for MockBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        check(request)?;
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let Some(text) = self.script.get(st.next) else {
            return Err(BackendError::ScriptExhausted { served: st.next });
        };
        st.next += 1;
        st.prompts.push(request.prompt.clone());
        Ok(BackendResponse { text: text.clone(), finish_reason: FinishReason::Stop })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after the first one.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self { endpoint: "http://127.0.0.1:8080".into(), token: None, timeout_ms: 30_000, retries: 2, backoff_ms: 200 }
    }
}

/// POSTs requests as JSON to `{endpoint}/generate`.
pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn url(&self) -> String {
        format!("{}/generate", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, request: &BackendRequest, attempts: u32) -> Result<BackendResponse, BackendError> {
        let mut req = self.agent.post(&self.url());
        if let Some(token) = &self.cfg.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.send_json(request).map_err(|e| transport(e, attempts))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status });
        }
        let body = resp.into_body().read_to_string().map_err(|e| transport(e, attempts))?;
        serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))
    }
}

fn transport(e: ureq::Error, attempts: u32) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout { attempts },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout { attempts },
        other => BackendError::Transport { attempts, message: other.to_string() },
    }
}

impl TextBackend for HttpBackend {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        check(request)?;
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut attempt = 1;
        loop {
            match self.attempt(request, attempt) {
                Err(e) if e.is_retriable() && attempt <= self.cfg.retries => {
                    log::warn!("backend attempt {attempt} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_serves_script_then_errors() {
        let mock = MockBackend::new(["a", "b", "c", "d"]);
        let req = BackendRequest::new("p", 16);
        for want in ["a", "b", "c", "d"] {
            assert_eq!(mock.generate(&req).unwrap().text, want);
        }
        let err = mock.generate(&req).unwrap_err();
        assert!(matches!(err, BackendError::ScriptExhausted { served: 4 }));
        assert!(!err.is_retriable());
        assert_eq!(mock.served(), 4);
    }

    #[test]
    fn zero_max_tokens_rejected() {
        let mock = MockBackend::new(["a"]);
        assert!(matches!(mock.generate(&BackendRequest::new("p", 0)), Err(BackendError::InvalidRequest(_))));
        assert_eq!(mock.served(), 0);
    }

    #[test]
    fn wire_format() {
        let mut req = BackendRequest::new("hi", 8);
        req.stop = vec!["\n\n".into()];
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["prompt"], "hi");
        assert_eq!(v["max_tokens"], 8);
        assert_eq!(v["stop"][0], "\n\n");
        let r: BackendResponse = serde_json::from_str(r#"{"text":"x","finish_reason":"length"}"#).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Length);
    }
}
