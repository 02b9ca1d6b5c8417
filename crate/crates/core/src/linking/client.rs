use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::PromptPair;
use crate::throttle::{RetryPolicy, Semaphore, TokenBucket};

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat backend failed (status {status:?}): {message}")]
    Transport {
        status: Option<u16>,
        message: String,
    },
    #[error("chat response had no assistant text")]
    EmptyResponse,
    #[error("chat configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A chat-completion model. Implementations must be deterministic for a
/// fixed prompt as far as the remote side allows (temperature 0).
pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSpec {
    pub kind: ChatKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub max_in_flight: usize,
    pub requests_per_second: f64,
    pub timeout_secs: u64,
    /// Reply script for the `scripted` kind.
    pub script: Option<PathBuf>,
}

impl Default for ChatSpec {
    fn default() -> Self {
        Self {
            kind: ChatKind::Http,
            endpoint: Some("https://api.openai.com/v1/chat/completions".into()),
            model: "gpt-4o-mini".into(),
            auth_env: Some("OPENAI_API_KEY".into()),
            max_in_flight: 8,
            requests_per_second: 5.0,
            timeout_secs: 120,
            script: None,
        }
    }
}

impl ChatSpec {
    pub fn open(&self) -> Result<Box<dyn ChatBackend>, ChatError> {
        match self.kind {
            ChatKind::Scripted => {
                let path = self
                    .script
                    .as_ref()
                    .ok_or_else(|| ChatError::Config("scripted chat needs `script`".into()))?;
                Ok(Box::new(ScriptedChat::open(path)?))
            }
            ChatKind::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ChatError::Config("http chat needs `endpoint`".into()))?;
                let token = match &self.auth_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        ChatError::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Ok(Box::new(HttpChat::new(
                    endpoint,
                    self.model.clone(),
                    token,
                    self.max_in_flight,
                    self.requests_per_second,
                    Duration::from_secs(self.timeout_secs),
                )?))
            }
        }
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChat {
    endpoint: String,
    model: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
    bucket: TokenBucket,
    retry: RetryPolicy,
}

impl HttpChat {
    pub fn new(
        endpoint: String,
        model: String,
        token: Option<String>,
        max_in_flight: usize,
        requests_per_second: f64,
        timeout: Duration,
    ) -> Result<Self, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Config(e.to_string()))?;
        Ok(Self {
            endpoint,
            model,
            token,
            client,
            in_flight: Semaphore::new(max_in_flight),
            bucket: TokenBucket::new(requests_per_second, max_in_flight),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Request body sent for a prompt.
    pub fn request_body(&self, prompt: &PromptPair) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": 0,
        })
    }

    fn post_once(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        let _permit = self.in_flight.acquire();
        self.bucket.acquire();
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&self.request_body(prompt));
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ChatError::Transport {
            status: e.status().map(|s| s.as_u16()),
            message: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ChatError::Transport {
                status: Some(status.as_u16()),
                message: resp.text().unwrap_or_default(),
            });
        }
        let body: serde_json::Value = resp.json().map_err(|e| ChatError::Transport {
            status: Some(status.as_u16()),
            message: format!("bad response body: {e}"),
        })?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or(ChatError::EmptyResponse)
    }
}

impl ChatBackend for HttpChat {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        self.retry.run(
            || self.post_once(prompt),
            |e| match e {
                ChatError::Transport { status: None, .. } => true,
                ChatError::Transport {
                    status: Some(code), ..
                } => *code == 429 || *code >= 500,
                _ => false,
            },
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatScript {
    /// Reply for labels without a scripted entry.
    #[serde(default = "ChatScript::default_reply")]
    pub default: String,
    /// Entity label -> raw reply.
    #[serde(default)]
    pub replies: BTreeMap<String, String>,
}

impl ChatScript {
    fn default_reply() -> String {
        "answer: None\nconfidence: LOW".into()
    }
}

/// Offline backend answering from a label-keyed script. Records every prompt
/// it receives.
pub struct ScriptedChat {
    model: String,
    script: ChatScript,
    calls: AtomicUsize,
    seen: Mutex<Vec<PromptPair>>,
}

impl ScriptedChat {
    pub fn new(script: ChatScript) -> Self {
        Self {
            model: "scripted".into(),
            script,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(ChatScript {
            default: ChatScript::default_reply(),
            replies: pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        })
    }

    pub fn open(path: &Path) -> Result<Self, ChatError> {
        let text = fs::read_to_string(path)?;
        let script: ChatScript = serde_json::from_str(&text)
            .map_err(|e| ChatError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<PromptPair> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(prompt.clone());
        let label = prompt.label().unwrap_or("");
        Ok(self
            .script
            .replies
            .get(label)
            .unwrap_or(&self.script.default)
            .clone())
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, ChatError> {
        (**self).complete(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(label: &str) -> PromptPair {
        PromptPair {
            system: "s".into(),
            user: format!("Here is the entity to link:\nlabel: {label}"),
        }
    }

    #[test]
    fn scripted_replies_by_label() {
        let chat = ScriptedChat::from_pairs([("fever", "answer: X:1\nconfidence: HIGH")]);
        assert_eq!(
            chat.complete(&prompt("fever")).unwrap(),
            "answer: X:1\nconfidence: HIGH"
        );
        assert_eq!(
            chat.complete(&prompt("other")).unwrap(),
            "answer: None\nconfidence: LOW"
        );
        assert_eq!(chat.calls(), 2);
        assert_eq!(chat.prompts().len(), 2);
    }

    #[test]
    fn script_file_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        fs::write(&p, r#"{"replies": {}, "extra": 1}"#).unwrap();
        assert!(ScriptedChat::open(&p).is_err());
        fs::write(
            &p,
            r#"{"replies": {"a b": "answer: None\nconfidence: LOW"}}"#,
        )
        .unwrap();
        assert!(ScriptedChat::open(&p).is_ok());
    }

    #[test]
    fn request_body_shape() {
        let chat = HttpChat::new(
            "http://127.0.0.1:1/v1/chat/completions".into(),
            "m".into(),
            None,
            2,
            0.0,
            Duration::from_secs(1),
        )
        .unwrap();
        let body = chat.request_body(&prompt("x"));
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(
            body["messages"][1]["content"],
            "Here is the entity to link:\nlabel: x"
        );
    }

    #[test]
    fn missing_auth_env_is_config_error() {
        let spec = ChatSpec {
            auth_env: Some("CONREC_TEST_SURELY_UNSET_VAR".into()),
            ..ChatSpec::default()
        };
        assert!(matches!(spec.open(), Err(ChatError::Config(_))));
    }
}
