use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, EmbeddingError};
use crate::throttle::{RetryPolicy, Semaphore};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote encoder speaking `{"inputs": [...]}` -> `{"vectors": [[...], ...]}`.
pub struct HttpBackend {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(
        url: impl Into<String>,
        dimension: usize,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Backend {
                status: None,
                message: e.to_string(),
            })?;
        Ok(Self {
            url: url.into(),
            dimension,
            client,
            in_flight: Semaphore::new(max_in_flight),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { inputs: texts })
            .send()
            .map_err(|e| EmbeddingError::Backend {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
            })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbeddingError::Backend {
                status: Some(status.as_u16()),
                message: body,
            });
        }
        let parsed: EmbedResponse = resp.json().map_err(|e| EmbeddingError::Backend {
            status: Some(status.as_u16()),
            message: format!("bad response body: {e}"),
        })?;
        Ok(parsed.vectors)
    }
}

fn retryable(e: &EmbeddingError) -> bool {
    match e {
        EmbeddingError::Backend { status: None, .. } => true,
        EmbeddingError::Backend {
            status: Some(code), ..
        } => *code == 429 || *code >= 500,
        _ => false,
    }
}

impl EmbeddingBackend for HttpBackend {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn identity(&self) -> String {
        format!("http({},dim={})", self.url, self.dimension)
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        self.retry.run(|| self.post_once(texts), retryable)
    }
}
