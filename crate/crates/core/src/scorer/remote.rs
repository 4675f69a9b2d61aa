//! Client for an external model service.
//!
//! Protocol: `POST {base}/v1/score` with `{"items":[{"text","image"}]}`,
//! answered by `{"scores":[..]}` aligned by index. Scores must already be
//! probabilities; anything outside `[0, 1]` is a protocol violation.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_probability, ScoreRequest, Scorer};
use crate::error::ScoreError;

pub const ENV_URL: &str = "COG_SCORER_URL";
pub const ENV_TIMEOUT_MS: &str = "COG_SCORER_TIMEOUT_MS";
pub const ENV_RETRIES: &str = "COG_SCORER_RETRIES";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteScorerConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl RemoteScorerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_millis(10_000),
            retries: 2,
        }
    }

    /// Reads `COG_SCORER_URL`, `COG_SCORER_TIMEOUT_MS` and `COG_SCORER_RETRIES`.
    pub fn from_env() -> Result<Self, ScoreError> {
        let url = std::env::var(ENV_URL).map_err(|_| ScoreError::Config(format!("{ENV_URL} is not set")))?;
        let mut config = Self::new(url);
        if let Ok(ms) = std::env::var(ENV_TIMEOUT_MS) {
            let ms: u64 = ms
                .parse()
                .map_err(|_| ScoreError::Config(format!("{ENV_TIMEOUT_MS} must be an integer, got {ms:?}")))?;
            config.timeout = Duration::from_millis(ms);
        }
        if let Ok(n) = std::env::var(ENV_RETRIES) {
            config.retries = n
                .parse()
                .map_err(|_| ScoreError::Config(format!("{ENV_RETRIES} must be an integer, got {n:?}")))?;
        }
        Ok(config)
    }
}

#[derive(Serialize)]
struct WireItem<'a> {
    text: &'a str,
    image: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    items: Vec<WireItem<'a>>,
}

#[derive(Deserialize)]
struct WireResponse {
    scores: Vec<f64>,
}

pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/score", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<WireResponse, ScoreError> {
        let mut last_error = None;
        for _ in 0..=self.config.retries {
            match self.agent.post(&self.endpoint()).send_json(body) {
                Ok(response) => {
                    return response
                        .into_json::<WireResponse>()
                        .map_err(|e| ScoreError::MalformedResponse(e.to_string()));
                }
                // 4xx will not improve on retry.
                Err(ureq::Error::Status(code, _)) if (400..500).contains(&code) => {
                    return Err(ScoreError::Transport(format!("scorer answered HTTP {code}")));
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }
        Err(ScoreError::Transport(last_error.unwrap_or_default()))
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        let mut scores = self.score_batch(std::slice::from_ref(request)).map_err(|e| match e {
            ScoreError::Batch { source, .. } => *source,
            other => other,
        })?;
        Ok(scores.remove(0))
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        for (index, r) in requests.iter().enumerate() {
            if r.text.trim().is_empty() {
                return Err(ScoreError::Batch {
                    index,
                    source: Box::new(ScoreError::EmptyText),
                });
            }
        }
        let body = WireRequest {
            items: requests
                .iter()
                .map(|r| WireItem {
                    text: &r.text,
                    image: &r.image.locator,
                })
                .collect(),
        };
        let response = self.post(&body)?;
        if response.scores.len() != requests.len() {
            return Err(ScoreError::MalformedResponse(format!(
                "expected {} scores, got {}",
                requests.len(),
                response.scores.len()
            )));
        }
        response
            .scores
            .into_iter()
            .enumerate()
            .map(|(index, value)| check_probability(index, value))
            .collect()
    }
}
