//! Client for an external detector speaking the frame schema over HTTP.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tracing::debug;
use url::Url;

use wagonline_core::detection::{parse_line, FrameDetections};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector did not answer within {0:?}")]
    Timeout(Duration),
    #[error("detector response is not a valid frame: {0}")]
    BadResponse(String),
    #[error("detector unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("invalid detector url: {0}")]
    InvalidUrl(#[from] url::ParseError),
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub timeout: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            timeout: Duration::from_secs(5),
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(2),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1 << attempt.min(16)).min(self.max_backoff)
    }
}

#[derive(Serialize)]
struct InferRequest<'a> {
    crop_ref: &'a str,
}

enum Failure {
    Retry(String, bool),
    Fatal(DetectorError),
}

pub struct DetectorClient {
    infer_url: Url,
    http: reqwest::Client,
    policy: RetryPolicy,
}

impl DetectorClient {
    pub fn new(base: &str, policy: RetryPolicy) -> Result<Self, DetectorError> {
        let mut base = Url::parse(base)?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| DetectorError::Unavailable { attempts: 0, reason: e.to_string() })?;
        Ok(DetectorClient { infer_url: base.join("infer")?, http, policy })
    }

    /// Sends one image reference and returns the detector's frame.
    ///
    /// Network errors, timeouts and 5xx answers are retried with doubling
    /// backoff; a malformed answer is not.
    pub async fn poll_endpoint(&self, crop_ref: &str) -> Result<FrameDetections, DetectorError> {
        let mut reason = String::new();
        let mut all_timeouts = true;
        for attempt in 0..self.policy.attempts {
            if attempt > 0 {
                tokio::time::sleep(self.policy.backoff(attempt - 1)).await;
            }
            match self.try_once(crop_ref).await {
                Ok(frame) => return Ok(frame),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(why, timed_out)) => {
                    debug!(attempt = attempt + 1, %why, "detector attempt failed");
                    all_timeouts &= timed_out;
                    reason = why;
                }
            }
        }
        if all_timeouts && self.policy.attempts > 0 {
            Err(DetectorError::Timeout(self.policy.timeout))
        } else {
            Err(DetectorError::Unavailable { attempts: self.policy.attempts, reason })
        }
    }

    async fn try_once(&self, crop_ref: &str) -> Result<FrameDetections, Failure> {
        let sent = self
            .http
            .post(self.infer_url.clone())
            .timeout(self.policy.timeout)
            .json(&InferRequest { crop_ref })
            .send()
            .await
            .map_err(|e| Failure::Retry(e.to_string(), e.is_timeout()))?;
        let status = sent.status();
        if status.is_server_error() {
            return Err(Failure::Retry(format!("detector answered {status}"), false));
        }
        let body = sent.text().await.map_err(|e| Failure::Retry(e.to_string(), e.is_timeout()))?;
        if !status.is_success() {
            return Err(Failure::Fatal(DetectorError::BadResponse(format!("status {status}"))));
        }
        parse_line(body.trim(), 1).map_err(|e| Failure::Fatal(DetectorError::BadResponse(e.to_string())))
    }
}
