//! HTTP client for an external ambiguity scorer.
//!
//! Wire format (JSON both ways):
//!
//! ```text
//! POST <endpoint>
//! Authorization: Bearer <token>            (when a token variable is configured)
//! {
//!   "object": "cyl-4fold",
//!   "instruction": "...",
//!   "prompt": { "unambiguous": [ViewSummary], "ambiguous": [ViewSummary] },
//!   "live": ViewSummary
//! }
//!
//! ViewSummary = { "camera": [tx,ty,tz,qw,qx,qy,qz], "visible_feature_ids": [..], "entropy": x|null }
//!
//! 200 OK
//! { "ambiguous_probability": 0.42 }
//! ```

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    check_object, elapsed_secs, AmbiguityScore, AmbiguityScorer, GeometricPrompt, OracleScorer, PromptView, ScorerError,
};
use crate::scene::{ObjectModel, ViewDescriptor};

pub const INSTRUCTION: &str = "You are given reference views of a rigid object: views in which its 6-DoF pose is \
unambiguous and views in which it is ambiguous because of symmetry. Judge whether the live view is ambiguous. \
Respond with a JSON object of the form {\"ambiguous_probability\": <number between 0 and 1>} and nothing else.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteScorerConfig {
    pub endpoint: String,
    /// Name of the environment variable that holds the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    /// Per-request timeout, seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    /// Reject scores outside `[0, 1]` instead of clamping them.
    #[serde(default = "default_true")]
    pub strict: bool,
    /// Use the geometric oracle once retries are exhausted.
    #[serde(default)]
    pub fallback_to_oracle: bool,
}

fn default_true() -> bool {
    true
}

impl RemoteScorerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token_env: None,
            timeout: 10.0,
            max_retries: 2,
            max_concurrent: 4,
            strict: true,
            fallback_to_oracle: false,
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(ScorerError::Config("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(ScorerError::Config("max_concurrent must be at least 1".into()));
        }
        if self.endpoint.is_empty() {
            return Err(ScorerError::Config("endpoint is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSummary {
    pub camera: [f64; 7],
    pub visible_feature_ids: Vec<u32>,
    pub entropy: Option<f64>,
}

impl ViewSummary {
    fn of(view: &ViewDescriptor, entropy: Option<f64>) -> Self {
        Self {
            camera: view.camera.to_array7(),
            visible_feature_ids: view.visible_feature_ids.clone(),
            entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub unambiguous: Vec<ViewSummary>,
    pub ambiguous: Vec<ViewSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub object: String,
    pub instruction: String,
    pub prompt: PromptSummary,
    pub live: ViewSummary,
}

impl ScoreRequest {
    pub fn new(descriptor: &ViewDescriptor, prompt: &GeometricPrompt) -> Self {
        let summarize = |views: &[PromptView]| {
            views
                .iter()
                .map(|v| ViewSummary::of(&v.view, Some(v.entropy)))
                .collect()
        };
        Self {
            object: prompt.object_name.clone(),
            instruction: INSTRUCTION.to_string(),
            prompt: PromptSummary {
                unambiguous: summarize(&prompt.unambiguous),
                ambiguous: summarize(&prompt.ambiguous),
            },
            live: ViewSummary::of(descriptor, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreResponse {
    pub ambiguous_probability: f64,
}

/// Parses and validates a response body.
pub fn parse_response(body: &str, strict: bool) -> Result<f64, ScorerError> {
    let parsed: ScoreResponse =
        serde_json::from_str(body).map_err(|e| ScorerError::MalformedResponse(e.to_string()))?;
    let p = parsed.ambiguous_probability;
    if !p.is_finite() {
        return Err(ScorerError::MalformedResponse("score is not finite".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        if strict {
            return Err(ScorerError::MalformedResponse(format!("score {p} outside [0, 1]")));
        }
        return Ok(p.clamp(0.0, 1.0));
    }
    Ok(p)
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Scorer backed by an HTTP endpoint, with bounded concurrency and retries.
pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl RemoteScorer {
    pub const ID: &'static str = "remote";

    pub fn new(config: RemoteScorerConfig) -> Result<Self, ScorerError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Semaphore::new(config.max_concurrent);
        Ok(Self { config, agent, slots })
    }

    pub fn config(&self) -> &RemoteScorerConfig {
        &self.config
    }

    fn token(&self) -> Result<Option<String>, ScorerError> {
        match &self.config.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ScorerError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn attempt(&self, request: &ScoreRequest, token: Option<&str>) -> Result<f64, ScorerError> {
        let _permit = self.slots.acquire();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(request).map_err(map_transport_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ScorerError::Unreachable(format!("HTTP status {status}")));
        }
        let body = resp.body_mut().read_to_string().map_err(map_transport_error)?;
        parse_response(&body, self.config.strict)
    }
}

fn map_transport_error(e: ureq::Error) -> ScorerError {
    match e {
        ureq::Error::Timeout(_) => ScorerError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            ScorerError::Timeout
        }
        ureq::Error::Json(j) => ScorerError::MalformedResponse(j.to_string()),
        other => ScorerError::Unreachable(other.to_string()),
    }
}

impl AmbiguityScorer for RemoteScorer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn score(
        &self,
        object: &ObjectModel,
        descriptor: &ViewDescriptor,
        prompt: &GeometricPrompt,
    ) -> Result<AmbiguityScore, ScorerError> {
        check_object(object, prompt)?;
        let start = Instant::now();
        let token = self.token()?;
        let request = ScoreRequest::new(descriptor, prompt);
        let mut last = None;
        for _ in 0..=self.config.max_retries {
            match self.attempt(&request, token.as_deref()) {
                Ok(p_amb) => {
                    return Ok(AmbiguityScore {
                        p_amb,
                        scorer_id: Self::ID.to_string(),
                        latency: elapsed_secs(start),
                    })
                }
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        if self.config.fallback_to_oracle {
            return Ok(AmbiguityScore {
                p_amb: OracleScorer::p_amb(object, descriptor),
                scorer_id: format!("{}-fallback", OracleScorer::ID),
                latency: elapsed_secs(start),
            });
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_validation() {
        assert_eq!(parse_response(r#"{"ambiguous_probability": 0.3}"#, true), Ok(0.3));
        assert!(matches!(
            parse_response(r#"{"ambiguous_probability": 1.3}"#, true),
            Err(ScorerError::MalformedResponse(_))
        ));
        assert_eq!(parse_response(r#"{"ambiguous_probability": 1.3}"#, false), Ok(1.0));
        assert_eq!(parse_response(r#"{"ambiguous_probability": -0.2}"#, false), Ok(0.0));
        assert!(parse_response(r#"{"ambiguous_probability": "high"}"#, true).is_err());
        assert!(parse_response(r#"{}"#, true).is_err());
        assert!(parse_response(r#"{"ambiguous_probability": 0.1, "why": "x"}"#, true).is_err());
        assert!(parse_response("not json", true).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = RemoteScorerConfig::new("http://127.0.0.1:1/score");
        assert!(c.validate().is_ok());
        c.timeout = 0.0;
        assert!(c.validate().is_err());
        c.timeout = 1.0;
        c.max_concurrent = 0;
        assert!(RemoteScorer::new(c).is_err());
    }
}
