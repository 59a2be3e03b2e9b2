//! Contracts for the external model services (translator, paraphraser,
//! preference scorer, metric) and the in-process stubs that stand in for
//! them.
//!
//! The wire format is one JSON object per line: a request envelope
//! `{"id": .., "service": "translate", ...}` answered by a response envelope
//! `{"id": .., "text"| "scores" | "value": ..}` carrying the same id.

use std::io::Read;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lang::Lang;

/// Decoding parameters forwarded to a translator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    #[serde(default = "default_beam")]
    pub beam_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Per-sample seed, set when several rollouts are drawn for one input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
}

fn default_beam() -> u32 {
    4
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { beam_size: default_beam(), temperature: None, sample_seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "service", rename_all = "snake_case")]
pub enum ServiceRequest {
    Translate {
        text: String,
        src_lang: Lang,
        tgt_lang: Lang,
        #[serde(default)]
        decode: DecodeParams,
    },
    Paraphrase {
        text: String,
        lang: Lang,
    },
    PreferenceScore {
        src_text: String,
        candidates: Vec<String>,
    },
    Metric {
        src_text: String,
        hypothesis: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
}

impl ServiceRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceRequest::Translate { .. } => "translate",
            ServiceRequest::Paraphrase { .. } => "paraphrase",
            ServiceRequest::PreferenceScore { .. } => "preference_score",
            ServiceRequest::Metric { .. } => "metric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    pub id: u64,
    #[serde(flatten)]
    pub request: ServiceRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServiceOutput {
    Text { text: String },
    Scores { scores: Vec<f64> },
    Scalar { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEnvelope {
    pub id: u64,
    #[serde(flatten)]
    pub output: ServiceOutput,
}

impl ResponseEnvelope {
    pub fn text(id: u64, text: impl Into<String>) -> Self {
        ResponseEnvelope { id, output: ServiceOutput::Text { text: text.into() } }
    }
}

/// One failed attempt, before retry accounting.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Timeout,
    Malformed(String),
    Status(u16),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceErrorKind {
    #[error("timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend returned status {0}")]
    BackendError(u16),
    #[error("invalid retry policy: max_attempts must be at least 1")]
    InvalidPolicy,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{service} call failed after {attempts} attempt(s): {kind}")]
pub struct ServiceError {
    pub service: String,
    pub kind: ServiceErrorKind,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub timeout_ms: u64,
    /// Linear backoff: attempt `k` waits `k * backoff_ms` before retrying.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, timeout_ms: 30_000, backoff_ms: 200 }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &RequestEnvelope, timeout: Duration) -> Result<ResponseEnvelope, Failure>;
}

/// Sends `request` with retries, validating that the answer carries the
/// request id and only finite scalars.
pub fn call_service(backend: &dyn Backend, request: &RequestEnvelope, policy: &RetryPolicy) -> Result<ResponseEnvelope, ServiceError> {
    let service = format!("{}/{}", backend.name(), request.request.kind());
    if policy.max_attempts == 0 {
        return Err(ServiceError { service, kind: ServiceErrorKind::InvalidPolicy, attempts: 0 });
    }
    let timeout = Duration::from_millis(policy.timeout_ms);
    let mut last = ServiceErrorKind::Timeout;
    for attempt in 1..=policy.max_attempts {
        let result = backend.send(request, timeout).and_then(|resp| check_response(request, resp));
        match result {
            Ok(resp) => return Ok(resp),
            Err(failure) => {
                log::debug!("{service}: attempt {attempt} failed: {failure:?}");
                last = match failure {
                    Failure::Timeout => ServiceErrorKind::Timeout,
                    Failure::Malformed(msg) => ServiceErrorKind::MalformedResponse(msg),
                    Failure::Status(code) => ServiceErrorKind::BackendError(code),
                };
            }
        }
        if attempt < policy.max_attempts && policy.backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(policy.backoff_ms * attempt as u64));
        }
    }
    Err(ServiceError { service, kind: last, attempts: policy.max_attempts })
}

fn check_response(request: &RequestEnvelope, resp: ResponseEnvelope) -> Result<ResponseEnvelope, Failure> {
    if resp.id != request.id {
        return Err(Failure::Malformed(format!("response id {} answers request {}", resp.id, request.id)));
    }
    let finite = match &resp.output {
        ServiceOutput::Text { .. } => true,
        ServiceOutput::Scores { scores } => scores.iter().all(|s| s.is_finite()),
        ServiceOutput::Scalar { value } => value.is_finite(),
    };
    if !finite {
        return Err(Failure::Malformed("non-finite scalar".into()));
    }
    Ok(resp)
}

/// A cloneable handle to one configured backend.
#[derive(Clone)]
pub struct Service {
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    next_id: Arc<AtomicU64>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("backend", &self.backend.name()).field("policy", &self.policy).finish()
    }
}

impl Service {
    pub fn new(backend: impl Backend + 'static, policy: RetryPolicy) -> Self {
        Service { backend: Arc::new(backend), policy, next_id: Arc::new(AtomicU64::new(1)) }
    }

    pub fn stub(stub: StubBackend) -> Self {
        Service::new(stub, RetryPolicy { max_attempts: 1, timeout_ms: 1_000, backoff_ms: 0 })
    }

    pub fn name(&self) -> &str {
        self.backend.name()
    }

    pub fn call(&self, request: ServiceRequest) -> Result<ServiceOutput, ServiceError> {
        let envelope = RequestEnvelope { id: self.next_id.fetch_add(1, Ordering::Relaxed), request };
        call_service(self.backend.as_ref(), &envelope, &self.policy).map(|r| r.output)
    }

    fn malformed(&self, kind: &str, msg: &str) -> ServiceError {
        ServiceError { service: format!("{}/{kind}", self.name()), kind: ServiceErrorKind::MalformedResponse(msg.into()), attempts: 1 }
    }

    fn expect_text(&self, kind: &str, out: ServiceOutput) -> Result<String, ServiceError> {
        match out {
            ServiceOutput::Text { text } => Ok(text),
            _ => Err(self.malformed(kind, "expected a text response")),
        }
    }

    pub fn translate(&self, text: &str, src: Lang, tgt: Lang, decode: DecodeParams) -> Result<String, ServiceError> {
        let out = self.call(ServiceRequest::Translate { text: text.into(), src_lang: src, tgt_lang: tgt, decode })?;
        self.expect_text("translate", out)
    }

    pub fn paraphrase(&self, text: &str, lang: Lang) -> Result<String, ServiceError> {
        let out = self.call(ServiceRequest::Paraphrase { text: text.into(), lang })?;
        self.expect_text("paraphrase", out)
    }

    /// Raw scorer output; arity is checked by the caller.
    pub fn preference_scores(&self, src_text: &str, candidates: &[String]) -> Result<Vec<f64>, ServiceError> {
        let out = self.call(ServiceRequest::PreferenceScore { src_text: src_text.into(), candidates: candidates.to_vec() })?;
        match out {
            ServiceOutput::Scores { scores } => Ok(scores),
            _ => Err(self.malformed("preference_score", "expected a score list")),
        }
    }

    pub fn metric(&self, src_text: &str, hypothesis: &str, reference: Option<&str>) -> Result<f64, ServiceError> {
        let out =
            self.call(ServiceRequest::Metric { src_text: src_text.into(), hypothesis: hypothesis.into(), reference: reference.map(Into::into) })?;
        match out {
            ServiceOutput::Scalar { value } => Ok(value),
            _ => Err(self.malformed("metric", "expected a scalar")),
        }
    }

    /// Issues `requests` with at most `max_in_flight` concurrent calls.
    /// Results come back in request order.
    pub fn call_many(&self, requests: Vec<ServiceRequest>, max_in_flight: usize) -> Vec<Result<ServiceOutput, ServiceError>> {
        let n = requests.len();
        let workers = max_in_flight.max(1).min(n);
        if workers <= 1 {
            return requests.into_iter().map(|r| self.call(r)).collect();
        }
        let slots: Vec<Mutex<Option<Result<ServiceOutput, ServiceError>>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let cursor = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let result = self.call(requests[i].clone());
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect()
    }
}

/// Built-in deterministic backends.
#[derive(Debug, Clone, PartialEq)]
pub enum StubBackend {
    /// Returns the input text for translate and paraphrase requests.
    Echo,
    /// Returns the given scalar for every score or metric request.
    Constant(f64),
    /// Returns the given text for every translate or paraphrase request.
    Fixed(String),
    /// Always fails with the given status.
    Failing(u16),
    /// Echo, but each character is substituted with probability `rate`.
    Corrupt { rate: f64, seed: u64 },
}

impl StubBackend {
    /// Parses a selector: `echo`, `constant:0.5`, `fixed:TEXT`, `fail:503`,
    /// `corrupt:0.1:42`.
    pub fn parse(selector: &str) -> Result<Self, String> {
        let (head, rest) = selector.split_once(':').unwrap_or((selector, ""));
        let bad = || format!("bad stub selector {selector:?}");
        match head {
            "echo" if rest.is_empty() => Ok(StubBackend::Echo),
            "constant" => rest.parse().map(StubBackend::Constant).map_err(|_| bad()),
            "fixed" => Ok(StubBackend::Fixed(rest.to_string())),
            "fail" => rest.parse().map(StubBackend::Failing).map_err(|_| bad()),
            "corrupt" => {
                let (rate, seed) = rest.split_once(':').ok_or_else(bad)?;
                let rate: f64 = rate.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(bad());
                }
                Ok(StubBackend::Corrupt { rate, seed: seed.parse().map_err(|_| bad())? })
            }
            _ => Err(bad()),
        }
    }

    fn rewrite(&self, text: &str, sample_seed: Option<u64>) -> Result<String, Failure> {
        match self {
            StubBackend::Echo => Ok(text.to_string()),
            StubBackend::Fixed(s) => Ok(s.clone()),
            StubBackend::Corrupt { rate, seed } => Ok(corrupt(text, *rate, *seed, sample_seed.unwrap_or(0))),
            StubBackend::Constant(_) => Err(Failure::Status(400)),
            StubBackend::Failing(code) => Err(Failure::Status(*code)),
        }
    }
}

/// Substitutes each character of `text` with probability `rate` by a
/// different lowercase ASCII letter. Deterministic in (text, seeds).
pub fn corrupt(text: &str, rate: f64, seed: u64, sample_seed: u64) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let text_hash = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ text_hash.rotate_left(17) ^ sample_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    text.chars()
        .map(|c| {
            if rng.gen::<f64>() < rate {
                loop {
                    let r = (b'a' + rng.gen_range(0..26u8)) as char;
                    if r != c {
                        break r;
                    }
                }
            } else {
                c
            }
        })
        .collect()
}

impl Backend for StubBackend {
    fn name(&self) -> &str {
        match self {
            StubBackend::Echo => "echo-stub",
            StubBackend::Constant(_) => "constant-stub",
            StubBackend::Fixed(_) => "fixed-stub",
            StubBackend::Failing(_) => "failing-stub",
            StubBackend::Corrupt { .. } => "corrupt-stub",
        }
    }

    fn send(&self, envelope: &RequestEnvelope, _timeout: Duration) -> Result<ResponseEnvelope, Failure> {
        let id = envelope.id;
        if let StubBackend::Failing(code) = self {
            return Err(Failure::Status(*code));
        }
        let output = match &envelope.request {
            ServiceRequest::Translate { text, decode, .. } => ServiceOutput::Text { text: self.rewrite(text, decode.sample_seed)? },
            ServiceRequest::Paraphrase { text, .. } => ServiceOutput::Text { text: self.rewrite(text, None)? },
            ServiceRequest::PreferenceScore { candidates, .. } => match self {
                StubBackend::Constant(c) => ServiceOutput::Scores { scores: vec![*c; candidates.len()] },
                _ => return Err(Failure::Status(400)),
            },
            ServiceRequest::Metric { .. } => match self {
                StubBackend::Constant(c) => ServiceOutput::Scalar { value: *c },
                _ => return Err(Failure::Status(400)),
            },
        };
        Ok(ResponseEnvelope { id, output })
    }
}

/// Adapts a closure into a backend; handy for scripted test doubles.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&RequestEnvelope) -> Result<ResponseEnvelope, Failure> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnBackend { name: name.into(), f }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&RequestEnvelope) -> Result<ResponseEnvelope, Failure> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &RequestEnvelope, _timeout: Duration) -> Result<ResponseEnvelope, Failure> {
        (self.f)(request)
    }
}

/// POSTs one JSON request line and reads one JSON response line.
pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        HttpBackend { endpoint: endpoint.into(), token }
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn send(&self, request: &RequestEnvelope, timeout: Duration) -> Result<ResponseEnvelope, Failure> {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let mut body = serde_json::to_string(request).map_err(|e| Failure::Malformed(e.to_string()))?;
        body.push('\n');
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/x-ndjson");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body.as_bytes()).map_err(|e| match e {
            ureq::Error::Timeout(_) => Failure::Timeout,
            ureq::Error::StatusCode(code) => Failure::Status(code),
            other => Failure::Malformed(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(Failure::Status(status));
        }
        let mut text = String::new();
        resp.body_mut().as_reader().read_to_string(&mut text).map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut {
                Failure::Timeout
            } else {
                Failure::Malformed(e.to_string())
            }
        })?;
        let line = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| Failure::Malformed("empty body".into()))?;
        serde_json::from_str(line).map_err(|e| Failure::Malformed(e.to_string()))
    }
}
