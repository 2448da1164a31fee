//! Client for an OpenAI-style chat completion gateway.
//!
//! Choice logits are read from the top-k log-probabilities of a single
//! generated token. Requests pass through a bound on in-flight calls and a
//! token-bucket rate limit, and transient failures are retried with
//! exponential backoff.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{self, Message};
use super::{AgentError, AgentModel, AgentPrompt, CotOutcome, LogitVector, ReasonCache};
use crate::dataset::{Label, Question};

pub const GATEWAY_URL_ENV: &str = "HERDSIM_GATEWAY_URL";
pub const API_KEY_ENV: &str = "HERDSIM_API_KEY";

/// Labels missing from the top-k get `ln(MISSING_LABEL_FACTOR * p_min)`,
/// where `p_min` is the smallest returned label probability.
pub const MISSING_LABEL_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Connection failure or timeout.
    Network(String),
    Status { code: u16, body: String },
    Decode(String),
}

impl TransportError {
    pub fn retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Network(m) => write!(f, "network: {m}"),
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Decode(m) => write!(f, "decode: {m}"),
        }
    }
}

/// Moves one JSON request body to the gateway and returns its JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(&self, body: &Value) -> Result<Value, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> HttpTransport {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            url: url.into(),
            api_key,
        }
    }

    /// Reads the endpoint and credential from `HERDSIM_GATEWAY_URL` / `HERDSIM_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<HttpTransport, AgentError> {
        let url = std::env::var(GATEWAY_URL_ENV)
            .map_err(|_| AgentError::Config(format!("{GATEWAY_URL_ENV} is not set")))?;
        Ok(HttpTransport::new(url, std::env::var(API_KEY_ENV).ok(), timeout))
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, body: &Value) -> Result<Value, TransportError> {
        let mut request = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let payload = serde_json::to_vec(body).map_err(|e| TransportError::Decode(e.to_string()))?;
        let mut response = request
            .send(&payload[..])
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let code = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

type Handler = dyn Fn(&Value) -> Result<Value, TransportError> + Send + Sync;

/// In-process gateway serving fixtures; keeps every request body it receives.
pub struct MockGateway {
    handler: Box<Handler>,
    requests: Mutex<Vec<Value>>,
}

impl MockGateway {
    pub fn new(
        handler: impl Fn(&Value) -> Result<Value, TransportError> + Send + Sync + 'static,
    ) -> MockGateway {
        MockGateway {
            handler: Box::new(handler),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Always answers with the same top-k token log-probabilities.
    pub fn with_logprobs(top: &[(&str, f64)]) -> MockGateway {
        let reply = logprob_reply(top);
        MockGateway::new(move |_| Ok(reply.clone()))
    }

    /// Always answers with the same message text.
    pub fn with_text(text: &str) -> MockGateway {
        let reply = text_reply(text);
        MockGateway::new(move |_| Ok(reply.clone()))
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("mock poisoned").clone()
    }
}

impl Transport for MockGateway {
    fn post_json(&self, body: &Value) -> Result<Value, TransportError> {
        self.requests.lock().expect("mock poisoned").push(body.clone());
        (self.handler)(body)
    }
}

/// A chat-completion reply whose single token has the given top-k alternatives.
pub fn logprob_reply(top: &[(&str, f64)]) -> Value {
    let first = top.first().map(|t| t.0).unwrap_or("");
    let alternatives: Vec<Value> = top
        .iter()
        .map(|(token, lp)| json!({"token": token, "logprob": lp}))
        .collect();
    json!({
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": first},
            "logprobs": {"content": [{"token": first, "logprob": top.first().map(|t| t.1).unwrap_or(0.0), "top_logprobs": alternatives}]}
        }]
    })
}

pub fn text_reply(text: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayLimits {
    pub max_in_flight: usize,
    /// Sustained request rate; `0` disables the limit.
    pub requests_per_second: f64,
    pub burst: f64,
    /// Attempts after the first before giving up.
    pub retry_budget: u32,
    pub backoff_base_ms: u64,
    pub top_logprobs: u32,
    pub timeout_secs: u64,
}

impl Default for GatewayLimits {
    fn default() -> Self {
        GatewayLimits {
            max_in_flight: 4,
            requests_per_second: 5.0,
            burst: 5.0,
            retry_budget: 4,
            backoff_base_ms: 500,
            top_logprobs: 20,
            timeout_secs: 60,
        }
    }
}

impl GatewayLimits {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_in_flight == 0 {
            out.push("max_in_flight must be >= 1".to_string());
        }
        if !(self.requests_per_second >= 0.0 && self.requests_per_second.is_finite()) {
            out.push("requests_per_second must be >= 0".to_string());
        }
        if self.requests_per_second > 0.0 && (self.burst.is_nan() || self.burst < 1.0) {
            out.push("burst must be >= 1".to_string());
        }
        if !(1..=20).contains(&self.top_logprobs) {
            out.push("top_logprobs must be in 1..=20".to_string());
        }
        out
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64, capacity: f64) -> TokenBucket {
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket poisoned");
                let now = Instant::now();
                let refill = now.duration_since(state.1).as_secs_f64() * self.rate;
                state.0 = (state.0 + refill).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut count = self.count.lock().expect("semaphore poisoned");
        while *count >= self.limit {
            count = self.freed.wait(count).expect("semaphore poisoned");
        }
        *count += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("semaphore poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct GatewayClient {
    transport: Arc<dyn Transport>,
    limits: GatewayLimits,
    bucket: TokenBucket,
    in_flight: InFlight,
}

impl GatewayClient {
    pub fn new(transport: Arc<dyn Transport>, limits: GatewayLimits) -> GatewayClient {
        GatewayClient {
            bucket: TokenBucket::new(limits.requests_per_second, limits.burst.max(1.0)),
            in_flight: InFlight {
                limit: limits.max_in_flight.max(1),
                count: Mutex::new(0),
                freed: Condvar::new(),
            },
            transport,
            limits,
        }
    }

    pub fn limits(&self) -> &GatewayLimits {
        &self.limits
    }

    /// Sends one request, retrying transient failures up to the retry budget.
    pub fn request(&self, body: &Value) -> Result<Value, AgentError> {
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.in_flight.acquire();
                self.bucket.acquire();
                self.transport.post_json(body)
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < self.limits.retry_budget => {
                    let delay = self.limits.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) if e.retryable() => {
                    return Err(AgentError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(AgentError::Gateway(e.to_string())),
            }
        }
    }

    /// Per-label log-probabilities of the next token.
    pub fn choice_logits(
        &self,
        model_id: &str,
        messages: &[Message],
        num_labels: usize,
    ) -> Result<LogitVector, AgentError> {
        if num_labels == 0 {
            return Err(AgentError::Config("no labels requested".into()));
        }
        let body = json!({
            "model": model_id,
            "messages": messages,
            "temperature": 0,
            "max_tokens": 1,
            "logprobs": true,
            "top_logprobs": self.limits.top_logprobs,
        });
        let reply = self.request(&body)?;
        extract_label_logits(&reply, num_labels)
    }

    /// Generated message text for a free-form request.
    pub fn complete_text(
        &self,
        model_id: &str,
        messages: &[Message],
        temperature: f64,
        max_tokens: u32,
    ) -> Result<String, AgentError> {
        let body = json!({
            "model": model_id,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        let reply = self.request(&body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| AgentError::Extraction("reply has no message content".into()))
    }
}

/// Reads label log-probabilities out of a chat-completion reply.
///
/// Tokens are matched to labels after trimming whitespace; when several
/// tokens map to one label the largest log-probability wins. Missing labels
/// get the floor described at [`MISSING_LABEL_FACTOR`].
pub fn extract_label_logits(reply: &Value, num_labels: usize) -> Result<LogitVector, AgentError> {
    let top = reply
        .pointer("/choices/0/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| AgentError::Extraction("reply has no top_logprobs".into()))?;
    let mut found: Vec<Option<f64>> = vec![None; num_labels];
    for entry in top {
        let (Some(token), Some(lp)) = (
            entry.get("token").and_then(Value::as_str),
            entry.get("logprob").and_then(Value::as_f64),
        ) else {
            continue;
        };
        let Some(label) = Label::parse(token.trim()) else { continue };
        if label.index() < num_labels && lp.is_finite() {
            let slot = &mut found[label.index()];
            *slot = Some(slot.map_or(lp, |cur| cur.max(lp)));
        }
    }
    let min = found
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or_else(|| AgentError::Extraction("no choice label among returned tokens".into()))?;
    let floor = MISSING_LABEL_FACTOR.ln() + min;
    Ok(LogitVector::new(found.into_iter().map(|v| v.unwrap_or(floor)).collect()))
}

/// An LLM behind the gateway, seen through the [`AgentModel`] interface.
pub struct GatewayAgent {
    model_id: String,
    client: Arc<GatewayClient>,
    reasons: Arc<ReasonCache>,
}

impl GatewayAgent {
    pub fn new(model_id: impl Into<String>, client: Arc<GatewayClient>, reasons: Arc<ReasonCache>) -> Self {
        GatewayAgent {
            model_id: model_id.into(),
            client,
            reasons,
        }
    }
}

impl AgentModel for GatewayAgent {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn choice_logits(&self, prompt: &AgentPrompt<'_>) -> Result<LogitVector, AgentError> {
        self.client.choice_logits(
            &self.model_id,
            &prompt::answer_messages(prompt),
            prompt.question.num_choices(),
        )
    }

    fn generate_reason(&self, question: &Question, choice: Label) -> Result<String, AgentError> {
        self.reasons
            .get_or_insert_with(&self.model_id, &question.id, choice, || {
                let messages = prompt::reason_messages(question, choice);
                for _ in 0..2 {
                    let text = self.client.complete_text(&self.model_id, &messages, 0.0, 128)?;
                    if !text.trim().is_empty() {
                        return Ok(text.trim().to_string());
                    }
                }
                Err(AgentError::Extraction(format!(
                    "empty reason for {} on {}",
                    choice, question.id
                )))
            })
    }

    fn chain_of_thought(&self, question: &Question) -> Result<CotOutcome, AgentError> {
        let messages = prompt::cot_messages(question);
        for _ in 0..2 {
            let text = self.client.complete_text(&self.model_id, &messages, 1.0, 1024)?;
            if let Some(label) = prompt::parse_cot_answer(&text, question.num_choices()) {
                return Ok(CotOutcome::Answer(label));
            }
        }
        Ok(CotOutcome::Abstain)
    }
}
