//! Vision-language service clients and the retry loop around them.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bundle::ObjectAnnotationBundle;
use crate::parse::render_qa;
use crate::{GenError, Result, QA_PAIRS};

pub const API_KEY_ENV: &str = "AURA_VLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VlmRequest {
    pub prompt: String,
    pub image_ref: PathBuf,
    pub params: GenerationParams,
    /// Source annotations; only offline responders read them.
    pub annotations: ObjectAnnotationBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VlmResponse {
    pub text: String,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    Transient(String),
    Auth(String),
    /// The service refused the request itself.
    Rejected(String),
}

pub trait VlmClient: Send + Sync {
    fn generate(&self, request: &VlmRequest) -> Result<String, ClientError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    /// Delay before attempt `attempt + 1`, doubling from the initial backoff.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Calls `client` until it succeeds, fails permanently or runs out of attempts.
pub fn vlm_generate(client: &dyn VlmClient, request: &VlmRequest, retry: &RetryPolicy) -> Result<VlmResponse> {
    let start = Instant::now();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.generate(request) {
            Ok(text) => {
                return Ok(VlmResponse {
                    text,
                    latency: start.elapsed(),
                    attempts: attempt,
                })
            }
            Err(ClientError::Auth(m)) => return Err(GenError::Auth(m)),
            Err(ClientError::Rejected(m)) => return Err(GenError::Request(m)),
            Err(ClientError::Transient(message)) => {
                if attempt >= retry.max_attempts.max(1) {
                    return Err(GenError::Transport {
                        attempts: attempt,
                        message,
                    });
                }
                log::warn!("attempt {attempt} for {} failed: {message}", request.annotations.sample_id);
                std::thread::sleep(retry.backoff(attempt));
            }
        }
    }
}

/// Chat-completions style HTTP client. The bearer token comes from
/// [`API_KEY_ENV`].
pub struct HttpClient {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            api_key,
            agent,
        }
    }

    pub fn from_env(endpoint: &str, timeout: Duration) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GenError::Config(format!("set {API_KEY_ENV} to the service credential")))?;
        Ok(Self::new(endpoint, key, timeout))
    }

    fn body(request: &VlmRequest) -> Result<Value, ClientError> {
        let bytes = fs::read(&request.image_ref)
            .map_err(|e| ClientError::Rejected(format!("{}: {e}", request.image_ref.display())))?;
        let image = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(json!({
            "model": request.params.model,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt},
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}},
                ],
            }],
        }))
    }
}

impl VlmClient for HttpClient {
    fn generate(&self, request: &VlmRequest) -> Result<String, ClientError> {
        let body = Self::body(request)?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ClientError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Err(ClientError::Transient(format!("HTTP {status}: {text}"))),
            _ => return Err(ClientError::Rejected(format!("HTTP {status}: {text}"))),
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Rejected(format!("response is not JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError::Rejected("response has no choices[0].message.content".into()))
    }
}

type Responder = dyn Fn(&VlmRequest, u32) -> Result<String, ClientError> + Send + Sync;

/// Deterministic stand-in for the service. The responder sees the request
/// and the 1-based attempt number for that sample.
pub struct MockClient {
    responder: Box<Responder>,
    attempts: Mutex<HashMap<String, u32>>,
}

impl MockClient {
    pub fn from_fn(f: impl Fn(&VlmRequest, u32) -> Result<String, ClientError> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(f),
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn canned(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_, _| Ok(text.clone()))
    }

    pub fn failing_then(failures: u32, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_, attempt| {
            if attempt <= failures {
                Err(ClientError::Transient(format!("simulated outage {attempt}")))
            } else {
                Ok(text.clone())
            }
        })
    }

    pub fn always_failing() -> Self {
        Self::from_fn(|_, attempt| Err(ClientError::Transient(format!("simulated outage {attempt}"))))
    }

    /// Answers every request with generated, valid QA about its annotations.
    pub fn offline() -> Self {
        Self::from_fn(|req, _| Ok(offline_response(&req.annotations)))
    }

    /// Total calls made so far for `sample_id`.
    pub fn attempts_for(&self, sample_id: &str) -> u32 {
        self.attempts.lock().unwrap().get(sample_id).copied().unwrap_or(0)
    }
}

impl VlmClient for MockClient {
    fn generate(&self, request: &VlmRequest) -> Result<String, ClientError> {
        let attempt = {
            let mut map = self.attempts.lock().unwrap();
            let n = map.entry(request.annotations.sample_id.clone()).or_insert(0);
            *n += 1;
            *n
        };
        (self.responder)(request, attempt)
    }
}

/// Ten template QA pairs about `bundle`, in the instructed envelope.
pub fn offline_response(bundle: &ObjectAnnotationBundle) -> String {
    use aura_core::Conversation;
    let seg = aura_core::SEG_TOKEN;
    let mut pool: Vec<Conversation> = Vec::new();
    let hidden: Vec<_> = bundle.objects.iter().filter(|o| o.occlusion_rate > 0.0).collect();
    if !hidden.is_empty() {
        let names: Vec<String> = hidden.iter().map(|o| format!("the {} {seg}", o.label())).collect();
        pool.push(Conversation {
            question: "Which shapes are partly hidden by something in front of them?".into(),
            answer: format!("{} {} partly hidden.", capitalise(&names.join(" and ")), if hidden.len() == 1 { "is" } else { "are" }),
            target_ids: hidden.iter().map(|o| o.id.clone()).collect(),
        });
    }
    for r in &bundle.relations {
        let (front, back) = (bundle.object(&r.occluder).unwrap(), bundle.object(&r.occludee).unwrap());
        pool.push(Conversation {
            question: format!("What is covering part of the {}?", back.label()),
            answer: format!("The {} {seg} covers part of the {} {seg}.", front.label(), back.label()),
            target_ids: vec![front.id.clone(), back.id.clone()],
        });
    }
    let phrasings = [
        "Where is the {}?",
        "Can you segment the {}, including any hidden part?",
        "Show me the full shape of the {}.",
    ];
    for (k, phrase) in phrasings.iter().enumerate() {
        for o in &bundle.objects {
            let how_much = if o.occlusion_rate > 0.0 {
                format!(" About {:.0}% of it is hidden.", o.occlusion_rate * 100.0)
            } else {
                String::new()
            };
            pool.push(Conversation {
                question: phrase.replace("{}", &o.label()),
                answer: if k == 0 {
                    format!("The {} is here {seg}.{how_much}", o.label())
                } else {
                    format!("Here is the {} {seg}.{how_much}", o.label())
                },
                target_ids: vec![o.id.clone()],
            });
        }
    }
    let items: Vec<Conversation> = pool.into_iter().cycle().take(QA_PAIRS).collect();
    render_qa(&items)
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
