use std::fmt;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::TeacherError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSettings {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    /// Requests per minute.
    pub rate_limit: f64,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub positive_temperature: f64,
    pub negative_temperature: f64,
    /// Extraction aborts once the share of failed dialogues exceeds this.
    pub failure_threshold: f64,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: "TEACHER_API_KEY".into(),
            max_retries: 3,
            rate_limit: 60.0,
            timeout: 60.0,
            backoff_ms: 1000,
            max_in_flight: 4,
            positive_temperature: 1.0,
            negative_temperature: 0.7,
            failure_threshold: 0.2,
        }
    }
}

impl TeacherSettings {
    pub fn validate(&self) -> Result<(), TeacherError> {
        let bad = |m: &str| Err(TeacherError::Config(m.to_string()));
        if !(self.rate_limit > 0.0) {
            return bad("rate_limit must be positive");
        }
        if !(self.timeout > 0.0) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must lie in [0, 1]");
        }
        if self.positive_temperature < 0.0 || self.negative_temperature < 0.0 {
            return bad("temperatures must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Positive,
    Negative,
    Judge,
}

#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    RateLimited,
    Http { status: u16, body: String },
    Network(String),
    Protocol(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("request timed out"),
            TransportError::RateLimited => f.write_str("rate limited by endpoint"),
            TransportError::Http { status, body } => write!(f, "HTTP {status}: {body}"),
            TransportError::Network(m) => write!(f, "network error: {m}"),
            TransportError::Protocol(m) => write!(f, "malformed response: {m}"),
        }
    }
}

/// One prompt in, one completion out.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError>;
}

impl<F> ChatTransport for F
where
    F: Fn(&ChatRequest<'_>) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self(request)
    }
}

/// OpenAI-style chat-completions over HTTPS.
pub struct HttpChatTransport {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpChatTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatTransport")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpChatTransport {
    /// Reads the key from the configured environment variable.
    pub fn from_env(settings: &TeacherSettings) -> Result<Self, TeacherError> {
        let api_key = std::env::var(&settings.api_key_env).map_err(|_| TeacherError::MissingApiKey {
            var: settings.api_key_env.clone(),
        })?;
        Self::new(&settings.endpoint, api_key, Duration::from_secs_f64(settings.timeout))
    }

    pub fn new(endpoint: &str, api_key: String, timeout: Duration) -> Result<Self, TeacherError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TeacherError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key,
            client,
        })
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Network(e.to_string())
                }
            })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(TransportError::RateLimited);
        }
        let text = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::Protocol(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
    }
}

/// Spaces requests evenly at `rate` per minute across all threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(rate: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / rate),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum RequestOutcome {
    Ok,
    Empty,
    Failed(String),
}

/// One line of the request log. Prompts and keys are never recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub purpose: Purpose,
    pub tag: String,
    /// 0 for the first try, then 1, 2, ... for retries.
    pub attempt: u32,
    #[serde(flatten)]
    pub outcome: RequestOutcome,
}

pub struct TeacherClient {
    settings: TeacherSettings,
    transport: Box<dyn ChatTransport>,
    limiter: Arc<RateLimiter>,
    log: Mutex<Vec<RequestRecord>>,
}

impl fmt::Debug for TeacherClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TeacherClient").field("settings", &self.settings).finish_non_exhaustive()
    }
}

impl TeacherClient {
    pub fn new(settings: TeacherSettings, transport: Box<dyn ChatTransport>) -> Result<Self, TeacherError> {
        settings.validate()?;
        Ok(Self {
            limiter: Arc::new(RateLimiter::per_minute(settings.rate_limit)),
            settings,
            transport,
            log: Mutex::new(Vec::new()),
        })
    }

    /// A client for another model (e.g. a judge) that draws from this
    /// client's rate limiter.
    pub fn sibling(&self, model_name: &str, transport: Box<dyn ChatTransport>) -> Self {
        Self {
            settings: TeacherSettings {
                model_name: model_name.to_string(),
                ..self.settings.clone()
            },
            transport,
            limiter: Arc::clone(&self.limiter),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn settings(&self) -> &TeacherSettings {
        &self.settings
    }

    pub fn model_name(&self) -> &str {
        &self.settings.model_name
    }

    /// Send one prompt, retrying empty completions and transport failures up
    /// to `max_retries` times with exponential backoff.
    pub fn complete(&self, purpose: Purpose, tag: &str, prompt: &str, temperature: f64) -> Result<String, TeacherError> {
        let attempts = self.settings.max_retries + 1;
        let mut last_error = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay.min(30_000)));
            }
            self.limiter.acquire();
            let request = ChatRequest {
                model: &self.settings.model_name,
                prompt,
                temperature,
            };
            let (outcome, result) = match self.transport.complete(&request) {
                Ok(text) if !text.trim().is_empty() => (RequestOutcome::Ok, Some(text.trim().to_string())),
                Ok(_) => {
                    last_error = None;
                    (RequestOutcome::Empty, None)
                }
                Err(e) => {
                    log::debug!("teacher request {tag} attempt {attempt} failed: {e}");
                    last_error = Some(e.to_string());
                    (RequestOutcome::Failed(e.to_string()), None)
                }
            };
            self.log.lock().unwrap().push(RequestRecord {
                purpose,
                tag: tag.to_string(),
                attempt,
                outcome,
            });
            if let Some(text) = result {
                return Ok(text);
            }
        }
        Err(match last_error {
            Some(message) => TeacherError::Transport { attempts, message },
            None => TeacherError::EmptyCompletion { attempts },
        })
    }

    pub fn request_log(&self) -> Vec<RequestRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn retry_count(&self) -> usize {
        self.log.lock().unwrap().iter().filter(|r| r.attempt > 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fast(max_retries: u32) -> TeacherSettings {
        TeacherSettings {
            max_retries,
            rate_limit: 1e9,
            backoff_ms: 0,
            ..TeacherSettings::default()
        }
    }

    #[test]
    fn empty_then_valid_retries_once() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let transport = move |_: &ChatRequest<'_>| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                Ok(String::new())
            } else {
                Ok("Fine.".to_string())
            }
        };
        let client = TeacherClient::new(fast(2), Box::new(transport)).unwrap();
        assert_eq!(client.complete(Purpose::Positive, "d1", "p", 1.0).unwrap(), "Fine.");
        assert_eq!(client.retry_count(), 1);
        assert_eq!(client.request_log()[0].outcome, RequestOutcome::Empty);
    }

    #[test]
    fn timeouts_exhaust_after_max_retries_plus_one() {
        let transport = |_: &ChatRequest<'_>| Err(TransportError::Timeout);
        let client = TeacherClient::new(fast(1), Box::new(transport)).unwrap();
        let err = client.complete(Purpose::Negative, "d1", "p", 0.7).unwrap_err();
        assert!(matches!(err, TeacherError::Transport { attempts: 2, .. }));
        assert_eq!(client.request_count(), 2);
    }

    #[test]
    fn always_empty_is_empty_completion() {
        let transport = |_: &ChatRequest<'_>| Ok("  ".to_string());
        let client = TeacherClient::new(fast(0), Box::new(transport)).unwrap();
        assert!(matches!(
            client.complete(Purpose::Positive, "d", "p", 1.0),
            Err(TeacherError::EmptyCompletion { attempts: 1 })
        ));
    }

    #[test]
    fn settings_validation() {
        assert!(TeacherSettings { rate_limit: 0.0, ..TeacherSettings::default() }.validate().is_err());
        assert!(TeacherSettings { timeout: -1.0, ..TeacherSettings::default() }.validate().is_err());
        assert!(TeacherSettings::default().validate().is_ok());
    }

    #[test]
    fn debug_never_shows_key() {
        let t = HttpChatTransport::new("http://localhost:1", "sk-secret".into(), Duration::from_secs(1)).unwrap();
        assert!(!format!("{t:?}").contains("sk-secret"));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(60.0 * 50.0); // 20 ms apart
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(55));
    }
}
