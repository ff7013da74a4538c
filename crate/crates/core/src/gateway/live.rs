//! HTTP backend speaking the OpenAI-style chat completions protocol.
//!
//! Images travel inline as base64 `data:` URIs. Transient failures
//! (network errors, 429, 5xx) are retried with exponential backoff up to
//! `max_retries`; other 4xx responses fail immediately. A process-wide
//! token bucket keeps the request rate under `rate_limit_per_minute`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendInfo, CallCtx, ChatMessage, Conversation, GatewayError, GatewayConfig, Part, Role};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_BACKOFF: Duration = Duration::from_secs(30);

pub struct LiveBackend {
    config: GatewayConfig,
    auth_token: String,
    http: reqwest::blocking::Client,
    bucket: Option<Mutex<TokenBucket>>,
}

impl LiveBackend {
    /// Reads the bearer token from the `AUTH_TOKEN` environment variable.
    pub fn from_env(config: GatewayConfig) -> Result<Self, GatewayError> {
        let token = std::env::var("AUTH_TOKEN").map_err(|_| GatewayError::MissingAuthToken)?;
        Self::with_token(config, token)
    }

    pub fn with_token(config: GatewayConfig, auth_token: String) -> Result<Self, GatewayError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        let bucket = (config.rate_limit_per_minute > 0)
            .then(|| Mutex::new(TokenBucket::new(config.rate_limit_per_minute, Instant::now())));
        Ok(Self {
            config,
            auth_token,
            http,
            bucket,
        })
    }

    fn wait_for_slot(&self) {
        let Some(bucket) = &self.bucket else { return };
        loop {
            let wait = bucket.lock().unwrap().take(Instant::now());
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }

    fn request_body(&self, conversation: &Conversation) -> Value {
        let messages: Vec<Value> = conversation.messages().iter().map(message_json).collect();
        json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "seed": self.config.seed,
            "messages": messages,
        })
    }
}

fn message_json(message: &ChatMessage) -> Value {
    let role = match message.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    };
    let mut obj = json!({ "role": role });
    if let Some(name) = &message.speaker_name {
        obj["name"] = json!(name);
    }
    obj["content"] = match message.parts() {
        [Part::Text { text }] => json!(text),
        parts => Value::Array(
            parts
                .iter()
                .map(|part| match part {
                    Part::Text { text } => json!({ "type": "text", "text": text }),
                    Part::Image { image } => json!({
                        "type": "image_url",
                        "image_url": {
                            "url": format!(
                                "data:{};base64,{}",
                                image.media_type().mime(),
                                image.encoded()
                            )
                        }
                    }),
                })
                .collect(),
        ),
    };
    obj
}

fn extract_content(body: &Value) -> Result<String, GatewayError> {
    let content = &body["choices"][0]["message"]["content"];
    if let Some(text) = content.as_str() {
        return Ok(text.to_string());
    }
    // Some endpoints return content as a part list even for text replies.
    if let Some(parts) = content.as_array() {
        let texts: Vec<&str> = parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect();
        if !texts.is_empty() {
            return Ok(texts.join("\n"));
        }
    }
    Err(GatewayError::Http {
        status: 200,
        message: "response has no choices[0].message.content".to_string(),
    })
}

impl Backend for LiveBackend {
    fn complete(&self, _ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        let body = self.request_body(conversation);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        let mut rate_limited = false;

        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self
                    .config
                    .backoff_base()
                    .saturating_mul(1 << (attempt - 1).min(16))
                    .min(MAX_BACKOFF);
                std::thread::sleep(backoff);
            }
            self.wait_for_slot();

            let sent = self
                .http
                .post(&self.config.endpoint_url)
                .bearer_auth(&self.auth_token)
                .json(&body)
                .send();
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    rate_limited = false;
                    last_error = e.to_string();
                    continue;
                }
            };

            let status = response.status();
            if status.is_success() {
                let parsed: Value = response.json().map_err(|e| GatewayError::Http {
                    status: status.as_u16(),
                    message: format!("unparseable body: {e}"),
                })?;
                return extract_content(&parsed);
            }
            if status.as_u16() == 429 {
                rate_limited = true;
                last_error = "rate limited".to_string();
                continue;
            }
            if status.is_server_error() {
                rate_limited = false;
                last_error = format!("status {status}");
                continue;
            }
            let message = response.text().unwrap_or_default();
            let message = message.chars().take(300).collect();
            return Err(GatewayError::Http {
                status: status.as_u16(),
                message,
            });
        }

        if rate_limited {
            Err(GatewayError::RateLimited { attempts })
        } else {
            Err(GatewayError::Transport {
                attempts,
                message: last_error,
            })
        }
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            model_name: self.config.model_name.clone(),
            temperature: self.config.temperature,
        }
    }
}

/// Leaky-bucket limiter: one token per request, refilled continuously at
/// the per-minute rate. Takes `now` as a parameter so tests drive it with
/// a synthetic clock.
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(per_minute: u32, now: Instant) -> Self {
        let capacity = per_minute as f64;
        Self {
            capacity,
            tokens: capacity,
            per_sec: capacity / 60.0,
            last: now,
        }
    }

    /// `None` means a token was taken; `Some(wait)` means retry after that
    /// duration.
    fn take(&mut self, now: Instant) -> Option<Duration> {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.per_sec).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.per_sec))
        }
    }
}
