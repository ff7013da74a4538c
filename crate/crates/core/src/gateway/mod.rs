//! Chat-completion transport: message types, canonical request hashing, and
//! the [`Backend`] trait with live, scripted, synthetic, recording, and
//! replay implementations.
//!
//! Every prompting step in the pipeline goes through [`complete`], so
//! swapping the backend swaps the whole pipeline between live HTTP,
//! offline fixtures, and recorded replays.

mod live;
mod record;
mod replay;
mod scripted;
mod synthetic;

pub use live::LiveBackend;
pub use record::{
    read_manifest, CallRecord, JsonlSink, Manifest, ManifestHeader, ManifestSink, MemorySink,
    RecordingBackend,
};
pub use replay::ReplayBackend;
pub use scripted::ScriptedBackend;
pub use synthetic::SyntheticBackend;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::case::ImagePayload;

/// Errors surfaced by backends and the transport layer.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("conversation is empty")]
    EmptyConversation,
    #[error("message has no parts")]
    EmptyMessage,
    #[error("image parts are only allowed in user messages")]
    ImageOutsideUserMessage,
    #[error("system message must be the single first message")]
    MisplacedSystemMessage,
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("endpoint returned status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("no replay record for case {case_id:?} stage {stage}")]
    ReplayMiss { case_id: String, stage: Stage },
    #[error("scripted backend exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("AUTH_TOKEN environment variable not set")]
    MissingAuthToken,
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Message author role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message part: text or an inline image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { image: ImagePayload },
}

/// A chat message: role, optional speaker name (multi-agent conversations
/// address agents by name), and ordered parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_name: Option<String>,
    parts: Vec<Part>,
}

impl ChatMessage {
    pub fn new(role: Role, speaker_name: Option<String>, parts: Vec<Part>) -> Result<Self, GatewayError> {
        if parts.is_empty() {
            return Err(GatewayError::EmptyMessage);
        }
        if role != Role::User && parts.iter().any(|p| matches!(p, Part::Image { .. })) {
            return Err(GatewayError::ImageOutsideUserMessage);
        }
        Ok(Self {
            role,
            speaker_name,
            parts,
        })
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            speaker_name: None,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            speaker_name: None,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    /// A user message carrying text followed by image payloads.
    pub fn user_with_images(text: impl Into<String>, images: &[ImagePayload]) -> Self {
        let mut parts = vec![Part::Text { text: text.into() }];
        parts.extend(images.iter().map(|img| Part::Image { image: img.clone() }));
        Self {
            role: Role::User,
            speaker_name: None,
            parts,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            speaker_name: None,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn assistant_named(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            speaker_name: Some(name.into()),
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    /// Concatenated text content of all text parts.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            if let Part::Text { text } = part {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }
}

/// An ordered message log. A system message, when present, occurs exactly
/// once and first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<ChatMessage>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_messages(messages: Vec<ChatMessage>) -> Result<Self, GatewayError> {
        let mut conv = Self::new();
        for m in messages {
            conv.push(m)?;
        }
        Ok(conv)
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), GatewayError> {
        if message.role == Role::System && !self.messages.is_empty() {
            return Err(GatewayError::MisplacedSystemMessage);
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// All text content, in order. Used for content checks and by the
    /// synthetic backend to read the prompt it is answering.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&m.text());
        }
        out
    }
}

/// Pipeline stage a call belongs to; part of every call record's key.
/// Ordered by pipeline position, which manifest sorting relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieval,
    Rerank,
    Mac,
    Align,
    Judge,
    Apo,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Retrieval => "retrieval",
            Stage::Rerank => "rerank",
            Stage::Mac => "mac",
            Stage::Align => "align",
            Stage::Judge => "judge",
            Stage::Apo => "apo",
        };
        f.write_str(s)
    }
}

/// Identifies which case and stage a call belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallCtx {
    pub case_id: String,
    pub stage: Stage,
}

impl CallCtx {
    pub fn new(case_id: impl Into<String>, stage: Stage) -> Self {
        Self {
            case_id: case_id.into(),
            stage,
        }
    }
}

/// Transport configuration for the live backend; also carried into call
/// records so replays can verify the recording conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Sampling temperature in [0, 2]. Defaults to 0.0: deterministic output
    /// is the default and higher settings are opt-in.
    pub temperature: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub rate_limit_per_minute: u32,
    pub seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4-vision-preview".to_string(),
            temperature: 0.0,
            max_retries: 3,
            backoff_base_ms: 250,
            rate_limit_per_minute: 60,
            seed: 0,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_retries > 10 {
            return Err(GatewayError::Config(format!(
                "max_retries {} exceeds 10",
                self.max_retries
            )));
        }
        if self.endpoint_url.is_empty() {
            return Err(GatewayError::Config("endpoint_url is empty".to_string()));
        }
        Ok(())
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }
}

/// A chat-completion transport. Implementations must be callable from
/// multiple workers concurrently.
pub trait Backend: Send + Sync {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError>;

    /// Model metadata recorded into manifests; fixture backends report a
    /// placeholder.
    fn info(&self) -> BackendInfo {
        BackendInfo::default()
    }
}

/// Model name and temperature a backend answers with.
#[derive(Debug, Clone)]
pub struct BackendInfo {
    pub model_name: String,
    pub temperature: f64,
}

impl Default for BackendInfo {
    fn default() -> Self {
        Self {
            model_name: "offline".to_string(),
            temperature: 0.0,
        }
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        (**self).complete(ctx, conversation)
    }

    fn info(&self) -> BackendInfo {
        (**self).info()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        (**self).complete(ctx, conversation)
    }

    fn info(&self) -> BackendInfo {
        (**self).info()
    }
}

/// Send a conversation through a backend. The single entry point used by
/// every pipeline stage; rejects empty conversations up front.
pub fn complete(
    backend: &dyn Backend,
    ctx: &CallCtx,
    conversation: &Conversation,
) -> Result<String, GatewayError> {
    if conversation.is_empty() {
        return Err(GatewayError::EmptyConversation);
    }
    backend.complete(ctx, conversation)
}

/// Hex SHA-256 over a canonical encoding of the conversation. The encoding
/// length-prefixes every field, so it is independent of any serialization
/// whitespace; image parts contribute their raw bytes.
pub fn canonical_hash(conversation: &Conversation) -> String {
    let mut hasher = Sha256::new();
    for message in conversation.messages() {
        hasher.update([match message.role {
            Role::System => 0u8,
            Role::User => 1,
            Role::Assistant => 2,
        }]);
        match &message.speaker_name {
            Some(name) => {
                hasher.update([1u8]);
                hash_str(&mut hasher, name);
            }
            None => hasher.update([0u8]),
        }
        hasher.update((message.parts().len() as u64).to_le_bytes());
        for part in message.parts() {
            match part {
                Part::Text { text } => {
                    hasher.update([b'T']);
                    hash_str(&mut hasher, text);
                }
                Part::Image { image } => {
                    hasher.update([b'I']);
                    hash_str(&mut hasher, image.media_type().mime());
                    hasher.update((image.bytes().len() as u64).to_le_bytes());
                    hasher.update(image.bytes());
                }
            }
        }
    }
    hex_digest(hasher)
}

fn hash_str(hasher: &mut Sha256, s: &str) {
    hasher.update((s.len() as u64).to_le_bytes());
    hasher.update(s.as_bytes());
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        let _ = write!(out, "{byte:02x}");
    }
    out
}
