//! Chat-completion contract shared by every agent role, with a remote HTTP
//! backend and a deterministic scripted backend for byte-exact replay.

mod manifest;
pub mod scripted;
pub mod templates;

#[cfg(feature = "http")]
mod http;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[cfg(feature = "http")]
pub use http::{HttpBackend, HttpConfig, ENDPOINT_VAR, TOKEN_VAR};
pub use manifest::{record_manifest, EmbedderInfo, ExecutionInfo, ManifestContext, RunManifest, ACTION_PARSING_RULES};
pub use scripted::{ScriptTable, ScriptedBackend, SequenceBackend, SequenceScript};
pub use templates::{render_body, render_template, template_body, Bindings, TemplateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Which agent a request is issued on behalf of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Patient,
    Examination,
    Judge,
    Actor,
    Grader,
    Evolver,
}

impl AgentRole {
    pub const ALL: [AgentRole; 6] = [
        AgentRole::Patient,
        AgentRole::Examination,
        AgentRole::Judge,
        AgentRole::Actor,
        AgentRole::Grader,
        AgentRole::Evolver,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Patient => "patient",
            AgentRole::Examination => "examination",
            AgentRole::Judge => "judge",
            AgentRole::Actor => "actor",
            AgentRole::Grader => "grader",
            AgentRole::Evolver => "evolver",
        }
    }

    /// Roles whose outputs feed scoring and must decode deterministically.
    pub fn requires_greedy(self) -> bool {
        matches!(self, AgentRole::Judge | AgentRole::Grader)
    }

    /// Roles that may see the hidden case file.
    pub fn sees_case_file(self) -> bool {
        matches!(self, AgentRole::Patient | AgentRole::Examination | AgentRole::Judge)
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub tag: AgentRole,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.tag.requires_greedy() && self.temperature != 0.0 {
            return Err(Error::Contract(format!(
                "{} requests must use temperature 0, got {}",
                self.tag, self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Contract("max_tokens must be positive".into()));
        }
        if self.messages.is_empty() {
            return Err(Error::Contract("request has no messages".into()));
        }
        for m in &self.messages {
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return Err(Error::Contract(format!("empty {:?} message", m.role)));
            }
        }
        Ok(())
    }

    /// `<role-tag>:<sha256 of the serialized messages>`.
    pub fn script_key(&self) -> String {
        script_key(self.tag, &self.messages)
    }
}

pub fn script_key(tag: AgentRole, messages: &[ChatMessage]) -> String {
    let payload = serde_json::to_vec(messages).expect("messages serialize");
    format!("{}:{}", tag, hex::encode(Sha256::digest(&payload)))
}

/// A chat-completion backend.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;

    /// Identifier recorded in the run manifest.
    fn model_label(&self, configured: &str) -> String {
        configured.to_string()
    }
}

/// Decoding settings for one agent role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleSettings {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self {
            model_id: "unset".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

/// One logged outbound request and its reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: AgentRole,
    pub key: String,
    pub messages: Vec<ChatMessage>,
    pub response: Option<String>,
}

/// Routes role-tagged requests to per-role backends and logs every call.
pub struct Gateway {
    backends: BTreeMap<AgentRole, Arc<dyn ChatBackend>>,
    settings: BTreeMap<AgentRole, RoleSettings>,
    log: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("roles", &self.backends.keys().collect::<Vec<_>>())
            .field("settings", &self.settings)
            .finish()
    }
}

impl Gateway {
    /// Same backend for every role, default decoding settings.
    pub fn uniform(backend: Arc<dyn ChatBackend>) -> Self {
        let mut g = Gateway {
            backends: BTreeMap::new(),
            settings: BTreeMap::new(),
            log: Mutex::new(Vec::new()),
        };
        for role in AgentRole::ALL {
            g.backends.insert(role, backend.clone());
            g.settings.insert(role, RoleSettings::default());
        }
        g
    }

    pub fn with_backend(mut self, role: AgentRole, backend: Arc<dyn ChatBackend>) -> Self {
        self.backends.insert(role, backend);
        self
    }

    pub fn with_settings(mut self, role: AgentRole, settings: RoleSettings) -> Self {
        self.settings.insert(role, settings);
        self
    }

    pub fn settings(&self, role: AgentRole) -> &RoleSettings {
        &self.settings[&role]
    }

    pub fn model_label(&self, role: AgentRole) -> String {
        self.backends[&role].model_label(&self.settings[&role].model_id)
    }

    pub fn complete(&self, tag: AgentRole, messages: Vec<ChatMessage>) -> Result<String> {
        let s = &self.settings[&tag];
        let request = CompletionRequest {
            tag,
            model_id: s.model_id.clone(),
            messages,
            temperature: s.temperature,
            top_p: s.top_p,
            max_tokens: s.max_tokens,
            seed: s.seed,
        };
        request.validate()?;
        let result = self.backends[&tag].complete(&request);
        let record = CallRecord {
            tag,
            key: request.script_key(),
            messages: request.messages,
            response: result.as_ref().ok().cloned(),
        };
        self.log.lock().expect("call log poisoned").push(record);
        result
    }

    /// Drain the call log.
    pub fn take_log(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.log.lock().expect("call log poisoned"))
    }

    pub fn log_len(&self) -> usize {
        self.log.lock().expect("call log poisoned").len()
    }
}
