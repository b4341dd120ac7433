//! Shared domain types: messages, tool declarations, agents and context.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::routines::RoutineDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            "tool" => Some(Role::Tool),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed tool arguments, keyed by parameter name.
pub type ArgMap = serde_json::Map<String, Value>;

/// A function invocation requested by the model.
///
/// `arguments` keeps the exact JSON text received on the wire; it is parsed
/// into an [`ArgMap`] only at dispatch time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            arguments: arguments.into(),
        }
    }

    /// Parses the argument text. An empty string is treated as `{}`.
    pub fn parse_arguments(&self) -> Result<ArgMap, String> {
        if self.arguments.trim().is_empty() {
            return Ok(ArgMap::new());
        }
        match serde_json::from_str::<Value>(&self.arguments) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(other) => Err(format!("arguments must be a JSON object, got {other}")),
            Err(e) => Err(format!("arguments are not valid JSON: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("tool_calls are only allowed on assistant messages (got {0})")]
    ToolCallsOnNonAssistant(Role),
    #[error("tool_call_id is required on tool messages and forbidden elsewhere (role {0})")]
    ToolCallIdMismatch(Role),
    #[error("duplicate tool call id {0:?} within one assistant message")]
    DuplicateCallId(String),
    #[error("tool message answers unknown or already answered call {0:?}")]
    UnpairedToolMessage(String),
    #[error("system messages are not stored in the conversation history")]
    SystemInHistory,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_with_calls(content: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        let mut m = Self::plain(Role::Assistant, content);
        if !calls.is_empty() {
            m.tool_calls = Some(calls);
        }
        m
    }

    pub fn tool(call_id: impl Into<String>, name: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: None,
            tool_call_id: Some(call_id.into()),
            name: Some(name.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: None,
            tool_call_id: None,
            name: None,
        }
    }

    pub fn calls(&self) -> &[ToolCall] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    /// Checks the per-message invariants (not the pairing with prior calls).
    pub fn validate(&self) -> Result<(), MessageError> {
        if self.tool_calls.is_some() && self.role != Role::Assistant {
            return Err(MessageError::ToolCallsOnNonAssistant(self.role));
        }
        if self.tool_call_id.is_some() != (self.role == Role::Tool) {
            return Err(MessageError::ToolCallIdMismatch(self.role));
        }
        let calls = self.calls();
        for (i, c) in calls.iter().enumerate() {
            if calls[..i].iter().any(|p| p.id == c.id) {
                return Err(MessageError::DuplicateCallId(c.id.clone()));
            }
        }
        Ok(())
    }
}

/// Append-only dialog record; the model's short-term memory.
///
/// The system prompt is not stored here: it is rendered from the active
/// agent's routine for every request, so a handoff can swap it while the
/// history stays shared.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConversationHistory {
    session_id: String,
    messages: Vec<Message>,
}

impl ConversationHistory {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            messages: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Ids of assistant tool calls that have no tool message yet.
    pub fn pending_call_ids(&self) -> Vec<&str> {
        let mut pending: Vec<&str> = Vec::new();
        for m in &self.messages {
            match m.role {
                Role::Assistant => pending.extend(m.calls().iter().map(|c| c.id.as_str())),
                Role::Tool => {
                    if let Some(id) = m.tool_call_id.as_deref() {
                        pending.retain(|p| *p != id);
                    }
                }
                _ => {}
            }
        }
        pending
    }

    pub fn push(&mut self, message: Message) -> Result<(), MessageError> {
        message.validate()?;
        match message.role {
            Role::System => return Err(MessageError::SystemInHistory),
            Role::Tool => {
                let id = message.tool_call_id.as_deref().unwrap_or_default();
                if !self.pending_call_ids().contains(&id) {
                    return Err(MessageError::UnpairedToolMessage(id.to_string()));
                }
            }
            _ => {}
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Message>>(&mut self, messages: I) -> Result<(), MessageError> {
        for m in messages {
            self.push(m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Integer,
    Number,
    Boolean,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Integer => "integer",
            ParamKind::Number => "number",
            ParamKind::Boolean => "boolean",
        }
    }

    pub fn parse(s: &str) -> Option<ParamKind> {
        match s {
            "string" => Some(ParamKind::String),
            "integer" => Some(ParamKind::Integer),
            "number" => Some(ParamKind::Number),
            "boolean" => Some(ParamKind::Boolean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub description: String,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
    /// Input spellings rewritten to a canonical literal before the enum check.
    /// Never advertised on the wire.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<(String, String)>,
}

impl ParamSpec {
    pub fn new(name: &str, kind: ParamKind, description: &str, required: bool) -> Self {
        Self {
            name: name.to_string(),
            kind,
            description: description.to_string(),
            required,
            allowed: None,
            aliases: Vec::new(),
        }
    }

    pub fn with_enum(mut self, allowed: &[&str]) -> Self {
        self.allowed = Some(allowed.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_alias(mut self, from: &str, to: &str) -> Self {
        self.aliases.push((from.to_string(), to.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
    #[serde(default)]
    pub returns_description: String,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            parameters: Vec::new(),
            returns_description: String::new(),
        }
    }

    pub fn param(mut self, p: ParamSpec) -> Self {
        self.parameters.push(p);
        self
    }

    pub fn returns(mut self, text: &str) -> Self {
        self.returns_description = text.to_string();
        self
    }

    pub fn required_names(&self) -> impl Iterator<Item = &str> {
        self.parameters.iter().filter(|p| p.required).map(|p| p.name.as_str())
    }

    pub fn is_valid_name(name: &str) -> bool {
        !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
    }

    /// Validates `args` against the schema and returns the normalized map
    /// (aliases rewritten). The error text is meant for the model to read.
    pub fn check_arguments(&self, args: &ArgMap) -> Result<ArgMap, String> {
        for key in args.keys() {
            if !self.parameters.iter().any(|p| &p.name == key) {
                return Err(format!("unexpected argument '{key}' for {}", self.name));
            }
        }
        let mut out = ArgMap::new();
        for p in &self.parameters {
            let Some(raw) = args.get(&p.name).filter(|v| !v.is_null()) else {
                if p.required {
                    return Err(format!("missing required argument '{}' for {}", p.name, self.name));
                }
                continue;
            };
            let ok = match p.kind {
                ParamKind::String => raw.is_string(),
                ParamKind::Integer => raw.is_i64() || raw.is_u64(),
                ParamKind::Number => raw.is_number(),
                ParamKind::Boolean => raw.is_boolean(),
            };
            if !ok {
                return Err(format!(
                    "argument '{}' must be of type {}, got {raw}",
                    p.name,
                    p.kind.as_str()
                ));
            }
            let mut value = raw.clone();
            if let Value::String(s) = raw {
                if let Some((_, to)) = p.aliases.iter().find(|(from, _)| from == s) {
                    value = Value::String(to.clone());
                }
            }
            if let Some(allowed) = &p.allowed {
                let literal = match &value {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                if !allowed.contains(&literal) {
                    return Err(format!(
                        "argument '{}' must be one of [{}], got {raw}",
                        p.name,
                        allowed.join(", ")
                    ));
                }
            }
            out.insert(p.name.clone(), value);
        }
        Ok(out)
    }
}

/// Outcome of one tool execution, as fed back to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_call_id: String,
    pub content: String,
    pub is_error: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff_target: Option<String>,
    /// Set by tools that finish the dialog (the report builder).
    #[serde(default)]
    pub ends_session: bool,
}

impl ToolResult {
    pub fn ok(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: call_id.into(),
            content: content.into(),
            is_error: false,
            handoff_target: None,
            ends_session: false,
        }
    }

    pub fn error(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            is_error: true,
            ..Self::ok(call_id, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDefinition {
    pub name: String,
    pub routine: RoutineDoc,
    pub tool_names: Vec<String>,
    pub model: String,
    pub temperature: f64,
}

/// Flat text key/value state shared by every agent of a session.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextVariables {
    entries: BTreeMap<String, String>,
}

impl ContextVariables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.entries.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
