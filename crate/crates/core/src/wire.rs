//! Chat-completions wire format (OpenAI-compatible, non-streaming).
//!
//! Key order of every emitted object is fixed, so encoded requests can be
//! compared byte-for-byte against frozen fixtures.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::types::{Message, ParamKind, ParamSpec, Role, ToolCall, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolChoice {
    #[default]
    Auto,
    None,
}

impl ToolChoice {
    fn as_str(self) -> &'static str {
        match self {
            ToolChoice::Auto => "auto",
            ToolChoice::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolSpec>,
    pub tool_choice: ToolChoice,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("request has no messages".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("invalid temperature {}", self.temperature));
        }
        for m in &self.messages {
            m.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCalls,
}

impl FinishReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FinishReason::Stop => "stop",
            FinishReason::ToolCalls => "tool_calls",
        }
    }
}

/// Token accounting for one backend call. `total_tokens` is always the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawUsage")]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Deserialize)]
struct RawUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
}

impl TryFrom<RawUsage> for UsageRecord {
    type Error = String;

    fn try_from(r: RawUsage) -> Result<Self, String> {
        UsageRecord::checked(r.prompt_tokens, r.completion_tokens, r.total_tokens)
    }
}

impl UsageRecord {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
        }
    }

    pub fn checked(prompt: u64, completion: u64, total: u64) -> Result<Self, String> {
        if prompt.checked_add(completion) != Some(total) {
            return Err(format!(
                "usage total_tokens {total} != prompt_tokens {prompt} + completion_tokens {completion}"
            ));
        }
        Ok(Self::new(prompt, completion))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub message: Message,
    pub finish_reason: FinishReason,
    pub usage: UsageRecord,
}

impl ChatResponse {
    pub fn validate(&self) -> Result<(), String> {
        if self.message.role != Role::Assistant {
            return Err(format!("response role must be assistant, got {}", self.message.role));
        }
        self.message.validate().map_err(|e| e.to_string())?;
        let has_calls = !self.message.calls().is_empty();
        if has_calls != (self.finish_reason == FinishReason::ToolCalls) {
            return Err(format!(
                "finish_reason {} inconsistent with {} tool call(s)",
                self.finish_reason.as_str(),
                self.message.calls().len()
            ));
        }
        if self.message.tool_calls.as_ref().is_some_and(|c| c.is_empty()) {
            return Err("tool_calls present but empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("response has no choices")]
    MissingChoices,
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("unsupported finish_reason {0:?}")]
    UnsupportedFinishReason(String),
    #[error("invalid parameter schema: {0}")]
    BadSchema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

// ---- wire shapes -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WireRequest {
    model: String,
    messages: Vec<WireMessage>,
    tools: Vec<WireTool>,
    tool_choice: String,
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct WireMessage {
    role: String,
    #[serde(default, deserialize_with = "null_as_empty")]
    content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_calls: Option<Vec<WireToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

fn null_as_empty<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

#[derive(Serialize, Deserialize)]
struct WireToolCall {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    function: WireFunctionCall,
}

#[derive(Serialize, Deserialize)]
struct WireFunctionCall {
    name: String,
    arguments: String,
}

#[derive(Serialize, Deserialize)]
struct WireTool {
    #[serde(rename = "type")]
    kind: String,
    function: WireFunction,
}

#[derive(Serialize, Deserialize)]
struct WireFunction {
    name: String,
    description: String,
    parameters: WireSchema,
}

#[derive(Serialize, Deserialize)]
struct WireSchema {
    #[serde(rename = "type")]
    kind: String,
    properties: Map<String, Value>,
    required: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<RawUsageWire>,
}

#[derive(Serialize, Deserialize)]
struct WireChoice {
    index: u32,
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawUsageWire {
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
}

impl From<&Message> for WireMessage {
    fn from(m: &Message) -> Self {
        WireMessage {
            role: m.role.as_str().to_string(),
            content: m.content.clone(),
            tool_calls: m.tool_calls.as_ref().map(|calls| {
                calls
                    .iter()
                    .map(|c| WireToolCall {
                        id: c.id.clone(),
                        kind: "function".into(),
                        function: WireFunctionCall {
                            name: c.name.clone(),
                            arguments: c.arguments.clone(),
                        },
                    })
                    .collect()
            }),
            tool_call_id: m.tool_call_id.clone(),
            name: m.name.clone(),
        }
    }
}

impl TryFrom<WireMessage> for Message {
    type Error = DecodeError;

    fn try_from(w: WireMessage) -> Result<Self, DecodeError> {
        let role = Role::parse(&w.role).ok_or_else(|| DecodeError::UnknownRole(w.role.clone()))?;
        let m = Message {
            role,
            content: w.content,
            tool_calls: w.tool_calls.map(|calls| {
                calls
                    .into_iter()
                    .map(|c| ToolCall::new(c.id, c.function.name, c.function.arguments))
                    .collect()
            }),
            tool_call_id: w.tool_call_id,
            name: w.name,
        };
        m.validate().map_err(|e| DecodeError::Invariant(e.to_string()))?;
        Ok(m)
    }
}

impl From<&ToolSpec> for WireTool {
    fn from(t: &ToolSpec) -> Self {
        let mut properties = Map::new();
        for p in &t.parameters {
            let mut prop = Map::new();
            prop.insert("type".into(), Value::String(p.kind.as_str().into()));
            prop.insert("description".into(), Value::String(p.description.clone()));
            if let Some(allowed) = &p.allowed {
                prop.insert(
                    "enum".into(),
                    Value::Array(allowed.iter().cloned().map(Value::String).collect()),
                );
            }
            properties.insert(p.name.clone(), Value::Object(prop));
        }
        WireTool {
            kind: "function".into(),
            function: WireFunction {
                name: t.name.clone(),
                description: t.description.clone(),
                parameters: WireSchema {
                    kind: "object".into(),
                    properties,
                    required: t.required_names().map(str::to_string).collect(),
                },
            },
        }
    }
}

impl TryFrom<WireTool> for ToolSpec {
    type Error = DecodeError;

    fn try_from(w: WireTool) -> Result<Self, DecodeError> {
        let f = w.function;
        let mut spec = ToolSpec::new(&f.name, &f.description);
        for r in &f.parameters.required {
            if !f.parameters.properties.contains_key(r) {
                return Err(DecodeError::BadSchema(format!("required {r:?} not in properties")));
            }
        }
        for (name, prop) in f.parameters.properties {
            let kind = prop
                .get("type")
                .and_then(Value::as_str)
                .and_then(ParamKind::parse)
                .ok_or_else(|| DecodeError::BadSchema(format!("parameter {name:?} has no scalar type")))?;
            let description = prop.get("description").and_then(Value::as_str).unwrap_or_default();
            let required = f.parameters.required.contains(&name);
            let mut p = ParamSpec::new(&name, kind, description, required);
            if let Some(values) = prop.get("enum").and_then(Value::as_array) {
                p.allowed = Some(
                    values
                        .iter()
                        .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                        .collect(),
                );
            }
            spec.parameters.push(p);
        }
        Ok(spec)
    }
}

fn to_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("wire structs always serialize")
}

// ---- public codec ----------------------------------------------------------

pub fn encode_request(req: &ChatRequest) -> Vec<u8> {
    to_bytes(&WireRequest {
        model: req.model.clone(),
        messages: req.messages.iter().map(WireMessage::from).collect(),
        tools: req.tools.iter().map(WireTool::from).collect(),
        tool_choice: req.tool_choice.as_str().into(),
        temperature: req.temperature,
    })
}

pub fn decode_request(bytes: &[u8]) -> Result<ChatRequest, DecodeError> {
    let w: WireRequest = serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let tool_choice = match w.tool_choice.as_str() {
        "auto" => ToolChoice::Auto,
        "none" => ToolChoice::None,
        other => return Err(DecodeError::Invariant(format!("unknown tool_choice {other:?}"))),
    };
    Ok(ChatRequest {
        model: w.model,
        messages: w
            .messages
            .into_iter()
            .map(Message::try_from)
            .collect::<Result<_, _>>()?,
        tools: w.tools.into_iter().map(ToolSpec::try_from).collect::<Result<_, _>>()?,
        tool_choice,
        temperature: w.temperature,
    })
}

pub fn encode_response(resp: &ChatResponse) -> Vec<u8> {
    to_bytes(&WireResponse {
        choices: vec![WireChoice {
            index: 0,
            message: WireMessage::from(&resp.message),
            finish_reason: Some(resp.finish_reason.as_str().into()),
        }],
        usage: Some(RawUsageWire {
            prompt_tokens: resp.usage.prompt_tokens,
            completion_tokens: resp.usage.completion_tokens,
            total_tokens: resp.usage.total_tokens,
        }),
    })
}

pub fn decode_response(bytes: &[u8]) -> Result<ChatResponse, DecodeError> {
    let w: WireResponse = serde_json::from_slice(bytes).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let choice = w.choices.into_iter().next().ok_or(DecodeError::MissingChoices)?;
    let message = Message::try_from(choice.message)?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") => FinishReason::Stop,
        Some("tool_calls") => FinishReason::ToolCalls,
        // Some servers omit the reason; infer it from the message.
        None if message.calls().is_empty() => FinishReason::Stop,
        None => FinishReason::ToolCalls,
        Some(other) => return Err(DecodeError::UnsupportedFinishReason(other.into())),
    };
    let usage = match w.usage {
        Some(u) => UsageRecord::checked(u.prompt_tokens, u.completion_tokens, u.total_tokens)
            .map_err(DecodeError::Invariant)?,
        None => UsageRecord::default(),
    };
    let resp = ChatResponse {
        message,
        finish_reason,
        usage,
    };
    resp.validate().map_err(DecodeError::Invariant)?;
    Ok(resp)
}
