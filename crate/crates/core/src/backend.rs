//! Backend contract plus the deterministic scripted backend used for replays.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::types::{Message, ToolCall};
use crate::wire::{ChatRequest, ChatResponse, DecodeError, FinishReason, UsageRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("upstream returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("could not decode upstream response: {0}")]
    Decode(#[from] DecodeError),
    #[error("script exhausted after {consumed} step(s)")]
    ScriptExhausted { consumed: usize },
    #[error("script step {step}: expected last user message to contain {expected:?}, got {actual:?}")]
    ExpectationMismatch {
        step: usize,
        expected: String,
        actual: String,
    },
}

/// One chat-completion round trip. Live and scripted backends share this
/// signature and error surface, so the orchestrator cannot tell them apart.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    /// A JSON object, or a string used verbatim as the argument text.
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseTemplate {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ScriptToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_user_contains: Option<String>,
    pub response: ResponseTemplate,
    #[serde(default)]
    pub synthetic_usage: UsageRecord,
}

impl ScriptStep {
    pub fn text(content: &str, usage: UsageRecord) -> Self {
        Self {
            expect_user_contains: None,
            response: ResponseTemplate {
                content: content.into(),
                ..Default::default()
            },
            synthetic_usage: usage,
        }
    }

    pub fn calls(calls: Vec<(&str, Value)>, usage: UsageRecord) -> Self {
        Self {
            expect_user_contains: None,
            response: ResponseTemplate {
                tool_calls: calls
                    .into_iter()
                    .map(|(name, arguments)| ScriptToolCall {
                        id: None,
                        name: name.into(),
                        arguments,
                    })
                    .collect(),
                ..Default::default()
            },
            synthetic_usage: usage,
        }
    }

    pub fn expecting(mut self, needle: &str) -> Self {
        self.expect_user_contains = Some(needle.into());
        self
    }

    /// Materializes the step as a response; `index` seeds default call ids.
    pub fn to_response(&self, index: usize) -> Result<ChatResponse, String> {
        let calls: Vec<ToolCall> = self
            .response
            .tool_calls
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let arguments = match &c.arguments {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let id = c.id.clone().unwrap_or_else(|| format!("call_{}_{}", index + 1, i + 1));
                ToolCall::new(id, c.name.clone(), arguments)
            })
            .collect();
        let inferred = if calls.is_empty() {
            FinishReason::Stop
        } else {
            FinishReason::ToolCalls
        };
        let resp = ChatResponse {
            message: Message::assistant_with_calls(self.response.content.clone(), calls),
            finish_reason: self.response.finish_reason.unwrap_or(inferred),
            usage: self.synthetic_usage,
        };
        resp.validate()?;
        Ok(resp)
    }
}

#[derive(Debug, Error)]
pub enum ScriptLoadError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script is not a JSON list of steps: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("script step {step} is malformed: {reason}")]
    Step { step: usize, reason: String },
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, ScriptLoadError> {
    let steps: Vec<ScriptStep> = serde_json::from_str(text)?;
    for (i, s) in steps.iter().enumerate() {
        s.to_response(i)
            .map_err(|reason| ScriptLoadError::Step { step: i + 1, reason })?;
    }
    Ok(steps)
}

pub fn load_script(path: &Path) -> Result<Vec<ScriptStep>, ScriptLoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScriptLoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_script(&text)
}

/// Replays pre-authored responses in order, one step per call.
///
/// One instance serves one session: step consumption is serialized behind a
/// mutex, and a failed expectation leaves the cursor where it was.
#[derive(Debug)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            cursor: Mutex::new(0),
        }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.consumed()
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate().map_err(BackendError::InvalidRequest)?;
        let mut cursor = self.cursor.lock().unwrap();
        let index = *cursor;
        let step = self
            .steps
            .get(index)
            .ok_or(BackendError::ScriptExhausted { consumed: index })?;
        if let Some(needle) = &step.expect_user_contains {
            let actual = request.last_user_text().unwrap_or_default();
            if !actual.contains(needle.as_str()) {
                return Err(BackendError::ExpectationMismatch {
                    step: index + 1,
                    expected: needle.clone(),
                    actual: actual.to_string(),
                });
            }
        }
        let resp = step.to_response(index).map_err(BackendError::InvalidRequest)?;
        *cursor += 1;
        Ok(resp)
    }
}
