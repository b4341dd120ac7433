//! The agent run loop: render routine, call the backend, dispatch tools,
//! follow handoffs, repeat until the model answers in plain text.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend};
use crate::routines::render_system_prompt;
use crate::tools::{CallContext, ToolRegistry};
use crate::types::{
    AgentDefinition, ContextVariables, ConversationHistory, Message, MessageError, ToolCall, ToolResult,
};
use crate::wire::{ChatRequest, FinishReason, ToolChoice, UsageRecord};

pub const DEFAULT_MAX_TOOL_ITERATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Backend responses carrying tool calls allowed within one user turn.
    pub max_tool_iterations: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_tool_iterations: DEFAULT_MAX_TOOL_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentSetError {
    #[error("agent {agent:?} uses unregistered tool {tool:?}")]
    UnknownTool { agent: String, tool: String },
    #[error("agent {0:?} defined twice")]
    Duplicate(String),
    #[error("agent {0:?} has a negative or non-finite temperature")]
    BadTemperature(String),
}

/// Agents available to a session, keyed by name. Immutable after startup.
#[derive(Debug, Clone, Default)]
pub struct AgentSet {
    agents: BTreeMap<String, AgentDefinition>,
}

impl AgentSet {
    /// Builds the set and checks every tool name resolves in `registry`.
    pub fn new(defs: Vec<AgentDefinition>, registry: &ToolRegistry) -> Result<Self, AgentSetError> {
        let mut agents = BTreeMap::new();
        for def in defs {
            if !(def.temperature >= 0.0 && def.temperature.is_finite()) {
                return Err(AgentSetError::BadTemperature(def.name));
            }
            if let Some(missing) = def.tool_names.iter().find(|t| !registry.contains(t)) {
                return Err(AgentSetError::UnknownTool {
                    agent: def.name.clone(),
                    tool: missing.clone(),
                });
            }
            if agents.contains_key(&def.name) {
                return Err(AgentSetError::Duplicate(def.name));
            }
            agents.insert(def.name.clone(), def);
        }
        Ok(Self { agents })
    }

    pub fn get(&self, name: &str) -> Option<&AgentDefinition> {
        self.agents.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.agents.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AgentDefinition> {
        self.agents.values()
    }

    /// Copy without `name`; used to exercise the missing-agent paths.
    pub fn without(&self, name: &str) -> AgentSet {
        let mut agents = self.agents.clone();
        agents.remove(name);
        AgentSet { agents }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub active_agent: String,
    pub history: ConversationHistory,
    pub context: ContextVariables,
    pub usage_log: Vec<UsageRecord>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown agent {0:?}")]
pub struct UnknownAgent(pub String);

impl Session {
    pub fn new(session_id: impl Into<String>, agent: &str, agents: &AgentSet) -> Result<Self, UnknownAgent> {
        if !agents.contains(agent) {
            return Err(UnknownAgent(agent.to_string()));
        }
        let session_id = session_id.into();
        Ok(Self {
            history: ConversationHistory::new(session_id.clone()),
            session_id,
            active_agent: agent.to_string(),
            context: ContextVariables::new(),
            usage_log: Vec::new(),
            status: SessionStatus::Open,
        })
    }

    pub fn total_tokens(&self) -> u64 {
        self.usage_log.iter().map(|u| u.total_tokens).sum()
    }

    /// Switches the active agent. History and context are shared, so they are
    /// left untouched. An unknown target fails the session.
    pub fn apply_handoff(&mut self, target: &str, agents: &AgentSet) -> Result<(), UnknownAgent> {
        if !agents.contains(target) {
            self.status = SessionStatus::Failed;
            return Err(UnknownAgent(target.to_string()));
        }
        self.active_agent = target.to_string();
        Ok(())
    }
}

/// Ordered record of what happened during a turn, for telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnEvent {
    UserMsg {
        text: String,
    },
    Usage {
        agent: String,
        usage: UsageRecord,
        latency_ms: u64,
    },
    AssistantMsg {
        agent: String,
        content: String,
    },
    ToolCall {
        agent: String,
        call: ToolCall,
    },
    ToolResult {
        name: String,
        result: ToolResult,
    },
    Handoff {
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnResult {
    pub messages_added: Vec<Message>,
    pub handoffs: Vec<String>,
    pub tool_calls_executed: usize,
    pub final_text: String,
    pub events: Vec<TurnEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FailureReason {
    #[error("more than {0} tool iterations in one turn")]
    IterationLimit(usize),
    #[error("handoff to unknown agent {0:?}")]
    UnknownHandoff(String),
    #[error("history invariant violated: {0}")]
    History(MessageError),
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("session is {0:?}")]
    SessionClosed(SessionStatus),
    #[error("user text is empty")]
    EmptyInput,
    /// The turn was rolled back; the session is unchanged.
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    /// The session is now failed; `partial` holds what was committed.
    #[error("turn failed: {reason}")]
    Failed {
        reason: FailureReason,
        partial: Box<TurnResult>,
    },
}

/// Validates and executes one tool call. Every failure becomes an error
/// result the model can read and correct; nothing here panics or aborts.
pub fn dispatch_tool_call(registry: &ToolRegistry, call: &ToolCall, ctx: &CallContext<'_>) -> ToolResult {
    let Some(tool) = registry.get(&call.name) else {
        return ToolResult::error(&call.id, format!("unknown tool: {}", call.name));
    };
    let args = match call.parse_arguments() {
        Ok(a) => a,
        Err(e) => return ToolResult::error(&call.id, format!("invalid arguments for {}: {e}", call.name)),
    };
    let args = match tool.spec().check_arguments(&args) {
        Ok(a) => a,
        Err(e) => return ToolResult::error(&call.id, e),
    };
    let out = tool.invoke(&args, ctx);
    ToolResult {
        tool_call_id: call.id.clone(),
        content: out.content,
        is_error: out.is_error,
        handoff_target: out.handoff_target,
        ends_session: out.ends_session,
    }
}

pub struct Orchestrator<'a> {
    pub backend: &'a dyn ChatBackend,
    pub registry: &'a ToolRegistry,
    pub agents: &'a AgentSet,
    pub limits: Limits,
}

struct Staged {
    history: ConversationHistory,
    active_agent: String,
    usage: Vec<UsageRecord>,
    result: TurnResult,
    ends_session: bool,
}

impl Staged {
    fn push(&mut self, m: Message) -> Result<(), MessageError> {
        self.history.push(m.clone())?;
        self.result.messages_added.push(m);
        Ok(())
    }
}

impl<'a> Orchestrator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, registry: &'a ToolRegistry, agents: &'a AgentSet) -> Self {
        Self {
            backend,
            registry,
            agents,
            limits: Limits::default(),
        }
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    fn build_request(&self, agent: &AgentDefinition, session: &Session, history: &ConversationHistory) -> ChatRequest {
        let mut messages = Vec::with_capacity(history.len() + 1);
        messages.push(Message::system(render_system_prompt(&agent.routine, &session.context)));
        messages.extend_from_slice(history.messages());
        ChatRequest {
            model: agent.model.clone(),
            messages,
            tools: self.registry.specs_for(&agent.tool_names),
            tool_choice: ToolChoice::Auto,
            temperature: agent.temperature,
        }
    }

    pub fn run_turn(&self, session: &mut Session, user_text: &str) -> Result<TurnResult, TurnError> {
        if session.status != SessionStatus::Open {
            return Err(TurnError::SessionClosed(session.status));
        }
        if user_text.trim().is_empty() {
            return Err(TurnError::EmptyInput);
        }
        let mut st = Staged {
            history: session.history.clone(),
            active_agent: session.active_agent.clone(),
            usage: Vec::new(),
            result: TurnResult::default(),
            ends_session: false,
        };
        st.result.events.push(TurnEvent::UserMsg {
            text: user_text.to_string(),
        });
        if let Err(e) = st.push(Message::user(user_text)) {
            return Err(self.fail(session, st, FailureReason::History(e)));
        }

        let mut tool_rounds = 0usize;
        loop {
            let Some(agent) = self.agents.get(&st.active_agent) else {
                let name = st.active_agent.clone();
                return Err(self.fail(session, st, FailureReason::UnknownHandoff(name)));
            };
            let request = self.build_request(agent, session, &st.history);
            let started = Instant::now();
            // Backend failure: nothing staged is committed.
            let response = self.backend.complete(&request)?;
            let latency_ms = started.elapsed().as_millis() as u64;

            st.usage.push(response.usage);
            st.result.events.push(TurnEvent::Usage {
                agent: agent.name.clone(),
                usage: response.usage,
                latency_ms,
            });

            let calls = response.message.calls().to_vec();
            if response.finish_reason == FinishReason::ToolCalls {
                tool_rounds += 1;
                if tool_rounds > self.limits.max_tool_iterations {
                    let limit = self.limits.max_tool_iterations;
                    return Err(self.fail(session, st, FailureReason::IterationLimit(limit)));
                }
            }

            st.result.events.push(TurnEvent::AssistantMsg {
                agent: agent.name.clone(),
                content: response.message.content.clone(),
            });
            let final_text = response.message.content.clone();
            if let Err(e) = st.push(response.message) {
                return Err(self.fail(session, st, FailureReason::History(e)));
            }
            if response.finish_reason == FinishReason::Stop {
                st.result.final_text = final_text;
                break;
            }

            let mut handoff: Option<String> = None;
            for call in &calls {
                st.result.events.push(TurnEvent::ToolCall {
                    agent: agent.name.clone(),
                    call: call.clone(),
                });
                let ctx = CallContext {
                    session_id: &session.session_id,
                    vars: &session.context,
                };
                let wanted = self.registry.canonical_name(&call.name);
                let allowed = wanted.is_some()
                    && agent
                        .tool_names
                        .iter()
                        .any(|t| self.registry.canonical_name(t) == wanted);
                let result = if allowed {
                    dispatch_tool_call(self.registry, call, &ctx)
                } else if self.registry.contains(&call.name) {
                    ToolResult::error(
                        &call.id,
                        format!("tool {} is not available to {}", call.name, agent.name),
                    )
                } else {
                    ToolResult::error(&call.id, format!("unknown tool: {}", call.name))
                };
                st.result.tool_calls_executed += 1;
                st.ends_session |= result.ends_session;
                if let Some(target) = &result.handoff_target {
                    handoff = Some(target.clone());
                }
                let tool_name = self
                    .registry
                    .canonical_name(&call.name)
                    .unwrap_or(&call.name)
                    .to_string();
                st.result.events.push(TurnEvent::ToolResult {
                    name: tool_name.clone(),
                    result: result.clone(),
                });
                if let Err(e) = st.push(Message::tool(&call.id, tool_name, result.content)) {
                    return Err(self.fail(session, st, FailureReason::History(e)));
                }
            }

            if let Some(target) = handoff {
                if !self.agents.contains(&target) {
                    return Err(self.fail(session, st, FailureReason::UnknownHandoff(target)));
                }
                st.result.events.push(TurnEvent::Handoff {
                    from: st.active_agent.clone(),
                    to: target.clone(),
                });
                st.result.handoffs.push(target.clone());
                st.active_agent = target;
            }
        }

        session.history = st.history;
        session.active_agent = st.active_agent;
        session.usage_log.extend(st.usage);
        if st.ends_session {
            session.status = SessionStatus::Completed;
        }
        Ok(st.result)
    }

    /// Commits the consistent part of a failed turn and marks the session failed.
    fn fail(&self, session: &mut Session, mut st: Staged, reason: FailureReason) -> TurnError {
        // Drop a trailing assistant message whose calls were never answered.
        let pending = st.history.pending_call_ids().len();
        if pending > 0 {
            let keep = st.history.len() - 1;
            let mut trimmed = ConversationHistory::new(st.history.session_id());
            trimmed
                .extend(st.history.messages()[..keep].iter().cloned())
                .expect("prefix of a valid history is valid");
            st.history = trimmed;
            st.result.messages_added.pop();
        }
        session.history = st.history;
        session.active_agent = st.active_agent;
        session.usage_log.extend(st.usage);
        session.status = SessionStatus::Failed;
        TurnError::Failed {
            reason,
            partial: Box::new(st.result),
        }
    }
}
