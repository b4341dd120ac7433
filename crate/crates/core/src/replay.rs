//! Non-interactive dialog runs: feed user inputs through a scenario with a
//! given backend and collect the transcript and telemetry.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatBackend;
use crate::clock::{Clock, FixedClock};
use crate::orchestrator::{Orchestrator, Session, SessionStatus, TurnError, TurnResult};
use crate::scenario::{Scenario, ScenarioOptions};
use crate::telemetry::{EventBody, EventStore, SessionEvent, SessionRecorder, TelemetryError};
use crate::types::ToolCall;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayInputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// RFC 3339 instant the tools see as "now".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub messages: Vec<String>,
}

#[derive(Debug, Error)]
pub enum InputsError {
    #[error("inputs are neither a list of strings nor an object with `messages`: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad `now` timestamp {0:?}")]
    BadNow(String),
}

impl ReplayInputs {
    /// Accepts `{scenario, now, seed, messages}` or a bare list of strings.
    pub fn parse(text: &str) -> Result<Self, InputsError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            Full(ReplayInputs),
            Bare(Vec<String>),
        }
        Ok(match serde_json::from_str(text)? {
            Form::Full(f) => f,
            Form::Bare(messages) => Self {
                messages,
                ..Self::default()
            },
        })
    }

    /// Overrides clock and seed in `base` when the inputs pin them.
    pub fn apply(&self, mut base: ScenarioOptions) -> Result<ScenarioOptions, InputsError> {
        if let Some(now) = &self.now {
            let clock = FixedClock::parse(now).map_err(|_| InputsError::BadNow(now.clone()))?;
            base.clock = Arc::new(clock);
        }
        if let Some(seed) = self.seed {
            base.seed = seed;
        }
        Ok(base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TurnResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ReplayReport {
    pub session: Session,
    pub turns: Vec<TurnRecord>,
    pub events: Vec<SessionEvent>,
    pub elapsed: Duration,
    /// Turns never attempted because an earlier one failed.
    pub skipped_inputs: usize,
    pub telemetry_error: Option<String>,
}

impl ReplayReport {
    pub fn first_error(&self) -> Option<(usize, &str)> {
        self.turns
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.error.as_deref().map(|e| (i, e)))
    }

    pub fn tool_calls(&self) -> Vec<&ToolCall> {
        self.turns
            .iter()
            .filter_map(|t| t.result.as_ref())
            .flat_map(|r| r.messages_added.iter())
            .flat_map(|m| m.calls())
            .collect()
    }

    pub fn calls_named(&self, name: &str) -> Vec<&ToolCall> {
        self.tool_calls().into_iter().filter(|c| c.name == name).collect()
    }

    pub fn handoffs(&self) -> Vec<&str> {
        self.turns
            .iter()
            .filter_map(|t| t.result.as_ref())
            .flat_map(|r| r.handoffs.iter().map(String::as_str))
            .collect()
    }

    pub fn final_text(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find_map(|t| t.result.as_ref().map(|r| r.final_text.as_str()))
    }

    /// Plain-text transcript: user lines, tool calls, agent replies.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| render_turn(&t.user, t.result.as_ref(), t.error.as_deref()))
            .collect()
    }
}

/// Transcript lines for one turn. Tool calls and handoffs are indented so
/// they stand apart from the agents' replies.
pub fn render_turn(user: &str, result: Option<&TurnResult>, error: Option<&str>) -> String {
    use crate::orchestrator::TurnEvent as E;
    let mut out = format!("USER: {user}\n");
    for e in result.map(|r| r.events.as_slice()).unwrap_or_default() {
        match e {
            E::ToolCall { call, .. } => out.push_str(&format!("  [tool] {}({})\n", call.name, call.arguments)),
            E::Handoff { from, to } => out.push_str(&format!("  [handoff] {from} -> {to}\n")),
            E::AssistantMsg { agent, content } if !content.is_empty() => {
                out.push_str(&format!("{}: {}\n", agent.to_uppercase(), content))
            }
            _ => {}
        }
    }
    if let Some(e) = error {
        out.push_str(&format!("ERROR: {e}\n"));
    }
    out
}

/// Runs every input in order, stopping at the first failed turn. Events are
/// written to `store` as they happen and a `session_end` closes the log.
pub fn run_dialog(
    scenario: &Scenario,
    backend: &dyn ChatBackend,
    inputs: &[String],
    session_id: &str,
    store: Arc<dyn EventStore>,
    clock: Arc<dyn Clock>,
) -> ReplayReport {
    let started = Instant::now();
    let mut session =
        Session::new(session_id, &scenario.entry_agent, &scenario.agents).expect("entry agent is registered");
    let orch = Orchestrator::new(backend, &scenario.registry, &scenario.agents);
    let mut recorder = SessionRecorder::new(store.clone(), clock, session_id);
    let mut turns = Vec::new();
    let mut telemetry_error: Option<TelemetryError> = None;
    let mut skipped = 0;

    for (i, text) in inputs.iter().enumerate() {
        let outcome = orch.run_turn(&mut session, text);
        let (record, events) = match outcome {
            Ok(r) => {
                let ev = r.events.clone();
                (
                    TurnRecord {
                        user: text.clone(),
                        result: Some(r),
                        error: None,
                    },
                    ev,
                )
            }
            Err(TurnError::Failed { reason, partial }) => {
                let ev = partial.events.clone();
                (
                    TurnRecord {
                        user: text.clone(),
                        result: Some(*partial),
                        error: Some(format!("turn failed: {reason}")),
                    },
                    ev,
                )
            }
            Err(e) => (
                TurnRecord {
                    user: text.clone(),
                    result: None,
                    error: Some(e.to_string()),
                },
                Vec::new(),
            ),
        };
        if telemetry_error.is_none() {
            if let Err(e) = recorder.record_all(events) {
                telemetry_error = Some(e);
            }
        }
        let failed = record.error.is_some();
        turns.push(record);
        if failed {
            skipped = inputs.len() - i - 1;
            break;
        }
    }
    if telemetry_error.is_none() && !turns.is_empty() {
        let end = EventBody::SessionEnd {
            status: session.status,
            total_tokens: session.total_tokens(),
        };
        if let Err(e) = recorder.record(end) {
            telemetry_error = Some(e);
        }
    }
    let events = store.load(session_id).unwrap_or_default();
    ReplayReport {
        session,
        turns,
        events,
        elapsed: started.elapsed(),
        skipped_inputs: skipped,
        telemetry_error: telemetry_error.map(|e| e.to_string()),
    }
}

/// True when a scripted run went cleanly: no turn error, nothing skipped and
/// the session did not fail.
pub fn replay_succeeded(report: &ReplayReport) -> bool {
    report.first_error().is_none()
        && report.skipped_inputs == 0
        && report.session.status != SessionStatus::Failed
        && report.telemetry_error.is_none()
}
