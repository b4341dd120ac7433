//! Line-oriented terminal dialog.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use convroutine::backend::ChatBackend;
use convroutine::clock::Clock;
use convroutine::orchestrator::{Orchestrator, Session, SessionStatus, TurnError, TurnEvent, TurnResult};
use convroutine::replay::render_turn;
use convroutine::scenario::Scenario;
use convroutine::telemetry::{EventBody, EventStore, SessionRecorder};

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplOptions {
    /// ANSI styling: dimmed tool calls, bold agent names.
    pub color: bool,
    /// Print each input line back as `USER: ...` (for piped input).
    pub echo: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplSummary {
    pub turns: usize,
    pub backend_calls: usize,
    pub total_tokens: u64,
    pub status: SessionStatus,
}

impl ReplSummary {
    pub fn line(&self) -> String {
        format!(
            "session {}: {} turn(s), {} backend call(s), {} tokens",
            match self.status {
                SessionStatus::Open => "open",
                SessionStatus::Completed => "completed",
                SessionStatus::Failed => "failed",
            },
            self.turns,
            self.backend_calls,
            self.total_tokens
        )
    }
}

const DIM: &str = "\x1b[2m";
const BOLD: &str = "\x1b[1m";
const RESET: &str = "\x1b[0m";

fn styled(result: &TurnResult) -> String {
    let mut out = String::new();
    for e in &result.events {
        match e {
            TurnEvent::ToolCall { call, .. } => {
                out.push_str(&format!("{DIM}  [tool] {}({}){RESET}\n", call.name, call.arguments))
            }
            TurnEvent::Handoff { from, to } => out.push_str(&format!("{DIM}  [handoff] {from} -> {to}{RESET}\n")),
            TurnEvent::AssistantMsg { agent, content } if !content.is_empty() => {
                out.push_str(&format!("{BOLD}{agent}{RESET}: {content}\n"))
            }
            _ => {}
        }
    }
    out
}

pub struct Repl<'a> {
    pub scenario: &'a Scenario,
    pub backend: Arc<dyn ChatBackend>,
    pub store: Arc<dyn EventStore>,
    pub clock: Arc<dyn Clock>,
    pub session_id: String,
    pub options: ReplOptions,
}

impl Repl<'_> {
    /// Reads lines until EOF or `/quit`, then prints the usage summary.
    pub fn run<R: BufRead, W: Write>(&self, input: R, out: &mut W) -> io::Result<ReplSummary> {
        let mut session = Session::new(&self.session_id, &self.scenario.entry_agent, &self.scenario.agents)
            .map_err(io::Error::other)?;
        let orch = Orchestrator::new(self.backend.as_ref(), &self.scenario.registry, &self.scenario.agents);
        let mut recorder = SessionRecorder::new(self.store.clone(), self.clock.clone(), &self.session_id);
        let mut turns = 0;
        let prompt = |out: &mut W| -> io::Result<()> {
            if !self.options.echo {
                write!(out, "> ")?;
                out.flush()?;
            }
            Ok(())
        };

        prompt(out)?;
        for line in input.lines() {
            let line = line?;
            let text = line.trim();
            if text == "/quit" {
                break;
            }
            if text.is_empty() {
                prompt(out)?;
                continue;
            }
            turns += 1;
            let (result, error) = match orch.run_turn(&mut session, text) {
                Ok(r) => (Some(r), None),
                // Rolled back: the user can simply try again.
                Err(TurnError::Backend(e)) => (None, Some(format!("backend error: {e}"))),
                Err(TurnError::Failed { reason, partial }) => (Some(*partial), Some(format!("turn failed: {reason}"))),
                Err(e) => (None, Some(e.to_string())),
            };
            if let Some(r) = &result {
                if let Err(e) = recorder.record_all(r.events.clone()) {
                    writeln!(out, "telemetry error: {e}")?;
                }
            }
            let shown = if self.options.color {
                let mut s = result.as_ref().map(styled).unwrap_or_default();
                if let Some(e) = &error {
                    s.push_str(&format!("ERROR: {e}\n"));
                }
                s
            } else {
                let s = render_turn(text, result.as_ref(), error.as_deref());
                if self.options.echo {
                    s
                } else {
                    s.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
                }
            };
            out.write_all(shown.as_bytes())?;
            if session.status != SessionStatus::Open {
                break;
            }
            prompt(out)?;
        }

        if !session.usage_log.is_empty() {
            let end = EventBody::SessionEnd {
                status: session.status,
                total_tokens: session.total_tokens(),
            };
            if let Err(e) = recorder.record(end) {
                writeln!(out, "telemetry error: {e}")?;
            }
        }
        let summary = ReplSummary {
            turns,
            backend_calls: session.usage_log.len(),
            total_tokens: session.total_tokens(),
            status: session.status,
        };
        writeln!(out, "{}", summary.line())?;
        Ok(summary)
    }
}
