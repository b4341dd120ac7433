//! Append-only per-session event logs, usage series and redundant-call detection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;
use crate::orchestrator::{SessionStatus, TurnEvent};

pub const SCHEMA_VERSION: u32 = 1;
const PART_LOOKUP: &str = "retrieve_part_details";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    UserMsg {
        text: String,
    },
    AssistantMsg {
        agent: String,
        content: String,
    },
    ToolCall {
        agent: String,
        id: String,
        name: String,
        arguments: String,
    },
    ToolResult {
        tool_call_id: String,
        name: String,
        content: String,
        is_error: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        handoff_target: Option<String>,
    },
    Handoff {
        from: String,
        to: String,
    },
    Usage {
        agent: String,
        prompt_tokens: u64,
        completion_tokens: u64,
        total_tokens: u64,
        latency_ms: u64,
    },
    SessionEnd {
        status: SessionStatus,
        total_tokens: u64,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UserMsg { .. } => "user_msg",
            Self::AssistantMsg { .. } => "assistant_msg",
            Self::ToolCall { .. } => "tool_call",
            Self::ToolResult { .. } => "tool_result",
            Self::Handoff { .. } => "handoff",
            Self::Usage { .. } => "usage",
            Self::SessionEnd { .. } => "session_end",
        }
    }
}

impl From<TurnEvent> for EventBody {
    fn from(e: TurnEvent) -> Self {
        match e {
            TurnEvent::UserMsg { text } => Self::UserMsg { text },
            TurnEvent::AssistantMsg { agent, content } => Self::AssistantMsg { agent, content },
            TurnEvent::ToolCall { agent, call } => Self::ToolCall {
                agent,
                id: call.id,
                name: call.name,
                arguments: call.arguments,
            },
            TurnEvent::ToolResult { name, result } => Self::ToolResult {
                tool_call_id: result.tool_call_id,
                name,
                content: result.content,
                is_error: result.is_error,
                handoff_target: result.handoff_target,
            },
            TurnEvent::Handoff { from, to } => Self::Handoff { from, to },
            TurnEvent::Usage {
                agent,
                usage,
                latency_ms,
            } => Self::Usage {
                agent,
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
                total_tokens: usage.total_tokens,
                latency_ms,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    session_id: String,
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} must start with a user_msg event")]
    NotStarted(String),
    #[error("event seq {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("session id {0:?} may only contain letters, digits, '-' and '_'")]
    BadSessionId(String),
}

pub fn is_valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Durable, append-only storage of session events.
pub trait EventStore: Send + Sync {
    /// Appends one event. The first event of a session must be a `user_msg`;
    /// seq must increase strictly. Durable before returning.
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), TelemetryError>;

    fn load(&self, session_id: &str) -> Result<Vec<SessionEvent>, TelemetryError>;

    fn session_ids(&self) -> Result<Vec<String>, TelemetryError>;
}

fn check_next(session_id: &str, last: Option<u64>, event: &SessionEvent) -> Result<(), TelemetryError> {
    match last {
        None if !matches!(event.body, EventBody::UserMsg { .. }) => Err(TelemetryError::NotStarted(session_id.into())),
        Some(last) if event.seq <= last => Err(TelemetryError::OutOfOrder { last, got: event.seq }),
        _ => Ok(()),
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<BTreeMap<String, Vec<SessionEvent>>>,
}

impl EventStore for MemoryStore {
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), TelemetryError> {
        let mut map = self.sessions.lock().unwrap();
        let last = map.get(session_id).and_then(|v| v.last()).map(|e| e.seq);
        check_next(session_id, last, event)?;
        map.entry(session_id.to_string()).or_default().push(event.clone());
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<Vec<SessionEvent>, TelemetryError> {
        self.sessions
            .lock()
            .unwrap()
            .get(session_id)
            .cloned()
            .ok_or_else(|| TelemetryError::UnknownSession(session_id.into()))
    }

    fn session_ids(&self) -> Result<Vec<String>, TelemetryError> {
        Ok(self.sessions.lock().unwrap().keys().cloned().collect())
    }
}

/// One `sessions/{id}.events.jsonl` file per session under `dir`.
#[derive(Debug)]
pub struct JsonlStore {
    dir: PathBuf,
    last_seq: Mutex<HashMap<String, u64>>,
}

const SUFFIX: &str = ".events.jsonl";

impl JsonlStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            last_seq: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}{SUFFIX}"))
    }
}

impl EventStore for JsonlStore {
    fn append(&self, session_id: &str, event: &SessionEvent) -> Result<(), TelemetryError> {
        if !is_valid_session_id(session_id) {
            return Err(TelemetryError::BadSessionId(session_id.into()));
        }
        let mut cache = self.last_seq.lock().unwrap();
        let path = self.path_for(session_id);
        let last = match cache.get(session_id) {
            Some(&s) => Some(s),
            None if path.exists() => self.load(session_id)?.last().map(|e| e.seq),
            None => None,
        };
        check_next(session_id, last, event)?;
        let mut buf = Vec::new();
        if !path.exists() {
            serde_json::to_writer(
                &mut buf,
                &Header {
                    schema_version: SCHEMA_VERSION,
                    session_id: session_id.into(),
                },
            )
            .map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        serde_json::to_writer(&mut buf, event).map_err(io::Error::other)?;
        buf.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        f.write_all(&buf)?;
        f.flush()?;
        f.sync_data()?;
        cache.insert(session_id.to_string(), event.seq);
        Ok(())
    }

    fn load(&self, session_id: &str) -> Result<Vec<SessionEvent>, TelemetryError> {
        if !is_valid_session_id(session_id) {
            return Err(TelemetryError::BadSessionId(session_id.into()));
        }
        let file = match File::open(self.path_for(session_id)) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(TelemetryError::UnknownSession(session_id.into()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Ok(import_session(text.as_bytes())?.1)
    }

    fn session_ids(&self) -> Result<Vec<String>, TelemetryError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(SUFFIX)) {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Serializes a session: a schema header line, then one event per line.
pub fn export_session(session_id: &str, events: &[SessionEvent]) -> Vec<u8> {
    let mut out = serde_json::to_vec(&Header {
        schema_version: SCHEMA_VERSION,
        session_id: session_id.into(),
    })
    .expect("plain header");
    out.push(b'\n');
    for e in events {
        serde_json::to_writer(&mut out, e).expect("events serialize");
        out.push(b'\n');
    }
    out
}

pub fn import_session(bytes: &[u8]) -> Result<(String, Vec<SessionEvent>), TelemetryError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TelemetryError::Format {
        line: 0,
        message: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TelemetryError::Format {
        line: 1,
        message: "missing schema header".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| TelemetryError::Format {
        line: 1,
        message: format!("bad schema header: {e}"),
    })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(TelemetryError::Format {
            line: 1,
            message: format!("unsupported schema_version {}", header.schema_version),
        });
    }
    let mut events: Vec<SessionEvent> = Vec::new();
    for (i, line) in lines {
        let e: SessionEvent = serde_json::from_str(line).map_err(|err| TelemetryError::Format {
            line: i + 1,
            message: err.to_string(),
        })?;
        check_next(&header.session_id, events.last().map(|p| p.seq), &e)?;
        events.push(e);
    }
    Ok((header.session_id, events))
}

/// Assigns seq numbers and timestamps, then writes through to a store.
pub struct SessionRecorder {
    store: Arc<dyn EventStore>,
    clock: Arc<dyn Clock>,
    session_id: String,
    next_seq: u64,
}

impl SessionRecorder {
    pub fn new(store: Arc<dyn EventStore>, clock: Arc<dyn Clock>, session_id: impl Into<String>) -> Self {
        Self {
            store,
            clock,
            session_id: session_id.into(),
            next_seq: 1,
        }
    }

    /// Continues an existing log.
    pub fn resume(store: Arc<dyn EventStore>, clock: Arc<dyn Clock>, session_id: &str) -> Result<Self, TelemetryError> {
        let last = store.load(session_id)?.last().map_or(0, |e| e.seq);
        Ok(Self {
            store,
            clock,
            session_id: session_id.to_string(),
            next_seq: last + 1,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn record(&mut self, body: EventBody) -> Result<SessionEvent, TelemetryError> {
        let event = SessionEvent {
            seq: self.next_seq,
            timestamp: self.clock.now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            body,
        };
        self.store.append(&self.session_id, &event)?;
        self.next_seq += 1;
        Ok(event)
    }

    pub fn record_all<I>(&mut self, events: I) -> Result<Vec<SessionEvent>, TelemetryError>
    where
        I: IntoIterator<Item = TurnEvent>,
    {
        events.into_iter().map(|e| self.record(e.into())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsagePoint {
    /// 1-based backend call number.
    pub call_index: usize,
    pub prompt_tokens: u64,
    pub total_tokens: u64,
}

pub fn usage_series(events: &[SessionEvent]) -> Vec<UsagePoint> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Usage {
                prompt_tokens,
                total_tokens,
                ..
            } => Some((*prompt_tokens, *total_tokens)),
            _ => None,
        })
        .enumerate()
        .map(|(i, (p, t))| UsagePoint {
            call_index: i + 1,
            prompt_tokens: p,
            total_tokens: t,
        })
        .collect()
}

pub fn usage_csv(series: &[UsagePoint]) -> String {
    let mut out = String::from("call_index,prompt_tokens,total_tokens\n");
    for p in series {
        out.push_str(&format!("{},{},{}\n", p.call_index, p.prompt_tokens, p.total_tokens));
    }
    out
}

/// Index of the first call whose prompt shrank, if any.
pub fn first_prompt_decrease(series: &[UsagePoint]) -> Option<usize> {
    series
        .windows(2)
        .find(|w| w[1].prompt_tokens < w[0].prompt_tokens)
        .map(|w| w[1].call_index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redundancy {
    pub seq: u64,
    pub reason: String,
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Arguments with keys sorted, so `{"a":1,"b":2}` equals `{"b":2,"a":1}`.
pub fn canonical_arguments(arguments: &str) -> String {
    match serde_json::from_str::<Value>(arguments) {
        Ok(v) => sort_keys(v).to_string(),
        Err(_) => arguments.trim().to_string(),
    }
}

/// Flags tool calls that repeat an earlier identical call with no user
/// message in between, and part lookups for a code already fetched.
pub fn detect_redundant_calls(events: &[SessionEvent]) -> Vec<Redundancy> {
    let mut out = Vec::new();
    let mut since_user: HashSet<(String, String)> = HashSet::new();
    let mut parts_seen: HashSet<String> = HashSet::new();
    for e in events {
        match &e.body {
            EventBody::UserMsg { .. } => since_user.clear(),
            EventBody::ToolCall { name, arguments, .. } => {
                let canon = canonical_arguments(arguments);
                if !since_user.insert((name.clone(), canon.clone())) {
                    out.push(Redundancy {
                        seq: e.seq,
                        reason: format!("repeats {name}({canon}) with no new user input"),
                    });
                    continue;
                }
                if name == PART_LOOKUP {
                    let code = serde_json::from_str::<Value>(arguments)
                        .ok()
                        .and_then(|v| v.get("device_code").and_then(Value::as_str).map(str::to_uppercase));
                    if let Some(code) = code {
                        if !parts_seen.insert(code.clone()) {
                            out.push(Redundancy {
                                seq: e.seq,
                                reason: format!("part {code} was already retrieved in this session"),
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}
