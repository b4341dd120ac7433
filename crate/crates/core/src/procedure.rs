//! Step-numbered procedure manuals as a branching graph.
//!
//! Steps open with `Passo N:`; sentences such as "Se ..., procedere al Passo M"
//! become edges. The graph checks report traces and renders Mermaid flowcharts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

static STEP_HEAD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Passo\s+(\d+)\s*:(.*)$").unwrap());
static TRANSITION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(procedere|passare|procedi|passa|tornare|torna)\s+al\s+Passo\s+(\d+)").unwrap()
});
static DOC_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*DOC-REF:\s*(\S+)").unwrap());
static STEP_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[(\d+)\]").unwrap());

const TERMINAL_MARK: &str = "fine procedura";
const LABEL_WORDS: usize = 6;
const FILLER: &[&str] = &[
    "se",
    "si",
    "notano",
    "verificano",
    "il",
    "la",
    "le",
    "lo",
    "i",
    "gli",
    "è",
    "sono",
    "e",
    "poi",
    "di",
    "dei",
    "del",
    "della",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    /// The sentence that carries the jump.
    pub condition_text: String,
    pub target_id: u32,
    /// Sentence starts with "Se"; only conditional jumps leave room for a fallthrough.
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub id: u32,
    pub text: String,
    /// 1-based line of the `Passo` header in the source.
    pub line: usize,
    pub transitions: Vec<Transition>,
    /// Implicit move to the next numbered step when the explicit jumps do not
    /// cover every case.
    pub fallthrough: Option<u32>,
    pub is_terminal: bool,
}

impl Step {
    /// Targets in edge order: explicit transitions, then the fallthrough.
    pub fn targets(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for t in self.transitions.iter().map(|t| t.target_id).chain(self.fallthrough) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    pub fn first_sentence(&self) -> &str {
        sentences(&self.text).into_iter().next().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureGraph {
    pub doc_ref: Option<String>,
    pub steps: BTreeMap<u32, Step>,
    pub start_id: u32,
    pub terminal_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProcedureError {
    #[error("no `Passo N:` steps found")]
    NoSteps,
    #[error("line {line}: step {id} is defined twice")]
    DuplicateStep { id: u32, line: usize },
    #[error("line {line}: step {step} points at missing step {target}")]
    DanglingTarget { step: u32, target: u32, line: usize },
    #[error("line {line}: step number {raw:?} is not a positive integer")]
    BadStepId { raw: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Add fallthrough edges to the next step. Disable for a strict reading.
    pub fallthrough: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { fallthrough: true }
    }
}

/// Flattens a body into sentences split on ". ".
fn sentences(body: &str) -> Vec<&str> {
    body.split(". ").map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn collapse(lines: &[&str]) -> String {
    lines
        .iter()
        .flat_map(|l| l.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ")
}

fn starts_with_se(sentence: &str) -> bool {
    let s = sentence.trim_start_matches(|c: char| c == '(' || c.is_whitespace());
    let lower = s.to_lowercase();
    lower == "se" || lower.starts_with("se ")
}

pub fn parse_procedure(text: &str) -> Result<ProcedureGraph, ProcedureError> {
    parse_procedure_with(text, ParseOptions::default())
}

pub fn parse_procedure_with(text: &str, opts: ParseOptions) -> Result<ProcedureGraph, ProcedureError> {
    // (id, header line, body lines)
    let mut blocks: Vec<(u32, usize, Vec<&str>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = STEP_HEAD.captures(line) {
            let raw = &c[1];
            let id: u32 = raw
                .parse()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| ProcedureError::BadStepId {
                    raw: raw.to_string(),
                    line: i + 1,
                })?;
            if blocks.iter().any(|b| b.0 == id) {
                return Err(ProcedureError::DuplicateStep { id, line: i + 1 });
            }
            let first = c.get(2).map_or("", |m| m.as_str());
            blocks.push((id, i + 1, vec![first]));
        } else if let Some(b) = blocks.last_mut() {
            b.2.push(line);
        }
    }
    if blocks.is_empty() {
        return Err(ProcedureError::NoSteps);
    }
    let ids: BTreeSet<u32> = blocks.iter().map(|b| b.0).collect();

    let mut steps = BTreeMap::new();
    for (id, line, body) in &blocks {
        let text = collapse(body);
        let mut transitions = Vec::new();
        for sentence in sentences(&text) {
            for c in TRANSITION.captures_iter(sentence) {
                let target: u32 = c[2].parse().unwrap_or(0);
                if !ids.contains(&target) {
                    return Err(ProcedureError::DanglingTarget {
                        step: *id,
                        target,
                        line: *line,
                    });
                }
                transitions.push(Transition {
                    condition_text: sentence.trim_end_matches('.').to_string(),
                    target_id: target,
                    conditional: starts_with_se(sentence),
                });
            }
        }
        let terminal_mark = text.to_lowercase().contains(TERMINAL_MARK);
        let unconditional = transitions.iter().any(|t| !t.conditional);
        let distinct_conditional: BTreeSet<u32> = transitions
            .iter()
            .filter(|t| t.conditional)
            .map(|t| t.target_id)
            .collect();
        let covered = unconditional || distinct_conditional.len() >= 2;
        let next = id + 1;
        let fallthrough = (opts.fallthrough && !terminal_mark && !covered && ids.contains(&next)).then_some(next);
        let is_terminal = transitions.is_empty() && fallthrough.is_none();
        steps.insert(
            *id,
            Step {
                id: *id,
                text,
                line: *line,
                transitions,
                fallthrough,
                is_terminal,
            },
        );
    }
    let terminal_ids = steps.values().filter(|s| s.is_terminal).map(|s| s.id).collect();
    Ok(ProcedureGraph {
        doc_ref: DOC_REF.captures(text).map(|c| c[1].to_string()),
        start_id: *ids.iter().next().expect("non-empty"),
        steps,
        terminal_ids,
    })
}

impl ProcedureGraph {
    pub fn successors(&self, id: u32) -> BTreeSet<u32> {
        self.steps
            .get(&id)
            .map(|s| s.targets().into_iter().collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    /// Step before the offending one; `None` when the trace starts wrong.
    pub from: Option<u32>,
    pub to: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceValidation {
    pub valid: bool,
    pub first_violation: Option<Violation>,
    pub reached_terminal: bool,
}

/// A trace is valid when it starts at the start step and every hop follows an
/// edge. Reaching a terminal step is reported separately.
pub fn validate_trace(graph: &ProcedureGraph, trace: &[u32]) -> TraceValidation {
    let reached_terminal = trace.last().is_some_and(|l| graph.terminal_ids.contains(l));
    let Some(&first) = trace.first() else {
        return TraceValidation {
            valid: false,
            first_violation: None,
            reached_terminal: false,
        };
    };
    let violation = if first != graph.start_id || !graph.steps.contains_key(&first) {
        Some(Violation {
            index: 0,
            from: None,
            to: first,
        })
    } else {
        trace.windows(2).enumerate().find_map(|(i, w)| {
            (!graph.successors(w[0]).contains(&w[1])).then_some(Violation {
                index: i + 1,
                from: Some(w[0]),
                to: w[1],
            })
        })
    };
    TraceValidation {
        valid: violation.is_none(),
        first_violation: violation,
        reached_terminal,
    }
}

/// Every `[n]` marker in document order, duplicates kept.
pub fn extract_report_steps(report: &str) -> Vec<u32> {
    STEP_MARKER
        .captures_iter(report)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

/// Short edge label from a condition sentence: the words before the jump verb,
/// minus filler, at most six.
pub fn condition_label(sentence: &str) -> String {
    let head = match TRANSITION.find(sentence) {
        Some(m) => &sentence[..m.start()],
        None => sentence,
    };
    head.split(|c: char| c.is_whitespace() || ",;:()".contains(c))
        .filter(|w| !w.is_empty())
        .filter(|w| !FILLER.contains(&w.to_lowercase().as_str()))
        .take(LABEL_WORDS)
        .collect::<Vec<_>>()
        .join(" ")
}

fn mermaid_text(s: &str) -> String {
    s.replace('"', "#quot;").replace('|', "/")
}

/// Mermaid `flowchart TD` with nodes and edges in ascending step order.
pub fn emit_flowchart(graph: &ProcedureGraph) -> String {
    let mut out = String::from("flowchart TD\n");
    for s in graph.steps.values() {
        let label = mermaid_text(s.first_sentence().trim_end_matches('.'));
        if s.is_terminal {
            let _ = writeln!(out, "    S{}([\"{}\"])", s.id, label);
        } else {
            let _ = writeln!(out, "    S{}[\"{}\"]", s.id, label);
        }
    }
    for s in graph.steps.values() {
        let mut drawn = BTreeSet::new();
        for t in &s.transitions {
            if !drawn.insert(t.target_id) {
                continue;
            }
            let label = mermaid_text(&condition_label(&t.condition_text));
            if label.is_empty() {
                let _ = writeln!(out, "    S{} --> S{}", s.id, t.target_id);
            } else {
                let _ = writeln!(out, "    S{} -->|{}| S{}", s.id, label, t.target_id);
            }
        }
        if let Some(f) = s.fallthrough {
            if drawn.insert(f) {
                let _ = writeln!(out, "    S{} --> S{}", s.id, f);
            }
        }
    }
    out
}
