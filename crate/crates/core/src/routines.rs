//! Conversation routine documents: the natural-language program an agent runs.
//!
//! A routine is plain text split into sections by uppercase header lines
//! (`CORE FUNCTIONS:`, `ERROR HANDLING:` ...). Bodies are kept byte-for-byte,
//! indentation included, because nesting carries meaning for the model.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::ToolRegistry;
use crate::types::ContextVariables;

/// Header given to text that precedes the first explicit header.
pub const PREAMBLE: &str = "PREAMBLE";

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z][A-Z /_-]*:$").unwrap());
static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z0-9_.-]+)\s*\}\}").unwrap());
static BACKTICK_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"`([A-Za-z_][A-Za-z0-9_]*)\(\)`").unwrap());
static CALL_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([a-z][a-z0-9]*(?:_[a-z0-9]+)+)\(").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutineSection {
    pub header: String,
    pub body: String,
    /// True for the implicit preamble, which has no header line in the source.
    #[serde(default)]
    pub implicit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoutineDoc {
    pub title: Option<String>,
    pub sections: Vec<RoutineSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutineError {
    #[error("duplicate section header {header:?} at line {line}")]
    DuplicateSection { header: String, line: usize },
}

impl RoutineDoc {
    pub fn section(&self, header: &str) -> Option<&RoutineSection> {
        self.sections.iter().find(|s| s.header == header)
    }

    pub fn headers(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.header.as_str())
    }
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Joins body lines, dropping blank lines at both ends only.
fn finish_body(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !is_blank(l));
    let end = lines.iter().rposition(|l| !is_blank(l));
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e]
            .iter()
            .map(|l| l.trim_end_matches('\r'))
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

pub fn parse_routine(text: &str) -> Result<RoutineDoc, RoutineError> {
    let mut doc = RoutineDoc::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<(String, bool)> = None;
    let mut body: Vec<&str> = Vec::new();

    let flush = |current: Option<(String, bool)>, body: &mut Vec<&str>, doc: &mut RoutineDoc| {
        if let Some((header, implicit)) = current {
            let text = finish_body(body);
            if !(implicit && text.is_empty()) {
                if implicit {
                    doc.title = text.lines().next().map(|l| l.trim().to_string());
                }
                doc.sections.push(RoutineSection {
                    header,
                    body: text,
                    implicit,
                });
            }
        }
        body.clear();
    };

    for (idx, line) in text.split('\n').enumerate() {
        let trimmed = line.trim_end();
        if HEADER.is_match(trimmed) {
            let header = trimmed[..trimmed.len() - 1].to_string();
            if !seen.insert(header.clone()) {
                return Err(RoutineError::DuplicateSection { header, line: idx + 1 });
            }
            flush(current.take(), &mut body, &mut doc);
            current = Some((header, false));
        } else {
            if current.is_none() {
                if is_blank(line) && body.is_empty() {
                    continue;
                }
                if !seen.insert(PREAMBLE.to_string()) {
                    return Err(RoutineError::DuplicateSection {
                        header: PREAMBLE.to_string(),
                        line: idx + 1,
                    });
                }
                current = Some((PREAMBLE.to_string(), true));
            }
            body.push(line);
        }
    }
    flush(current, &mut body, &mut doc);
    Ok(doc)
}

/// Substitutes `{{key}}` placeholders found in `ctx`; unknown ones stay verbatim.
pub fn interpolate(text: &str, ctx: &ContextVariables) -> String {
    PLACEHOLDER
        .replace_all(text, |caps: &regex::Captures<'_>| match ctx.get(&caps[1]) {
            Some(v) => v.to_string(),
            None => caps[0].to_string(),
        })
        .into_owned()
}

pub fn render_system_prompt(doc: &RoutineDoc, ctx: &ContextVariables) -> String {
    let mut blocks = Vec::with_capacity(doc.sections.len());
    for s in &doc.sections {
        let body = interpolate(&s.body, ctx);
        let block = if s.implicit {
            body
        } else if body.is_empty() {
            format!("{}:", s.header)
        } else {
            format!("{}:\n{}", s.header, body)
        };
        blocks.push(block);
    }
    let mut out = blocks.join("\n\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub tool: String,
    pub message: String,
}

/// Function names the routine refers to, in order of first appearance.
///
/// Two spellings count as a reference: a backticked `` `name()` `` and a bare
/// snake_case call such as `retrieve_part_details(device_code)`.
pub fn referenced_tools(doc: &RoutineDoc) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for s in &doc.sections {
        let mut hits: Vec<(usize, String)> = BACKTICK_REF
            .captures_iter(&s.body)
            .map(|c| (c.get(0).unwrap().start(), c[1].to_string()))
            .chain(
                CALL_REF
                    .captures_iter(&s.body)
                    .map(|c| (c.get(0).unwrap().start(), c[1].to_string())),
            )
            .collect();
        hits.sort();
        for (_, name) in hits {
            if !out.iter().any(|(n, _)| *n == name) {
                out.push((name, s.header.clone()));
            }
        }
    }
    out
}

pub fn validate_routine(doc: &RoutineDoc, registry: &ToolRegistry) -> Vec<Finding> {
    let refs = referenced_tools(doc);
    let mut findings = Vec::new();
    let mut used: HashSet<String> = HashSet::new();
    for (name, section) in &refs {
        match registry.canonical_name(name) {
            Some(canonical) => {
                used.insert(canonical.to_string());
            }
            None => findings.push(Finding {
                severity: Severity::Error,
                tool: name.clone(),
                message: format!("section {section} references unknown tool {name}()"),
            }),
        }
    }
    for name in registry.names() {
        if !used.contains(name) {
            findings.push(Finding {
                severity: Severity::Warning,
                tool: name.to_string(),
                message: format!("registered tool {name} is never mentioned in the routine"),
            });
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::tools::{FnTool, ToolOutput};
    use crate::types::ToolSpec;
    use proptest::prelude::*;

    fn registry(names: &[&str]) -> ToolRegistry {
        let mut r = ToolRegistry::new();
        for n in names {
            r.register(FnTool::new(ToolSpec::new(n, "test"), |_, _| ToolOutput::text("ok")))
                .unwrap();
        }
        r
    }

    #[test]
    fn two_sections() {
        let doc = parse_routine("OBJECTIVE:\nAssist users…\nCORE FUNCTIONS:\n- Station Search…").unwrap();
        assert_eq!(doc.headers().collect::<Vec<_>>(), vec!["OBJECTIVE", "CORE FUNCTIONS"]);
        assert_eq!(doc.sections[0].body, "Assist users…");
        assert_eq!(doc.title, None);
    }

    #[test]
    fn empty_input() {
        assert!(parse_routine("").unwrap().sections.is_empty());
        assert!(parse_routine("\n\n  \n").unwrap().sections.is_empty());
    }

    #[test]
    fn duplicate_header_reports_second_line() {
        let text = format!("{}\nERROR HANDLING:\n- again\n", bundled::BOOKING_ROUTINE);
        let line = text.lines().count() - 1;
        let err = parse_routine(&text).unwrap_err();
        assert_eq!(
            err,
            RoutineError::DuplicateSection {
                header: "ERROR HANDLING".into(),
                line
            }
        );
    }

    #[test]
    fn preamble_and_numbered_subsections() {
        let doc = parse_routine(bundled::TS_ASSISTANT_ROUTINE).unwrap();
        assert_eq!(doc.sections[0].header, PREAMBLE);
        assert!(doc.sections[0].implicit);
        assert_eq!(
            doc.title.as_deref(),
            Some("INDUSTRIAL MACHINERY TROUBLESHOOTING ASSISTANT")
        );
        let flow = doc.section("CONVERSATION FLOW").unwrap();
        assert!(flow.body.contains("1. INITIAL ASSESSMENT:"));
        assert!(doc.section("1. INITIAL ASSESSMENT").is_none());
    }

    #[test]
    fn render_booking_prompt_is_identity() {
        let doc = parse_routine(bundled::BOOKING_ROUTINE).unwrap();
        let out = render_system_prompt(&doc, &ContextVariables::new());
        assert_eq!(out.trim_end(), bundled::BOOKING_ROUTINE.trim_end());
    }

    #[test]
    fn placeholders() {
        let doc = parse_routine("LANGUAGE:\n- Communicate in {{lang}}\n- {{missing}}").unwrap();
        let ctx = ContextVariables::new().with("lang", "Italian");
        assert_eq!(
            render_system_prompt(&doc, &ctx),
            "LANGUAGE:\n- Communicate in Italian\n- {{missing}}\n"
        );
    }

    #[test]
    fn booking_prompt_validates() {
        let doc = parse_routine(bundled::BOOKING_ROUTINE).unwrap();
        let full = registry(&["search_railway_station", "book_train_ticket", "get_date_time"]);
        assert!(validate_routine(&doc, &full).is_empty());
        let missing = registry(&["search_railway_station", "get_date_time"]);
        let f = validate_routine(&doc, &missing);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].severity, Severity::Error);
        assert_eq!(f[0].tool, "book_train_ticket");
    }

    #[test]
    fn unreferenced_tool_is_warning() {
        let doc = parse_routine("CORE FUNCTIONS:\n- Use `a_b()`").unwrap();
        let f = validate_routine(&doc, &registry(&["a_b", "c_d"]));
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].severity, Severity::Warning);
        assert_eq!(f[0].tool, "c_d");
    }

    #[test]
    fn empty_doc_empty_registry() {
        assert!(validate_routine(&RoutineDoc::default(), &ToolRegistry::new()).is_empty());
    }

    fn indented_body() -> impl Strategy<Value = String> {
        proptest::collection::vec(("[ ]{0,6}", "[a-z][a-z .,*-]{0,20}"), 1..8).prop_map(|lines| {
            lines
                .into_iter()
                .map(|(indent, text)| format!("{indent}{}", text.trim_end()))
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    proptest! {
        #[test]
        fn indentation_survives_round_trip(bodies in proptest::collection::vec(indented_body(), 1..5)) {
            let text: String = bodies
                .iter()
                .enumerate()
                .map(|(i, b)| format!("SECTION {}:\n{}\n", (b'A' + i as u8) as char, b))
                .collect();
            let doc = parse_routine(&text).unwrap();
            let rendered = render_system_prompt(&doc, &ContextVariables::new());
            let again = parse_routine(&rendered).unwrap();
            prop_assert_eq!(&again, &doc);
            for (s, b) in doc.sections.iter().zip(&bodies) {
                let expected = finish_body(&b.split('\n').collect::<Vec<_>>());
                prop_assert_eq!(&s.body, &expected);
            }
            prop_assert_eq!(render_system_prompt(&again, &ContextVariables::new()), rendered);
        }

        #[test]
        fn parse_render_parse_is_stable(text in "([A-Z]{1,6}:\n|[ a-zA-Z{}]{0,12}\n){0,12}") {
            if let Ok(doc) = parse_routine(&text) {
                let rendered = render_system_prompt(&doc, &ContextVariables::new());
                prop_assert_eq!(parse_routine(&rendered).unwrap(), doc);
            }
        }
    }
}
