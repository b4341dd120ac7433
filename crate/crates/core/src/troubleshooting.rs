//! Troubleshooting copilot tools: keyword retrieval over procedure manuals,
//! part catalog lookup, hand-off to the report agent and report building.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tools::{CallContext, RegistryError, Tool, ToolOutput, ToolRegistry};
use crate::types::{ArgMap, ParamKind, ParamSpec, ToolSpec};

pub const REPORT_AGENT: &str = "Troubleshooting Report Agent";
pub const NO_MATCH: &str = "No matching troubleshooting procedure found.";

static PART_CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z]{3}-[A-Z0-9]+(-[A-Z0-9]+)?$").unwrap());
static COMPONENT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^-\s*(.+?):\s*([A-Z]{3}-[A-Z0-9]+(?:-[A-Z0-9]+)?)\s*$").unwrap());
static ACTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)(.*?)\[(\d+)\]\.?").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("procedure document has no DOC-REF line")]
    MissingDocRef,
    #[error("duplicate doc_ref {0:?}")]
    DuplicateDocRef(String),
    #[error("invalid part catalog: {0}")]
    Catalog(String),
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureDocument {
    pub doc_ref: String,
    pub title: String,
    pub intro: String,
    pub component_codes: BTreeMap<String, String>,
    pub steps_text: String,
    /// Full source text, returned verbatim on retrieval.
    pub text: String,
}

impl ProcedureDocument {
    /// Reads a manual: title on the first line, a `DOC-REF:` line, then
    /// optional `INTRODUZIONE`, `CODICI COMPONENTI` and step sections.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let title = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or_default()
            .to_string();
        let doc_ref = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("DOC-REF:"))
            .map(|r| r.trim().to_string())
            .filter(|r| !r.is_empty())
            .ok_or(CorpusError::MissingDocRef)?;

        #[derive(PartialEq)]
        enum Part {
            Head,
            Intro,
            Codes,
            Steps,
        }
        let mut part = Part::Head;
        let mut intro = Vec::new();
        let mut steps = Vec::new();
        let mut component_codes = BTreeMap::new();
        for line in text.lines() {
            let t = line.trim();
            if t.starts_with("INTRODUZIONE") {
                part = Part::Intro;
                continue;
            }
            if t.starts_with("CODICI COMPONENTI") {
                part = Part::Codes;
                continue;
            }
            if t.starts_with("PROCEDURA DI DIAGNOSI") || (part != Part::Steps && t.starts_with("Passo 1:")) {
                part = Part::Steps;
                if !t.starts_with("Passo") {
                    continue;
                }
            }
            match part {
                Part::Head => {}
                Part::Intro => intro.push(line),
                Part::Codes => {
                    if let Some(c) = COMPONENT_LINE.captures(t) {
                        component_codes.insert(c[2].to_string(), c[1].to_string());
                    }
                }
                Part::Steps => steps.push(line),
            }
        }
        Ok(Self {
            doc_ref,
            title,
            intro: intro.join("\n").trim().to_string(),
            component_codes,
            steps_text: steps.join("\n").trim().to_string(),
            text: text.to_string(),
        })
    }
}

/// Lowercased alphanumeric runs.
fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Strips one trailing vowel so singular/plural and gender variants meet.
fn stem(token: &str) -> &str {
    match token.char_indices().last() {
        Some((i, c)) if "aeiouàèéìòù".contains(c) && i >= 3 => &token[..i],
        _ => token,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<ProcedureDocument>,
    stopwords: HashSet<String>,
}

impl Corpus {
    pub fn new(docs: Vec<ProcedureDocument>, stopwords: &str) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_ref.clone()) {
                return Err(CorpusError::DuplicateDocRef(d.doc_ref.clone()));
            }
        }
        let mut docs = docs;
        docs.sort_by(|a, b| a.doc_ref.cmp(&b.doc_ref));
        let stopwords = stopwords
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Ok(Self { docs, stopwords })
    }

    pub fn docs(&self) -> &[ProcedureDocument] {
        &self.docs
    }

    pub fn get(&self, doc_ref: &str) -> Option<&ProcedureDocument> {
        self.docs.iter().find(|d| d.doc_ref == doc_ref)
    }

    /// Distinct content terms of a query, stemmed.
    pub fn query_terms(&self, query: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in tokens(query) {
            if t.chars().count() < 3 || self.stopwords.contains(&t) {
                continue;
            }
            let s = stem(&t).to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Total occurrences of the query terms in the document.
    pub fn score(&self, doc: &ProcedureDocument, query: &str) -> usize {
        let terms = self.query_terms(query);
        tokens(&doc.text).filter(|t| terms.iter().any(|q| stem(t) == q)).count()
    }

    /// Best document, ties going to the smaller doc_ref; `None` when nothing scores.
    pub fn best_match(&self, query: &str) -> Option<&ProcedureDocument> {
        let mut best: Option<(&ProcedureDocument, usize)> = None;
        for d in &self.docs {
            let s = self.score(d, query);
            if s > 0 && best.is_none_or(|(_, b)| s > b) {
                best = Some((d, s));
            }
        }
        best.map(|(d, _)| d)
    }

    pub fn retrieve(&self, query: &str) -> String {
        match self.best_match(query) {
            Some(d) => d.text.clone(),
            None => NO_MATCH.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRecord {
    pub code: String,
    pub name: String,
    pub manufacturer: String,
    pub specs: String,
}

#[derive(Debug, Clone, Default)]
pub struct PartCatalog {
    parts: Vec<PartRecord>,
}

impl PartCatalog {
    pub fn new(parts: Vec<PartRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for p in &parts {
            if !PART_CODE.is_match(&p.code) {
                return Err(CorpusError::Catalog(format!("malformed part code {:?}", p.code)));
            }
            if !seen.insert(p.code.clone()) {
                return Err(CorpusError::Catalog(format!("duplicate part code {:?}", p.code)));
            }
        }
        Ok(Self { parts })
    }

    pub fn parse(json: &str) -> Result<Self, CorpusError> {
        let parts: Vec<PartRecord> = serde_json::from_str(json).map_err(|e| CorpusError::Catalog(e.to_string()))?;
        Self::new(parts)
    }

    pub fn parts(&self) -> &[PartRecord] {
        &self.parts
    }

    pub fn find(&self, code: &str) -> Option<&PartRecord> {
        let code = code.trim();
        self.parts.iter().find(|p| p.code.eq_ignore_ascii_case(code))
    }

    pub fn describe(&self, code: &str) -> String {
        match self.find(code) {
            Some(p) => format!(
                "Codice: {}\nNome: {}\nProduttore: {}\nSpecifiche: {}",
                p.code, p.name, p.manufacturer, p.specs
            ),
            None => format!("Unknown part code: {}", code.trim()),
        }
    }
}

// ---- report -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub description: String,
    pub step_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityLog {
    pub problem: String,
    pub doc_ref: String,
    pub title: String,
    pub actions: Vec<Action>,
}

/// Splits free text into actions, each closed by a `[n]` marker. A leading
/// `- ` bullet is dropped and wrapped lines are joined with single spaces.
pub fn parse_actions(text: &str) -> Vec<Action> {
    ACTION
        .captures_iter(text)
        .filter_map(|c| {
            let step_id: u32 = c[2].parse().ok()?;
            let raw = c[1].trim();
            let raw = raw.strip_prefix('-').unwrap_or(raw);
            let description = raw.split_whitespace().collect::<Vec<_>>().join(" ");
            Some(Action { description, step_id })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("activity log has no actions")]
    NoActions,
    #[error("step ids must be positive")]
    ZeroStep,
}

pub fn render_report(log: &ActivityLog) -> Result<String, ReportError> {
    if log.actions.is_empty() {
        return Err(ReportError::NoActions);
    }
    if log.actions.iter().any(|a| a.step_id == 0) {
        return Err(ReportError::ZeroStep);
    }
    let mut out = String::from("REPORT INTERVENTO SVOLTO:\n\nProblema:\n");
    out.push_str(log.problem.trim());
    out.push_str("\n\nProcedura:\n");
    out.push_str(log.title.trim());
    out.push_str("\nDOC-REF: ");
    out.push_str(log.doc_ref.trim());
    out.push_str("\n\nAzioni svolte:\n");
    for a in &log.actions {
        let desc = a.description.trim().trim_end_matches('.');
        out.push_str(&format!("- {desc} [{}].\n", a.step_id));
    }
    Ok(out)
}

/// Where finished reports go.
pub trait ReportSink: Send + Sync {
    /// Stores the report and returns a human-readable location.
    fn write(&self, session_id: &str, text: &str) -> io::Result<String>;
}

pub fn report_file_name(session_id: &str) -> String {
    format!("report-{session_id}.txt")
}

#[derive(Debug, Clone)]
pub struct DirReportSink {
    pub dir: PathBuf,
}

impl DirReportSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ReportSink for DirReportSink {
    fn write(&self, session_id: &str, text: &str) -> io::Result<String> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(report_file_name(session_id));
        std::fs::write(&path, text)?;
        Ok(path.display().to_string())
    }
}

#[derive(Debug, Default)]
pub struct MemoryReportSink {
    reports: Mutex<BTreeMap<String, String>>,
}

impl MemoryReportSink {
    pub fn get(&self, session_id: &str) -> Option<String> {
        self.reports.lock().unwrap().get(session_id).cloned()
    }
}

impl ReportSink for MemoryReportSink {
    fn write(&self, session_id: &str, text: &str) -> io::Result<String> {
        self.reports
            .lock()
            .unwrap()
            .insert(session_id.to_string(), text.to_string());
        Ok(format!("memory:{}", report_file_name(session_id)))
    }
}

// ---- tool wiring ------------------------------------------------------------

pub fn retrieve_instructions_spec() -> ToolSpec {
    ToolSpec::new(
        "retrieve_troubleshooting_instructions",
        "Retrieve the troubleshooting procedure that best matches the user's problem description.",
    )
    .param(ParamSpec::new(
        "query",
        ParamKind::String,
        "The problem as described by the user.",
        true,
    ))
    .returns("Full procedure text, or a notice that nothing matched.")
}

pub fn retrieve_part_spec() -> ToolSpec {
    ToolSpec::new(
        "retrieve_part_details",
        "Look up a component in the part catalog by its code.",
    )
    .param(ParamSpec::new(
        "device_code",
        ParamKind::String,
        "Component code, e.g. CNV-NT2024-A.",
        true,
    ))
    .returns("Part name, manufacturer and specifications.")
}

pub fn handoff_report_spec() -> ToolSpec {
    ToolSpec::new(
        "handoff_report",
        "Transfer control to the Troubleshooting Report Agent once the procedure is complete.",
    )
    .returns("Confirmation of the transfer.")
}

pub fn build_report_spec() -> ToolSpec {
    let text = |n: &str, d: &str| ParamSpec::new(n, ParamKind::String, d, true);
    ToolSpec::new(
        "build_report",
        "Build the final intervention report in plain text and save it for the session.",
    )
    .param(text("problem", "Initial problem as described by the user."))
    .param(text("title", "Title of the troubleshooting document used."))
    .param(text("doc_ref", "Reference number of the troubleshooting document."))
    .param(text(
        "activities_done",
        "Actions performed, one per line, each ending with the step ID as [step_id].",
    ))
    .returns("The report text.")
}

struct RetrieveInstructions(Arc<Corpus>, ToolSpec);
struct RetrievePart(Arc<PartCatalog>, ToolSpec);
struct HandoffReport(ToolSpec);
struct BuildReport(Arc<dyn ReportSink>, ToolSpec);

fn str_arg<'a>(args: &'a ArgMap, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or_default()
}

impl Tool for RetrieveInstructions {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        ToolOutput::text(self.0.retrieve(str_arg(args, "query")))
    }
}

impl Tool for RetrievePart {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        ToolOutput::text(self.0.describe(str_arg(args, "device_code")))
    }
}

impl Tool for HandoffReport {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn invoke(&self, _: &ArgMap, _: &CallContext<'_>) -> ToolOutput {
        ToolOutput::handoff(REPORT_AGENT, format!("Control transferred to {REPORT_AGENT}."))
    }
}

impl Tool for BuildReport {
    fn spec(&self) -> &ToolSpec {
        &self.1
    }

    fn invoke(&self, args: &ArgMap, ctx: &CallContext<'_>) -> ToolOutput {
        let log = ActivityLog {
            problem: str_arg(args, "problem").to_string(),
            title: str_arg(args, "title").to_string(),
            doc_ref: str_arg(args, "doc_ref").to_string(),
            actions: parse_actions(str_arg(args, "activities_done")),
        };
        let text = match render_report(&log) {
            Ok(t) => t,
            Err(e) => return ToolOutput::error(format!("cannot build report: {e}")),
        };
        match self.0.write(ctx.session_id, &text) {
            Ok(_) => ToolOutput {
                ends_session: true,
                ..ToolOutput::text(text)
            },
            Err(e) => ToolOutput::error(format!("cannot save report: {e}")),
        }
    }
}

pub struct TroubleshootingTools {
    pub corpus: Arc<Corpus>,
    pub catalog: Arc<PartCatalog>,
    pub sink: Arc<dyn ReportSink>,
}

impl TroubleshootingTools {
    pub fn register_into(&self, registry: &mut ToolRegistry) -> Result<(), RegistryError> {
        registry.register(RetrieveInstructions(self.corpus.clone(), retrieve_instructions_spec()))?;
        registry.register(RetrievePart(self.catalog.clone(), retrieve_part_spec()))?;
        registry.register(HandoffReport(handoff_report_spec()))?;
        registry.register(BuildReport(self.sink.clone(), build_report_spec()))
    }
}
