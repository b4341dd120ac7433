use std::io::Cursor;
use std::sync::Arc;

use convroutine::backend::{parse_script, ScriptedBackend};
use convroutine::bundled;
use convroutine::clock::FixedClock;
use convroutine::orchestrator::SessionStatus;
use convroutine::replay::{run_dialog, ReplayInputs};
use convroutine::scenario::{Scenario, ScenarioKind, ScenarioOptions};
use convroutine::telemetry::{EventStore, JsonlStore, MemoryStore};
use convroutine::troubleshooting::{report_file_name, DirReportSink};
use convroutine_service::repl::{Repl, ReplOptions, ReplSummary};

fn setup(inputs: &str, kind: ScenarioKind, opts: ScenarioOptions) -> (ReplayInputs, Scenario) {
    let inputs = ReplayInputs::parse(inputs).unwrap();
    let opts = inputs.apply(opts).unwrap();
    let scenario = Scenario::build(&kind, &opts).unwrap();
    (inputs, scenario)
}

fn repl<'a>(scenario: &'a Scenario, script: &str, store: Arc<dyn EventStore>, id: &str, echo: bool) -> Repl<'a> {
    Repl {
        scenario,
        backend: Arc::new(ScriptedBackend::new(parse_script(script).unwrap())),
        store,
        clock: Arc::new(FixedClock::parse("2024-12-18T18:40:00+01:00").unwrap()),
        session_id: id.to_string(),
        options: ReplOptions { color: false, echo },
    }
}

fn run(r: &Repl, input: &str) -> (ReplSummary, String) {
    let mut out = Vec::new();
    let summary = r.run(Cursor::new(input.to_string()), &mut out).unwrap();
    (summary, String::from_utf8(out).unwrap())
}

#[test]
fn quit_right_away() {
    let (_, scenario) = setup(
        bundled::BOOKING_INPUTS,
        ScenarioKind::Booking,
        ScenarioOptions::default(),
    );
    let store = Arc::new(MemoryStore::default());
    let r = repl(&scenario, bundled::BOOKING_SCRIPT, store.clone(), "q1", false);
    let (summary, out) = run(&r, "/quit\nnever read\n");
    assert_eq!(summary.turns, 0);
    assert!(
        out.ends_with("session open: 0 turn(s), 0 backend call(s), 0 tokens\n"),
        "{out}"
    );
    assert!(store.load("q1").is_err() || store.load("q1").unwrap().is_empty());
}

#[test]
fn piped_booking_matches_replay_transcript() {
    let (inputs, scenario) = setup(
        bundled::BOOKING_INPUTS,
        ScenarioKind::Booking,
        ScenarioOptions::default(),
    );
    let piped = inputs.messages.join("\n") + "\n";
    let store = Arc::new(MemoryStore::default());
    let r = repl(&scenario, bundled::BOOKING_SCRIPT, store.clone(), "piped", true);
    let (summary, out) = run(&r, &piped);

    let backend = ScriptedBackend::new(parse_script(bundled::BOOKING_SCRIPT).unwrap());
    let report = run_dialog(
        &scenario,
        &backend,
        &inputs.messages,
        "ref",
        Arc::new(MemoryStore::default()),
        scenario_clock(),
    );
    let expected = format!(
        "{}session open: 10 turn(s), 14 backend call(s), {} tokens\n",
        report.transcript(),
        report.session.total_tokens()
    );
    assert_eq!(out, expected);
    assert_eq!(summary.backend_calls, 14);
    assert_eq!(summary.total_tokens, 36208);
    // Usage events plus a closing session_end.
    let events = store.load("piped").unwrap();
    assert_eq!(events.last().unwrap().body.kind(), "session_end");
}

fn scenario_clock() -> Arc<dyn convroutine::clock::Clock> {
    Arc::new(FixedClock::parse("2024-12-18T18:40:00+01:00").unwrap())
}

#[test]
fn interactive_mode_prompts_and_hides_echo() {
    let (inputs, scenario) = setup(
        bundled::BOOKING_INPUTS,
        ScenarioKind::Booking,
        ScenarioOptions::default(),
    );
    let r = repl(
        &scenario,
        bundled::BOOKING_SCRIPT,
        Arc::new(MemoryStore::default()),
        "i",
        false,
    );
    let (_, out) = run(&r, &format!("{}\n", inputs.messages[0]));
    assert!(out.starts_with("> "));
    assert!(!out.contains("USER:"));
    assert!(out.contains("Da quale stazione partirai?"));
}

#[test]
fn backend_error_keeps_the_session_going() {
    let (_, scenario) = setup(
        bundled::BOOKING_INPUTS,
        ScenarioKind::Booking,
        ScenarioOptions::default(),
    );
    // An empty script fails every call.
    let r = repl(&scenario, "[]", Arc::new(MemoryStore::default()), "e", true);
    let (summary, out) = run(&r, "ciao\nancora\n");
    assert_eq!(summary.turns, 2);
    assert_eq!(summary.status, SessionStatus::Open);
    assert_eq!(out.matches("ERROR: backend error").count(), 2, "{out}");
}

#[test]
fn troubleshooting_run_writes_report_and_stops() {
    let dir = tempfile::tempdir().unwrap();
    let reports = dir.path().join("reports");
    let opts = ScenarioOptions {
        report_sink: Arc::new(DirReportSink::new(&reports)),
        ..ScenarioOptions::default()
    };
    let (inputs, scenario) = setup(bundled::TROUBLESHOOTING_INPUTS, ScenarioKind::Troubleshooting, opts);
    let store = Arc::new(JsonlStore::open(dir.path()).unwrap());
    let r = repl(
        &scenario,
        bundled::TROUBLESHOOTING_SCRIPT,
        store.clone(),
        "trouble1",
        true,
    );
    let piped = inputs.messages.join("\n") + "\nnon letto\n";
    let (summary, out) = run(&r, &piped);
    assert_eq!(summary.status, SessionStatus::Completed);
    assert_eq!(summary.turns, inputs.messages.len());
    assert!(!out.contains("non letto"));
    let report = std::fs::read_to_string(reports.join(report_file_name("trouble1"))).unwrap();
    assert!(report.contains("DOC-REF: MNT-CNV-2024-IT-001"), "{report}");
    assert!(!convroutine::procedure::extract_report_steps(&report).is_empty());
    assert_eq!(
        store.load("trouble1").unwrap().last().unwrap().body.kind(),
        "session_end"
    );
}
