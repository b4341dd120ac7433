mod common;

use std::sync::Arc;

use convroutine::backend::{parse_script, ScriptedBackend};
use convroutine::bundled;
use convroutine::clock::FixedClock;
use convroutine::orchestrator::SessionStatus;
use convroutine::procedure::{extract_report_steps, parse_procedure, validate_trace};
use convroutine::replay::{replay_succeeded, run_dialog, ReplayInputs};
use convroutine::routines::{validate_routine, Severity};
use convroutine::scenario::{Scenario, ScenarioOptions};
use convroutine::telemetry::{
    detect_redundant_calls, export_session, first_prompt_decrease, import_session, usage_series, EventBody, EventStore,
    JsonlStore, MemoryStore,
};
use convroutine::troubleshooting::{DirReportSink, ReportSink, REPORT_AGENT};

#[test]
fn booking_dialog_books_once() {
    let r = common::booking_replay();
    assert!(replay_succeeded(&r), "{}", r.transcript());
    assert_eq!(r.calls_named("search_railway_station").len(), 4);
    assert_eq!(r.calls_named("get_date_time").len(), 1);
    let booked = r.calls_named("book_train_ticket");
    assert_eq!(booked.len(), 1);
    let args = booked[0].parse_arguments().unwrap();
    assert_eq!(args["departure_city_station"], "Genova Nervi");
    assert_eq!(args["destination_city_station"], "Roma Termini");
    assert_eq!(args["departure_date"], "2024-12-19");
    assert_eq!(args["departure_time"], "06:00");
    assert_eq!(args["passenger_count"], 1);
    assert_eq!(args["travel_class"], "1st");
    assert!(r.final_text().unwrap().contains("Genova Nervi"));
}

#[test]
fn booking_dialog_is_deterministic() {
    let a = common::booking_replay();
    let b = common::booking_replay();
    assert_eq!(a.events, b.events);
    assert_eq!(a.transcript(), b.transcript());
}

#[test]
fn troubleshooting_dialog_persists_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let sink: Arc<dyn ReportSink> = Arc::new(DirReportSink::new(dir.path()));
    let store = Arc::new(JsonlStore::open(dir.path().join("sessions")).unwrap());
    let r = common::replay(
        bundled::TROUBLESHOOTING_SCRIPT,
        bundled::TROUBLESHOOTING_INPUTS,
        store.clone(),
        Some(sink),
        "ts-1",
    );
    assert!(replay_succeeded(&r), "{}", r.transcript());
    assert_eq!(r.handoffs(), vec![REPORT_AGENT]);
    assert_eq!(r.session.status, SessionStatus::Completed);

    let report = std::fs::read_to_string(dir.path().join("report-ts-1.txt")).unwrap();
    assert!(report.starts_with("REPORT INTERVENTO SVOLTO:"));
    let steps = extract_report_steps(&report);
    assert_eq!(steps, vec![1, 2, 3, 4, 6, 13]);
    let v = validate_trace(&parse_procedure(bundled::CONVEYOR_MANUAL).unwrap(), &steps);
    assert!(v.valid && !v.reached_terminal);

    // The on-disk log reloads to the same events and survives export/import.
    let loaded = store.load("ts-1").unwrap();
    assert_eq!(loaded, r.events);
    let bytes = export_session("ts-1", &loaded);
    assert!(bytes.starts_with(br#"{"schema_version":1"#));
    assert_eq!(import_session(&bytes).unwrap(), ("ts-1".to_string(), loaded));
}

#[test]
fn usage_series_matches_fixture() {
    let r = common::booking_replay();
    let series = usage_series(&r.events);
    assert_eq!(series.len(), 14);
    assert_eq!(series.first().unwrap().prompt_tokens, 2013);
    assert_eq!(series.last().unwrap().prompt_tokens, 3644);
    assert_eq!(first_prompt_decrease(&series), None);
    let total: u64 = series.iter().map(|p| p.total_tokens).sum();
    assert_eq!(total, 36_208);
    match &r.events.last().unwrap().body {
        EventBody::SessionEnd { total_tokens, .. } => assert_eq!(*total_tokens, total),
        other => panic!("last event is {other:?}"),
    }
}

#[test]
fn every_fixture_has_growing_prompts() {
    for script in [
        bundled::BOOKING_SCRIPT,
        bundled::TROUBLESHOOTING_SCRIPT,
        bundled::TROUBLESHOOTING_REPEAT_SCRIPT,
    ] {
        let prompts: Vec<u64> = parse_script(script)
            .unwrap()
            .iter()
            .map(|s| s.synthetic_usage.prompt_tokens)
            .collect();
        assert!(prompts.windows(2).all(|w| w[0] <= w[1]), "{prompts:?}");
    }
}

#[test]
fn redundancy_only_in_the_repeat_variant() {
    let clean = common::booking_replay();
    assert!(detect_redundant_calls(&clean.events).is_empty());

    let ts = common::replay(
        bundled::TROUBLESHOOTING_SCRIPT,
        bundled::TROUBLESHOOTING_INPUTS,
        Arc::new(MemoryStore::default()),
        None,
        "ts-clean",
    );
    assert!(detect_redundant_calls(&ts.events).is_empty());

    let repeat = common::replay(
        bundled::TROUBLESHOOTING_REPEAT_SCRIPT,
        bundled::TROUBLESHOOTING_REPEAT_INPUTS,
        Arc::new(MemoryStore::default()),
        None,
        "ts-repeat",
    );
    assert!(replay_succeeded(&repeat), "{}", repeat.transcript());
    let flags = detect_redundant_calls(&repeat.events);
    assert_eq!(flags.len(), 1, "{flags:?}");
    let flagged = repeat.events.iter().find(|e| e.seq == flags[0].seq).unwrap();
    match &flagged.body {
        EventBody::ToolCall { name, arguments, .. } => {
            assert_eq!(name, "retrieve_part_details");
            assert!(arguments.contains("CNV-NT2024-A"));
        }
        other => panic!("flagged {other:?}"),
    }
}

#[test]
fn routines_validate_and_each_removal_costs_one_error() {
    let opts = ScenarioOptions::default();
    for s in [
        Scenario::booking(&opts).unwrap(),
        Scenario::troubleshooting(&opts).unwrap(),
    ] {
        for agent in s.agents.iter() {
            let own = s.registry.restricted_to(&agent.tool_names);
            let findings = validate_routine(&agent.routine, &own);
            assert!(findings.is_empty(), "{}: {findings:?}", agent.name);
            for tool in own.names() {
                let errors: Vec<_> = validate_routine(&agent.routine, &own.without(tool))
                    .into_iter()
                    .filter(|f| f.severity == Severity::Error)
                    .collect();
                assert_eq!(errors.len(), 1, "{} without {tool}: {errors:?}", agent.name);
                assert_eq!(errors[0].tool, tool);
            }
        }
    }
}

#[test]
fn mismatched_expectation_stops_the_replay() {
    let mut steps = parse_script(bundled::BOOKING_SCRIPT).unwrap();
    steps[0] = steps[0].clone().expecting("this text never appears");
    let inputs = ReplayInputs::parse(bundled::BOOKING_INPUTS).unwrap();
    let opts = inputs.apply(ScenarioOptions::default()).unwrap();
    let scenario = Scenario::booking(&opts).unwrap();
    let clock = Arc::new(FixedClock::parse(inputs.now.as_deref().unwrap()).unwrap());
    let r = run_dialog(
        &scenario,
        &ScriptedBackend::new(steps),
        &inputs.messages,
        "bad",
        Arc::new(MemoryStore::default()),
        clock,
    );
    assert!(!replay_succeeded(&r));
    let (turn, message) = r.first_error().unwrap();
    assert_eq!(turn, 0);
    assert!(message.contains("this text never appears"), "{message}");
    assert_eq!(r.skipped_inputs, inputs.messages.len() - 1);
}

#[test]
fn empty_inputs_with_empty_script() {
    let scenario = Scenario::booking(&ScenarioOptions::default()).unwrap();
    let r = run_dialog(
        &scenario,
        &ScriptedBackend::new(Vec::new()),
        &[],
        "empty",
        Arc::new(MemoryStore::default()),
        Arc::new(FixedClock::parse("2024-12-18T10:00:00+01:00").unwrap()),
    );
    assert!(replay_succeeded(&r));
    assert!(r.events.is_empty());
}
