//! Helpers and hand-written oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use convroutine::backend::{parse_script, ScriptedBackend};
use convroutine::bundled;
use convroutine::clock::{Clock, FixedClock};
use convroutine::replay::{run_dialog, ReplayInputs, ReplayReport};
use convroutine::scenario::{Scenario, ScenarioOptions};
use convroutine::telemetry::{EventStore, MemoryStore};
use convroutine::troubleshooting::ReportSink;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn read_fixture(rel: &str) -> Vec<u8> {
    std::fs::read(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Runs a bundled script/inputs pair. `sink` replaces the in-memory report
/// sink when given.
pub fn replay(
    script: &str,
    inputs: &str,
    store: Arc<dyn EventStore>,
    sink: Option<Arc<dyn ReportSink>>,
    session_id: &str,
) -> ReplayReport {
    let inputs = ReplayInputs::parse(inputs).expect("inputs parse");
    let mut opts = inputs.apply(ScenarioOptions::default()).expect("inputs apply");
    if let Some(sink) = sink {
        opts.report_sink = sink;
    }
    let kind = inputs.scenario.as_deref().unwrap_or("booking");
    let scenario = Scenario::build(&convroutine::scenario::ScenarioKind::parse(kind).unwrap(), &opts).unwrap();
    let backend = ScriptedBackend::new(parse_script(script).expect("script parses"));
    let clock: Arc<dyn Clock> = match &inputs.now {
        Some(now) => Arc::new(FixedClock::parse(now).unwrap()),
        None => opts.clock.clone(),
    };
    run_dialog(&scenario, &backend, &inputs.messages, session_id, store, clock)
}

pub fn booking_replay() -> ReplayReport {
    replay(
        bundled::BOOKING_SCRIPT,
        bundled::BOOKING_INPUTS,
        Arc::new(MemoryStore::default()),
        None,
        "booking-1",
    )
}

/// Successor sets of the conveyor manual, read off the text by hand.
///
/// Explicit "Passo N" references give the edges. A step with no reference, or
/// whose only references are one conditional target, also continues to the
/// next step; step 18 ends the procedure.
pub fn conveyor_successors() -> BTreeMap<u32, BTreeSet<u32>> {
    let table: [(u32, &[u32]); 18] = [
        (1, &[2]),
        (2, &[3, 7]),
        (3, &[4]),
        (4, &[5, 6]),
        (5, &[6]),
        (6, &[12, 13]),
        (7, &[8, 9]),
        (8, &[13]),
        (9, &[10, 11]),
        (10, &[13]),
        (11, &[12, 13]),
        (12, &[13]),
        (13, &[2, 14]),
        (14, &[15, 16]),
        (15, &[16]),
        (16, &[17]),
        (17, &[2, 18]),
        (18, &[]),
    ];
    table
        .iter()
        .map(|(id, next)| (*id, next.iter().copied().collect()))
        .collect()
}

/// Oracle verdict for a trace: `None` when valid, else the index of the first
/// offending element.
pub fn oracle_first_violation(succ: &BTreeMap<u32, BTreeSet<u32>>, trace: &[u32]) -> Option<usize> {
    match trace.first() {
        None => None,
        Some(&1) => (1..trace.len()).find(|&i| !succ[&trace[i - 1]].contains(&trace[i])),
        Some(_) => Some(0),
    }
}

/// Every walk from step 1 with at most `max_len` steps.
pub fn all_walks(succ: &BTreeMap<u32, BTreeSet<u32>>, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut frontier = vec![vec![1u32]];
    while let Some(walk) = frontier.pop() {
        if walk.len() < max_len {
            for &n in &succ[walk.last().unwrap()] {
                let mut next = walk.clone();
                next.push(n);
                frontier.push(next);
            }
        }
        out.push(walk);
    }
    out.sort();
    out
}

/// Expected match list: every query word must be a case-insensitive
/// substring of the name; dataset order is kept.
pub fn oracle_matches<'a>(names: &'a [String], query: &str) -> Vec<&'a str> {
    let words: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() {
        return Vec::new();
    }
    names
        .iter()
        .filter(|n| {
            let low = n.to_lowercase();
            words.iter().all(|w| low.contains(w.as_str()))
        })
        .map(String::as_str)
        .collect()
}
