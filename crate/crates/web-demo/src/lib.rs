//! In-browser demo over the core crate. Everything runs locally: there is no
//! model call, only the deterministic parts (procedure graphs, station search,
//! routine linting).
//!
//! The `*_json` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only turn errors into JS exceptions.

use std::sync::OnceLock;

use convroutine::bundled;
use convroutine::procedure::{emit_flowchart, extract_report_steps, parse_procedure, validate_trace};
use convroutine::routines::{parse_routine, referenced_tools, validate_routine};
use convroutine::scenario::{Scenario, ScenarioKind, ScenarioOptions};
use convroutine::train::{search_railway_station, StationDataset};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

pub const DEFAULT_PAGE_SIZE: usize = 5;

fn stations() -> &'static StationDataset {
    static STATIONS: OnceLock<StationDataset> = OnceLock::new();
    STATIONS.get_or_init(bundled::stations)
}

/// Mermaid source for a procedure manual.
pub fn flowchart_text(procedure: &str) -> Result<String, String> {
    parse_procedure(procedure)
        .map(|g| emit_flowchart(&g))
        .map_err(|e| e.to_string())
}

/// Checks the `[N]` step markers of a report against a procedure.
pub fn check_trace_json(procedure: &str, report: &str) -> Result<Value, String> {
    let graph = parse_procedure(procedure).map_err(|e| e.to_string())?;
    let steps = extract_report_steps(report);
    let v = validate_trace(&graph, &steps);
    let summary = match (&v.first_violation, v.valid) {
        (_, true) if v.reached_terminal => "valid, reaches the end of the procedure".to_string(),
        (_, true) => "valid, stops before the end".to_string(),
        (Some(x), false) => match x.from {
            Some(from) => format!("step {} cannot follow step {from}", x.to),
            None => format!("starts at {} instead of {}", x.to, graph.start_id),
        },
        (None, false) => "no [N] step markers found".to_string(),
    };
    Ok(json!({
        "steps": steps,
        "valid": v.valid,
        "reached_terminal": v.reached_terminal,
        "violation_index": v.first_violation.map(|x| x.index),
        "summary": summary,
    }))
}

/// One page of the bundled station search, as the agent would see it.
pub fn station_page(query: &str, page: i64) -> String {
    search_railway_station(stations(), query, page, DEFAULT_PAGE_SIZE)
}

/// Lints a routine against the tools of a bundled agent.
pub fn check_routine_json(routine: &str, agent: &str) -> Result<Value, String> {
    let opts = ScenarioOptions::default();
    let scenario = [ScenarioKind::Booking, ScenarioKind::Troubleshooting]
        .iter()
        .map(|k| Scenario::build(k, &opts).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .find(|s| s.agents.contains(agent))
        .ok_or_else(|| format!("unknown agent {agent:?}"))?;
    let def = scenario.agents.get(agent).expect("found above");
    let tools = scenario.registry.restricted_to(&def.tool_names);
    let doc = parse_routine(routine).map_err(|e| e.to_string())?;
    let findings = validate_routine(&doc, &tools);
    Ok(json!({
        "sections": doc.headers().collect::<Vec<_>>(),
        "references": referenced_tools(&doc).into_iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "findings": findings,
    }))
}

/// Bundled texts to prefill the page with.
pub fn samples_json() -> Value {
    json!({
        "procedure": bundled::CONVEYOR_MANUAL,
        "report": bundled::SAMPLE_REPORT,
        "routines": {
            "Train Booking Agent": bundled::BOOKING_ROUTINE,
            "Troubleshooting Assistant Agent": bundled::TS_ASSISTANT_ROUTINE,
            "Troubleshooting Report Agent": bundled::TS_REPORT_ROUTINE,
        },
    })
}

#[wasm_bindgen]
pub fn flowchart(procedure: &str) -> Result<String, JsError> {
    flowchart_text(procedure).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = checkTrace)]
pub fn check_trace(procedure: &str, report: &str) -> Result<String, JsError> {
    check_trace_json(procedure, report)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = searchStations)]
pub fn search_stations(query: &str, page: i32) -> String {
    station_page(query, page.into())
}

#[wasm_bindgen(js_name = checkRoutine)]
pub fn check_routine(routine: &str, agent: &str) -> Result<String, JsError> {
    check_routine_json(routine, agent)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn samples() -> String {
    samples_json().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_report_is_valid() {
        let v = check_trace_json(bundled::CONVEYOR_MANUAL, bundled::SAMPLE_REPORT).unwrap();
        assert_eq!(v["valid"], true);
        assert_eq!(v["steps"][0], 1);
    }

    #[test]
    fn station_numbering_continues_across_pages() {
        let p2 = station_page("Genova", 2);
        assert!(p2.contains("(Page 2 of"), "{p2}");
        assert!(p2.contains("\n6. "), "{p2}");
    }
}
