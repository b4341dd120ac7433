//! Data shipped inside the crate: agent routines and manifests, the station
//! list, fares, part catalog, procedure manual and replay fixtures.

use crate::backend::{parse_script, ScriptStep};
use crate::train::{FareTable, StationDataset};
use crate::troubleshooting::{Corpus, PartCatalog, ProcedureDocument};

pub const BOOKING_ROUTINE: &str = include_str!("../data/agents/train_booking.routine.txt");
pub const TS_ASSISTANT_ROUTINE: &str = include_str!("../data/agents/ts_assistant.routine.txt");
pub const TS_REPORT_ROUTINE: &str = include_str!("../data/agents/ts_report.routine.txt");

pub const BOOKING_MANIFEST: &str = include_str!("../data/agents/train_booking.agent.json");
pub const TS_ASSISTANT_MANIFEST: &str = include_str!("../data/agents/ts_assistant.agent.json");
pub const TS_REPORT_MANIFEST: &str = include_str!("../data/agents/ts_report.agent.json");

pub const STATIONS: &str = include_str!("../data/stations.txt");
pub const FARES: &str = include_str!("../data/fares.json");
pub const PARTS: &str = include_str!("../data/parts.json");
pub const STOPWORDS: &str = include_str!("../data/stopwords.txt");
pub const CONVEYOR_MANUAL: &str = include_str!("../data/procedures/MNT-CNV-2024-IT-001.proc.txt");
pub const SAMPLE_REPORT: &str = include_str!("../data/reports/sample-report.txt");

pub const BOOKING_SCRIPT: &str = include_str!("../data/scripts/booking.script.json");
pub const BOOKING_INPUTS: &str = include_str!("../data/scripts/booking.inputs.json");
pub const TROUBLESHOOTING_SCRIPT: &str = include_str!("../data/scripts/troubleshooting.script.json");
pub const TROUBLESHOOTING_INPUTS: &str = include_str!("../data/scripts/troubleshooting.inputs.json");
/// Same dialog with a second lookup of the same part code.
pub const TROUBLESHOOTING_REPEAT_SCRIPT: &str = include_str!("../data/scripts/troubleshooting-repeat.script.json");
pub const TROUBLESHOOTING_REPEAT_INPUTS: &str = include_str!("../data/scripts/troubleshooting-repeat.inputs.json");

/// Routine text for a manifest's `routine_path`, by file name.
pub fn routine_by_path(path: &str) -> Option<&'static str> {
    let file = path.rsplit(['/', '\\']).next().unwrap_or(path);
    match file {
        "train_booking.routine.txt" => Some(BOOKING_ROUTINE),
        "ts_assistant.routine.txt" => Some(TS_ASSISTANT_ROUTINE),
        "ts_report.routine.txt" => Some(TS_REPORT_ROUTINE),
        _ => None,
    }
}

pub fn stations() -> StationDataset {
    StationDataset::parse(STATIONS).expect("bundled stations are unique")
}

pub fn fares() -> FareTable {
    FareTable::parse(FARES).expect("bundled fares parse")
}

pub fn parts() -> PartCatalog {
    PartCatalog::parse(PARTS).expect("bundled parts parse")
}

pub fn corpus() -> Corpus {
    let doc = ProcedureDocument::parse(CONVEYOR_MANUAL).expect("bundled manual has a DOC-REF");
    Corpus::new(vec![doc], STOPWORDS).expect("one document")
}

pub fn booking_script() -> Vec<ScriptStep> {
    parse_script(BOOKING_SCRIPT).expect("bundled booking script parses")
}

pub fn troubleshooting_script() -> Vec<ScriptStep> {
    parse_script(TROUBLESHOOTING_SCRIPT).expect("bundled troubleshooting script parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_load() {
        let s = stations();
        assert!(s.len() >= 50);
        assert_eq!(s.matches("genova").len(), 10);
        assert_eq!(s.matches("roma").len(), 10);
        assert_eq!(s.matches("roma")[7], "Roma Termini");
        assert_eq!(parts().parts().len(), 8);
        assert_eq!(corpus().docs().len(), 1);
        assert_eq!(routine_by_path("agents/ts_report.routine.txt"), Some(TS_REPORT_ROUTINE));
    }

    #[test]
    fn scripts_parse() {
        assert_eq!(booking_script().len(), 14);
        assert!(!troubleshooting_script().is_empty());
        parse_script(TROUBLESHOOTING_REPEAT_SCRIPT).unwrap();
    }
}
