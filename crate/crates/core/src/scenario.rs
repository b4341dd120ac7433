//! Ready-to-run agent setups: the bundled booking and troubleshooting
//! scenarios, and custom ones loaded from agent manifests on disk.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundled;
use crate::clock::{Clock, SystemClock};
use crate::orchestrator::{AgentSet, AgentSetError};
use crate::routines::{parse_routine, RoutineError};
use crate::tools::{RegistryError, ToolRegistry};
use crate::train::{FareTable, StationDataset, TrainBackend, DEFAULT_PAGE_SIZE};
use crate::troubleshooting::{Corpus, MemoryReportSink, PartCatalog, ReportSink, TroubleshootingTools};
use crate::types::AgentDefinition;

pub const BOOKING_AGENT: &str = "Train Booking Agent";
pub const TS_ASSISTANT_AGENT: &str = "Troubleshooting Assistant Agent";

/// On-disk agent description; the routine prose lives in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub name: String,
    pub routine_path: String,
    pub tools: Vec<String>,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("routine for {agent}: {source}")]
    Routine {
        agent: String,
        #[source]
        source: RoutineError,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Agents(#[from] AgentSetError),
    #[error("unknown scenario {0:?} (expected booking, troubleshooting or a manifest path)")]
    UnknownScenario(String),
    #[error("no manifests given")]
    NoAgents,
}

impl AgentManifest {
    pub fn parse(json: &str, origin: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(json).map_err(|e| ScenarioError::Manifest {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn into_agent(self, routine_text: &str) -> Result<AgentDefinition, ScenarioError> {
        let routine = parse_routine(routine_text).map_err(|source| ScenarioError::Routine {
            agent: self.name.clone(),
            source,
        })?;
        Ok(AgentDefinition {
            name: self.name,
            routine,
            tool_names: self.tools,
            model: self.model,
            temperature: self.temperature,
        })
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a manifest and its routine file (resolved relative to the manifest).
pub fn load_agent(manifest_path: &Path) -> Result<AgentDefinition, ScenarioError> {
    let origin = manifest_path.display().to_string();
    let manifest = AgentManifest::parse(&read(manifest_path)?, &origin)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let routine = read(&base.join(&manifest.routine_path))?;
    manifest.into_agent(&routine)
}

fn bundled_agent(manifest: &str) -> AgentDefinition {
    let m = AgentManifest::parse(manifest, "bundled").expect("bundled manifest parses");
    let routine = bundled::routine_by_path(&m.routine_path).expect("bundled routine exists");
    m.into_agent(routine).expect("bundled routine parses")
}

pub fn booking_agent() -> AgentDefinition {
    bundled_agent(bundled::BOOKING_MANIFEST)
}

pub fn ts_assistant_agent() -> AgentDefinition {
    bundled_agent(bundled::TS_ASSISTANT_MANIFEST)
}

pub fn ts_report_agent() -> AgentDefinition {
    bundled_agent(bundled::TS_REPORT_MANIFEST)
}

/// Knobs shared by all tools of a scenario.
#[derive(Clone)]
pub struct ScenarioOptions {
    pub clock: Arc<dyn Clock>,
    pub seed: u64,
    pub page_size: usize,
    pub default_tz: Tz,
    pub stations: Arc<StationDataset>,
    pub fares: Arc<FareTable>,
    pub corpus: Arc<Corpus>,
    pub catalog: Arc<PartCatalog>,
    pub report_sink: Arc<dyn ReportSink>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            seed: 0,
            page_size: DEFAULT_PAGE_SIZE,
            default_tz: chrono_tz::Europe::Rome,
            stations: Arc::new(bundled::stations()),
            fares: Arc::new(bundled::fares()),
            corpus: Arc::new(bundled::corpus()),
            catalog: Arc::new(bundled::parts()),
            report_sink: Arc::new(MemoryReportSink::default()),
        }
    }
}

impl ScenarioOptions {
    pub fn train_backend(&self) -> TrainBackend {
        TrainBackend {
            dataset: self.stations.clone(),
            fares: self.fares.clone(),
            clock: self.clock.clone(),
            default_tz: self.default_tz,
            seed: self.seed,
            page_size: self.page_size,
        }
    }

    pub fn troubleshooting_tools(&self) -> TroubleshootingTools {
        TroubleshootingTools {
            corpus: self.corpus.clone(),
            catalog: self.catalog.clone(),
            sink: self.report_sink.clone(),
        }
    }

    /// Every built-in tool, for scenarios assembled from manifests.
    pub fn full_registry(&self) -> Result<ToolRegistry, RegistryError> {
        let mut r = ToolRegistry::new();
        self.train_backend().register_into(&mut r)?;
        self.troubleshooting_tools().register_into(&mut r)?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioKind {
    Booking,
    Troubleshooting,
    Manifests(Vec<PathBuf>),
}

impl ScenarioKind {
    /// `booking`, `troubleshooting`, or a comma-separated list of manifest
    /// paths (the first one is the entry agent).
    pub fn parse(s: &str) -> Result<Self, ScenarioError> {
        match s.trim() {
            "booking" => Ok(Self::Booking),
            "troubleshooting" => Ok(Self::Troubleshooting),
            "" => Err(ScenarioError::UnknownScenario(s.to_string())),
            other if other.ends_with(".json") => Ok(Self::Manifests(
                other.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            )),
            other => Err(ScenarioError::UnknownScenario(other.to_string())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Booking => "booking".into(),
            Self::Troubleshooting => "troubleshooting".into(),
            Self::Manifests(paths) => paths
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

pub struct Scenario {
    pub name: String,
    pub registry: ToolRegistry,
    pub agents: AgentSet,
    pub entry_agent: String,
}

impl Scenario {
    pub fn build(kind: &ScenarioKind, opts: &ScenarioOptions) -> Result<Self, ScenarioError> {
        match kind {
            ScenarioKind::Booking => Self::booking(opts),
            ScenarioKind::Troubleshooting => Self::troubleshooting(opts),
            ScenarioKind::Manifests(paths) => {
                let defs = paths.iter().map(|p| load_agent(p)).collect::<Result<Vec<_>, _>>()?;
                let entry = defs.first().ok_or(ScenarioError::NoAgents)?.name.clone();
                let registry = opts.full_registry()?;
                let agents = AgentSet::new(defs, &registry)?;
                Ok(Self {
                    name: kind.name(),
                    registry,
                    agents,
                    entry_agent: entry,
                })
            }
        }
    }

    pub fn booking(opts: &ScenarioOptions) -> Result<Self, ScenarioError> {
        let mut registry = ToolRegistry::new();
        opts.train_backend().register_into(&mut registry)?;
        let agents = AgentSet::new(vec![booking_agent()], &registry)?;
        Ok(Self {
            name: "booking".into(),
            registry,
            agents,
            entry_agent: BOOKING_AGENT.into(),
        })
    }

    pub fn troubleshooting(opts: &ScenarioOptions) -> Result<Self, ScenarioError> {
        let mut registry = ToolRegistry::new();
        opts.troubleshooting_tools().register_into(&mut registry)?;
        let agents = AgentSet::new(vec![ts_assistant_agent(), ts_report_agent()], &registry)?;
        Ok(Self {
            name: "troubleshooting".into(),
            registry,
            agents,
            entry_agent: TS_ASSISTANT_AGENT.into(),
        })
    }
}
