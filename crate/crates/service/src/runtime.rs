//! Turns a [`Config`] into scenarios and backends.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use convroutine::backend::{load_script, parse_script, ChatBackend, ScriptStep, ScriptedBackend};
use convroutine::bundled;
use convroutine::orchestrator::AgentSet;
use convroutine::scenario::{Scenario, ScenarioKind, ScenarioOptions};

use crate::config::{BackendKind, Config};
use crate::live::LiveBackend;

/// Builds the scenario, applying the config's model override.
pub fn build_scenario(kind: &ScenarioKind, opts: &ScenarioOptions, model: Option<&str>) -> anyhow::Result<Scenario> {
    let mut s = Scenario::build(kind, opts).with_context(|| format!("loading scenario {}", kind.name()))?;
    if let Some(model) = model {
        let defs = s
            .agents
            .iter()
            .cloned()
            .map(|mut d| {
                d.model = model.to_string();
                d
            })
            .collect();
        s.agents = AgentSet::new(defs, &s.registry)?;
    }
    Ok(s)
}

/// Hands out one backend per session. Scripted sessions each get a fresh
/// copy of the script; otherwise every session shares one backend (the live
/// client, or a test double).
#[derive(Clone)]
pub enum BackendFactory {
    Scripted(Arc<Vec<ScriptStep>>),
    Shared(Arc<dyn ChatBackend>),
}

impl BackendFactory {
    pub fn make(&self) -> Arc<dyn ChatBackend> {
        match self {
            Self::Scripted(steps) => Arc::new(ScriptedBackend::new(steps.as_ref().clone())),
            Self::Shared(b) => b.clone(),
        }
    }

    pub fn from_config(config: &Config, kind: &ScenarioKind) -> anyhow::Result<Self> {
        match config.backend {
            BackendKind::Live => {
                let timeout = Duration::from_secs(config.request_timeout_secs.max(1));
                let b = LiveBackend::from_env(&config.base_url, &config.api_key_env_name, timeout)?;
                Ok(Self::Shared(Arc::new(b)))
            }
            BackendKind::Scripted => Ok(Self::Scripted(Arc::new(script_for(config.script.as_deref(), kind)?))),
        }
    }
}

/// The given script file, or the bundled one for a bundled scenario.
pub fn script_for(path: Option<&Path>, kind: &ScenarioKind) -> anyhow::Result<Vec<ScriptStep>> {
    if let Some(p) = path {
        return load_script(p).with_context(|| format!("loading script {}", p.display()));
    }
    let text = match kind {
        ScenarioKind::Booking => bundled::BOOKING_SCRIPT,
        ScenarioKind::Troubleshooting => bundled::TROUBLESHOOTING_SCRIPT,
        ScenarioKind::Manifests(_) => bail!("the scripted backend needs --script for manifest scenarios"),
    };
    Ok(parse_script(text)?)
}
