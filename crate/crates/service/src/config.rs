//! Service configuration, read from a JSON file and overridable from the
//! command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use convroutine::scenario::{ScenarioKind, ScenarioOptions};
use convroutine::train::{FareTable, StationDataset};
use convroutine::troubleshooting::{Corpus, DirReportSink, PartCatalog, ProcedureDocument};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Chat-completions endpoint root, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Environment variable holding the API key. The key itself never
    /// appears in config files or logs.
    pub api_key_env_name: String,
    /// Overrides the model named in agent manifests when set.
    pub default_model: Option<String>,
    /// `booking`, `troubleshooting`, or comma-separated manifest paths.
    pub scenario: String,
    pub page_size: usize,
    /// Optional directory with replacement data files (stations.txt,
    /// fares.json, parts.json, stopwords.txt, procedures/*.proc.txt).
    pub data_dir: Option<PathBuf>,
    pub sessions_dir: PathBuf,
    pub listen_addr: String,
    pub backend: BackendKind,
    /// Script for the scripted backend; defaults to the bundled one for the
    /// scenario.
    pub script: Option<PathBuf>,
    /// Pins the tools' clock (RFC 3339). Unset means wall-clock time.
    pub now: Option<String>,
    pub seed: u64,
    pub request_timeout_secs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env_name: "LLM_API_KEY".into(),
            default_model: None,
            scenario: "booking".into(),
            page_size: convroutine::train::DEFAULT_PAGE_SIZE,
            data_dir: None,
            sessions_dir: PathBuf::from("sessions"),
            listen_addr: "127.0.0.1:8080".into(),
            backend: BackendKind::Scripted,
            script: None,
            now: None,
            seed: 0,
            request_timeout_secs: 60,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("listen_addr {0:?} is not host:port")]
    ListenAddr(String),
    #[error("data_dir {0} does not exist")]
    DataDir(String),
    #[error("page_size must be at least 1")]
    PageSize,
    #[error("bad data file {path}: {message}")]
    Data { path: String, message: String },
    #[error("bad `now` timestamp {0:?}")]
    Now(String),
    #[error(transparent)]
    Scenario(#[from] convroutine::scenario::ScenarioError),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Data {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_addr
            .parse::<SocketAddr>()
            .map_err(|_| ConfigError::ListenAddr(self.listen_addr.clone()))?;
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(ConfigError::DataDir(dir.display().to_string()));
            }
        }
        if self.page_size == 0 {
            return Err(ConfigError::PageSize);
        }
        if let Some(now) = &self.now {
            convroutine::clock::FixedClock::parse(now).map_err(|_| ConfigError::Now(now.clone()))?;
        }
        ScenarioKind::parse(&self.scenario)?;
        Ok(())
    }

    pub fn scenario_kind(&self) -> Result<ScenarioKind, ConfigError> {
        Ok(ScenarioKind::parse(&self.scenario)?)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.sessions_dir.join("reports")
    }

    /// Tool options: bundled data, replaced file by file from `data_dir`.
    pub fn scenario_options(&self) -> Result<ScenarioOptions, ConfigError> {
        let mut opts = ScenarioOptions {
            seed: self.seed,
            page_size: self.page_size,
            report_sink: Arc::new(DirReportSink::new(self.reports_dir())),
            ..ScenarioOptions::default()
        };
        if let Some(now) = &self.now {
            let clock = convroutine::clock::FixedClock::parse(now).map_err(|_| ConfigError::Now(now.clone()))?;
            opts.clock = Arc::new(clock);
        }
        let Some(dir) = &self.data_dir else {
            return Ok(opts);
        };
        let stations = dir.join("stations.txt");
        if stations.exists() {
            let ds = StationDataset::parse(&read(&stations)?).map_err(|e| data_err(&stations, e))?;
            opts.stations = Arc::new(ds);
        }
        let fares = dir.join("fares.json");
        if fares.exists() {
            let table = FareTable::parse(&read(&fares)?).map_err(|e| data_err(&fares, e))?;
            opts.fares = Arc::new(table);
        }
        let parts = dir.join("parts.json");
        if parts.exists() {
            let catalog = PartCatalog::parse(&read(&parts)?).map_err(|e| data_err(&parts, e))?;
            opts.catalog = Arc::new(catalog);
        }
        let procedures = dir.join("procedures");
        if procedures.is_dir() {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&procedures)
                .map_err(|source| ConfigError::Io {
                    path: procedures.display().to_string(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".proc.txt"))
                .collect();
            paths.sort();
            let mut docs = Vec::new();
            for p in &paths {
                docs.push(ProcedureDocument::parse(&read(p)?).map_err(|e| data_err(p, e))?);
            }
            let stopwords_path = dir.join("stopwords.txt");
            let stopwords = if stopwords_path.exists() {
                read(&stopwords_path)?
            } else {
                convroutine::bundled::STOPWORDS.to_string()
            };
            let corpus = Corpus::new(docs, &stopwords).map_err(|e| data_err(&procedures, e))?;
            opts.corpus = Arc::new(corpus);
        }
        Ok(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let bad = Config {
            listen_addr: "localhost".into(),
            ..Config::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::ListenAddr(_))));
        let bad = Config {
            data_dir: Some("/definitely/not/here".into()),
            ..Config::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::DataDir(_))));
        let bad = Config {
            scenario: "weather".into(),
            ..Config::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"scenario":"troubleshooting","page_size":3}"#).unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.page_size, 3);
        assert_eq!(c.api_key_env_name, "LLM_API_KEY");
        std::fs::write(&path, r#"{"api_key":"sk-oops"}"#).unwrap();
        assert!(matches!(Config::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn data_dir_overrides_stations() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stations.txt"), "Alpha\nBeta\n").unwrap();
        let c = Config {
            data_dir: Some(dir.path().to_path_buf()),
            ..Config::default()
        };
        let opts = c.scenario_options().unwrap();
        assert_eq!(opts.stations.len(), 2);
        assert_eq!(opts.corpus.docs().len(), 1);
    }
}
