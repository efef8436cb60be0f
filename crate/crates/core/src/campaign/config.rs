use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::detect::DetectorConfig;
use crate::engine::{Backend, Fault};
use crate::fuzz::GenerationConfig;

/// Environment variable that overrides the configured working directory.
pub const WORKDIR_ENV: &str = "ARCHFUZZ_WORKDIR";

/// How each (model, backend) training step is isolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolation {
    /// One child process per step, killed on timeout.
    #[default]
    Subprocess,
    /// Same process, panics caught. Cannot survive aborts or enforce
    /// timeouts.
    InProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub generation: GenerationConfig,
    pub detector: DetectorConfig,
    /// Backend ids such as `naive`, `reordered` or `naive+relu-eq-zero`.
    pub backends: Vec<String>,
    pub workdir: PathBuf,
    /// Number of worker threads.
    pub parallelism: usize,
    /// Wall-clock limit for one (model, backend) step, in seconds.
    pub timeout_secs: f64,
    pub isolation: Isolation,
    /// Executable invoked as `<runner> run ...` for subprocess isolation.
    /// Defaults to the current executable.
    pub runner: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            detector: DetectorConfig::default(),
            backends: vec!["naive".into(), "reordered".into()],
            workdir: PathBuf::from("archfuzz-campaign"),
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            timeout_secs: 60.0,
            isolation: Isolation::Subprocess,
            runner: None,
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        toml::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    /// Reads a TOML config file, then applies the workdir override from
    /// the environment.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(WORKDIR_ENV).filter(|d| !d.is_empty()) {
            self.workdir = PathBuf::from(dir);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("campaign config serializes")
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Parsed backends, in configured order.
    pub fn parsed_backends(&self) -> Result<Vec<Backend>, CampaignError> {
        self.backends.iter().map(|b| b.parse::<Backend>().map_err(|e| CampaignError::Config(e.to_string()))).collect()
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let backends = self.parsed_backends()?;
        if backends.len() < 2 {
            return Err(CampaignError::Config("at least two backends are required".into()));
        }
        let mut ids: Vec<String> = backends.iter().map(Backend::id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CampaignError::Config("backend ids must be distinct".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(CampaignError::Config("timeout_secs must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(CampaignError::Config("parallelism must be at least 1".into()));
        }
        if self.isolation == Isolation::InProcess {
            if let Some(b) = backends.iter().find(|b| b.has(Fault::DebugAbort) || b.has(Fault::DebugSleep)) {
                return Err(CampaignError::Config(format!("backend {b} requires subprocess isolation")));
            }
        }
        self.generation.validate().map_err(CampaignError::Config)?;
        self.detector.validate().map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(())
    }
}
