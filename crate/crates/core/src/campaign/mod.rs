//! End-to-end orchestration: generation, isolated execution, detection and
//! persisted artifacts.
//!
//! A campaign working directory looks like
//!
//! ```text
//! campaign.toml          effective configuration
//! generation.json        generation config, per-model records, usage stats
//! models/m00000/         one model directory per generated model
//! traces/m00000/<backend>.trace
//! report.json report.txt coverage.json summary.json
//! ```

pub mod config;
pub mod coverage;
pub mod presets;
pub mod runner;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{CampaignConfig, Isolation, WORKDIR_ENV};
pub use coverage::{coverage_against, CoverageReport};
pub use presets::{trigger_preset, Channel, TriggerPreset};
pub use runner::{Runner, StepJob};

use crate::detect::{detect_model, DetectError, DetectorConfig, InconsistencyReport, ModelDetection};
use crate::fuzz::{generate_models, FuzzError, Generation, GenerationConfig, LayerUsageStats, ModelRecord};
use crate::ir::{IrError, LayerKind, ModelSpec};
use crate::trace::{read_trace, TraceBundle, TraceError};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error(transparent)]
    Generation(#[from] FuzzError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] IrError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("{path}: malformed artifact: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("missing artifact: {0}")]
    Missing(String),
}

impl CampaignError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CampaignError::Io { path: path.to_path_buf(), source }
    }
}

/// Paths inside a campaign working directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("campaign.toml")
    }
    pub fn generation(&self) -> PathBuf {
        self.root.join("generation.json")
    }
    pub fn model(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(model_id)
    }
    pub fn trace(&self, model_id: &str, backend: &str) -> PathBuf {
        self.root.join("traces").join(model_id).join(format!("{backend}.trace"))
    }
    pub fn replay_trace(&self, model_id: &str, backend: &str) -> PathBuf {
        self.root.join("replay").join(model_id).join(format!("{backend}.trace"))
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn coverage(&self) -> PathBuf {
        self.root.join("coverage.json")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CampaignError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CampaignError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CampaignError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CampaignError> {
    let text = fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CampaignError::Artifact { path: path.to_path_buf(), message: e.to_string() })
}

/// Contents of `generation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub config: GenerationConfig,
    pub registry: Vec<LayerKind>,
    pub records: Vec<ModelRecord>,
    pub stats: LayerUsageStats,
}

/// Writes every model directory plus `generation.json` under `out`.
pub fn write_generation(out: &Path, cfg: &GenerationConfig, generation: &Generation) -> Result<(), CampaignError> {
    let wd = Workdir::new(out);
    for spec in &generation.specs {
        spec.write_dir(&wd.model(&spec.model_id))?;
    }
    let manifest = GenerationManifest {
        config: cfg.clone(),
        registry: cfg.registry().into_iter().collect(),
        records: generation.records.clone(),
        stats: generation.stats.clone(),
    };
    write_file(&wd.generation(), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

pub fn read_generation(workdir: &Path) -> Result<GenerationManifest, CampaignError> {
    read_json(&Workdir::new(workdir).generation())
}

/// Loads every persisted model of a campaign or generation directory.
pub fn load_models(workdir: &Path) -> Result<Vec<ModelSpec>, CampaignError> {
    let wd = Workdir::new(workdir);
    read_generation(workdir)?.records.iter().map(|r| Ok(ModelSpec::read_dir(&wd.model(&r.model_id))?)).collect()
}

/// Coverage of a persisted campaign against its own registry and losses.
pub fn coverage_report(workdir: &Path) -> Result<CoverageReport, CampaignError> {
    let manifest = read_generation(workdir)?;
    let specs = load_models(workdir)?;
    let registry: BTreeSet<LayerKind> = manifest.registry.iter().copied().collect();
    let losses = manifest.config.losses.iter().copied().collect();
    Ok(coverage_against(&specs, &registry, &losses))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub generation_secs: f64,
    pub execution_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub workdir: PathBuf,
    pub models: usize,
    pub backends: Vec<String>,
    /// Steps whose outcome was a crash (including timeouts).
    pub crashed_steps: usize,
    pub nan_steps: usize,
    pub report: InconsistencyReport,
    pub coverage: CoverageReport,
    pub timing: Timing,
}

impl CampaignSummary {
    pub fn has_failures(&self) -> bool {
        self.report.has_failures()
    }
}

fn persist_report(wd: &Workdir, report: &InconsistencyReport) -> Result<(), CampaignError> {
    write_file(&wd.report_json(), &report.to_json())?;
    write_file(&wd.report_txt(), &report.to_table())
}

type ModelOutcome = (ModelDetection, Vec<TraceBundle>);

/// Generates the models, runs each on every backend under isolation,
/// detects inconsistencies and persists all artifacts. On a harness
/// failure the report of the models finished so far is still written.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignSummary, CampaignError> {
    cfg.validate()?;
    let start = Instant::now();
    let wd = Workdir::new(&cfg.workdir);
    fs::create_dir_all(&wd.root).map_err(|e| CampaignError::io(&wd.root, e))?;
    write_file(&wd.config(), &cfg.to_toml())?;
    let backends = cfg.parsed_backends()?;
    let runner = Runner::new(cfg.isolation, cfg.runner.clone(), cfg.timeout())?;

    let generation = generate_models(&cfg.generation)?;
    write_generation(&wd.root, &cfg.generation, &generation)?;
    let generation_secs = start.elapsed().as_secs_f64();

    let exec_start = Instant::now();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<ModelOutcome>>> = Mutex::new(vec![None; generation.specs.len()]);
    let first_error: Mutex<Option<CampaignError>> = Mutex::new(None);
    let workers = cfg.parallelism.min(generation.specs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = generation.specs.get(i) else { break };
                let model_dir = wd.model(&spec.model_id);
                let result = backends
                    .iter()
                    .map(|b| {
                        let job = StepJob {
                            spec,
                            model_dir: &model_dir,
                            backend: *b,
                            trace_path: wd.trace(&spec.model_id, &b.id()),
                        };
                        runner.run(&job)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .and_then(|traces| Ok((detect_model(&traces, &cfg.detector)?, traces)));
                match result {
                    Ok(done) => slots.lock().expect("slots lock")[i] = Some(done),
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        first_error.lock().expect("error lock").get_or_insert(e);
                    }
                }
            });
        }
    });
    let execution_secs = exec_start.elapsed().as_secs_f64();

    let slots = slots.into_inner().expect("slots lock");
    let mut report = InconsistencyReport::new(cfg.detector);
    let (mut crashed_steps, mut nan_steps) = (0, 0);
    for (detection, traces) in slots.into_iter().flatten() {
        crashed_steps += traces.iter().filter(|t| matches!(t.outcome, crate::trace::Outcome::Crash(_))).count();
        nan_steps += traces.iter().filter(|t| t.outcome == crate::trace::Outcome::Nan).count();
        report.add(detection);
    }
    persist_report(&wd, &report)?;
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    let registry = cfg.generation.registry();
    let losses = cfg.generation.losses.iter().copied().collect();
    let coverage = coverage_against(&generation.specs, &registry, &losses);
    write_file(&wd.coverage(), &serde_json::to_string_pretty(&coverage).expect("coverage serializes"))?;
    let summary = CampaignSummary {
        workdir: wd.root.clone(),
        models: generation.specs.len(),
        backends: backends.iter().map(|b| b.id()).collect(),
        crashed_steps,
        nan_steps,
        report,
        coverage,
        timing: Timing { generation_secs, execution_secs, total_secs: start.elapsed().as_secs_f64() },
    };
    write_file(&wd.summary(), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}

pub fn load_config(workdir: &Path) -> Result<CampaignConfig, CampaignError> {
    let path = Workdir::new(workdir).config();
    let text = fs::read_to_string(&path).map_err(|e| CampaignError::io(&path, e))?;
    CampaignConfig::from_toml(&text)
}

pub fn load_report(workdir: &Path) -> Result<InconsistencyReport, CampaignError> {
    read_json(&Workdir::new(workdir).report_json())
}

/// Result of re-running one persisted model.
#[derive(Debug, Clone)]
pub struct Replay {
    pub detection: ModelDetection,
    pub report: InconsistencyReport,
    pub traces: Vec<TraceBundle>,
    /// Whether every re-executed trace is bit-identical to the persisted one.
    pub identical: bool,
}

/// Re-executes `model_id` on `backends` (a subset of the campaign's) with
/// the campaign's isolation settings and detects with `detector`.
pub fn replay(
    workdir: &Path,
    model_id: &str,
    backends: &[String],
    detector: &DetectorConfig,
) -> Result<Replay, CampaignError> {
    let cfg = load_config(workdir)?;
    let wd = Workdir::new(workdir);
    let known: Vec<String> = cfg.parsed_backends()?.iter().map(|b| b.id()).collect();
    let mut chosen = Vec::with_capacity(backends.len());
    for id in backends {
        let b: crate::engine::Backend =
            id.parse().map_err(|e: crate::engine::BackendError| CampaignError::Config(e.to_string()))?;
        if !known.contains(&b.id()) {
            return Err(CampaignError::Config(format!("backend {id} was not part of the campaign")));
        }
        chosen.push(b);
    }
    let model_dir = wd.model(model_id);
    if !model_dir.is_dir() {
        return Err(CampaignError::Missing(format!("model {model_id}")));
    }
    let spec = ModelSpec::read_dir(&model_dir)?;
    let runner = Runner::new(cfg.isolation, cfg.runner.clone(), cfg.timeout())?;
    let mut traces = Vec::with_capacity(chosen.len());
    let mut identical = true;
    for b in chosen {
        let original = read_trace(&wd.trace(model_id, &b.id()))?;
        let job =
            StepJob { spec: &spec, model_dir: &model_dir, backend: b, trace_path: wd.replay_trace(model_id, &b.id()) };
        let t = runner.run(&job)?;
        identical &= t.bitwise_eq(&original);
        traces.push(t);
    }
    let detection = detect_model(&traces, detector)?;
    let report = InconsistencyReport::from_models(*detector, [detection.clone()]);
    Ok(Replay { detection, report, traces, identical })
}

/// Recursively collects `*.trace` files below `dir`.
pub fn find_traces(dir: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CampaignError::io(&d, e))? {
            let path = entry.map_err(|e| CampaignError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "trace") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Detection over every trace file below `dir`, grouped by model id.
pub fn compare_traces(dir: &Path, detector: &DetectorConfig) -> Result<InconsistencyReport, CampaignError> {
    let mut by_model: BTreeMap<String, Vec<TraceBundle>> = BTreeMap::new();
    for path in find_traces(dir)? {
        let t = read_trace(&path)?;
        by_model.entry(t.model_id.clone()).or_default().push(t);
    }
    let mut report = InconsistencyReport::new(*detector);
    for traces in by_model.values_mut() {
        traces.sort_by(|a, b| a.backend_id.cmp(&b.backend_id));
        report.add(detect_model(traces, detector)?);
    }
    Ok(report)
}
