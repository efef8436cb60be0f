//! Executes one training step under the configured isolation.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{CampaignError, Isolation};
use crate::engine::{node_meta, run_training_step, Backend};
use crate::ir::ModelSpec;
use crate::trace::{read_trace, write_trace, Outcome, TraceBundle};

/// Exit codes of `archfuzz run`.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NAN: i32 = 3;
pub const EXIT_CRASH: i32 = 4;

/// Message recorded for a step killed by the timeout.
pub const TIMEOUT_MESSAGE: &str = "timeout";

pub fn exit_code(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Ok => EXIT_OK,
        Outcome::Nan => EXIT_NAN,
        Outcome::Crash(_) => EXIT_CRASH,
    }
}

/// Everything needed to launch one step.
#[derive(Debug, Clone)]
pub struct StepJob<'a> {
    pub spec: &'a ModelSpec,
    pub model_dir: &'a Path,
    pub backend: Backend,
    pub trace_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Runner {
    pub isolation: Isolation,
    pub executable: PathBuf,
    pub timeout: Duration,
}

impl Runner {
    pub fn new(isolation: Isolation, executable: Option<PathBuf>, timeout: Duration) -> Result<Self, CampaignError> {
        let executable = match executable {
            Some(p) => p,
            None => std::env::current_exe().map_err(|e| CampaignError::io(Path::new("current_exe"), e))?,
        };
        Ok(Self { isolation, executable, timeout })
    }

    /// Runs the step and persists its trace. Failures of the step itself
    /// become crash traces; only I/O problems of the harness are errors.
    pub fn run(&self, job: &StepJob<'_>) -> Result<TraceBundle, CampaignError> {
        let trace = match self.isolation {
            Isolation::InProcess => run_training_step(job.spec, job.backend).into_trace(job.spec),
            Isolation::Subprocess => return self.run_child(job),
        };
        write_trace(&trace, &job.trace_path)?;
        Ok(trace)
    }

    fn run_child(&self, job: &StepJob<'_>) -> Result<TraceBundle, CampaignError> {
        if job.trace_path.exists() {
            std::fs::remove_file(&job.trace_path).map_err(|e| CampaignError::io(&job.trace_path, e))?;
        }
        let mut child = Command::new(&self.executable)
            .arg("run")
            .arg("--model")
            .arg(job.model_dir)
            .arg("--backend")
            .arg(job.backend.id())
            .arg("--trace-out")
            .arg(&job.trace_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| CampaignError::io(&self.executable, e))?;
        let stderr = child.stderr.take().expect("stderr is piped");
        let reader = thread::spawn(move || {
            BufReader::new(stderr).lines().map_while(Result::ok).filter(|l| !l.trim().is_empty()).last()
        });
        let started = Instant::now();
        let status = loop {
            match child.try_wait().map_err(|e| CampaignError::io(&self.executable, e))? {
                Some(status) => break Some(status),
                None if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        };
        let last_line = reader.join().ok().flatten();
        let crash =
            |message: String| TraceBundle::crash(&job.backend.id(), &job.spec.model_id, node_meta(job.spec), &message);
        let trace = match status {
            None => crash(TIMEOUT_MESSAGE.to_string()),
            Some(status) if matches!(status.code(), Some(EXIT_OK | EXIT_NAN | EXIT_CRASH)) => {
                match read_trace(&job.trace_path) {
                    Ok(t) => return Ok(t),
                    Err(e) => crash(format!("unreadable trace: {e}")),
                }
            }
            Some(status) => crash(last_line.unwrap_or_else(|| describe(status))),
        };
        write_trace(&trace, &job.trace_path)?;
        Ok(trace)
    }
}

fn describe(status: ExitStatus) -> String {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return format!("terminated by signal {sig}");
        }
    }
    format!("process exited with {status}")
}
