//! Per-model detection and the aggregated campaign report.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::events::{merge_crashes, merge_nans};
use super::vote::vote_nan;
use super::{
    classify_nan_crash, deduplicate, detect_pair, vote_localize, CrashEvent, DataGap, DetectError, DetectorConfig,
    Finding, NanEvent, Topology, VoteEntry,
};
use crate::trace::TraceBundle;

/// Raw detection output for one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelDetection {
    pub model_id: String,
    pub backends: Vec<String>,
    pub findings: Vec<Finding>,
    pub gaps: Vec<DataGap>,
    pub nan_events: Vec<NanEvent>,
    pub crash_events: Vec<CrashEvent>,
}

/// Compares every pair of backends that ran one model and classifies their
/// failures.
pub fn detect_model(traces: &[TraceBundle], cfg: &DetectorConfig) -> Result<ModelDetection, DetectError> {
    cfg.validate()?;
    let Some(first) = traces.first() else {
        return Ok(ModelDetection::default());
    };
    if let Some(t) = traces.iter().find(|t| t.model_id != first.model_id) {
        return Err(DetectError::Mismatch(format!("model {} vs {}", first.model_id, t.model_id)));
    }
    let with_nodes: Vec<&TraceBundle> = traces.iter().filter(|t| !t.nodes.is_empty()).collect();
    if with_nodes.windows(2).any(|w| w[0].nodes != w[1].nodes) {
        return Err(DetectError::Mismatch(format!("node tables differ for model {}", first.model_id)));
    }
    let topo = with_nodes.first().map(|t| Topology::from_meta(&t.nodes)).transpose()?;
    let mut out = ModelDetection {
        model_id: first.model_id.clone(),
        backends: traces.iter().map(|t| t.backend_id.clone()).collect(),
        ..Default::default()
    };
    out.backends.sort();
    if let Some(topo) = &topo {
        for (i, a) in traces.iter().enumerate() {
            for b in &traces[i + 1..] {
                let part = detect_pair(a, b, topo, cfg);
                out.findings.extend(part.findings);
                out.gaps.extend(part.gaps);
            }
        }
    }
    let (nans, crashes) = classify_nan_crash(traces, topo.as_ref());
    out.nan_events = nans;
    out.crash_events = crashes;
    Ok(out)
}

/// Deduplicated findings, failure events and votes over any number of
/// models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    pub config: DetectorConfig,
    pub backends: Vec<String>,
    pub models: Vec<String>,
    pub findings: Vec<Finding>,
    pub nan_events: Vec<NanEvent>,
    pub crash_events: Vec<CrashEvent>,
    pub votes: Vec<VoteEntry>,
    pub gaps: Vec<DataGap>,
}

impl InconsistencyReport {
    pub fn new(cfg: DetectorConfig) -> Self {
        Self { config: cfg, ..Default::default() }
    }

    pub fn from_models(cfg: DetectorConfig, detections: impl IntoIterator<Item = ModelDetection>) -> Self {
        let mut r = Self::new(cfg);
        for d in detections {
            r.add(d);
        }
        r
    }

    pub fn add(&mut self, d: ModelDetection) {
        let other = Self {
            config: self.config,
            backends: d.backends,
            models: vec![d.model_id],
            findings: d.findings,
            nan_events: d.nan_events,
            crash_events: d.crash_events,
            votes: Vec::new(),
            gaps: d.gaps,
        };
        *self = std::mem::take(self).merge(other);
    }

    /// Union of two reports; associative and independent of order.
    pub fn merge(self, other: InconsistencyReport) -> InconsistencyReport {
        let backends: BTreeSet<String> = self.backends.into_iter().chain(other.backends).collect();
        let models: BTreeSet<String> = self.models.into_iter().chain(other.models).collect();
        let findings = deduplicate(self.findings.into_iter().chain(other.findings));
        let nan_events = merge_nans(self.nan_events.into_iter().chain(other.nan_events));
        let crash_events = merge_crashes(self.crash_events.into_iter().chain(other.crash_events));
        let mut gaps: Vec<DataGap> = self.gaps.into_iter().chain(other.gaps).collect();
        gaps.sort_by(|a, b| (&a.model_id, a.stage, a.node, &a.pair).cmp(&(&b.model_id, b.stage, b.node, &b.pair)));
        gaps.dedup();
        let backends: Vec<String> = backends.into_iter().collect();
        let mut votes = vote_localize(&findings, &backends);
        votes.extend(nan_events.iter().map(vote_nan));
        InconsistencyReport {
            config: self.config,
            backends,
            models: models.into_iter().collect(),
            findings,
            nan_events,
            crash_events,
            votes,
            gaps,
        }
    }

    /// True when anything survived deduplication.
    pub fn has_failures(&self) -> bool {
        !(self.findings.is_empty() && self.nan_events.is_empty() && self.crash_events.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "models: {}  backends: {}  t={} epsilon={}",
            self.models.len(),
            self.backends.join(", "),
            self.config.t,
            self.config.epsilon
        );
        let _ = writeln!(s, "\nfindings ({})", self.findings.len());
        if !self.findings.is_empty() {
            let _ = writeln!(
                s,
                "{:<5} {:<28} {:>5} {:<8} {:<40} {:>11} {:>6}",
                "stage", "kind", "node", "model", "pair", "distance", "count"
            );
            for f in &self.findings {
                let node = f.node.map_or("-".to_string(), |n| n.to_string());
                let pair = format!("{} | {}", f.pair.0, f.pair.1);
                let _ = writeln!(
                    s,
                    "{:<5} {:<28} {:>5} {:<8} {:<40} {:>11.4e} {:>6}",
                    f.stage.to_string(),
                    f.kind,
                    node,
                    f.model_id,
                    pair,
                    f.distance,
                    f.count
                );
            }
        }
        let _ = writeln!(s, "\nnan events ({})", self.nan_events.len());
        for e in &self.nan_events {
            let _ = writeln!(
                s,
                "  {} node {} ({}) affected [{}] healthy [{}] x{}",
                e.model_id,
                e.node.map_or("-".to_string(), |n| n.to_string()),
                e.kind.as_deref().unwrap_or("loss"),
                e.affected.join(", "),
                e.healthy.join(", "),
                e.count
            );
        }
        let _ = writeln!(s, "\ncrash events ({})", self.crash_events.len());
        for e in &self.crash_events {
            let _ = writeln!(s, "  {}: {} ({} models)", e.backend, e.message, e.models.len());
        }
        let _ = writeln!(s, "\nvotes ({})", self.votes.len());
        for v in &self.votes {
            let verdict = match &v.vote {
                super::Vote::Implicated(b) => format!("implicates {b}"),
                super::Vote::Ambiguous => "ambiguous".into(),
            };
            let _ = writeln!(s, "  {:<4} {:<28} {}", v.channel, v.kind, verdict);
        }
        if !self.gaps.is_empty() {
            let _ = writeln!(s, "\ndata gaps: {}", self.gaps.len());
        }
        s
    }
}
