//! Differential analysis of traces from several backends on one model.

mod events;
mod report;
mod vote;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{LossKind, ModelGraph};
use crate::tensor::Tensor;
use crate::trace::{NodeMeta, TraceBundle};

pub use events::{classify_nan_crash, normalize_message, CrashEvent, NanEvent};
pub use report::{detect_model, InconsistencyReport, ModelDetection};
pub use vote::{deduplicate, vote_localize, Vote, VoteEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Inconsistency threshold.
    pub t: f64,
    /// Bound on benign deviation used by the gating conditions.
    pub epsilon: f64,
    /// Multiply `t` by the loss's output scale for loss-stage comparisons.
    pub scale_loss_threshold: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { t: 0.15, epsilon: 1e-5, scale_loss_threshold: false }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.epsilon > 0.0 && self.epsilon < self.t && self.t.is_finite() {
            Ok(())
        } else {
            Err(DetectError::Config(format!("need 0 < epsilon < t, got epsilon={} t={}", self.epsilon, self.t)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("traces disagree on the model: {0}")]
    Mismatch(String),
}

/// Chebyshev distance, or a marker that a NaN took part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Value(f64),
    Tainted,
}

impl Distance {
    pub fn value(self) -> Option<f64> {
        match self {
            Distance::Value(v) => Some(v),
            Distance::Tainted => None,
        }
    }

    fn above(self, t: f64) -> bool {
        matches!(self, Distance::Value(v) if v > t)
    }

    fn below(self, eps: f64) -> bool {
        matches!(self, Distance::Value(v) if v < eps)
    }
}

fn elem_distance(x: f64, y: f64) -> Option<f64> {
    if x.is_nan() || y.is_nan() {
        None
    } else if x == y {
        Some(0.0)
    } else {
        Some((x - y).abs())
    }
}

/// Greatest elementwise absolute difference, computed in `f64`.
pub fn chebyshev_distance(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<Distance, DetectError> {
    if x.shape != y.shape {
        return Err(DetectError::ShapeMismatch(x.shape.clone(), y.shape.clone()));
    }
    let mut d = 0.0f64;
    for (&a, &b) in x.data.iter().zip(&y.data) {
        match elem_distance(a as f64, b as f64) {
            Some(v) => d = d.max(v),
            None => return Ok(Distance::Tainted),
        }
    }
    Ok(Distance::Value(d))
}

/// Absolute difference of two scalars with the same NaN rule.
pub fn scalar_distance(x: f32, y: f32) -> Distance {
    elem_distance(x as f64, y as f64).map_or(Distance::Tainted, Distance::Value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    FC,
    LC,
    BC,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Predecessor and successor structure recovered from a trace manifest or a
/// model graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub kinds: Vec<String>,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    pub order: Vec<usize>,
    pub sink: usize,
}

impl Topology {
    pub fn from_meta(nodes: &[NodeMeta]) -> Result<Self, DetectError> {
        let n = nodes.len();
        if nodes.iter().enumerate().any(|(i, m)| m.id != i || m.inputs.iter().any(|&p| p >= n)) {
            return Err(DetectError::Mismatch("node ids are not dense".into()));
        }
        let preds: Vec<Vec<usize>> = nodes.iter().map(|m| m.inputs.clone()).collect();
        let dag = crate::ir::Dag { preds: preds.clone() };
        let order = dag.topological_order().map_err(|e| DetectError::Mismatch(e.to_string()))?;
        let succs = dag.successors();
        let sinks = dag.sinks();
        if sinks.len() != 1 {
            return Err(DetectError::Mismatch(format!("expected one sink, found {}", sinks.len())));
        }
        Ok(Self { kinds: nodes.iter().map(|m| m.kind.clone()).collect(), preds, succs, order, sink: sinks[0] })
    }

    pub fn from_graph(g: &ModelGraph) -> Self {
        let meta: Vec<NodeMeta> = g
            .nodes
            .iter()
            .map(|n| NodeMeta { id: n.id, kind: n.kind().to_string(), inputs: n.inputs.clone() })
            .collect();
        Self::from_meta(&meta).expect("validated graph")
    }
}

/// One flagged inconsistency between two backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub stage: Stage,
    /// Layer kind, or loss kind for the loss stage.
    pub kind: String,
    pub node: Option<usize>,
    pub model_id: String,
    /// Backend ids in lexicographic order.
    pub pair: (String, String),
    /// Distance that crossed the threshold.
    pub distance: f64,
    /// Loss-stage only: both distances that were compared.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_output_diff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_gradient_distance: Option<f64>,
    /// Distances of the gating neighbours (predecessors for FC, successors
    /// for BC, the sink for LC). `None` names the loss gradient.
    pub neighbours: Vec<(Option<usize>, f64)>,
    /// Occurrences collapsed into this finding by deduplication.
    pub count: usize,
}

/// A comparison that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGap {
    pub stage: Stage,
    pub node: Option<usize>,
    pub model_id: String,
    pub pair: (String, String),
    pub reason: String,
}

/// Findings of one stage for one pair, plus anything that was skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageFindings {
    pub findings: Vec<Finding>,
    pub gaps: Vec<DataGap>,
}

struct PairCtx<'a> {
    a: &'a TraceBundle,
    b: &'a TraceBundle,
    pair: (String, String),
}

impl<'a> PairCtx<'a> {
    fn new(a: &'a TraceBundle, b: &'a TraceBundle) -> Self {
        let (x, y) = if a.backend_id <= b.backend_id { (a, b) } else { (b, a) };
        Self { a: x, b: y, pair: (x.backend_id.clone(), y.backend_id.clone()) }
    }

    fn gap(&self, stage: Stage, node: Option<usize>, reason: impl Into<String>) -> DataGap {
        DataGap { stage, node, model_id: self.a.model_id.clone(), pair: self.pair.clone(), reason: reason.into() }
    }

    fn dist(&self, map: fn(&TraceBundle) -> &BTreeMap<usize, Tensor<f32>>, node: usize) -> Result<Distance, String> {
        match (map(self.a).get(&node), map(self.b).get(&node)) {
            (Some(x), Some(y)) => chebyshev_distance(x, y).map_err(|e| e.to_string()),
            _ => Err(format!("missing trace for node {node}")),
        }
    }

    fn finding(&self, stage: Stage, kind: &str, node: Option<usize>, distance: f64) -> Finding {
        Finding {
            stage,
            kind: kind.to_string(),
            node,
            model_id: self.a.model_id.clone(),
            pair: self.pair.clone(),
            distance,
            loss_output_diff: None,
            loss_gradient_distance: None,
            neighbours: Vec::new(),
            count: 1,
        }
    }
}

fn fc_map(t: &TraceBundle) -> &BTreeMap<usize, Tensor<f32>> {
    &t.fc
}

fn bc_map(t: &TraceBundle) -> &BTreeMap<usize, Tensor<f32>> {
    &t.bc
}

/// Gated comparison shared by the forward and backward stages: node `i` is
/// flagged when its distance exceeds `t` and every neighbour's distance is
/// below `epsilon`.
fn gated(
    ctx: &PairCtx,
    topo: &Topology,
    cfg: &DetectorConfig,
    stage: Stage,
    neighbours: impl Fn(usize) -> Vec<Option<usize>>,
    lg_distance: Option<Distance>,
) -> StageFindings {
    let map = if stage == Stage::FC { fc_map } else { bc_map };
    let mut out = StageFindings::default();
    let mut cache: BTreeMap<usize, Result<Distance, String>> = BTreeMap::new();
    let mut dist = |n: usize| cache.entry(n).or_insert_with(|| ctx.dist(map, n)).clone();
    for &i in &topo.order {
        let d = match dist(i) {
            Ok(d) => d,
            Err(e) => {
                out.gaps.push(ctx.gap(stage, Some(i), e));
                continue;
            }
        };
        if !d.above(cfg.t) {
            continue;
        }
        let mut gate = Vec::new();
        let mut unevaluable = None;
        for nb in neighbours(i) {
            let nd = match nb {
                Some(n) => dist(n),
                None => lg_distance.ok_or_else(|| "missing loss gradient".to_string()),
            };
            match nd {
                Ok(Distance::Value(v)) => gate.push((nb, v)),
                Ok(Distance::Tainted) => {
                    gate.push((nb, f64::NAN));
                }
                Err(e) => unevaluable = Some(e),
            }
        }
        if let Some(e) = unevaluable {
            out.gaps.push(ctx.gap(stage, Some(i), e));
            continue;
        }
        if gate.iter().all(|&(_, v)| Distance::Value(v).below(cfg.epsilon)) {
            let mut f = ctx.finding(stage, &topo.kinds[i], Some(i), d.value().expect("above t"));
            f.neighbours = gate;
            out.findings.push(f);
        }
    }
    out
}

/// Forward-stage inconsistencies between two traces of one model.
pub fn detect_fc(a: &TraceBundle, b: &TraceBundle, topo: &Topology, cfg: &DetectorConfig) -> StageFindings {
    let ctx = PairCtx::new(a, b);
    gated(&ctx, topo, cfg, Stage::FC, |i| topo.preds[i].iter().map(|&p| Some(p)).collect(), None)
}

fn loss_distances(ctx: &PairCtx) -> Option<(Distance, Result<Distance, DetectError>)> {
    let (la, lb) = (ctx.a.lc.as_ref()?, ctx.b.lc.as_ref()?);
    Some((scalar_distance(la.loss_output, lb.loss_output), chebyshev_distance(&la.loss_gradient, &lb.loss_gradient)))
}

/// Loss-stage inconsistency, evaluated only when the model outputs agree to
/// within `epsilon`.
pub fn detect_lc(a: &TraceBundle, b: &TraceBundle, topo: &Topology, cfg: &DetectorConfig) -> StageFindings {
    let ctx = PairCtx::new(a, b);
    let mut out = StageFindings::default();
    let sink = match ctx.dist(fc_map, topo.sink) {
        Ok(d) => d,
        Err(e) => {
            out.gaps.push(ctx.gap(Stage::LC, Some(topo.sink), e));
            return out;
        }
    };
    if !sink.below(cfg.epsilon) {
        return out;
    }
    let Some((lo, lg)) = loss_distances(&ctx) else {
        out.gaps.push(ctx.gap(Stage::LC, None, "missing loss section"));
        return out;
    };
    let lg = match lg {
        Ok(d) => d,
        Err(e) => {
            out.gaps.push(ctx.gap(Stage::LC, None, e.to_string()));
            return out;
        }
    };
    let loss = ctx.a.loss.clone().unwrap_or_else(|| "loss".into());
    let scale =
        if cfg.scale_loss_threshold { loss.parse::<LossKind>().map(|k| k.output_scale()).unwrap_or(1.0) } else { 1.0 };
    let t = cfg.t * scale;
    if lo.above(t) || lg.above(t) {
        let lo_v = lo.value();
        let lg_v = lg.value();
        let distance = lo_v.unwrap_or(0.0).max(lg_v.unwrap_or(0.0));
        let mut f = ctx.finding(Stage::LC, &loss, None, distance);
        f.loss_output_diff = lo_v;
        f.loss_gradient_distance = lg_v;
        f.neighbours = vec![(Some(topo.sink), sink.value().expect("below epsilon"))];
        out.findings.push(f);
    }
    out
}

/// Backward-stage inconsistencies. Runs only when the loss stage agrees to
/// within `epsilon`; the sink's successor is the loss gradient.
pub fn detect_bc(a: &TraceBundle, b: &TraceBundle, topo: &Topology, cfg: &DetectorConfig) -> StageFindings {
    let ctx = PairCtx::new(a, b);
    let Some((lo, lg)) = loss_distances(&ctx) else {
        return StageFindings { findings: vec![], gaps: vec![ctx.gap(Stage::BC, None, "missing loss section")] };
    };
    let lg = match lg {
        Ok(d) => d,
        Err(e) => return StageFindings { findings: vec![], gaps: vec![ctx.gap(Stage::BC, None, e.to_string())] },
    };
    if !(lo.below(cfg.epsilon) && lg.below(cfg.epsilon)) {
        return StageFindings::default();
    }
    gated(
        &ctx,
        topo,
        cfg,
        Stage::BC,
        |i| if i == topo.sink { vec![None] } else { topo.succs[i].iter().map(|&s| Some(s)).collect() },
        Some(lg),
    )
}

/// All three stages for one pair of traces. Nothing is compared unless both
/// outcomes are ok.
pub fn detect_pair(a: &TraceBundle, b: &TraceBundle, topo: &Topology, cfg: &DetectorConfig) -> StageFindings {
    let mut out = StageFindings::default();
    if !(a.outcome.is_ok() && b.outcome.is_ok()) {
        return out;
    }
    for part in [detect_fc(a, b, topo, cfg), detect_lc(a, b, topo, cfg), detect_bc(a, b, topo, cfg)] {
        out.findings.extend(part.findings);
        out.gaps.extend(part.gaps);
    }
    out
}

#[cfg(test)]
mod tests;
