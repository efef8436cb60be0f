//! NaN and crash classification across the backends that ran one model.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Topology;
use crate::tensor::Tensor;
use crate::trace::{Outcome, TraceBundle};

/// A model on which some backends produced non-finite results while at
/// least one other backend stayed healthy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanEvent {
    pub model_id: String,
    /// First node, in topological order, whose non-finite pattern departs
    /// from the healthy reference. `None` when only the loss stage differs.
    pub node: Option<usize>,
    pub kind: Option<String>,
    pub affected: Vec<String>,
    pub healthy: Vec<String>,
    pub count: usize,
}

/// A backend failure, keyed by backend and normalized message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashEvent {
    pub backend: String,
    pub message: String,
    /// One original message, for humans.
    pub example: String,
    pub models: Vec<String>,
}

/// Strips addresses, paths and numbers and collapses whitespace so that
/// equivalent failures compare equal.
pub fn normalize_message(msg: &str) -> String {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        [
            (Regex::new(r"0[xX][0-9a-fA-F]+").expect("regex"), "<addr>"),
            (Regex::new(r"(?:[A-Za-z]:)?(?:[\w.\-]*[/\\][\w.\-]+)+").expect("regex"), "<path>"),
            (Regex::new(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").expect("regex"), "<n>"),
            (Regex::new(r"\s+").expect("regex"), " "),
        ]
    });
    let mut s = msg.to_string();
    for (re, rep) in rules {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.trim().to_string()
}

/// A backend with a finite loss value and loss gradient, even if some
/// intermediate values were not finite.
fn healthy(t: &TraceBundle) -> bool {
    match t.outcome {
        Outcome::Ok => true,
        Outcome::Nan => t.lc.as_ref().is_some_and(|l| l.loss_output.is_finite() && l.loss_gradient.is_finite()),
        Outcome::Crash(_) => false,
    }
}

fn class(v: f32) -> u8 {
    if v.is_nan() {
        1
    } else if v == f32::INFINITY {
        2
    } else if v == f32::NEG_INFINITY {
        3
    } else {
        0
    }
}

fn pattern_differs(x: Option<&Tensor<f32>>, y: Option<&Tensor<f32>>) -> bool {
    match (x, y) {
        (Some(x), Some(y)) => x.shape != y.shape || x.data.iter().zip(&y.data).any(|(&a, &b)| class(a) != class(b)),
        (None, None) => false,
        _ => true,
    }
}

fn attribute(failed: &TraceBundle, reference: &TraceBundle, topo: &Topology) -> Option<usize> {
    topo.order.iter().position(|&i| pattern_differs(failed.fc.get(&i), reference.fc.get(&i)))
}

/// Classifies the outcomes of every backend that ran one model.
pub fn classify_nan_crash(traces: &[TraceBundle], topo: Option<&Topology>) -> (Vec<NanEvent>, Vec<CrashEvent>) {
    let mut sorted: Vec<&TraceBundle> = traces.iter().collect();
    sorted.sort_by(|a, b| a.backend_id.cmp(&b.backend_id));
    let model_id = sorted.first().map(|t| t.model_id.clone()).unwrap_or_default();

    let ok: Vec<&TraceBundle> = sorted.iter().copied().filter(|t| healthy(t)).collect();
    let sick: Vec<&TraceBundle> =
        sorted.iter().copied().filter(|t| !healthy(t) && matches!(t.outcome, Outcome::Nan)).collect();
    let mut nans = Vec::new();
    if !ok.is_empty() && !sick.is_empty() {
        let reference = ok[0];
        let pos = topo.and_then(|topo| sick.iter().filter_map(|t| attribute(t, reference, topo)).min());
        let node = pos.and_then(|p| topo.map(|t| t.order[p]));
        nans.push(NanEvent {
            model_id: model_id.clone(),
            node,
            kind: node.and_then(|n| topo.map(|t| t.kinds[n].clone())),
            affected: sick.iter().map(|t| t.backend_id.clone()).collect(),
            healthy: ok.iter().map(|t| t.backend_id.clone()).collect(),
            count: 1,
        });
    }

    let crashed: Vec<(&TraceBundle, String)> = sorted
        .iter()
        .filter_map(|t| match &t.outcome {
            Outcome::Crash(m) => Some((*t, m.clone())),
            _ => None,
        })
        .collect();
    let all_same = crashed.len() == sorted.len()
        && crashed.windows(2).all(|w| normalize_message(&w[0].1) == normalize_message(&w[1].1));
    let mut crashes = Vec::new();
    if !all_same {
        for (t, m) in crashed {
            crashes.push(CrashEvent {
                backend: t.backend_id.clone(),
                message: normalize_message(&m),
                example: m,
                models: vec![model_id.clone()],
            });
        }
    }
    (nans, crashes)
}

/// Merges crash events with the same backend and normalized message.
pub(crate) fn merge_crashes(events: impl IntoIterator<Item = CrashEvent>) -> Vec<CrashEvent> {
    let mut by_key: BTreeMap<(String, String), CrashEvent> = BTreeMap::new();
    for e in events {
        match by_key.get_mut(&(e.backend.clone(), e.message.clone())) {
            Some(acc) => {
                acc.models.extend(e.models);
                acc.models.sort();
                acc.models.dedup();
                if e.example < acc.example {
                    acc.example = e.example;
                }
            }
            None => {
                by_key.insert((e.backend.clone(), e.message.clone()), e);
            }
        }
    }
    by_key.into_values().collect()
}

/// Merges NaN events attributed to the same layer kind with the same
/// affected backends, keeping the lexicographically first model.
pub(crate) fn merge_nans(events: impl IntoIterator<Item = NanEvent>) -> Vec<NanEvent> {
    let mut by_key: BTreeMap<(Option<String>, Vec<String>), NanEvent> = BTreeMap::new();
    for e in events {
        let key = (e.kind.clone(), e.affected.clone());
        match by_key.get_mut(&key) {
            Some(acc) => {
                let count = acc.count + e.count;
                if e.model_id < acc.model_id {
                    *acc = e;
                }
                acc.count = count;
            }
            None => {
                by_key.insert(key, e);
            }
        }
    }
    by_key.into_values().collect()
}
