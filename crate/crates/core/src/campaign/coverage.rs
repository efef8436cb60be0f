use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{LayerKind, LossKind, ModelSpec};

/// How much of the registered layer and loss vocabulary a set of models
/// exercises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub registered_kinds: usize,
    pub used_kinds: Vec<LayerKind>,
    pub unused_kinds: Vec<LayerKind>,
    pub registered_losses: usize,
    pub used_losses: Vec<LossKind>,
    /// Percentage of registered layer kinds used, in [0, 100].
    pub functionality_coverage: f64,
    /// Percentage of registered loss kinds used, in [0, 100].
    pub loss_coverage: f64,
    /// Node count per kind over all models, registered or not.
    pub kind_counts: BTreeMap<LayerKind, u64>,
    pub loss_counts: BTreeMap<LossKind, u64>,
}

fn percent(used: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * used as f64 / total as f64
    }
}

/// Coverage of `specs` against an explicit registry. Kinds outside the
/// registry (the input placeholder, excluded kinds) are counted but never
/// contribute to the percentages.
pub fn coverage_against(
    specs: &[ModelSpec],
    registry: &BTreeSet<LayerKind>,
    losses: &BTreeSet<LossKind>,
) -> CoverageReport {
    let mut kind_counts = BTreeMap::new();
    let mut loss_counts = BTreeMap::new();
    for spec in specs {
        for node in &spec.graph.nodes {
            *kind_counts.entry(node.kind()).or_insert(0) += 1;
        }
        *loss_counts.entry(spec.loss).or_insert(0) += 1;
    }
    let used_kinds: Vec<LayerKind> = registry.iter().copied().filter(|k| kind_counts.contains_key(k)).collect();
    let unused_kinds: Vec<LayerKind> = registry.iter().copied().filter(|k| !kind_counts.contains_key(k)).collect();
    let used_losses: Vec<LossKind> = losses.iter().copied().filter(|l| loss_counts.contains_key(l)).collect();
    CoverageReport {
        registered_kinds: registry.len(),
        functionality_coverage: percent(used_kinds.len(), registry.len()),
        loss_coverage: percent(used_losses.len(), losses.len()),
        registered_losses: losses.len(),
        used_kinds,
        unused_kinds,
        used_losses,
        kind_counts,
        loss_counts,
    }
}

impl CoverageReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "layer kinds: {}/{} ({:.3}%)\nloss kinds: {}/{} ({:.3}%)\n",
            self.used_kinds.len(),
            self.registered_kinds,
            self.functionality_coverage,
            self.used_losses.len(),
            self.registered_losses,
            self.loss_coverage
        );
        if !self.unused_kinds.is_empty() {
            let names: Vec<String> = self.unused_kinds.iter().map(ToString::to_string).collect();
            s.push_str(&format!("unused: {}\n", names.join(", ")));
        }
        s
    }
}
