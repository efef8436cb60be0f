use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ir::{LayerKind, LossKind, TensorShape};

/// Where input batches come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Inclusive lower bound of the uniform input distribution.
    pub low: f64,
    pub high: f64,
    /// Fraction of input elements forced to exactly zero.
    pub zero_fraction: f64,
    /// Channels (last-axis indices) filled with NaN.
    pub nan_channels: Vec<usize>,
    /// Optional dataset manifest; when set, inputs are read from it instead
    /// of being sampled.
    pub dataset: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { low: -1.0, high: 1.0, zero_fraction: 0.0, nan_channels: Vec::new(), dataset: None }
    }
}

/// Knobs that skew hyperparameter sampling toward particular corners of the
/// schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaBias {
    /// Probability that a pooling window is forced to span the whole input.
    pub full_extent_pool: f64,
    /// Probability of `same` padding for windowed kinds.
    pub same_padding: f64,
}

impl Default for SchemaBias {
    fn default() -> Self {
        Self { full_extent_pool: 0.0, same_padding: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub n_models: usize,
    pub max_cells: usize,
    pub max_vertices: usize,
    pub input_shape: TensorShape,
    pub output_shape: TensorShape,
    pub seed: u64,
    pub excluded_kinds: Vec<LayerKind>,
    /// Loss kinds eligible for selection.
    pub losses: Vec<LossKind>,
    pub batch_size: usize,
    /// Probability of an optional forward skip edge in the chain template.
    pub p_skip: f64,
    /// Probability of choosing the chain template over the cell template.
    pub p_chain: f64,
    /// Per-example element cap for every generated node.
    pub max_elements: usize,
    /// Models whose honest training step produces a finite value larger
    /// than this in magnitude are discarded and regenerated.
    pub max_magnitude: Option<f64>,
    pub data: DataConfig,
    pub bias: SchemaBias,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_models: 50,
            max_cells: 5,
            max_vertices: 30,
            input_shape: TensorShape::new(vec![8, 8, 3]).expect("static shape"),
            output_shape: TensorShape::new(vec![10]).expect("static shape"),
            seed: 0,
            excluded_kinds: vec![LayerKind::Dropout, LayerKind::GaussianNoise],
            losses: LossKind::ALL.to_vec(),
            batch_size: 4,
            p_skip: 0.3,
            p_chain: 0.5,
            max_elements: 512,
            max_magnitude: Some(1e3),
            data: DataConfig::default(),
            bias: SchemaBias::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_models == 0 {
            return Err("n_models must be at least 1".into());
        }
        if self.max_cells == 0 || self.max_vertices == 0 {
            return Err("max_cells and max_vertices must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.losses.is_empty() {
            return Err("no loss kinds enabled".into());
        }
        if !(0.0..=1.0).contains(&self.p_skip) || !(0.0..=1.0).contains(&self.p_chain) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        if self.data.low > self.data.high {
            return Err("data.low exceeds data.high".into());
        }
        let largest = self.input_shape.element_count().max(self.output_shape.element_count());
        if self.max_elements < largest {
            return Err(format!("max_elements {} below boundary size {largest}", self.max_elements));
        }
        Ok(())
    }

    /// Selectable kinds that are not excluded.
    pub fn registry(&self) -> BTreeSet<LayerKind> {
        LayerKind::selectable().filter(|k| !self.excluded_kinds.contains(k)).collect()
    }

    /// Excludes every selectable kind outside `keep`.
    pub fn restrict_to(&mut self, keep: &[LayerKind]) {
        self.excluded_kinds = LayerKind::selectable().filter(|k| !keep.contains(k)).collect();
    }
}
