//! Deterministic weights, input batches and labels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::DataConfig;
use super::FuzzError;
use crate::ir::{LossKind, ModelGraph, TensorShape};
use crate::tensor::Tensor;

const INPUT_STREAM: u64 = u64::MAX - 1;
const LABEL_STREAM: u64 = u64::MAX - 2;

/// Generator for one node's weights: keyed by the model seed and node id;
/// weight elements are drawn in serialization order.
pub fn weight_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    rng
}

/// Uniform `[-0.5, 0.5]` weights for every node.
pub fn init_weights(graph: &ModelGraph, seed: u64) -> Vec<Vec<Tensor<f32>>> {
    graph
        .nodes
        .iter()
        .map(|node| {
            let ins: Vec<&TensorShape> = node.inputs.iter().map(|&p| graph.nodes[p].shape()).collect();
            let mut rng = weight_rng(seed, node.id);
            node.layer
                .weight_shapes(&ins)
                .into_iter()
                .map(|shape| {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| (rng.gen::<f64>() - 0.5) as f32).collect();
                    Tensor::from_vec(shape, data)
                })
                .collect()
        })
        .collect()
}

/// Flat little-endian `f32` dataset described by a JSON manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub file: String,
    #[serde(default = "float32")]
    pub dtype: String,
    /// `[examples, per-example dims...]`.
    pub shape: Vec<usize>,
}

fn float32() -> String {
    "float32".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub example_shape: TensorShape,
    pub data: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.len() / self.example_shape.element_count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn load(manifest: &Path) -> Result<Dataset, FuzzError> {
        let io = |path: &Path, e: std::io::Error| FuzzError::Data(format!("{}: {e}", path.display()));
        let text = fs::read_to_string(manifest).map_err(|e| io(manifest, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| FuzzError::Data(format!("{}: {e}", manifest.display())))?;
        if m.dtype != "float32" || m.shape.len() < 2 {
            return Err(FuzzError::Data(format!("{}: need float32 data of rank >= 2", manifest.display())));
        }
        let blob: PathBuf = manifest.parent().unwrap_or(Path::new(".")).join(&m.file);
        let bytes = fs::read(&blob).map_err(|e| io(&blob, e))?;
        let n: usize = m.shape.iter().product();
        if bytes.len() != n * 4 || n == 0 {
            return Err(FuzzError::Data(format!("{}: {} bytes for shape {:?}", blob.display(), bytes.len(), m.shape)));
        }
        let example_shape = TensorShape::new(m.shape[1..].to_vec()).map_err(|e| FuzzError::Data(e.to_string()))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Dataset { example_shape, data })
    }

    /// Batch of `batch` consecutive examples starting at `start`, wrapping.
    pub fn batch(&self, start: usize, batch: usize) -> Tensor<f32> {
        let per = self.example_shape.element_count();
        let mut data = Vec::with_capacity(per * batch);
        for b in 0..batch {
            let i = (start + b) % self.len();
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor::from_vec(self.example_shape.with_batch(batch), data)
    }
}

/// Synthetic input batch drawn from the model seed.
pub fn synthetic_input(cfg: &DataConfig, shape: &TensorShape, batch: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INPUT_STREAM);
    let channels = shape.last();
    let n = shape.element_count() * batch;
    let data = (0..n)
        .map(|i| {
            let u = rng.gen::<f64>();
            let z = rng.gen::<f64>();
            if cfg.nan_channels.contains(&(i % channels)) {
                f32::NAN
            } else if z < cfg.zero_fraction {
                0.0
            } else {
                (cfg.low + (cfg.high - cfg.low) * u) as f32
            }
        })
        .collect();
    Tensor::from_vec(shape.with_batch(batch), data)
}

/// Labels matching the conventions of `loss`.
pub fn labels(loss: LossKind, shape: &TensorShape, batch: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LABEL_STREAM);
    let n = shape.element_count() * batch;
    let c = shape.last();
    let data = match loss {
        LossKind::MeanSquaredError => (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
        LossKind::MeanAbsolutePercentageError => (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.5f32..=1.5);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect(),
        LossKind::BinaryCrossentropy => (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        LossKind::CategoricalCrossentropy | LossKind::CategoricalHinge => {
            let mut v = vec![0.0f32; n];
            for row in 0..n / c {
                v[row * c + rng.gen_range(0..c)] = 1.0;
            }
            v
        }
    };
    Tensor::from_vec(shape.with_batch(batch), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_rows() {
        let s = TensorShape::new(vec![3, 5]).unwrap();
        let t = labels(LossKind::CategoricalCrossentropy, &s, 2, 7);
        for row in t.data.chunks(5) {
            assert_eq!(row.iter().sum::<f32>(), 1.0);
        }
    }

    #[test]
    fn zero_and_nan_injection() {
        let s = TensorShape::new(vec![4, 2]).unwrap();
        let cfg = DataConfig { zero_fraction: 1.0, nan_channels: vec![1], ..DataConfig::default() };
        let t = synthetic_input(&cfg, &s, 2, 1);
        for (i, v) in t.data.iter().enumerate() {
            if i % 2 == 1 {
                assert!(v.is_nan());
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn weight_streams_are_independent_of_order() {
        let mut a = weight_rng(11, 3);
        let mut b = weight_rng(11, 3);
        let _ = weight_rng(11, 2).gen::<u64>();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }
}
