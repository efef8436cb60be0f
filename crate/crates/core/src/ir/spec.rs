//! Fully materialized models and their on-disk directory format.
//!
//! A model directory holds `model.json` plus one raw little-endian `f32`
//! file per weight tensor, one for the input batch and one for the labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{infer_shapes, validate_graph, ModelGraph, Node};
use super::layer::Layer;
use super::loss::LossKind;
use super::shape::TensorShape;
use super::IrError;
use crate::tensor::Tensor;

pub const SPEC_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

impl BlobRef {
    fn f32(file: String, shape: Vec<usize>) -> Self {
        Self { file, dtype: "float32".into(), shape }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeEntry {
    id: usize,
    layer: Layer,
    inputs: Vec<usize>,
    shape: TensorShape,
    #[serde(default)]
    weights: Vec<BlobRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_id: String,
    seed: u64,
    batch_size: usize,
    loss: LossKind,
    input_shape: TensorShape,
    output_shape: TensorShape,
    nodes: Vec<NodeEntry>,
    edges: Vec<(usize, usize)>,
    input: BlobRef,
    labels: BlobRef,
}

/// A generated model with everything needed to run one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model_id: String,
    pub seed: u64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Graph with every node shape inferred.
    pub graph: ModelGraph,
    /// Weight tensors per node, in the order given by `Layer::weight_shapes`.
    pub weights: Vec<Vec<Tensor<f32>>>,
    /// Input batch, shape `[B, input dims...]`.
    pub input: Tensor<f32>,
    /// Labels, shape `[B, output dims...]`.
    pub labels: Tensor<f32>,
}

impl ModelSpec {
    pub fn input_shape(&self) -> &TensorShape {
        self.graph.nodes[self.graph.source()].shape()
    }

    pub fn output_shape(&self) -> &TensorShape {
        self.graph.nodes[self.graph.sink()].shape()
    }

    /// Expected weight shapes for node `i`.
    pub fn weight_shapes(&self, i: usize) -> Vec<Vec<usize>> {
        let node = &self.graph.nodes[i];
        let ins: Vec<&TensorShape> = node.inputs.iter().map(|&p| self.graph.nodes[p].shape()).collect();
        node.layer.weight_shapes(&ins)
    }

    /// Checks graph validity, shapes, weight layouts and data shapes.
    pub fn validate(&self) -> Result<(), IrError> {
        let violations = validate_graph(&self.graph);
        if !violations.is_empty() {
            return Err(IrError::Invalid(violations));
        }
        if self.graph.nodes.iter().any(|n| n.shape.is_none()) {
            return Err(IrError::Spec("node shapes not inferred".into()));
        }
        let src = self.graph.source();
        let reinferred = infer_shapes(&self.graph, self.graph.nodes[src].shape())?;
        if reinferred != self.graph {
            return Err(IrError::Spec("stored shapes disagree with shape inference".into()));
        }
        if self.weights.len() != self.graph.len() {
            return Err(IrError::Spec(format!("{} weight lists for {} nodes", self.weights.len(), self.graph.len())));
        }
        for i in 0..self.graph.len() {
            let want = self.weight_shapes(i);
            let got: Vec<Vec<usize>> = self.weights[i].iter().map(|t| t.shape.clone()).collect();
            if want != got {
                return Err(IrError::Spec(format!("node {i}: weight shapes {got:?}, expected {want:?}")));
            }
        }
        let b = self.batch_size;
        if b == 0 {
            return Err(IrError::Spec("batch size is zero".into()));
        }
        let want_in = self.input_shape().with_batch(b);
        if self.input.shape != want_in {
            return Err(IrError::Spec(format!("input batch shape {:?}, expected {want_in:?}", self.input.shape)));
        }
        let want_out = self.output_shape().with_batch(b);
        if self.labels.shape != want_out {
            return Err(IrError::Spec(format!("labels shape {:?}, expected {want_out:?}", self.labels.shape)));
        }
        Ok(())
    }

    fn manifest(&self) -> Manifest {
        let nodes = self
            .graph
            .nodes
            .iter()
            .map(|n| NodeEntry {
                id: n.id,
                layer: n.layer.clone(),
                inputs: n.inputs.clone(),
                shape: n.shape().clone(),
                weights: self.weights[n.id]
                    .iter()
                    .enumerate()
                    .map(|(k, w)| BlobRef::f32(format!("w{:04}_{k}.bin", n.id), w.shape.clone()))
                    .collect(),
            })
            .collect();
        Manifest {
            format_version: SPEC_FORMAT_VERSION,
            model_id: self.model_id.clone(),
            seed: self.seed,
            batch_size: self.batch_size,
            loss: self.loss,
            input_shape: self.input_shape().clone(),
            output_shape: self.output_shape().clone(),
            nodes,
            edges: self.graph.edges(),
            input: BlobRef::f32("input.bin".into(), self.input.shape.clone()),
            labels: BlobRef::f32("labels.bin".into(), self.labels.shape.clone()),
        }
    }

    /// Pretty-printed `model.json` contents.
    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    /// Writes the model directory, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IrError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let m = self.manifest();
        for (node, entry) in m.nodes.iter().enumerate() {
            for (blob, w) in entry.weights.iter().zip(&self.weights[node]) {
                write_blob(&dir.join(&blob.file), &w.data)?;
            }
        }
        write_blob(&dir.join(&m.input.file), &self.input.data)?;
        write_blob(&dir.join(&m.labels.file), &self.labels.data)?;
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, self.manifest_json() + "\n").map_err(|e| io_err(&path, e))
    }

    /// Reads and validates a model directory.
    pub fn read_dir(dir: &Path) -> Result<ModelSpec, IrError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| IrError::Json { path: path.clone(), source: e })?;
        if m.format_version != SPEC_FORMAT_VERSION {
            return Err(IrError::Spec(format!("unsupported model format version {}", m.format_version)));
        }
        let mut graph = ModelGraph::default();
        let mut weights = Vec::with_capacity(m.nodes.len());
        for entry in &m.nodes {
            graph.nodes.push(Node {
                id: entry.id,
                layer: entry.layer.clone(),
                inputs: entry.inputs.clone(),
                shape: Some(entry.shape.clone()),
            });
            let mut ws = Vec::with_capacity(entry.weights.len());
            for blob in &entry.weights {
                ws.push(read_blob(dir, blob)?);
            }
            weights.push(ws);
        }
        if graph.edges() != m.edges {
            return Err(IrError::Spec("edge list disagrees with node inputs".into()));
        }
        let spec = ModelSpec {
            model_id: m.model_id,
            seed: m.seed,
            batch_size: m.batch_size,
            loss: m.loss,
            graph,
            weights,
            input: read_blob(dir, &m.input)?,
            labels: read_blob(dir, &m.labels)?,
        };
        spec.validate()?;
        if spec.input_shape() != &m.input_shape || spec.output_shape() != &m.output_shape {
            return Err(IrError::Spec("boundary shapes disagree with node shapes".into()));
        }
        Ok(spec)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IrError {
    IrError::Io { path: path.to_path_buf(), source }
}

fn write_blob(path: &Path, data: &[f32]) -> Result<(), IrError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_blob(dir: &Path, blob: &BlobRef) -> Result<Tensor<f32>, IrError> {
    if blob.dtype != "float32" {
        return Err(IrError::Spec(format!("{}: unsupported dtype {}", blob.file, blob.dtype)));
    }
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let n: usize = blob.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(IrError::Spec(format!("{}: {} bytes for shape {:?}", blob.file, bytes.len(), blob.shape)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor::from_vec(blob.shape.clone(), data))
}
