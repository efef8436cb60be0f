//! Intermediate representation shared by generation, execution and
//! detection.

pub mod graph;
pub mod layer;
pub mod loss;
pub mod shape;
pub mod spec;

use std::path::PathBuf;

pub use graph::{infer_shapes, topological_order, validate_dag, validate_graph, Dag, ModelGraph, Node, Violation};
pub use layer::{ActivationFn, Arity, Category, Layer, LayerKind, Padding};
pub use loss::LossKind;
pub use shape::TensorShape;
pub use spec::{BlobRef, ModelSpec};

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("cycle through edge {src} -> {dst}")]
    Cycle { src: usize, dst: usize },
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("shape rule violated at node {node}: {rule}")]
    Shape { node: usize, rule: String },
    #[error("inconsistent model spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
