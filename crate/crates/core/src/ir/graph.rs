//! Model graphs: structure checks, deterministic topological order and
//! shape inference.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::layer::{Arity, Layer, LayerKind};
use super::shape::TensorShape;
use super::IrError;

/// Bare directed graph over dense node ids. `preds[i]` lists the direct
/// predecessors of node `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dag {
    pub preds: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new(n: usize) -> Self {
        Self { preds: vec![Vec::new(); n] }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut dag = Dag::new(n);
        for &(u, v) in edges {
            dag.add_edge(u, v);
        }
        dag
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn add_node(&mut self) -> usize {
        self.preds.push(Vec::new());
        self.preds.len() - 1
    }

    pub fn add_edge(&mut self, src: usize, dst: usize) {
        if !self.preds[dst].contains(&src) {
            self.preds[dst].push(src);
            self.preds[dst].sort_unstable();
        }
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.preds.iter().enumerate().flat_map(|(v, ps)| ps.iter().map(move |&u| (u, v))).collect();
        e.sort_unstable();
        e
    }

    /// Successor lists, each in ascending id order. Out-of-range
    /// predecessors are ignored.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.len()];
        for (v, ps) in self.preds.iter().enumerate() {
            for &u in ps {
                if u < self.len() {
                    succ[u].push(v);
                }
            }
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        succ
    }

    pub fn sources(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.preds[i].is_empty()).collect()
    }

    pub fn sinks(&self) -> Vec<usize> {
        self.successors().iter().enumerate().filter(|(_, s)| s.is_empty()).map(|(i, _)| i).collect()
    }

    /// Kahn's algorithm with ascending-id tie breaking.
    pub fn topological_order(&self) -> Result<Vec<usize>, IrError> {
        let n = self.len();
        let succ = self.successors();
        let mut indeg: Vec<usize> = self.preds.iter().map(|ps| ps.iter().filter(|&&u| u < n).count()).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(u)) = ready.pop() {
            order.push(u);
            for &v in &succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.push(Reverse(v));
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every unprocessed node keeps an unprocessed predecessor, so walking
        // predecessors from any of them must revisit a node.
        let done: BTreeSet<usize> = order.into_iter().collect();
        let start = (0..n).find(|i| !done.contains(i)).expect("unprocessed node");
        let mut seen = vec![usize::MAX; n];
        let mut cur = start;
        let mut step = 0;
        loop {
            seen[cur] = step;
            step += 1;
            let prev =
                *self.preds[cur].iter().find(|&&u| u < n && !done.contains(&u)).expect("unprocessed predecessor");
            if seen[prev] != usize::MAX {
                return Err(IrError::Cycle { src: prev, dst: cur });
            }
            cur = prev;
        }
    }
}

/// A broken graph rule, reported as data by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    NonDenseId { position: usize, id: usize },
    DanglingEdge { src: usize, dst: usize },
    SelfLoop { node: usize },
    Cycle { src: usize, dst: usize },
    NoSource,
    MultipleSources(Vec<usize>),
    NoSink,
    MultipleSinks(Vec<usize>),
    Isolated { node: usize },
    Arity { node: usize, kind: LayerKind, inputs: usize },
    SourceNotInput { node: usize, kind: LayerKind },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty graph"),
            Violation::NonDenseId { position, id } => {
                write!(f, "node at position {position} has id {id}")
            }
            Violation::DanglingEdge { src, dst } => write!(f, "edge {src} -> {dst} leaves the graph"),
            Violation::SelfLoop { node } => write!(f, "self loop on node {node}"),
            Violation::Cycle { src, dst } => write!(f, "cycle through edge {src} -> {dst}"),
            Violation::NoSource => write!(f, "no source"),
            Violation::MultipleSources(s) => write!(f, "multiple sources: {s:?}"),
            Violation::NoSink => write!(f, "no sink"),
            Violation::MultipleSinks(s) => write!(f, "multiple sinks: {s:?}"),
            Violation::Isolated { node } => write!(f, "isolated node {node}"),
            Violation::Arity { node, kind, inputs } => {
                write!(f, "node {node} ({kind}) has {inputs} inputs")
            }
            Violation::SourceNotInput { node, kind } => {
                write!(f, "source node {node} is {kind}, not Input")
            }
        }
    }
}

/// Checks the structural rules shared by skeletons and typed graphs:
/// acyclic, one source, one sink, no isolated vertex.
pub fn validate_dag(dag: &Dag) -> Vec<Violation> {
    let n = dag.len();
    let mut out = Vec::new();
    if n == 0 {
        out.push(Violation::Empty);
        return out;
    }
    for (v, ps) in dag.preds.iter().enumerate() {
        for &u in ps {
            if u >= n {
                out.push(Violation::DanglingEdge { src: u, dst: v });
            } else if u == v {
                out.push(Violation::SelfLoop { node: v });
            }
        }
    }
    if let Err(IrError::Cycle { src, dst }) = dag.topological_order() {
        out.push(Violation::Cycle { src, dst });
    }
    let sources = dag.sources();
    match sources.len() {
        0 => out.push(Violation::NoSource),
        1 => {}
        _ => out.push(Violation::MultipleSources(sources.clone())),
    }
    let sinks = dag.sinks();
    match sinks.len() {
        0 => out.push(Violation::NoSink),
        1 => {}
        _ => out.push(Violation::MultipleSinks(sinks.clone())),
    }
    if n > 1 {
        for &s in &sources {
            if sinks.contains(&s) {
                out.push(Violation::Isolated { node: s });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub layer: Layer,
    /// Direct predecessors in ascending id order; their order is the input
    /// order seen by the layer.
    #[serde(default)]
    pub inputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<TensorShape>,
}

impl Node {
    pub fn kind(&self) -> LayerKind {
        self.layer.kind()
    }

    pub fn shape(&self) -> &TensorShape {
        self.shape.as_ref().expect("shape inferred")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelGraph {
    pub nodes: Vec<Node>,
}

impl ModelGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dag(&self) -> Dag {
        Dag { preds: self.nodes.iter().map(|n| n.inputs.clone()).collect() }
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.nodes[i].inputs
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        self.dag().successors()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.dag().edges()
    }

    pub fn source(&self) -> usize {
        self.nodes.iter().position(|n| n.inputs.is_empty()).unwrap_or(0)
    }

    pub fn sink(&self) -> usize {
        let succ = self.successors();
        succ.iter().rposition(|s| s.is_empty()).unwrap_or(self.len() - 1)
    }

    pub fn kinds(&self) -> BTreeSet<LayerKind> {
        self.nodes.iter().map(Node::kind).collect()
    }
}

/// Returns an empty list iff every graph invariant holds.
pub fn validate_graph(g: &ModelGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for (pos, node) in g.nodes.iter().enumerate() {
        if node.id != pos {
            out.push(Violation::NonDenseId { position: pos, id: node.id });
        }
    }
    let dag = g.dag();
    out.extend(validate_dag(&dag));
    for node in &g.nodes {
        let kind = node.kind();
        let k = node.inputs.len();
        match kind.arity() {
            Arity::Source if k != 0 => out.push(Violation::Arity { node: node.id, kind, inputs: k }),
            Arity::Si if k != 1 => out.push(Violation::Arity { node: node.id, kind, inputs: k }),
            Arity::Mi if k < 2 => out.push(Violation::Arity { node: node.id, kind, inputs: k }),
            _ => {}
        }
        if k == 0 && kind != LayerKind::Input {
            out.push(Violation::SourceNotInput { node: node.id, kind });
        }
    }
    out
}

pub fn topological_order(g: &ModelGraph) -> Result<Vec<usize>, IrError> {
    g.dag().topological_order()
}

/// Assigns every node's output shape in topological order.
pub fn infer_shapes(g: &ModelGraph, input_shape: &TensorShape) -> Result<ModelGraph, IrError> {
    let violations = validate_graph(g);
    if !violations.is_empty() {
        return Err(IrError::Invalid(violations));
    }
    let mut out = g.clone();
    for i in topological_order(g)? {
        let shape = if out.nodes[i].inputs.is_empty() {
            input_shape.clone()
        } else {
            let ins: Vec<&TensorShape> = out.nodes[i]
                .inputs
                .iter()
                .map(|&p| out.nodes[p].shape.as_ref().expect("predecessor inferred"))
                .collect();
            out.nodes[i].layer.output_shape(&ins).map_err(|e| IrError::Shape { node: i, rule: e.0 })?
        };
        out.nodes[i].shape = Some(shape);
    }
    Ok(out)
}
