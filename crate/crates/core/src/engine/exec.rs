//! Whole-model execution: forward pass, loss, backward pass.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Duration;

use super::backend::{Backend, Fault};
use super::kernels::Kernel;
use super::loss::loss_forward_backward;
use crate::ir::{topological_order, LossKind, ModelSpec};
use crate::tensor::{cast_slice, Real, Tensor};
use crate::trace::{LossTrace, NodeMeta, Outcome, TraceBundle};

/// A model compiled for one backend and scalar type.
#[derive(Debug, Clone)]
pub struct Program<T> {
    pub backend: Backend,
    pub loss: LossKind,
    pub order: Vec<usize>,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    pub source: usize,
    pub sink: usize,
    /// Batched output shape of each node.
    pub shapes: Vec<Vec<usize>>,
    kernels: Vec<Kernel<T>>,
    /// Node at which the debug faults fire.
    trap: Option<usize>,
}

/// Everything computed by one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Pass<T> {
    pub outputs: Vec<Tensor<T>>,
    pub loss_output: T,
    pub loss_gradient: Tensor<T>,
    /// Gradient with respect to each node's output.
    pub output_grads: Vec<Tensor<T>>,
    /// Gradient with respect to each input slot of each node. For the source
    /// node the single entry is the gradient of its output.
    pub input_grads: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> Program<T> {
    /// Compiles the model. Fails with `unsupported: <kind>` when the backend
    /// declines a layer kind.
    pub fn compile(spec: &ModelSpec, backend: Backend) -> Result<Self, String> {
        let g = &spec.graph;
        let order = topological_order(g).map_err(|e| e.to_string())?;
        let b = spec.batch_size;
        let mut kernels = Vec::with_capacity(g.len());
        for node in &g.nodes {
            if !backend.supports(node.kind()) {
                return Err(format!("unsupported: {}", node.kind()));
            }
            let ins: Vec<_> = node.inputs.iter().map(|&p| g.nodes[p].shape()).collect();
            let w: Vec<Vec<T>> = spec.weights[node.id].iter().map(|t| cast_slice(&t.data)).collect();
            kernels.push(Kernel::compile(&node.layer, &ins, node.shape(), &w, backend.fault));
        }
        let trap = match backend.fault {
            Some(Fault::DebugAbort | Fault::DebugSleep) => Some(order[order.len() / 2]),
            _ => None,
        };
        Ok(Self {
            backend,
            loss: spec.loss,
            preds: g.nodes.iter().map(|n| n.inputs.clone()).collect(),
            succs: g.successors(),
            source: g.source(),
            sink: g.sink(),
            shapes: g.nodes.iter().map(|n| n.shape().with_batch(b)).collect(),
            order,
            kernels,
            trap,
        })
    }

    fn fire_trap(&self, node: usize) {
        if self.trap != Some(node) {
            return;
        }
        match self.backend.fault {
            Some(Fault::DebugAbort) => {
                eprintln!("debug-abort: aborting at node {node}");
                std::process::abort();
            }
            Some(Fault::DebugSleep) => std::thread::sleep(Duration::from_secs(30)),
            _ => {}
        }
    }

    /// Output of node `i` given the (possibly overridden) outputs of its
    /// predecessors.
    pub fn eval_node(&self, i: usize, inputs: &[&Tensor<T>]) -> Tensor<T> {
        self.kernels[i].forward(self.backend.flavor, inputs, &self.shapes[i])
    }

    /// Digest of the branches node `i` takes on `inputs`.
    pub fn node_branches<H: std::hash::Hasher>(&self, i: usize, inputs: &[&Tensor<T>], h: &mut H) {
        self.kernels[i].branches(inputs, h);
    }

    pub fn loss_branches<H: std::hash::Hasher>(&self, y: &Tensor<T>, labels: &Tensor<T>, h: &mut H) {
        let classes = *y.shape.last().expect("batched output");
        super::loss::loss_branches(self.loss, &y.data, &labels.data, classes, h);
    }

    pub fn forward(&self, input: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut outs: Vec<Option<Tensor<T>>> = vec![None; self.kernels.len()];
        for &i in &self.order {
            self.fire_trap(i);
            let y = if i == self.source {
                self.eval_node(i, &[input])
            } else {
                let xs: Vec<&Tensor<T>> =
                    self.preds[i].iter().map(|&p| outs[p].as_ref().expect("topological")).collect();
                self.eval_node(i, &xs)
            };
            outs[i] = Some(y);
        }
        outs.into_iter().map(|o| o.expect("every node evaluated")).collect()
    }

    pub fn loss(&self, y: &Tensor<T>, labels: &Tensor<T>) -> (T, Tensor<T>) {
        let classes = *y.shape.last().expect("batched output");
        let (lo, g) =
            loss_forward_backward(self.loss, self.backend.flavor, self.backend.fault, &y.data, &labels.data, classes);
        (lo, Tensor::from_vec(y.shape.clone(), g))
    }

    /// Back-propagates `loss_gradient` through the graph.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        outs: &[Tensor<T>],
        loss_gradient: &Tensor<T>,
    ) -> (Vec<Tensor<T>>, Vec<Vec<Tensor<T>>>) {
        let n = self.kernels.len();
        let mut og: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut ig: Vec<Vec<Tensor<T>>> = vec![Vec::new(); n];
        for &i in self.order.iter().rev() {
            let gy = if i == self.sink {
                loss_gradient.clone()
            } else {
                let mut acc = Tensor::zeros(self.shapes[i].clone());
                for &s in &self.succs[i] {
                    let slot = self.preds[s].iter().position(|&p| p == i).expect("edge");
                    for (a, v) in acc.data.iter_mut().zip(&ig[s][slot].data) {
                        *a = *a + *v;
                    }
                }
                acc
            };
            let xs: Vec<&Tensor<T>> =
                if i == self.source { vec![input] } else { self.preds[i].iter().map(|&p| &outs[p]).collect() };
            ig[i] = self.kernels[i].backward(self.backend.flavor, &xs, &outs[i], &gy);
            og[i] = Some(gy);
        }
        (og.into_iter().map(|g| g.expect("every node visited")).collect(), ig)
    }

    pub fn pass(&self, input: &Tensor<T>, labels: &Tensor<T>) -> Pass<T> {
        let outputs = self.forward(input);
        let (loss_output, loss_gradient) = self.loss(&outputs[self.sink], labels);
        let (output_grads, input_grads) = self.backward(input, &outputs, &loss_gradient);
        Pass { outputs, loss_output, loss_gradient, output_grads, input_grads }
    }
}

/// Stacks per-input gradients into one backward-stage trace entry:
/// `[k, B, ...]` when every input has the same shape, a flat vector otherwise.
pub fn stack_input_grads<T: Real>(grads: &[Tensor<T>]) -> Tensor<T> {
    let data: Vec<T> = grads.iter().flat_map(|g| g.data.iter().copied()).collect();
    if grads.iter().all(|g| g.shape == grads[0].shape) {
        let mut shape = vec![grads.len()];
        shape.extend_from_slice(&grads[0].shape);
        Tensor::from_vec(shape, data)
    } else {
        let n = data.len();
        Tensor::from_vec(vec![n], data)
    }
}

/// Result of one training step on one backend.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub model_id: String,
    pub backend_id: String,
    pub outcome: Outcome,
    pub fc: BTreeMap<usize, Tensor<f32>>,
    pub loss_output: Option<f32>,
    pub loss_gradient: Option<Tensor<f32>>,
    pub bc: BTreeMap<usize, Tensor<f32>>,
    /// First node in topological order with a non-finite output or input
    /// gradient.
    pub first_nonfinite: Option<usize>,
}

impl StepResult {
    pub fn into_trace(self, spec: &ModelSpec) -> TraceBundle {
        let lc = match (self.loss_output, self.loss_gradient) {
            (Some(loss_output), Some(loss_gradient)) => Some(LossTrace { loss_output, loss_gradient }),
            _ => None,
        };
        TraceBundle {
            backend_id: self.backend_id,
            model_id: self.model_id,
            outcome: self.outcome,
            precision: "float32".into(),
            loss: Some(spec.loss.to_string()),
            nodes: node_meta(spec),
            fc: self.fc,
            lc,
            bc: self.bc,
        }
    }
}

pub fn node_meta(spec: &ModelSpec) -> Vec<NodeMeta> {
    spec.graph
        .nodes
        .iter()
        .map(|n| NodeMeta { id: n.id, kind: n.kind().to_string(), inputs: n.inputs.clone() })
        .collect()
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

fn crashed(spec: &ModelSpec, backend: Backend, message: String) -> StepResult {
    StepResult {
        model_id: spec.model_id.clone(),
        backend_id: backend.id(),
        outcome: Outcome::Crash(message),
        fc: BTreeMap::new(),
        loss_output: None,
        loss_gradient: None,
        bc: BTreeMap::new(),
        first_nonfinite: None,
    }
}

/// Runs one forward pass, loss and backward pass in `f32` and records every
/// stage. Panics inside the backend become crash outcomes.
pub fn run_training_step(spec: &ModelSpec, backend: Backend) -> StepResult {
    let program = match Program::<f32>::compile(spec, backend) {
        Ok(p) => p,
        Err(msg) => return crashed(spec, backend, msg),
    };
    let pass = match catch_unwind(AssertUnwindSafe(|| program.pass(&spec.input, &spec.labels))) {
        Ok(p) => p,
        Err(e) => return crashed(spec, backend, panic_message(e.as_ref())),
    };
    let first_nonfinite = program
        .order
        .iter()
        .copied()
        .find(|&i| !pass.outputs[i].is_finite() || pass.input_grads[i].iter().any(|g| !g.is_finite()));
    let finite = first_nonfinite.is_none() && pass.loss_output.is_finite() && pass.loss_gradient.is_finite();
    StepResult {
        model_id: spec.model_id.clone(),
        backend_id: backend.id(),
        outcome: if finite { Outcome::Ok } else { Outcome::Nan },
        bc: pass.input_grads.iter().enumerate().map(|(i, g)| (i, stack_input_grads(g))).collect(),
        fc: pass.outputs.into_iter().enumerate().collect(),
        loss_output: Some(pass.loss_output),
        loss_gradient: Some(pass.loss_gradient),
        first_nonfinite,
    }
}
