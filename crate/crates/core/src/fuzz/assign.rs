//! Turns an untyped skeleton into a typed, shape-checked model graph.

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::GenerationConfig;
use super::params::{fold_shape, sample_params};
use super::skeleton::{Role, Skeleton};
use super::stats::LayerUsageStats;
use super::FuzzError;
use crate::ir::layer::RankReq;
use crate::ir::{infer_shapes, validate_graph, Arity, Layer, LayerKind, LossKind, ModelGraph, Node, TensorShape};

/// Attempts allowed per node before the skeleton is abandoned.
pub const PARAM_ATTEMPTS: usize = 32;

const REDUCTION_KINDS: [LayerKind; 6] = [
    LayerKind::MaxPooling1D,
    LayerKind::MaxPooling2D,
    LayerKind::MaxPooling3D,
    LayerKind::AveragePooling1D,
    LayerKind::AveragePooling2D,
    LayerKind::AveragePooling3D,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coerce {
    /// Leave matching shapes alone; minimal adapter otherwise.
    IfNeeded,
    /// Always insert an adapter on a merge edge.
    MergeEdge,
    /// Always project through a dense layer.
    Project,
}

struct Builder<'a> {
    graph: ModelGraph,
    cap: usize,
    cfg: &'a GenerationConfig,
}

impl Builder<'_> {
    fn shape(&self, id: usize) -> &TensorShape {
        self.graph.nodes[id].shape()
    }

    fn try_shape(&self, layer: &Layer, inputs: &[usize]) -> Option<TensorShape> {
        let ins: Vec<&TensorShape> = inputs.iter().map(|&i| self.shape(i)).collect();
        let out = layer.output_shape(&ins).ok()?;
        (out.element_count() <= self.cap).then_some(out)
    }

    fn push(&mut self, layer: Layer, inputs: Vec<usize>, shape: TensorShape) -> usize {
        let id = self.graph.nodes.len();
        self.graph.nodes.push(Node { id, layer, inputs, shape: Some(shape) });
        id
    }

    fn push_checked(&mut self, layer: Layer, inputs: Vec<usize>) -> Result<usize, FuzzError> {
        match self.try_shape(&layer, &inputs) {
            Some(s) => Ok(self.push(layer, inputs, s)),
            None => Err(FuzzError::Retry(format!("{} rejected its input", layer.kind()))),
        }
    }

    /// Coerces node `from` to `target`: a plain reshape when element counts
    /// agree, otherwise flatten, dense projection, reshape.
    fn coerce(&mut self, from: usize, target: &TensorShape, mode: Coerce) -> Result<usize, FuzzError> {
        let src = self.shape(from).clone();
        if mode == Coerce::IfNeeded && &src == target {
            return Ok(from);
        }
        if mode != Coerce::Project && src.element_count() == target.element_count() {
            return self.push_checked(Layer::Reshape { target: target.clone() }, vec![from]);
        }
        let full = mode == Coerce::MergeEdge;
        let mut cur = from;
        if src.rank() > 1 || full {
            cur = self.push_checked(Layer::Flatten, vec![cur])?;
        }
        cur = self.push_checked(Layer::Dense { units: target.element_count() }, vec![cur])?;
        if target.rank() > 1 || full {
            cur = self.push_checked(Layer::Reshape { target: target.clone() }, vec![cur])?;
        }
        Ok(cur)
    }

    fn place_si<R: Rng + ?Sized>(&mut self, kind: LayerKind, pred: usize, rng: &mut R) -> Result<usize, FuzzError> {
        let src = self.shape(pred).clone();
        let need = match kind.rank_req() {
            RankReq::Any => None,
            req if req.accepts(src.rank()) => None,
            RankReq::Exactly(r) | RankReq::AtLeast(r) => Some(r),
        };
        for _ in 0..PARAM_ATTEMPTS {
            let adapted = need.map(|r| fold_shape(src.element_count(), r, rng));
            let input = adapted.clone().unwrap_or_else(|| src.clone());
            let layer = sample_params(kind, &input, &self.cfg.bias, rng);
            let out = match layer.output_shape(&[&input]) {
                Ok(o) if o.element_count() <= self.cap => o,
                _ => continue,
            };
            let mut from = pred;
            if let Some(a) = adapted {
                from = self.push(Layer::Reshape { target: a.clone() }, vec![pred], a);
            }
            return Ok(self.push(layer, vec![from], out));
        }
        Err(FuzzError::Retry(format!("no legal parameters for {kind} on {src}")))
    }

    fn place_mi<R: Rng + ?Sized>(&mut self, kind: LayerKind, preds: &[usize], rng: &mut R) -> Result<usize, FuzzError> {
        let candidates: Vec<TensorShape> = preds.iter().map(|&p| self.shape(p).clone()).collect();
        for _ in 0..PARAM_ATTEMPTS {
            let target = candidates.choose(rng).expect("predecessors").clone();
            let out_elems = if kind == LayerKind::Concatenate {
                target.element_count() * preds.len()
            } else {
                target.element_count()
            };
            if out_elems > self.cap {
                continue;
            }
            let mut inputs = Vec::with_capacity(preds.len());
            for &p in preds {
                inputs.push(self.coerce(p, &target, Coerce::MergeEdge)?);
            }
            let layer = sample_params(kind, &target, &self.cfg.bias, rng);
            return self.push_checked(layer, inputs);
        }
        Err(FuzzError::Retry(format!("{kind} output exceeds the element cap")))
    }
}

/// Assigns kinds, hyperparameters and shapes to every skeleton vertex and
/// attaches the output head for `loss`.
pub fn assign_layers<R: Rng + ?Sized>(
    skeleton: &Skeleton,
    cfg: &GenerationConfig,
    loss: LossKind,
    stats: &mut LayerUsageStats,
    rng: &mut R,
) -> Result<ModelGraph, FuzzError> {
    let order = skeleton.dag.topological_order().map_err(|e| FuzzError::Retry(e.to_string()))?;
    let mut b = Builder { graph: ModelGraph::default(), cap: cfg.max_elements, cfg };
    let mut node_of = vec![usize::MAX; skeleton.len()];
    let registry = cfg.registry();
    let pools: Vec<LayerKind> = REDUCTION_KINDS.iter().copied().filter(|k| registry.contains(k)).collect();

    for &v in &order {
        let preds: Vec<usize> = skeleton.dag.preds[v].iter().map(|&p| node_of[p]).collect();
        node_of[v] = match preds.len() {
            0 => b.push(Layer::Input, vec![], cfg.input_shape.clone()),
            1 => {
                let kind = if skeleton.roles[v] == Role::Reduction && !pools.is_empty() {
                    let k = stats.sample_among(&pools, rng).expect("non-empty");
                    stats.record(k);
                    k
                } else {
                    stats.select_layer(Arity::Si, rng)?
                };
                b.place_si(kind, preds[0], rng)?
            }
            _ => {
                let kind = stats.select_layer(Arity::Mi, rng)?;
                b.place_mi(kind, &preds, rng)?
            }
        };
    }

    let sink = node_of[*order.last().expect("non-empty skeleton")];
    // A lone input vertex is also the output and always gets a projection.
    let mode = if sink == 0 { Coerce::Project } else { Coerce::IfNeeded };
    let out = b.coerce(sink, &cfg.output_shape, mode)?;
    if loss.wants_probabilities() {
        b.push_checked(Layer::Softmax, vec![out])?;
    }

    let graph = b.graph;
    let violations = validate_graph(&graph);
    if !violations.is_empty() {
        return Err(FuzzError::Retry(format!("{} violations", violations.len())));
    }
    let inferred = infer_shapes(&graph, &cfg.input_shape).map_err(|e| FuzzError::Retry(e.to_string()))?;
    debug_assert_eq!(inferred, graph);
    Ok(inferred)
}
