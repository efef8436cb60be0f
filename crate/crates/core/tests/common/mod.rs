#![allow(dead_code)]

use archfuzz::fuzz::data::init_weights;
use archfuzz::fuzz::{generate_models, GenerationConfig};
use archfuzz::ir::{infer_shapes, Layer, LossKind, ModelGraph, ModelSpec, Node, TensorShape};
use archfuzz::tensor::Tensor;

/// A chain `Input -> layers...` with shapes inferred.
pub fn chain(layers: Vec<Layer>, input_shape: &[usize]) -> ModelGraph {
    let mut nodes = vec![Node { id: 0, layer: Layer::Input, inputs: vec![], shape: None }];
    for (i, layer) in layers.into_iter().enumerate() {
        nodes.push(Node { id: i + 1, layer, inputs: vec![i], shape: None });
    }
    infer_shapes(&ModelGraph { nodes }, &TensorShape::new(input_shape.to_vec()).unwrap()).unwrap()
}

/// A chain model with explicit data. Weights default to the seeded
/// initializer when `weights` is `None`.
pub fn chain_spec(
    layers: Vec<Layer>,
    input_shape: &[usize],
    loss: LossKind,
    input: Vec<f32>,
    labels: Vec<f32>,
    weights: Option<Vec<Vec<Tensor<f32>>>>,
) -> ModelSpec {
    let graph = chain(layers, input_shape);
    let per_example: usize = input_shape.iter().product();
    let batch = input.len() / per_example;
    let mut in_shape = vec![batch];
    in_shape.extend_from_slice(input_shape);
    let out_shape = graph.nodes[graph.sink()].shape().with_batch(batch);
    let spec = ModelSpec {
        model_id: "m00000".into(),
        seed: 7,
        batch_size: batch,
        loss,
        weights: weights.unwrap_or_else(|| init_weights(&graph, 7)),
        input: Tensor::from_vec(in_shape, input),
        labels: Tensor::from_vec(out_shape, labels),
        graph,
    };
    spec.validate().unwrap();
    spec
}

pub fn generated(n: usize, seed: u64) -> Vec<ModelSpec> {
    let cfg = GenerationConfig { n_models: n, seed, ..Default::default() };
    generate_models(&cfg).unwrap().specs
}

use std::collections::BTreeMap;

use archfuzz::trace::{LossTrace, NodeMeta, Outcome, TraceBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_value(rng: &mut ChaCha8Rng) -> f32 {
    match rng.gen_range(0..10) {
        0 => f32::from_bits(0x7FC0_0000 | rng.gen_range(0..0x0040_0000)),
        1 => f32::NEG_INFINITY,
        2 => f32::INFINITY,
        3 => -0.0,
        4 => f32::from_bits(rng.gen_range(1..0x0080_0000)),
        _ => f32::from_bits(rng.gen()),
    }
}

fn random_tensor(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let rank = rng.gen_range(0..=4);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=4)).collect();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| random_value(rng)).collect())
}

/// A structurally valid bundle with arbitrary payloads, including NaN
/// payloads, infinities, signed zeros and subnormals.
pub fn random_bundle(seed: u64) -> TraceBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=6);
    let nodes: Vec<NodeMeta> = (0..n)
        .map(|i| NodeMeta {
            id: i,
            kind: ["Input", "Dense", "ReLU", "Add"][rng.gen_range(0..4)].to_string(),
            inputs: if i == 0 { vec![] } else { vec![rng.gen_range(0..i)] },
        })
        .collect();
    let outcome = match rng.gen_range(0..3) {
        0 => Outcome::Ok,
        1 => Outcome::Nan,
        _ => Outcome::Crash(format!("failure {} at 0x{:x}", rng.gen::<u16>(), rng.gen::<u32>())),
    };
    let full = outcome == Outcome::Ok;
    let mut fc = BTreeMap::new();
    let mut bc = BTreeMap::new();
    for i in 0..n {
        if full || rng.gen_bool(0.5) {
            fc.insert(i, random_tensor(&mut rng));
        }
        if full || rng.gen_bool(0.5) {
            bc.insert(i, random_tensor(&mut rng));
        }
    }
    let lc = (full || rng.gen_bool(0.5))
        .then(|| LossTrace { loss_output: random_value(&mut rng), loss_gradient: random_tensor(&mut rng) });
    TraceBundle {
        backend_id: ["naive", "reordered", "naive+relu-eq-zero"][rng.gen_range(0..3)].into(),
        model_id: format!("m{:05}", rng.gen_range(0..100_000)),
        outcome,
        precision: "float32".into(),
        loss: rng.gen_bool(0.5).then(|| "categorical_hinge".to_string()),
        nodes,
        fc,
        lc,
        bc,
    }
}
