//! Build a small diamond-shaped model graph by hand, infer its shapes and
//! run the structural validator on it and on a broken variant.
//!
//! cargo run --example build_graph

use archfuzz::ir::{infer_shapes, validate_graph, Layer, ModelGraph, Node, TensorShape};

fn node(id: usize, layer: Layer, inputs: Vec<usize>) -> Node {
    Node { id, layer, inputs, shape: None }
}

fn main() {
    let graph = ModelGraph {
        nodes: vec![
            node(0, Layer::Input, vec![]),
            node(1, Layer::Dense { units: 8 }, vec![0]),
            node(2, Layer::ReLU, vec![1]),
            node(3, Layer::Dense { units: 8 }, vec![0]),
            node(4, Layer::Add, vec![2, 3]),
            node(5, Layer::Dense { units: 3 }, vec![4]),
            node(6, Layer::Softmax, vec![5]),
        ],
    };
    let input = TensorShape::new(vec![4]).unwrap();
    let typed = infer_shapes(&graph, &input).expect("shapes are consistent");
    for n in &typed.nodes {
        println!("{:>2} {:<10} inputs {:?} -> {}", n.id, n.kind().to_string(), n.inputs, n.shape());
    }
    println!("violations: {:?}", validate_graph(&typed));

    let mut broken = typed.clone();
    broken.nodes[1].inputs = vec![4];
    for v in validate_graph(&broken) {
        println!("broken graph: {v}");
    }

    let mismatched = ModelGraph {
        nodes: vec![
            node(0, Layer::Input, vec![]),
            node(1, Layer::Dense { units: 5 }, vec![0]),
            node(2, Layer::Add, vec![0, 1]),
        ],
    };
    println!("shape inference on a bad merge: {}", infer_shapes(&mismatched, &input).unwrap_err());
}
