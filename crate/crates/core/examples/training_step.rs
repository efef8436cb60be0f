//! Execute one training step of a generated model on two honest backends
//! and summarize the per-layer forward outputs and activation gradients.
//!
//! cargo run --example training_step -- [seed]

use archfuzz::detect::chebyshev_distance;
use archfuzz::engine::{run_training_step, Backend};
use archfuzz::fuzz::{generate_models, GenerationConfig};

fn main() {
    let seed = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let cfg = GenerationConfig { n_models: 1, max_vertices: 8, max_cells: 2, seed, ..Default::default() };
    let spec = generate_models(&cfg).unwrap().specs.remove(0);
    let a = run_training_step(&spec, Backend::NAIVE);
    let b = run_training_step(&spec, Backend::REORDERED);
    println!("{} with {} loss: {} / {}", spec.model_id, spec.loss, a.outcome.label(), b.outcome.label());
    println!("loss output {:?} vs {:?}", a.loss_output, b.loss_output);
    println!("{:>4} {:<22} {:>16} {:>12} {:>12}", "node", "kind", "shape", "FC dist", "BC dist");
    for node in &spec.graph.nodes {
        let fc = chebyshev_distance(&a.fc[&node.id], &b.fc[&node.id]).unwrap();
        let bc = chebyshev_distance(&a.bc[&node.id], &b.bc[&node.id]).unwrap();
        println!(
            "{:>4} {:<22} {:>16} {:>12.3e} {:>12.3e}",
            node.id,
            node.kind().to_string(),
            node.shape().to_string(),
            fc.value().unwrap_or(f64::NAN),
            bc.value().unwrap_or(f64::NAN)
        );
    }
}
