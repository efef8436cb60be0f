//! Check a backend's activation gradients against 64-bit central finite
//! differences.
//!
//! cargo run --release --example gradient_check -- [n_models] [seed]

use archfuzz::engine::{compare_with_fd, finite_difference_gradients, run_training_step, Backend, FdOptions};
use archfuzz::fuzz::{generate_models, GenerationConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let n_models = args.next().map_or(5, |s| s.parse().expect("n_models"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = GenerationConfig { n_models, seed, max_vertices: 10, ..Default::default() };
    for spec in generate_models(&cfg).unwrap().specs {
        let step = run_training_step(&spec, Backend::NAIVE);
        if !step.outcome.is_ok() {
            println!("{}: {}, skipped", spec.model_id, step.outcome.label());
            continue;
        }
        let fd = finite_difference_gradients(&spec, Backend::NAIVE, &FdOptions::default()).unwrap();
        let bc: Vec<_> = step.bc.values().cloned().collect();
        let cmp = compare_with_fd(&bc, &fd);
        let worst = cmp.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).unwrap();
        let excluded: usize = cmp.iter().map(|c| c.unverifiable).sum();
        let checked: usize = cmp.iter().map(|c| c.checked).sum();
        println!(
            "{}: worst relative error {:.2e} at node {} ({}), {checked} checked, {excluded} at kinks",
            spec.model_id,
            worst.rel_err,
            worst.node,
            spec.graph.nodes[worst.node].kind()
        );
    }
}
