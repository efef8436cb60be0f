//! Functionality coverage of generated models as the batch grows, with
//! and without excluded layer kinds.
//!
//! cargo run --example coverage

use archfuzz::campaign::coverage_against;
use archfuzz::fuzz::{generate_models, GenerationConfig};
use archfuzz::ir::LayerKind;

fn main() {
    for excluded in [vec![], vec![LayerKind::LSTM, LayerKind::GRU, LayerKind::SimpleRNN]] {
        let mut cfg = GenerationConfig { n_models: 60, seed: 8, ..Default::default() };
        cfg.excluded_kinds.extend(excluded.iter().copied());
        let specs = generate_models(&cfg).unwrap().specs;
        let registry = cfg.registry();
        let losses = cfg.losses.iter().copied().collect();
        println!("excluding {excluded:?} ({} registered kinds)", registry.len());
        for n in [5, 15, 30, 60] {
            let c = coverage_against(&specs[..n], &registry, &losses);
            println!(
                "  {n:>3} models: {:6.2}% of layer kinds, {:5.1}% of losses",
                c.functionality_coverage, c.loss_coverage
            );
        }
        let c = coverage_against(&specs, &registry, &losses);
        let mut top: Vec<_> = c.kind_counts.iter().collect();
        top.sort_by(|a, b| b.1.cmp(a.1));
        let top: Vec<String> = top.iter().take(6).map(|(k, n)| format!("{k} x{n}")).collect();
        println!("  most frequent: {}", top.join(", "));
    }
}
