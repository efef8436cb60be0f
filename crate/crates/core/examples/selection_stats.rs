//! Usage-weighted layer selection: rarely used kinds are drawn more often.
//!
//! cargo run --example selection_stats

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use archfuzz::fuzz::stats::{probabilities, roulette};
use archfuzz::fuzz::{GenerationConfig, LayerUsageStats};
use archfuzz::ir::{Arity, LossKind};

fn main() {
    let counts = [0, 1, 3];
    println!("usage counts {counts:?} -> probabilities {:?}", probabilities(&counts));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut hits = [0; 3];
    for _ in 0..7000 {
        hits[roulette(&counts, &mut rng).unwrap()] += 1;
    }
    println!("7000 frozen draws: {hits:?}");

    let cfg = GenerationConfig::default();
    let mut stats = LayerUsageStats::new(cfg.registry(), LossKind::ALL.iter().copied());
    for _ in 0..500 {
        stats.select_layer(Arity::Si, &mut rng).unwrap();
    }
    let mut probs = stats.class_probabilities(Arity::Si);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("after 500 adaptive single-input draws:");
    for (kind, p) in probs.iter().take(5).chain(probs.iter().rev().take(3)) {
        println!("  {:<24} used {:>3}  p = {p:.4}", kind.to_string(), stats.count(*kind));
    }
}
