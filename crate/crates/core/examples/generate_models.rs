//! Generate a batch of random models and write them as model directories.
//!
//! cargo run --example generate_models -- [n_models] [seed] [out_dir]

use std::path::PathBuf;

use archfuzz::campaign::write_generation;
use archfuzz::fuzz::{generate_models, GenerationConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let n_models = args.next().map_or(8, |s| s.parse().expect("n_models"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("archfuzz-generated"), PathBuf::from);

    let cfg = GenerationConfig { n_models, seed, ..Default::default() };
    let generation = generate_models(&cfg).expect("generation succeeds");
    for (spec, record) in generation.specs.iter().zip(&generation.records) {
        let kinds: Vec<String> = spec.graph.nodes.iter().map(|n| n.kind().to_string()).collect();
        println!(
            "{} {:?} {} nodes, loss {}, {} retries: {}",
            spec.model_id,
            record.template,
            spec.graph.len(),
            spec.loss,
            record.retries,
            kinds.join(" ")
        );
    }
    write_generation(&out, &cfg, &generation).expect("write models");
    println!("wrote {} models to {}", generation.specs.len(), out.display());
}
