//! Differential detection over three backends, one of them a seeded
//! mutant, followed by majority-vote localization.
//!
//! cargo run --example differential_detection -- [fault]

use archfuzz::campaign::trigger_preset;
use archfuzz::detect::{detect_model, DetectorConfig, InconsistencyReport};
use archfuzz::engine::{run_training_step, Backend, Fault};
use archfuzz::fuzz::generate_models;

fn main() {
    let fault: Fault = std::env::args().nth(1).map_or(Fault::ReluEqZero, |s| Fault::from_id(&s).expect("known fault"));
    let preset = trigger_preset(fault, 10, 0).expect("fault has a trigger preset");
    let backends: Vec<Backend> =
        ["naive", "reordered", &format!("naive+{}", fault.id())].iter().map(|b| b.parse().unwrap()).collect();
    let cfg = DetectorConfig::default();
    let mut report = InconsistencyReport::new(cfg);
    for spec in generate_models(&preset.generation).unwrap().specs {
        let traces: Vec<_> = backends.iter().map(|&b| run_training_step(&spec, b).into_trace(&spec)).collect();
        report.add(detect_model(&traces, &cfg).unwrap());
    }
    print!("{}", report.to_table());
}
