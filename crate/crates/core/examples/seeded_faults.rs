//! Every shipped mutant fault against its trigger preset: which stage
//! flags it and whether the vote singles out the mutant.
//!
//! cargo run --release --example seeded_faults -- [n_models]

use archfuzz::campaign::{trigger_preset, Channel};
use archfuzz::detect::{detect_model, DetectorConfig, InconsistencyReport, Vote};
use archfuzz::engine::{run_training_step, Backend, Fault};
use archfuzz::fuzz::generate_models;

fn main() {
    let n_models = std::env::args().nth(1).map_or(20, |s| s.parse().expect("n_models"));
    let cfg = DetectorConfig::default();
    for &fault in Fault::ALL {
        let Some(preset) = trigger_preset(fault, n_models, 0) else { continue };
        let mutant = format!("naive+{}", fault.id());
        let backends: Vec<Backend> =
            ["naive", "reordered", mutant.as_str()].iter().map(|b| b.parse().unwrap()).collect();
        let mut report = InconsistencyReport::new(cfg);
        for spec in generate_models(&preset.generation).unwrap().specs {
            let traces: Vec<_> = backends.iter().map(|&b| run_training_step(&spec, b).into_trace(&spec)).collect();
            report.add(detect_model(&traces, &cfg).unwrap());
        }
        let channel = match preset.channel {
            Channel::Stage(s) => s.to_string(),
            Channel::Nan => "NaN".to_string(),
        };
        let vote = report.votes.iter().find(|v| v.channel == channel && v.kind == preset.kind).map(|v| &v.vote);
        let verdict = match vote {
            Some(Vote::Implicated(b)) => format!("implicates {b}"),
            Some(Vote::Ambiguous) => "ambiguous".to_string(),
            None => "not detected".to_string(),
        };
        println!("{:<28} expected {channel} {:<22} {verdict}", fault.id(), preset.kind);
    }
}
