//! Run a small mutant campaign, then re-execute the model behind its
//! strongest finding at several thresholds.
//!
//! cargo run --example replay

use archfuzz::campaign::{replay, run_campaign, trigger_preset, CampaignConfig, Isolation};
use archfuzz::detect::DetectorConfig;
use archfuzz::engine::Fault;

fn main() {
    let workdir = std::env::temp_dir().join("archfuzz-replay");
    let preset = trigger_preset(Fault::HingeNoDivide, 10, 0).unwrap();
    let cfg = CampaignConfig {
        generation: preset.generation,
        backends: vec!["naive".into(), "reordered".into(), "reordered+hinge-no-divide".into()],
        workdir: workdir.clone(),
        isolation: Isolation::InProcess,
        ..Default::default()
    };
    let summary = run_campaign(&cfg).unwrap();
    let Some(top) = summary.report.findings.iter().max_by(|a, b| a.distance.total_cmp(&b.distance)) else {
        println!("no findings to replay");
        return;
    };
    println!("replaying {} ({} {}, distance {:.4})", top.model_id, top.stage, top.kind, top.distance);
    for t in [0.05, 0.15, 0.3, 1.0] {
        let detector = DetectorConfig { t, ..cfg.detector };
        let r = replay(&workdir, &top.model_id, &cfg.backends, &detector).unwrap();
        println!("t={t:<5} findings {}  traces identical to campaign: {}", r.detection.findings.len(), r.identical);
    }
}
