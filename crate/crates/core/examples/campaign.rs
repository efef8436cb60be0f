//! A complete campaign: generate models, run them on three backends in
//! isolated child processes, detect, vote and persist every artifact.
//!
//! Child processes re-invoke the `archfuzz` binary, so build it first:
//!
//! cargo build --bin archfuzz && cargo run --example campaign -- [workdir]

use std::path::PathBuf;

use archfuzz::campaign::{run_campaign, trigger_preset, CampaignConfig, Isolation};
use archfuzz::engine::Fault;

fn runner() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let bin = exe.parent()?.parent()?.join(format!("archfuzz{}", std::env::consts::EXE_SUFFIX));
    bin.is_file().then_some(bin)
}

fn main() {
    let workdir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("archfuzz-campaign"), PathBuf::from);
    let runner = runner();
    let cfg = CampaignConfig {
        generation: trigger_preset(Fault::MaxpoolTieGradient, 20, 5).unwrap().generation,
        backends: vec!["naive".into(), "reordered".into(), "naive+maxpool-tie-gradient".into()],
        workdir,
        isolation: if runner.is_some() { Isolation::Subprocess } else { Isolation::InProcess },
        runner,
        ..Default::default()
    };
    println!("isolation: {:?}", cfg.isolation);
    let summary = run_campaign(&cfg).expect("campaign runs");
    print!("{}", summary.report.to_table());
    print!("{}", summary.coverage.to_table());
    println!(
        "{} models, {} nan steps, {} crashed steps, {:.1}s; artifacts in {}",
        summary.models,
        summary.nan_steps,
        summary.crashed_steps,
        summary.timing.total_secs,
        summary.workdir.display()
    );
}
