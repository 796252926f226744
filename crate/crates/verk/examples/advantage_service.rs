//! Round-trip the advantage service: roll out groups, export the JSON-lines
//! log, stream it back through the service, and print the records.
//!
//!     cargo run --release --example advantage_service

use std::io::BufReader;
use verk::chain::{build_chain, ChainSpec};
use verk::cli::cmd_advantages;
use verk::estimators::{EstimatorKind, NormMode};
use verk::policy::{init_from_optimal, ContextScheme};
use verk::rollout::{rollout_group, RolloutLogRecord};

fn main() {
    let inst = build_chain(&ChainSpec::new(2, 3, 7).with_local_window(2)).unwrap();
    let policy = init_from_optimal(&inst, ContextScheme::AttemptState, 1.0, false, 2);
    let mut log = String::new();
    for g in 0..3u64 {
        let group = rollout_group(&inst, &policy, 0, false, 2, 4, 6, g);
        let record = RolloutLogRecord::from_group(&group, format!("group-{g}"));
        log.push_str(&serde_json::to_string(&record).unwrap());
        log.push('\n');
    }
    println!("-- rollout log --");
    print!("{log}");

    let mut out = Vec::new();
    cmd_advantages(
        EstimatorKind::Cal,
        &NormMode::group_mean_std(),
        &mut BufReader::new(log.as_bytes()),
        &mut out,
        &mut std::io::stderr(),
        true,
    )
    .unwrap();
    println!("-- calibrated advantages --");
    print!("{}", String::from_utf8(out).unwrap());
}
