//! Run the exact-enumeration check battery and print one line per check:
//! unbiasedness of the trajectory-level, exact attempt-level and calibrated
//! estimators, the bias and effective discount of the naive estimator, and
//! the per-attempt variance ordering.
//!
//!     cargo run --release --example oracle_checks

use verk::battery::{default_battery, run_default_battery, OUTCOME_CEILING, TUPLE_CEILING};
use verk::oracle::{enumerate_atlas, oracle_report};

fn main() {
    let report = run_default_battery().expect("battery instances are enumerable");
    print!("{}", report.to_text());

    // Full structured report for one instance, in the key/value form the
    // battery checks are derived from.
    let bi = &default_battery()[2];
    let atlas = enumerate_atlas(&bi.scenario, OUTCOME_CEILING).unwrap();
    let detailed = oracle_report(bi.name, &atlas, bi.group_size, TUPLE_CEILING).unwrap();
    println!("\n{}", detailed.to_text());

    if !report.all_pass() {
        std::process::exit(1);
    }
}
