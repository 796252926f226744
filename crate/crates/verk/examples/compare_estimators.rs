//! Train TL, NAL and CAL on the same no-trap chain across five seeds and
//! tabulate the median final Ver@4.
//!
//!     cargo run --release --example compare_estimators

use verk::chain::{build_chain, ChainSpec};
use verk::estimators::{EstimatorKind, NormMode};
use verk::policy::ContextScheme;
use verk::trainer::{train, TrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() {
    let inst = build_chain(&ChainSpec::new(3, 4, 0).with_local_window(2)).unwrap();
    let base = TrainConfig {
        estimator: EstimatorKind::Cal,
        norm: NormMode::group_mean_std(),
        scheme: ContextScheme::AttemptState,
        trap_variant: false,
        k: 4,
        n: 16,
        batch: 4,
        steps: 200,
        learning_rate: 0.08,
        adam_betas: (0.9, 0.95),
        kl_coef: 0.0,
        eval_every: 10,
        eval_starts: 64,
        cap_l: 12,
        init_sharpness: 2.0,
        seed: 0,
    };
    println!("{:<6} {:>16} {:>16}", "method", "median final", "median best");
    for est in [EstimatorKind::Tl, EstimatorKind::Nal, EstimatorKind::Cal] {
        let mut finals = Vec::new();
        let mut bests = Vec::new();
        for seed in 1..=5 {
            let cfg = TrainConfig {
                estimator: est,
                seed,
                ..base.clone()
            };
            let run = train(&inst, &cfg).unwrap();
            finals.push(run.metrics.last().unwrap().ver_at_k);
            bests.push(
                run.metrics
                    .iter()
                    .map(|m| m.ver_at_k)
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
        println!(
            "{:<6} {:>16.4} {:>16.4}",
            format!("{est:?}"),
            median(finals),
            median(bests)
        );
    }
}
