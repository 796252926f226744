//! The trap variant under Ver@2: success plateaus near 0.75 while the
//! policy only follows shortest paths, because the trap is a fair coin over
//! two pre-terminal states and each attempt guesses it. Breaking the
//! plateau requires hint-conditioned correction on the second attempt;
//! this prints the median curves for the three estimators.
//!
//!     cargo run --release --example trap_plateau

use verk::chain::{build_chain, eligible_starts, ChainSpec};
use verk::estimators::{EstimatorKind, NormMode};
use verk::policy::ContextScheme;
use verk::trainer::{train, TrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() {
    let spec = ChainSpec::new(3, 4, 0).with_local_window(2);
    let inst = build_chain(&spec).unwrap();
    println!(
        "trap candidates {:?}, eligible starts {:?}",
        inst.trap_candidates,
        eligible_starts(&inst, true)
    );
    let base = TrainConfig {
        estimator: EstimatorKind::Cal,
        norm: NormMode::group_mean_std(),
        scheme: ContextScheme::AttemptBranchState,
        trap_variant: true,
        k: 2,
        n: 16,
        batch: 4,
        steps: 250,
        learning_rate: 0.005,
        adam_betas: (0.9, 0.95),
        kl_coef: 0.02,
        eval_every: 10,
        eval_starts: 128,
        cap_l: 12,
        init_sharpness: 12.0,
        seed: 0,
    };
    for est in [EstimatorKind::Tl, EstimatorKind::Nal, EstimatorKind::Cal] {
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for seed in 1..=5 {
            let cfg = TrainConfig {
                estimator: est,
                seed,
                ..base.clone()
            };
            let run = train(&inst, &cfg).unwrap();
            curves.push(run.metrics.iter().map(|m| m.ver_at_k).collect());
        }
        let curve: Vec<f64> = (0..curves[0].len())
            .map(|i| median(curves.iter().map(|c| c[i]).collect()))
            .collect();
        let cross = curve
            .iter()
            .position(|&v| v > 0.80)
            .map(|i| (i * base.eval_every).to_string())
            .unwrap_or_else(|| "never".into());
        println!("{est:?}: breaks 0.80 at step {cross}");
        let pts: Vec<String> = curve.iter().map(|v| format!("{v:.2}")).collect();
        println!("  median ver@2: {}", pts.join(" "));
    }
}
