//! Acceptance suite: every release gate runs here, one printed PASS/FAIL
//! line per criterion, with the tolerances pinned next to the checks.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use verk::battery::{run_default_battery, BatteryReport};
use verk::chain::{build_chain, verify_attempt, ChainSpec, TrapAssignment};
use verk::cli::{advantages_for_record, cmd_maze_gen, cmd_train, ServiceRecord};
use verk::estimators::{plan_advantages, EstimatorKind, GroupRewards, NormMode};
use verk::maze::{generate_maze, render_ascii, verify_moves, MazeSpec};
use verk::policy::{init_from_optimal, ContextScheme, PolicyParams};
use verk::rollout::{derive_rng, rollout_group, RolloutLogRecord};
use verk::trainer::{train, TrainConfig};

fn battery() -> &'static BatteryReport {
    static REPORT: OnceLock<BatteryReport> = OnceLock::new();
    REPORT.get_or_init(|| run_default_battery().expect("battery instances stay enumerable"))
}

/// Assert every battery check whose name contains `needle`, printing one
/// criterion line.
fn gate(criterion: &str, needle: &str) {
    let report = battery();
    let matched: Vec<_> = report
        .checks
        .iter()
        .filter(|c| c.name.contains(needle))
        .collect();
    assert!(!matched.is_empty(), "no battery checks match {needle}");
    let failed: Vec<_> = matched.iter().filter(|c| !c.pass).collect();
    let worst = matched
        .iter()
        .map(|c| c.measured)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} {criterion} ({} checks, worst measured {:.3e})",
        if failed.is_empty() { "PASS" } else { "FAIL" },
        matched.len(),
        worst
    );
    for f in &failed {
        println!("  failed: {} measured {:.3e} vs {:.1e}", f.name, f.measured, f.tolerance);
    }
    assert!(failed.is_empty());
}

#[test]
fn criterion_1_unbiasedness_tl_and_al() {
    gate("criterion 1: E[TL-RLOO] = grad rho (<= 1e-9)", "/unbiased-tl-");
    gate(
        "criterion 1: E[ALExact-RLOO] = grad rho (<= 1e-9)",
        "/unbiased-al-exact-",
    );
}

#[test]
fn criterion_2_cal_unbiasedness_and_weight_identity() {
    gate("criterion 2: E[CAL-RLOO] = grad rho (<= 1e-9)", "/unbiased-cal-");
    gate(
        "criterion 2: E[w_CAL | reach, live future] = prod(1-rho_j) (<= 1e-9)",
        "/cal-weight-identity-",
    );
}

#[test]
fn criterion_3_nal_bias_and_discount_law() {
    gate("criterion 3: NAL bias witness (> 1e-6)", "/nal-bias-witness");
    gate(
        "criterion 3: gamma ratio law (rel err <= 1e-6)",
        "/nal-discount-ratio-law",
    );
    gate(
        "criterion 3: gamma fit residual (<= 1e-8)",
        "/nal-discount-fit-residual",
    );
}

#[test]
fn criterion_4_variance_reduction() {
    gate("criterion 4: Var(Z_TL) >= Var(Z_AL) per attempt", "/var-ordering-");
    gate(
        "criterion 4: equality at K=1 and binary V (<= 1e-10)",
        "/var-equality-",
    );
    gate("criterion 4: strict gap on witness (> 1e-8)", "/var-strict-gap-");
}

#[test]
fn criterion_5_gradient_identities() {
    gate(
        "criterion 5: trajectory form = attempt form (<= 1e-10)",
        "/tower-identity",
    );
    // 100 random score probes against central finite differences.
    let mut rng = derive_rng(5150, &[0]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        use rand::Rng;
        let n = rng.gen_range(2..6);
        let mut params = PolicyParams::new(ContextScheme::AttemptState, n, 0);
        let ctx = ContextScheme::AttemptState.context_key(
            rng.gen_range(1..3),
            verk::policy::BranchHint::None,
            rng.gen_range(0..n as u16),
        );
        for t in 0..n {
            params.row_mut(ctx)[t] = rng.gen_range(-2.0..2.0);
        }
        let token = rng.gen_range(0..n) as u16;
        let analytic = params.grad_log_prob(&ctx, token);
        let h = 1e-5;
        for t in 0..n as u16 {
            let mut plus = params.clone();
            plus.row_mut(ctx)[t as usize] += h;
            let mut minus = params.clone();
            minus.row_mut(ctx)[t as usize] -= h;
            let fd = (plus.log_prob(&ctx, token) - minus.log_prob(&ctx, token)) / (2.0 * h);
            worst = worst.max((fd - analytic.get(&(ctx, t))).abs());
        }
    }
    let pass = worst < 1e-6;
    println!(
        "{} criterion 5: scores vs finite differences on 100 probes (worst {:.3e} <= 1e-6)",
        if pass { "PASS" } else { "FAIL" },
        worst
    );
    assert!(pass);
}

#[test]
fn criterion_6_verifier_oracles() {
    // Chain: every token sequence of length <= 4 on a 6-state chain, from
    // every start state, against an independent simulation of the four
    // verifier rules.
    let inst = build_chain(&ChainSpec::new(2, 3, 7).with_local_window(2)).unwrap();
    let n = inst.n_states() as u16;
    let mut checked = 0usize;
    let mut agree = true;
    for start in 0..n {
        let dist = inst.distances(TrapAssignment::NONE)[start as usize];
        let mut seqs: Vec<Vec<u16>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for s in &seqs {
                for t in 0..n {
                    let mut s2 = s.clone();
                    s2.push(t);
                    next.push(s2);
                }
            }
            for s in &next {
                let expected = {
                    let mut prev = start;
                    let mut ok = true;
                    for &t in s {
                        if !inst.has_edge(prev, t) || t < prev {
                            ok = false;
                            break;
                        }
                        prev = t;
                    }
                    ok && prev == inst.terminal() && Some(s.len() as u32) == dist
                };
                agree &= verify_attempt(&inst, start, s, TrapAssignment::NONE).success == expected;
                checked += 1;
            }
            seqs = next;
        }
    }
    println!(
        "{} criterion 6a: chain verifier vs exhaustive enumeration ({checked} sequences)",
        if agree && checked == 6 * 1554 { "PASS" } else { "FAIL" }
    );
    assert!(agree);
    assert_eq!(checked, 6 * 1554);

    // Maze: all 4^6 move strings on a generated 4x4 maze against a direct
    // simulation on the rendered ASCII grid.
    let mut endpoint_rng = derive_rng(6, &[0]);
    let maze = generate_maze(&MazeSpec { cells_n: 4, seed: 19 }, &mut endpoint_rng).unwrap();
    let ascii: Vec<Vec<char>> = render_ascii(&maze)
        .lines()
        .map(|r| r.chars().collect())
        .collect();
    let alphabet = ['U', 'D', 'L', 'R'];
    let mut agree = true;
    let mut checked = 0usize;
    for code in 0..4096usize {
        let mut s = String::new();
        let mut c = code;
        for _ in 0..6 {
            s.push(alphabet[c % 4]);
            c /= 4;
        }
        let expected = {
            let mut pos = ((2 * maze.start.0 + 1) as isize, (2 * maze.start.1 + 1) as isize);
            let mut ok = true;
            for ch in s.chars() {
                let (dr, dc) = match ch {
                    'U' => (-1isize, 0isize),
                    'D' => (1, 0),
                    'L' => (0, -1),
                    _ => (0, 1),
                };
                let wall = (pos.0 + dr, pos.1 + dc);
                let dest = (pos.0 + 2 * dr, pos.1 + 2 * dc);
                if dest.0 < 0 || dest.1 < 0 || dest.0 >= 9 || dest.1 >= 9 {
                    ok = false;
                    break;
                }
                if ascii[wall.0 as usize][wall.1 as usize] == '*' {
                    ok = false;
                    break;
                }
                pos = dest;
            }
            ok && ascii[pos.0 as usize][pos.1 as usize] == 'E'
        };
        agree &= verify_moves(&maze, &s) == expected;
        checked += 1;
    }
    println!(
        "{} criterion 6b: maze verifier vs brute-force simulation ({checked} strings)",
        if agree { "PASS" } else { "FAIL" }
    );
    assert!(agree);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    (0..curves[0].len())
        .map(|i| median(curves.iter().map(|c| c[i]).collect()))
        .collect()
}

fn run_seeds(inst: &verk::ChainInstance, base: &TrainConfig, est: EstimatorKind) -> Vec<Vec<f64>> {
    (1..=5u64)
        .map(|seed| {
            let cfg = TrainConfig {
                estimator: est,
                seed,
                ..base.clone()
            };
            train(inst, &cfg)
                .expect("training must not diverge")
                .metrics
                .iter()
                .map(|m| m.ver_at_k)
                .collect()
        })
        .collect()
}

#[test]
fn criterion_7_trap_plateau() {
    // Desk-scale trap chain. Spec seed 0 routes the last boundary edge onto
    // state 8, leaving both trap candidates survivable from every start.
    let inst = build_chain(&ChainSpec::new(3, 4, 0).with_local_window(2)).unwrap();
    assert_eq!(inst.trap_candidates, Some((9, 10)));
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
    let tl = median_curve(&run_seeds(&inst, &base, EstimatorKind::Tl));
    let nal = median_curve(&run_seeds(&inst, &base, EstimatorKind::Nal));
    let cal = median_curve(&run_seeds(&inst, &base, EstimatorKind::Cal));

    let crossing_step = |curve: &[f64]| -> Option<usize> {
        curve
            .iter()
            .position(|&v| v > 0.80)
            .map(|idx| idx * base.eval_every)
    };
    // Fraction of training steps the median curve spends inside the plateau
    // band before first exceeding 0.80.
    let band_fraction = |curve: &[f64]| -> f64 {
        let cross = curve.iter().position(|&v| v > 0.80).unwrap_or(curve.len());
        let in_band = curve[..cross]
            .iter()
            .filter(|&&v| (0.70..=0.80).contains(&v))
            .count();
        in_band as f64 * base.eval_every as f64 / base.steps as f64
    };

    let tl_band = band_fraction(&tl);
    let nal_band = band_fraction(&nal);
    let pass_band = tl_band >= 0.20 && nal_band >= 0.20;
    println!(
        "{} criterion 7: TL and NAL linger in [0.70, 0.80] (TL {:.0}%, NAL {:.0}% of steps; >= 20%)",
        if pass_band { "PASS" } else { "FAIL" },
        tl_band * 100.0,
        nal_band * 100.0
    );

    let cal_cross = crossing_step(&cal);
    let tl_cross = crossing_step(&tl);
    let nal_cross = crossing_step(&nal);
    let le = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(x), Some(y)) => x <= y,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let pass_cross = le(cal_cross, tl_cross) && le(cal_cross, nal_cross);
    println!(
        "{} criterion 7: CAL breaks 0.80 no later than baselines (CAL {cal_cross:?}, TL {tl_cross:?}, NAL {nal_cross:?})",
        if pass_cross { "PASS" } else { "FAIL" }
    );
    assert!(pass_band && pass_cross);
}

#[test]
fn criterion_8_method_ordering_no_trap() {
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
    let final_median = |est| {
        median(
            run_seeds(&inst, &base, est)
                .iter()
                .map(|c| *c.last().unwrap())
                .collect(),
        )
    };
    let tl = final_median(EstimatorKind::Tl);
    let nal = final_median(EstimatorKind::Nal);
    let cal = final_median(EstimatorKind::Cal);
    let pass = cal >= nal && cal >= tl;
    println!(
        "{} criterion 8: median final Ver@4 ordering (CAL {cal:.4} >= NAL {nal:.4}, CAL >= TL {tl:.4})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn criterion_9_k1_collapse() {
    let inst = build_chain(&ChainSpec::new(2, 3, 7).with_local_window(2)).unwrap();
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        use rand::Rng;
        let mut rng = derive_rng(9, &[trial]);
        let sharp = rng.gen_range(0.0..2.0);
        let policy = init_from_optimal(&inst, ContextScheme::AttemptState, sharp, false, 1);
        let n = rng.gen_range(2..6);
        let group = rollout_group(&inst, &policy, 0, false, 1, n, 6, trial);
        let rewards = GroupRewards::from_group(&group);
        for norm in [NormMode::leave_one_out(), NormMode::group_mean_std()] {
            let tl = plan_advantages(&rewards, EstimatorKind::Tl, &norm).unwrap();
            let nal = plan_advantages(&rewards, EstimatorKind::Nal, &norm).unwrap();
            let cal = plan_advantages(&rewards, EstimatorKind::Cal, &norm).unwrap();
            for t in 0..n {
                let a = tl.per_trajectory[t][0];
                for other in [&nal.per_trajectory[t][0], &cal.per_trajectory[t][0]] {
                    worst = worst
                        .max((a.advantage - other.advantage).abs())
                        .max((a.weight - other.weight).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-12;
    println!(
        "{} criterion 9: K=1 collapse over 100 random groups (worst diff {:.3e} <= 1e-12)",
        if pass { "PASS" } else { "FAIL" },
        worst
    );
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = "\
[chain]
n_hubs = 2
m = 3
local_window = 2
seed = 7

[policy]
scheme = attempt_state
init_sharpness = 1.0

[train]
estimator = cal
norm = meanstd
k = 2
steps = 20
n = 8
batch = 2
eval_every = 5
eval_starts = 16
seed = 3
";
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(&cfg_path, config).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cmd_train(&cfg_path, &out_a).unwrap();
    cmd_train(&cfg_path, &out_b).unwrap();
    let mut pass = true;
    for artifact in ["metrics.csv", "policy.txt", "run_manifest.cfg"] {
        let a = std::fs::read(out_a.join(artifact)).unwrap();
        let b = std::fs::read(out_b.join(artifact)).unwrap();
        pass &= a == b;
    }
    // Rerunning from the emitted manifest reproduces the run bit for bit.
    let out_c = dir.path().join("c");
    cmd_train(&out_a.join("run_manifest.cfg"), &out_c).unwrap();
    pass &= std::fs::read(out_a.join("metrics.csv")).unwrap()
        == std::fs::read(out_c.join("metrics.csv")).unwrap();

    for out in ["m1", "m2"] {
        cmd_maze_gen(4, 12, 4, 99, &dir.path().join(out)).unwrap();
    }
    for split in ["train.jsonl", "test.jsonl"] {
        let a = std::fs::read(dir.path().join("m1").join(split)).unwrap();
        let b = std::fs::read(dir.path().join("m2").join(split)).unwrap();
        pass &= a == b;
    }
    println!(
        "{} criterion 10: rerun with identical config and seed is byte-identical",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// The advantage service and the in-process estimator path are one code
/// path: feeding the exporter's own log back through the service reproduces
/// the plan exactly.
#[test]
fn service_matches_in_process_plan() {
    let inst = build_chain(&ChainSpec::new(2, 3, 7).with_local_window(2)).unwrap();
    let policy = init_from_optimal(&inst, ContextScheme::AttemptState, 0.8, false, 3);
    let mut pass = true;
    for g in 0..50u64 {
        let group = rollout_group(&inst, &policy, 0, false, 3, 6, 6, g);
        let rewards = GroupRewards::from_group(&group);
        let log = RolloutLogRecord::from_group(&group, format!("g{g}"));
        let json = serde_json::to_string(&log).unwrap();
        let rec: ServiceRecord = serde_json::from_str(&json).unwrap();
        for kind in [EstimatorKind::Tl, EstimatorKind::Nal, EstimatorKind::Cal] {
            for norm in [NormMode::leave_one_out(), NormMode::group_mean_std()] {
                let plan = plan_advantages(&rewards, kind, &norm).unwrap();
                let service = advantages_for_record(&rec, kind, &norm);
                for (t, signals) in plan.per_trajectory.iter().enumerate() {
                    for (i, s) in signals.iter().enumerate() {
                        let e = &service.trajectories[t][i];
                        pass &= e.advantage.to_bits() == s.advantage.to_bits()
                            && e.weight.to_bits() == s.weight.to_bits()
                            && e.token_advantage
                                == Some(s.weight * s.advantage);
                    }
                }
            }
        }
    }
    println!(
        "{} shared path: service output equals in-process advantage plans bit for bit",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn exported_maze_records_satisfy_contract() {
    // The JSON-lines schema is the interface later stages consume; pin its
    // fields and the ascii alphabet.
    let dir = tempfile::tempdir().unwrap();
    cmd_maze_gen(5, 8, 3, 1, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["id", "cells_n", "ascii", "start", "goal", "seed"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        let ascii = v["ascii"].as_str().unwrap();
        assert!(ascii
            .chars()
            .all(|c| matches!(c, '*' | '.' | 'S' | 'E' | '\n')));
        let rows: Vec<&str> = ascii.lines().collect();
        assert_eq!(rows.len(), 11);
        assert!(rows.iter().all(|r| r.len() == 11));
    }
}
