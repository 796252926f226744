//! Property tests over randomly shaped groups and mazes.

use proptest::prelude::*;
use verk::estimators::{
    attempt_advantages, cal_weights, plan_advantages, EstimatorKind, GroupRewards, NormMode,
};
use verk::maze::{generate_maze, parse_ascii, render_ascii, MazeSpec};
use verk::policy::PolicyParams;

/// Reward rows that respect the protocol: failures up to the stopping time,
/// then either one success or k failures.
fn group_strategy() -> impl Strategy<Value = GroupRewards> {
    (1usize..=4, 2usize..=8)
        .prop_flat_map(|(k, n)| {
            let traj = (0usize..k, any::<bool>()).prop_map(move |(fails, succeeded)| {
                let mut r = vec![0.0; fails];
                if succeeded {
                    r.push(1.0);
                } else {
                    r.resize(k, 0.0);
                }
                if r.is_empty() {
                    r.push(0.0);
                }
                r
            });
            (Just(k), proptest::collection::vec(traj, n))
        })
        .prop_map(|(k, rows)| GroupRewards::from_rewards(k, rows))
}

proptest! {
    #[test]
    fn loo_advantages_sum_to_zero_within_reach_sets(g in group_strategy()) {
        let plan = attempt_advantages(&g, EstimatorKind::Nal, &NormMode::leave_one_out()).unwrap();
        for i in 1..=g.k {
            let set = g.reach_set(i);
            if set.len() >= 2 {
                let sum: f64 = set.iter().map(|&n| plan.per_trajectory[n][i - 1].advantage).sum();
                prop_assert!(sum.abs() < 1e-9, "attempt {i} sum {sum}");
            }
        }
    }

    #[test]
    fn cal_raw_weights_live_in_unit_interval_and_grow_with_attempt(g in group_strategy()) {
        let w = cal_weights(&g, &NormMode::leave_one_out());
        for t in &w.per_trajectory {
            for &v in t {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for pair in t.windows(2) {
                prop_assert!(pair[0] <= pair[1] + 1e-12);
            }
        }
    }

    #[test]
    fn nal_equals_cal_with_unit_weights(g in group_strategy()) {
        for norm in [NormMode::leave_one_out(), NormMode::group_mean_std()] {
            let nal = attempt_advantages(&g, EstimatorKind::Nal, &norm).unwrap();
            let cal = attempt_advantages(&g, EstimatorKind::Cal, &norm).unwrap();
            for (a, b) in nal.per_trajectory.iter().zip(&cal.per_trajectory) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert_eq!(x.advantage, y.advantage);
                }
            }
        }
    }

    #[test]
    fn equal_rewards_give_zero_advantages(
        k in 1usize..=3,
        n in 2usize..=6,
        all_succeed in any::<bool>(),
    ) {
        let row = if all_succeed { vec![1.0] } else { vec![0.0; k] };
        let g = GroupRewards::from_rewards(k, vec![row; n]);
        for kind in [EstimatorKind::Tl, EstimatorKind::Nal, EstimatorKind::Cal] {
            for norm in [NormMode::leave_one_out(), NormMode::group_mean_std()] {
                let plan = plan_advantages(&g, kind, &norm).unwrap();
                for t in &plan.per_trajectory {
                    for s in t {
                        prop_assert!(s.advantage.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maze_render_parse_roundtrip(cells_n in 2usize..=7, seed in any::<u64>()) {
        let mut rng = verk::rollout::derive_rng(seed, &[1]);
        let maze = generate_maze(&MazeSpec { cells_n, seed }, &mut rng).unwrap();
        let back = parse_ascii(&render_ascii(&maze)).unwrap();
        prop_assert_eq!(maze, back);
    }

    #[test]
    fn checkpoint_roundtrip_on_random_tables(
        n_states in 2usize..=6,
        rows in proptest::collection::vec(
            (0u16..4, proptest::collection::vec(-5.0f64..5.0, 8)),
            1..6,
        ),
    ) {
        let mut params = PolicyParams::new(verk::policy::ContextScheme::AttemptState, n_states, 7);
        for (attempt, values) in rows {
            let ctx = verk::policy::ContextScheme::AttemptState.context_key(
                attempt as usize + 1,
                verk::policy::BranchHint::None,
                attempt % n_states as u16,
            );
            let row = params.row_mut(ctx);
            for (slot, v) in row.iter_mut().zip(values) {
                *slot = v;
            }
        }
        let back = PolicyParams::from_text(&params.to_text()).unwrap();
        prop_assert_eq!(params, back);
    }
}
