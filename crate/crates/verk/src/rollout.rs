//! The Ver@K rollout protocol: autoregressive attempts with early stopping,
//! per-trajectory trap draws, and group assembly.
//!
//! An attempt samples state tokens until it reaches the terminal, emits a
//! token with no edge from the current state, or hits the per-attempt cap.
//! Failed attempts reset to the same start; the trajectory stops at the
//! first verifier success or after K attempts. RETRY tokens exist only in
//! exported logs, never inside `Attempt::tokens`.

use crate::chain::{sample_trap, verify_attempt, ChainInstance, StateId, TrapAssignment};
use crate::policy::{BranchHint, ContextKey, PolicyParams};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Why an attempt stopped emitting tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    Terminal,
    Cap,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    /// 1-based attempt index within its trajectory.
    pub index: usize,
    pub tokens: Vec<StateId>,
    /// Context used to sample each token, parallel to `tokens`.
    pub contexts: Vec<ContextKey>,
    pub reward: u8,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: StateId,
    pub trap: TrapAssignment,
    pub attempts: Vec<Attempt>,
}

impl Trajectory {
    /// First success index, or K when every attempt failed. Attempts are
    /// stored only up to this point.
    pub fn stopping_time(&self) -> usize {
        self.attempts.len()
    }

    pub fn final_reward(&self) -> u8 {
        self.attempts.last().map(|a| a.reward).unwrap_or(0)
    }

    pub fn reaches(&self, attempt_index: usize) -> bool {
        self.stopping_time() >= attempt_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub start: StateId,
    pub trap_variant: bool,
    pub k: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Group {
    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// Indices of trajectories whose stopping time is at least `i`.
    pub fn reach_set(&self, i: usize) -> Vec<usize> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.reaches(i))
            .map(|(n, _)| n)
            .collect()
    }
}

/// Splitmix64 step; used to derive independent named streams from one seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream derivation: same (seed, labels) always yields the
/// same generator, independent streams for different labels.
pub fn derive_rng(seed: u64, labels: &[u64]) -> StdRng {
    let mut s = splitmix64(seed);
    for &l in labels {
        s = splitmix64(s ^ l.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    StdRng::seed_from_u64(s)
}

/// Candidate visited by the attempt, for the branch-aware context scheme.
/// When the attempt walks through both candidates the later visit wins.
pub fn branch_hint_of(inst: &ChainInstance, attempt: &Attempt) -> BranchHint {
    let Some((a, b)) = inst.trap_candidates else {
        return BranchHint::None;
    };
    let mut hint = BranchHint::None;
    for &tok in &attempt.tokens {
        if tok == a || tok == b {
            hint = BranchHint::Visited(tok);
        }
    }
    hint
}

pub fn rollout_attempt(
    inst: &ChainInstance,
    policy: &PolicyParams,
    start: StateId,
    trap: TrapAssignment,
    attempt_index: usize,
    hint: BranchHint,
    cap_l: usize,
    rng: &mut StdRng,
) -> Attempt {
    debug_assert!(cap_l >= 1);
    let mut tokens = Vec::new();
    let mut contexts = Vec::new();
    let mut current = start;
    let terminator = loop {
        let ctx = policy.scheme.context_key(attempt_index, hint, current);
        let token = policy.sample_token(&ctx, rng, 1.0);
        tokens.push(token);
        contexts.push(ctx);
        if !inst.has_edge(current, token) {
            break Terminator::Invalid;
        }
        current = token;
        if current == inst.terminal() {
            break Terminator::Terminal;
        }
        if tokens.len() >= cap_l {
            break Terminator::Cap;
        }
    };
    let reward = verify_attempt(inst, start, &tokens, trap).success as u8;
    Attempt {
        index: attempt_index,
        tokens,
        contexts,
        reward,
        terminator,
    }
}

pub fn rollout_trajectory(
    inst: &ChainInstance,
    policy: &PolicyParams,
    start: StateId,
    trap: TrapAssignment,
    k: usize,
    cap_l: usize,
    rng: &mut StdRng,
) -> Trajectory {
    debug_assert!(k >= 1);
    let mut attempts = Vec::new();
    let mut hint = BranchHint::None;
    for i in 1..=k {
        let attempt = rollout_attempt(inst, policy, start, trap, i, hint, cap_l, rng);
        let success = attempt.reward == 1;
        hint = branch_hint_of(inst, &attempt);
        attempts.push(attempt);
        if success {
            break;
        }
    }
    Trajectory {
        start,
        trap,
        attempts,
    }
}

/// N independent trajectories sharing one start. Each trajectory owns a
/// derived random stream and, in the trap variant, its own trap draw.
pub fn rollout_group(
    inst: &ChainInstance,
    policy: &PolicyParams,
    start: StateId,
    trap_variant: bool,
    k: usize,
    n: usize,
    cap_l: usize,
    group_seed: u64,
) -> Group {
    debug_assert!(n >= 2);
    let mut trajectories = Vec::with_capacity(n);
    for t in 0..n {
        let mut rng = derive_rng(group_seed, &[t as u64]);
        let trap = if trap_variant {
            sample_trap(inst, &mut rng).expect("trap variant requires candidates")
        } else {
            TrapAssignment::NONE
        };
        trajectories.push(rollout_trajectory(inst, policy, start, trap, k, cap_l, &mut rng));
    }
    Group {
        start,
        trap_variant,
        k,
        trajectories,
    }
}

/// One exported rollout-log line. This is also what the advantage service
/// ingests; it only needs rewards and token counts and ignores the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutLogRecord {
    pub group_id: String,
    pub start: StateId,
    pub k: usize,
    pub trajectories: Vec<LoggedTrajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedTrajectory {
    pub trap: Option<StateId>,
    pub attempts: Vec<LoggedAttempt>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedAttempt {
    pub tokens: Vec<StateId>,
    pub reward: u8,
    pub terminator: Terminator,
}

impl RolloutLogRecord {
    pub fn from_group(group: &Group, group_id: impl Into<String>) -> Self {
        Self {
            group_id: group_id.into(),
            start: group.start,
            k: group.k,
            trajectories: group
                .trajectories
                .iter()
                .map(|t| LoggedTrajectory {
                    trap: t.trap.trap,
                    attempts: t
                        .attempts
                        .iter()
                        .map(|a| LoggedAttempt {
                            tokens: a.tokens.clone(),
                            reward: a.reward,
                            terminator: a.terminator,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}
