//! Advantage and gradient estimators for the Ver@K objective.
//!
//! Four estimator kinds share one pipeline. TL centers the trajectory-level
//! Ver@K reward and broadcasts it to every reached attempt. NAL centers each
//! attempt's raw reward within the reach set. CAL is NAL with future-failure
//! weights: the product over later attempts of (1 - estimated success rate).
//! ALExact replaces the raw attempt reward with r + (1-r)V, where V is an
//! exact continuation value supplied by an oracle.
//!
//! Two normalization families are supported. Leave-one-out centers against
//! the mean of the other group members and is the form the unbiasedness
//! results are stated in; its CAL weights use per-trajectory leave-one-out
//! success rates. Group mean/std normalization divides by the within-group
//! population deviation and uses per-attempt full-group success rates with
//! weight renormalization. The two weight constructions are distinct and
//! must not be conflated.
//!
//! Degenerate reach sets need care: the unbiasedness identities only survive
//! when a lone trajectory at attempt i is centered against the other
//! trajectories' final rewards (they all stopped, so those are known), and
//! when its leave-one-out success estimate falls back to its own outcome.
//! Zeroing these cells instead leaves a bias of order P(|S_i|=1), which the
//! enumeration oracle resolves easily.

use crate::chain::StateId;
use crate::policy::{PolicyParams, ScoreAccumulator, ScoreVector};
use crate::rollout::Group;
use thiserror::Error;

/// Assembled policy-gradient estimate: a sparse (context, token) map.
pub type GradientVector = ScoreVector;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("group must contain at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("ALExact requires a continuation-value provider")]
    MissingValueProvider,
    #[error("advantage plan does not match the group shape")]
    PlanShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Tl,
    Nal,
    Cal,
    AlExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    LeaveOneOut,
    GroupMeanStd,
    GroupMeanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormMode {
    pub kind: NormKind,
    pub std_floor: f64,
}

impl NormMode {
    pub fn leave_one_out() -> Self {
        Self {
            kind: NormKind::LeaveOneOut,
            std_floor: 1e-6,
        }
    }

    pub fn group_mean_std() -> Self {
        Self {
            kind: NormKind::GroupMeanStd,
            std_floor: 1e-6,
        }
    }

    pub fn group_mean_only() -> Self {
        Self {
            kind: NormKind::GroupMeanOnly,
            std_floor: 1e-6,
        }
    }
}

/// Reward view of a group: everything the advantage computation needs, and
/// nothing else. The advantage service ingests external logs into this same
/// shape, so both paths share one implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRewards {
    pub k: usize,
    /// Base reward per (trajectory, reached attempt): raw 0/1 for TL, NAL
    /// and CAL, the V-shaped reward for ALExact.
    pub base: Vec<Vec<f64>>,
    /// Raw 0/1 success per (trajectory, reached attempt); feeds success-rate
    /// estimates regardless of shaping.
    pub success: Vec<Vec<f64>>,
    /// Ver@K reward per trajectory.
    pub final_rewards: Vec<f64>,
}

impl GroupRewards {
    pub fn from_group(group: &Group) -> Self {
        let success: Vec<Vec<f64>> = group
            .trajectories
            .iter()
            .map(|t| t.attempts.iter().map(|a| a.reward as f64).collect())
            .collect();
        Self {
            k: group.k,
            base: success.clone(),
            final_rewards: group
                .trajectories
                .iter()
                .map(|t| t.final_reward() as f64)
                .collect(),
            success,
        }
    }

    /// ALExact view: base rewards reshaped with the continuation value of
    /// the state after each failed attempt.
    pub fn from_group_with_values(
        group: &Group,
        value_after: &dyn Fn(usize, usize) -> f64,
    ) -> Self {
        let mut g = Self::from_group(group);
        for (n, t) in group.trajectories.iter().enumerate() {
            for (idx, a) in t.attempts.iter().enumerate() {
                if a.reward == 0 {
                    g.base[n][idx] = value_after(n, idx + 1);
                }
            }
        }
        g
    }

    pub fn from_rewards(k: usize, rewards: Vec<Vec<f64>>) -> Self {
        let final_rewards = rewards
            .iter()
            .map(|r| r.last().copied().unwrap_or(0.0))
            .collect();
        Self {
            k,
            base: rewards.clone(),
            success: rewards,
            final_rewards,
        }
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    pub fn reach_set(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&n| self.base[n].len() >= i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptSignal {
    pub advantage: f64,
    pub weight: f64,
}

/// The output contract of every estimator: one (advantage, weight) pair per
/// reached attempt, plus the per-trajectory advantage for TL.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantagePlan {
    pub kind: EstimatorKind,
    pub per_trajectory: Vec<Vec<AttemptSignal>>,
    pub tl_advantage: Option<Vec<f64>>,
    /// Set when some reach set had at most one member and a fallback rule
    /// fired.
    pub degenerate: bool,
}

impl AdvantagePlan {
    pub fn matches(&self, rewards: &GroupRewards) -> bool {
        self.per_trajectory.len() == rewards.n()
            && self
                .per_trajectory
                .iter()
                .zip(&rewards.base)
                .all(|(p, r)| p.len() == r.len())
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Trajectory-level advantages, broadcast to every reached attempt.
pub fn tl_advantages(g: &GroupRewards, norm: &NormMode) -> Result<AdvantagePlan, EstimatorError> {
    let n = g.n();
    if n < 2 {
        return Err(EstimatorError::GroupTooSmall(n));
    }
    let total: f64 = g.final_rewards.iter().sum();
    let advantages: Vec<f64> = match norm.kind {
        NormKind::LeaveOneOut => g
            .final_rewards
            .iter()
            .map(|&r| r - (total - r) / (n as f64 - 1.0))
            .collect(),
        NormKind::GroupMeanStd => {
            let mean = total / n as f64;
            let std = population_std(&g.final_rewards).max(norm.std_floor);
            g.final_rewards.iter().map(|&r| (r - mean) / std).collect()
        }
        NormKind::GroupMeanOnly => {
            let mean = total / n as f64;
            g.final_rewards.iter().map(|&r| r - mean).collect()
        }
    };
    let per_trajectory = g
        .base
        .iter()
        .enumerate()
        .map(|(t, attempts)| {
            attempts
                .iter()
                .map(|_| AttemptSignal {
                    advantage: advantages[t],
                    weight: 1.0,
                })
                .collect()
        })
        .collect();
    Ok(AdvantagePlan {
        kind: EstimatorKind::Tl,
        per_trajectory,
        tl_advantage: Some(advantages),
        degenerate: false,
    })
}

/// Leave-one-out estimate of the attempt-i success rate seen from
/// trajectory n. Returns the estimate and whether a degenerate fallback
/// fired. For a member of a reach set with peers it is the peers' mean; a
/// lone member falls back to its own outcome; a trajectory that stopped
/// earlier sees the full reach-set mean; an empty reach set yields 0.
pub fn loo_success_rate(g: &GroupRewards, n: usize, i: usize) -> (f64, bool) {
    let in_set = g.success[n].len() >= i;
    let set = g.reach_set(i);
    if in_set {
        if set.len() >= 2 {
            let sum: f64 = set
                .iter()
                .filter(|&&m| m != n)
                .map(|&m| g.success[m][i - 1])
                .sum();
            (sum / (set.len() as f64 - 1.0), false)
        } else {
            (g.success[n][i - 1], true)
        }
    } else if !set.is_empty() {
        let sum: f64 = set.iter().map(|&m| g.success[m][i - 1]).sum();
        (sum / set.len() as f64, false)
    } else {
        (0.0, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalWeights {
    /// Future-failure product per (trajectory, reached attempt).
    pub per_trajectory: Vec<Vec<f64>>,
    /// Per-attempt renormalized weights in group-normalized mode.
    pub per_attempt_renormalized: Option<Vec<f64>>,
    pub degenerate: bool,
}

/// CAL weights. Leave-one-out mode uses per-trajectory leave-one-out
/// success rates; the group-normalized modes use per-attempt full-group
/// rates renormalized to unit mean over the non-empty attempts.
pub fn cal_weights(g: &GroupRewards, norm: &NormMode) -> CalWeights {
    match norm.kind {
        NormKind::LeaveOneOut => {
            let mut degenerate = false;
            let per_trajectory = (0..g.n())
                .map(|n| {
                    (1..=g.base[n].len())
                        .map(|i| {
                            let mut w = 1.0;
                            for j in i + 1..=g.k {
                                let (rho, flag) = loo_success_rate(g, n, j);
                                degenerate |= flag;
                                w *= 1.0 - rho;
                            }
                            w
                        })
                        .collect()
                })
                .collect();
            CalWeights {
                per_trajectory,
                per_attempt_renormalized: None,
                degenerate,
            }
        }
        NormKind::GroupMeanStd | NormKind::GroupMeanOnly => {
            let p_hat: Vec<Option<f64>> = (1..=g.k)
                .map(|i| {
                    let set = g.reach_set(i);
                    if set.is_empty() {
                        None
                    } else {
                        Some(
                            set.iter().map(|&m| g.success[m][i - 1]).sum::<f64>()
                                / set.len() as f64,
                        )
                    }
                })
                .collect();
            let raw: Vec<f64> = (1..=g.k)
                .map(|i| {
                    (i + 1..=g.k)
                        .filter_map(|j| p_hat[j - 1])
                        .map(|p| 1.0 - p)
                        .product()
                })
                .collect();
            let populated: Vec<f64> = (1..=g.k)
                .filter(|&i| p_hat[i - 1].is_some())
                .map(|i| raw[i - 1])
                .collect();
            let mean = populated.iter().sum::<f64>() / populated.len() as f64;
            let renorm: Vec<f64> = raw.iter().map(|w| w / mean).collect();
            let per_trajectory = (0..g.n())
                .map(|n| (1..=g.base[n].len()).map(|i| renorm[i - 1]).collect())
                .collect();
            CalWeights {
                per_trajectory,
                per_attempt_renormalized: Some(renorm),
                degenerate: false,
            }
        }
    }
}

/// Attempt-level advantages for NAL, CAL and ALExact.
pub fn attempt_advantages(
    g: &GroupRewards,
    kind: EstimatorKind,
    norm: &NormMode,
) -> Result<AdvantagePlan, EstimatorError> {
    let n = g.n();
    if n < 2 {
        return Err(EstimatorError::GroupTooSmall(n));
    }
    debug_assert!(!matches!(kind, EstimatorKind::Tl));
    let mut per_trajectory: Vec<Vec<AttemptSignal>> = g
        .base
        .iter()
        .map(|a| {
            a.iter()
                .map(|_| AttemptSignal {
                    advantage: 0.0,
                    weight: 1.0,
                })
                .collect()
        })
        .collect();
    let mut degenerate = false;
    for i in 1..=g.k {
        let set = g.reach_set(i);
        if set.is_empty() {
            continue;
        }
        match norm.kind {
            NormKind::LeaveOneOut => {
                if set.len() >= 2 {
                    let total: f64 = set.iter().map(|&m| g.base[m][i - 1]).sum();
                    for &m in &set {
                        let baseline = (total - g.base[m][i - 1]) / (set.len() as f64 - 1.0);
                        per_trajectory[m][i - 1].advantage = g.base[m][i - 1] - baseline;
                    }
                } else {
                    // Lone survivor: every other trajectory already stopped,
                    // so center against their final rewards.
                    degenerate = true;
                    let m = set[0];
                    let others: f64 = g
                        .final_rewards
                        .iter()
                        .enumerate()
                        .filter(|(idx, _)| *idx != m)
                        .map(|(_, r)| r)
                        .sum();
                    per_trajectory[m][i - 1].advantage =
                        g.base[m][i - 1] - others / (n as f64 - 1.0);
                }
            }
            NormKind::GroupMeanStd | NormKind::GroupMeanOnly => {
                let values: Vec<f64> = set.iter().map(|&m| g.base[m][i - 1]).collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let denom = if norm.kind == NormKind::GroupMeanStd {
                    population_std(&values).max(norm.std_floor)
                } else {
                    1.0
                };
                for &m in &set {
                    per_trajectory[m][i - 1].advantage = (g.base[m][i - 1] - mean) / denom;
                }
            }
        }
    }
    if kind == EstimatorKind::Cal {
        let weights = cal_weights(g, norm);
        degenerate |= weights.degenerate;
        for (n, ws) in weights.per_trajectory.iter().enumerate() {
            for (idx, &w) in ws.iter().enumerate() {
                per_trajectory[n][idx].weight = w;
            }
        }
    }
    Ok(AdvantagePlan {
        kind,
        per_trajectory,
        tl_advantage: None,
        degenerate,
    })
}

/// Single entry point used by the trainer, the oracle and the advantage
/// service.
pub fn plan_advantages(
    g: &GroupRewards,
    kind: EstimatorKind,
    norm: &NormMode,
) -> Result<AdvantagePlan, EstimatorError> {
    match kind {
        EstimatorKind::Tl => tl_advantages(g, norm),
        _ => attempt_advantages(g, kind, norm),
    }
}

/// Policy-gradient vector: sum over attempts of weight x advantage x the
/// attempt's token scores, averaged over the group size.
pub fn assemble_gradient(
    group: &Group,
    plan: &AdvantagePlan,
    policy: &PolicyParams,
) -> Result<GradientVector, EstimatorError> {
    if plan.per_trajectory.len() != group.n()
        || plan
            .per_trajectory
            .iter()
            .zip(&group.trajectories)
            .any(|(p, t)| p.len() != t.attempts.len())
    {
        return Err(EstimatorError::PlanShapeMismatch);
    }
    let n = group.n() as f64;
    let mut acc = ScoreAccumulator::new();
    for (t, signals) in group.trajectories.iter().zip(&plan.per_trajectory) {
        for (attempt, signal) in t.attempts.iter().zip(signals) {
            let coef = signal.weight * signal.advantage / n;
            if coef == 0.0 {
                continue;
            }
            for (tok, ctx) in attempt.tokens.iter().zip(&attempt.contexts) {
                acc.add(*ctx, *tok, coef);
            }
        }
    }
    Ok(acc.finish(policy))
}

/// Token stream per trajectory with RETRY separators between attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAdvantages {
    pub tokens: Vec<StateId>,
    /// Per-token advantage; RETRY separators are outside the model-generated
    /// span and carry 0.
    pub values: Vec<f64>,
}

pub fn broadcast_token_advantages(
    group: &Group,
    plan: &AdvantagePlan,
    retry_token: StateId,
) -> Result<Vec<TokenAdvantages>, EstimatorError> {
    if plan.per_trajectory.len() != group.n() {
        return Err(EstimatorError::PlanShapeMismatch);
    }
    let mut out = Vec::with_capacity(group.n());
    for (t, signals) in group.trajectories.iter().zip(&plan.per_trajectory) {
        if signals.len() != t.attempts.len() {
            return Err(EstimatorError::PlanShapeMismatch);
        }
        let mut tokens = Vec::new();
        let mut values = Vec::new();
        for (idx, (attempt, signal)) in t.attempts.iter().zip(signals).enumerate() {
            if idx > 0 {
                tokens.push(retry_token);
                values.push(0.0);
            }
            let v = signal.weight * signal.advantage;
            for &tok in &attempt.tokens {
                tokens.push(tok);
                values.push(v);
            }
        }
        out.push(TokenAdvantages { tokens, values });
    }
    Ok(out)
}
