//! Exact enumeration ground truth for small instances.
//!
//! The atlas expands every attempt token sequence the policy can emit,
//! composes attempts into complete trajectories with early stopping, and
//! marginalizes over the two equally likely trap draws in the trap variant.
//! From the atlas everything else is exact arithmetic: the Ver@K success
//! probability, continuation values, the policy gradient through two
//! independent decompositions, estimator expectations over all ordered
//! N-tuples, per-attempt variances of the trajectory- and attempt-level
//! group terms, and the effective discount weights of the naive
//! attempt-level estimator.
//!
//! All heavy sums run through compensated accumulation so the 1e-9 check
//! tolerances are dominated by the math, not the summation order.

use crate::chain::{verify_attempt, StateId, TrapAssignment};
use crate::estimators::{
    assemble_gradient, plan_advantages, EstimatorKind, GroupRewards, NormMode,
};
use crate::policy::{
    BranchHint, ContextKey, Kahan, PolicyParams, ScoreAccumulator, ScoreVector,
};
use crate::rollout::{branch_hint_of, Attempt, Group, Terminator, Trajectory};
use crate::chain::ChainInstance;
use rand::rngs::StdRng;
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_OUTCOME_CEILING: usize = 1_000_000;
pub const DEFAULT_TUPLE_CEILING: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration ceiling exceeded: estimated {estimate} outcomes, ceiling {ceiling}")]
    CeilingExceeded { estimate: usize, ceiling: usize },
    #[error("per-attempt gradients are rank deficient; discount recovery is inconclusive")]
    RankDeficient,
    #[error("discounted check requires an index-only context scheme and no trap")]
    NotIndexOnly,
}

/// One enumerable problem setting: a fixed instance, policy, start state,
/// attempt budget and cap.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub inst: ChainInstance,
    pub policy: PolicyParams,
    pub start: StateId,
    pub trap_variant: bool,
    pub k: usize,
    pub cap_l: usize,
}

#[derive(Debug, Clone)]
pub struct AtlasOutcome {
    pub trajectory: Trajectory,
    pub prob: f64,
}

/// Key for history-dependent tables: (attempt index just finished, branch
/// hint after it, trap assignment).
type HistKey = (usize, BranchHint, Option<StateId>);

#[derive(Debug, Clone)]
pub struct TrajectoryAtlas {
    pub scenario: Scenario,
    pub outcomes: Vec<AtlasOutcome>,
    /// Exact Ver@K success probability.
    pub rho: f64,
    /// P(attempt i succeeds | reached it with this hint and trap).
    attempt_success: BTreeMap<HistKey, f64>,
    /// V_{i}(hint, trap): probability some attempt in i+1..=K succeeds given
    /// the history after a failed attempt i.
    values: BTreeMap<HistKey, f64>,
}

struct AttemptOutcome {
    tokens: Vec<StateId>,
    contexts: Vec<ContextKey>,
    prob: f64,
    terminator: Terminator,
}

fn enumerate_attempt(
    sc: &Scenario,
    attempt_index: usize,
    hint: BranchHint,
    ceiling: usize,
) -> Result<Vec<AttemptOutcome>, OracleError> {
    let inst = &sc.inst;
    let mut out = Vec::new();
    // Stack of partial generations: (current state, tokens, contexts, prob).
    let mut stack: Vec<(StateId, Vec<StateId>, Vec<ContextKey>, f64)> =
        vec![(sc.start, Vec::new(), Vec::new(), 1.0)];
    while let Some((current, tokens, contexts, prob)) = stack.pop() {
        let ctx = sc.policy.scheme.context_key(attempt_index, hint, current);
        let probs = sc.policy.probs(&ctx, 1.0);
        for token in 0..inst.n_states() as StateId {
            let p = probs[token as usize];
            if p == 0.0 {
                continue;
            }
            let mut tks = tokens.clone();
            let mut ctxs = contexts.clone();
            tks.push(token);
            ctxs.push(ctx);
            let p = prob * p;
            let terminator = if !inst.has_edge(current, token) {
                Some(Terminator::Invalid)
            } else if token == inst.terminal() {
                Some(Terminator::Terminal)
            } else if tks.len() >= sc.cap_l {
                Some(Terminator::Cap)
            } else {
                None
            };
            match terminator {
                Some(t) => {
                    out.push(AttemptOutcome {
                        tokens: tks,
                        contexts: ctxs,
                        prob: p,
                        terminator: t,
                    });
                    if out.len() > ceiling {
                        return Err(OracleError::CeilingExceeded {
                            estimate: out.len(),
                            ceiling,
                        });
                    }
                }
                None => stack.push((token, tks, ctxs, p)),
            }
        }
    }
    Ok(out)
}

/// Expand every trajectory the rollout process can produce, with exact
/// probabilities. Trap variants enumerate both trap draws at weight 1/2.
pub fn enumerate_atlas(sc: &Scenario, ceiling: usize) -> Result<TrajectoryAtlas, OracleError> {
    let traps: Vec<(TrapAssignment, f64)> = if sc.trap_variant {
        let (a, b) = sc
            .inst
            .trap_candidates
            .expect("trap variant requires candidates");
        vec![(TrapAssignment::at(a), 0.5), (TrapAssignment::at(b), 0.5)]
    } else {
        vec![(TrapAssignment::NONE, 1.0)]
    };

    // Attempt generations depend only on (attempt index, hint).
    let mut attempt_memo: BTreeMap<(usize, BranchHint), Vec<AttemptOutcome>> = BTreeMap::new();
    let hints: Vec<BranchHint> = match sc.inst.trap_candidates {
        Some((a, b)) => vec![BranchHint::None, BranchHint::Visited(a), BranchHint::Visited(b)],
        None => vec![BranchHint::None],
    };
    for i in 1..=sc.k {
        for &h in &hints {
            attempt_memo.insert((i, h), enumerate_attempt(sc, i, h, ceiling)?);
        }
    }

    // Coarse size estimate before composing the full trajectory tree.
    let max_attempt = attempt_memo.values().map(|v| v.len()).max().unwrap_or(0);
    let mut estimate = max_attempt.max(1);
    for _ in 1..sc.k {
        estimate = estimate.saturating_mul(max_attempt.max(1));
        if estimate > ceiling.saturating_mul(8) {
            return Err(OracleError::CeilingExceeded { estimate, ceiling });
        }
    }

    let mut outcomes: Vec<AtlasOutcome> = Vec::new();
    for &(trap, trap_w) in &traps {
        // (next attempt index, hint, attempts so far, probability).
        let mut stack: Vec<(usize, BranchHint, Vec<Attempt>, f64)> =
            vec![(1, BranchHint::None, Vec::new(), trap_w)];
        while let Some((i, hint, prefix, prob)) = stack.pop() {
            for o in &attempt_memo[&(i, hint)] {
                let reward = verify_attempt(&sc.inst, sc.start, &o.tokens, trap).success as u8;
                let attempt = Attempt {
                    index: i,
                    tokens: o.tokens.clone(),
                    contexts: o.contexts.clone(),
                    reward,
                    terminator: o.terminator,
                };
                let p = prob * o.prob;
                if reward == 1 || i == sc.k {
                    let mut attempts = prefix.clone();
                    attempts.push(attempt);
                    outcomes.push(AtlasOutcome {
                        trajectory: Trajectory {
                            start: sc.start,
                            trap,
                            attempts,
                        },
                        prob: p,
                    });
                    if outcomes.len() > ceiling {
                        return Err(OracleError::CeilingExceeded {
                            estimate: outcomes.len(),
                            ceiling,
                        });
                    }
                } else {
                    let next_hint = branch_hint_of(&sc.inst, &attempt);
                    let mut attempts = prefix.clone();
                    attempts.push(attempt);
                    stack.push((i + 1, next_hint, attempts, p));
                }
            }
        }
    }

    // Per-history success probabilities and continuation values, backward
    // over the attempt index. values[(i, h, t)] is the probability that some
    // attempt after i succeeds, given hint h after a failed attempt i; it is
    // filled under key i by the pass over attempt i+1, since "success from
    // attempt i+1 onward entering with hint h" is the same quantity.
    let mut attempt_success = BTreeMap::new();
    let mut values: BTreeMap<HistKey, f64> = BTreeMap::new();
    for &(trap, _) in &traps {
        for &h in &hints {
            values.insert((sc.k, h, trap.trap), 0.0);
        }
        for i in (1..=sc.k).rev() {
            for &h in &hints {
                let mut succ = Kahan::default();
                let mut cont = Kahan::default();
                for o in &attempt_memo[&(i, h)] {
                    let r = verify_attempt(&sc.inst, sc.start, &o.tokens, trap).success;
                    if r {
                        succ.add(o.prob);
                    } else if i < sc.k {
                        let attempt = Attempt {
                            index: i,
                            tokens: o.tokens.clone(),
                            contexts: o.contexts.clone(),
                            reward: 0,
                            terminator: o.terminator,
                        };
                        let nh = branch_hint_of(&sc.inst, &attempt);
                        cont.add(o.prob * values[&(i, nh, trap.trap)]);
                    }
                }
                attempt_success.insert((i, h, trap.trap), succ.value());
                let from_i_onward = succ.value() + cont.value();
                values.insert((i - 1, h, trap.trap), from_i_onward.clamp(0.0, 1.0));
            }
        }
    }

    let mut rho = Kahan::default();
    for o in &outcomes {
        if o.trajectory.final_reward() == 1 {
            rho.add(o.prob);
        }
    }

    Ok(TrajectoryAtlas {
        scenario: sc.clone(),
        outcomes,
        rho: rho.value(),
        attempt_success,
        values,
    })
}

impl TrajectoryAtlas {
    pub fn total_probability(&self) -> f64 {
        let mut k = Kahan::default();
        for o in &self.outcomes {
            k.add(o.prob);
        }
        k.value()
    }

    /// V after attempt `i` of this trajectory failed: the probability some
    /// later attempt succeeds given the resulting history.
    pub fn value_after(&self, trajectory: &Trajectory, i: usize) -> f64 {
        if i >= self.scenario.k {
            return 0.0;
        }
        let hint = branch_hint_of(&self.scenario.inst, &trajectory.attempts[i - 1]);
        self.values[&(i, hint, trajectory.trap.trap)]
    }

    /// Per-attempt success probabilities rho_i for index-only schemes
    /// (no-trap, hint-free); None when attempt outcomes can depend on the
    /// failure history.
    pub fn per_attempt_rates(&self) -> Option<Vec<f64>> {
        use crate::policy::ContextScheme;
        if self.scenario.trap_variant
            || self.scenario.policy.scheme == ContextScheme::AttemptBranchState
        {
            return None;
        }
        Some(
            (1..=self.scenario.k)
                .map(|i| self.attempt_success[&(i, BranchHint::None, None)])
                .collect(),
        )
    }

    /// Exact Ver@K probability and the independence identity
    /// 1 - prod(1 - rho_i) as a second computation path.
    pub fn rho_product_form(&self) -> Option<f64> {
        self.per_attempt_rates()
            .map(|r| 1.0 - r.iter().map(|p| 1.0 - p).product::<f64>())
    }

    fn q_value(&self, trajectory: &Trajectory, i: usize) -> f64 {
        let a = &trajectory.attempts[i - 1];
        if a.reward == 1 {
            1.0
        } else {
            self.value_after(trajectory, i)
        }
    }
}

/// Eq-style trajectory form: sum over outcomes of p * r_T * (total score).
pub fn exact_gradient(atlas: &TrajectoryAtlas) -> ScoreVector {
    let mut acc = ScoreAccumulator::new();
    for o in &atlas.outcomes {
        let coef = o.prob * o.trajectory.final_reward() as f64;
        if coef == 0.0 {
            continue;
        }
        for a in &o.trajectory.attempts {
            for (tok, ctx) in a.tokens.iter().zip(&a.contexts) {
                acc.add(*ctx, *tok, coef);
            }
        }
    }
    acc.finish(&atlas.scenario.policy)
}

/// Attempt-decomposed form: sum over outcomes and reached attempts of
/// p * (r_i + (1-r_i) V_i) * (attempt score). Equal to `exact_gradient` by
/// the tower property; computing both is the identity test.
pub fn exact_gradient_attempt_form(atlas: &TrajectoryAtlas) -> ScoreVector {
    let mut acc = ScoreAccumulator::new();
    for o in &atlas.outcomes {
        for (idx, a) in o.trajectory.attempts.iter().enumerate() {
            let i = idx + 1;
            let coef = o.prob * atlas.q_value(&o.trajectory, i);
            if coef == 0.0 {
                continue;
            }
            for (tok, ctx) in a.tokens.iter().zip(&a.contexts) {
                acc.add(*ctx, *tok, coef);
            }
        }
    }
    acc.finish(&atlas.scenario.policy)
}

/// Gradient of P(attempt i succeeds) under the attempt-i policy alone,
/// hint-free. Exact per-attempt policy gradient for index-only schemes.
pub fn exact_attempt_gradient(
    atlas: &TrajectoryAtlas,
    i: usize,
    ceiling: usize,
) -> Result<ScoreVector, OracleError> {
    if atlas.scenario.trap_variant {
        return Err(OracleError::NotIndexOnly);
    }
    let outcomes = enumerate_attempt(&atlas.scenario, i, BranchHint::None, ceiling)?;
    let mut acc = ScoreAccumulator::new();
    for o in &outcomes {
        let r = verify_attempt(
            &atlas.scenario.inst,
            atlas.scenario.start,
            &o.tokens,
            TrapAssignment::NONE,
        )
        .success;
        if !r {
            continue;
        }
        for (tok, ctx) in o.tokens.iter().zip(&o.contexts) {
            acc.add(*ctx, *tok, o.prob);
        }
    }
    Ok(acc.finish(&atlas.scenario.policy))
}

/// Iterate ordered N-tuples of outcome indices.
struct TupleIter {
    idx: Vec<usize>,
    base: usize,
    done: bool,
}

impl TupleIter {
    fn new(n: usize, base: usize) -> Self {
        Self {
            idx: vec![0; n],
            base,
            done: base == 0,
        }
    }
}

impl Iterator for TupleIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        for d in (0..self.idx.len()).rev() {
            self.idx[d] += 1;
            if self.idx[d] < self.base {
                return Some(out);
            }
            self.idx[d] = 0;
        }
        self.done = true;
        Some(out)
    }
}

fn group_from_tuple(atlas: &TrajectoryAtlas, tuple: &[usize]) -> (Group, f64) {
    let mut prob = 1.0;
    let trajectories = tuple
        .iter()
        .map(|&i| {
            prob *= atlas.outcomes[i].prob;
            atlas.outcomes[i].trajectory.clone()
        })
        .collect();
    (
        Group {
            start: atlas.scenario.start,
            trap_variant: atlas.scenario.trap_variant,
            k: atlas.scenario.k,
            trajectories,
        },
        prob,
    )
}

fn rewards_for(atlas: &TrajectoryAtlas, group: &Group, kind: EstimatorKind) -> GroupRewards {
    match kind {
        EstimatorKind::AlExact => GroupRewards::from_group_with_values(group, &|n, i| {
            atlas.value_after(&group.trajectories[n], i)
        }),
        _ => GroupRewards::from_group(group),
    }
}

#[derive(Debug, Clone)]
pub enum Expectation {
    Exact(ScoreVector),
    /// Ceiling fallback: sample mean with a 3-sigma per-coordinate radius.
    MonteCarlo {
        mean: ScoreVector,
        radius: f64,
        samples: usize,
    },
}

impl Expectation {
    pub fn vector(&self) -> &ScoreVector {
        match self {
            Expectation::Exact(v) => v,
            Expectation::MonteCarlo { mean, .. } => mean,
        }
    }
}

/// Exact expectation of a group estimator over all ordered N-tuples of
/// trajectories, falling back to Monte Carlo above the tuple ceiling. The
/// estimator evaluation is the same code path the trainer and the advantage
/// service use.
pub fn exact_estimator_expectation(
    atlas: &TrajectoryAtlas,
    kind: EstimatorKind,
    norm: &NormMode,
    n: usize,
    tuple_ceiling: usize,
) -> Expectation {
    let base = atlas.outcomes.len();
    let tuples = base.checked_pow(n as u32);
    match tuples {
        Some(t) if t <= tuple_ceiling => {
            let mut acc = ScoreAccumulator::new();
            for tuple in TupleIter::new(n, base) {
                let (group, prob) = group_from_tuple(atlas, &tuple);
                if prob == 0.0 {
                    continue;
                }
                let rewards = rewards_for(atlas, &group, kind);
                let plan = plan_advantages(&rewards, kind, norm).expect("n >= 2");
                let nf = n as f64;
                for (t, signals) in group.trajectories.iter().zip(&plan.per_trajectory) {
                    for (attempt, signal) in t.attempts.iter().zip(signals) {
                        let coef = prob * signal.weight * signal.advantage / nf;
                        if coef == 0.0 {
                            continue;
                        }
                        for (tok, ctx) in attempt.tokens.iter().zip(&attempt.contexts) {
                            acc.add(*ctx, *tok, coef);
                        }
                    }
                }
            }
            Expectation::Exact(acc.finish(&atlas.scenario.policy))
        }
        _ => monte_carlo_expectation(atlas, kind, norm, n, 20_000),
    }
}

fn monte_carlo_expectation(
    atlas: &TrajectoryAtlas,
    kind: EstimatorKind,
    norm: &NormMode,
    n: usize,
    samples: usize,
) -> Expectation {
    let mut rng = crate::rollout::derive_rng(0x0a1c_1e00, &[n as u64]);
    let cdf: Vec<f64> = atlas
        .outcomes
        .iter()
        .scan(0.0, |s, o| {
            *s += o.prob;
            Some(*s)
        })
        .collect();
    let draw = |rng: &mut StdRng| -> usize {
        let u: f64 = rng.gen::<f64>() * cdf.last().copied().unwrap_or(1.0);
        cdf.partition_point(|&c| c < u).min(atlas.outcomes.len() - 1)
    };
    let mut mean: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    let mut sq: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    for _ in 0..samples {
        let tuple: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let (group, _) = group_from_tuple(atlas, &tuple);
        let rewards = rewards_for(atlas, &group, kind);
        let plan = plan_advantages(&rewards, kind, norm).expect("n >= 2");
        let grad = assemble_gradient(&group, &plan, &atlas.scenario.policy).expect("plan matches");
        for (k, v) in &grad.entries {
            mean.entry(*k).or_default().add(*v);
            sq.entry(*k).or_default().add(v * v);
        }
    }
    let m = samples as f64;
    let mut out = ScoreVector::new();
    let mut radius = 0.0f64;
    for (k, acc) in &mean {
        let mu = acc.value() / m;
        out.entries.insert(*k, mu);
        let var = (sq[k].value() / m - mu * mu).max(0.0);
        radius = radius.max(3.0 * (var / m).sqrt());
    }
    Expectation::MonteCarlo {
        mean: out,
        radius,
        samples,
    }
}

/// Per-attempt variance comparison of the trajectory-level and attempt-level
/// group terms. Advantages are leave-one-out within the reach set for both
/// (attempt-level uses exact V-shaped rewards); reach sets with fewer than
/// two members contribute zero on both sides, matching the regime in which
/// the variance ordering is stated.
#[derive(Debug, Clone)]
pub struct ZVariance {
    pub trace_tl: f64,
    pub trace_al: f64,
    pub per_coord: BTreeMap<(ContextKey, StateId), (f64, f64)>,
}

pub fn exact_z_variance(
    atlas: &TrajectoryAtlas,
    i: usize,
    n: usize,
    tuple_ceiling: usize,
) -> Result<ZVariance, OracleError> {
    let base = atlas.outcomes.len();
    let tuples = base
        .checked_pow(n as u32)
        .filter(|&t| t <= tuple_ceiling)
        .ok_or(OracleError::CeilingExceeded {
            estimate: base.saturating_pow(n as u32),
            ceiling: tuple_ceiling,
        })?;
    let _ = tuples;
    let mut mean_tl: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    let mut mean_al: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    let mut sq_tl: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    let mut sq_al: BTreeMap<(ContextKey, StateId), Kahan> = BTreeMap::new();
    for tuple in TupleIter::new(n, base) {
        let mut prob = 1.0;
        for &t in &tuple {
            prob *= atlas.outcomes[t].prob;
        }
        if prob == 0.0 {
            continue;
        }
        let members: Vec<&Trajectory> = tuple
            .iter()
            .map(|&t| &atlas.outcomes[t].trajectory)
            .collect();
        let reach: Vec<usize> = (0..n)
            .filter(|&m| members[m].attempts.len() >= i)
            .collect();
        let mut z_tl = ScoreAccumulator::new();
        let mut z_al = ScoreAccumulator::new();
        if reach.len() >= 2 {
            let finals: Vec<f64> = members.iter().map(|t| t.final_reward() as f64).collect();
            let qs: Vec<f64> = members
                .iter()
                .map(|t| {
                    if t.attempts.len() >= i {
                        atlas.q_value(t, i)
                    } else {
                        0.0
                    }
                })
                .collect();
            let tot_final: f64 = reach.iter().map(|&m| finals[m]).sum();
            let tot_q: f64 = reach.iter().map(|&m| qs[m]).sum();
            let denom = reach.len() as f64 - 1.0;
            for &m in &reach {
                let a_tl = finals[m] - (tot_final - finals[m]) / denom;
                let a_al = qs[m] - (tot_q - qs[m]) / denom;
                let attempt = &members[m].attempts[i - 1];
                for (tok, ctx) in attempt.tokens.iter().zip(&attempt.contexts) {
                    z_tl.add(*ctx, *tok, a_tl / n as f64);
                    z_al.add(*ctx, *tok, a_al / n as f64);
                }
            }
        }
        let z_tl = z_tl.finish(&atlas.scenario.policy);
        let z_al = z_al.finish(&atlas.scenario.policy);
        for (k, v) in &z_tl.entries {
            mean_tl.entry(*k).or_default().add(prob * v);
            sq_tl.entry(*k).or_default().add(prob * v * v);
        }
        for (k, v) in &z_al.entries {
            mean_al.entry(*k).or_default().add(prob * v);
            sq_al.entry(*k).or_default().add(prob * v * v);
        }
    }
    let mut per_coord = BTreeMap::new();
    let mut keys: Vec<(ContextKey, StateId)> = mean_tl.keys().copied().collect();
    keys.extend(mean_al.keys().copied());
    keys.extend(sq_tl.keys().copied());
    keys.extend(sq_al.keys().copied());
    keys.sort_unstable();
    keys.dedup();
    let mut trace_tl = Kahan::default();
    let mut trace_al = Kahan::default();
    for k in keys {
        let get = |m: &BTreeMap<(ContextKey, StateId), Kahan>| {
            m.get(&k).map(|a| a.value()).unwrap_or(0.0)
        };
        let var_tl = (get(&sq_tl) - get(&mean_tl).powi(2)).max(0.0);
        let var_al = (get(&sq_al) - get(&mean_al).powi(2)).max(0.0);
        trace_tl.add(var_tl);
        trace_al.add(var_al);
        per_coord.insert(k, (var_tl, var_al));
    }
    Ok(ZVariance {
        trace_tl: trace_tl.value(),
        trace_al: trace_al.value(),
        per_coord,
    })
}

/// Conditional expectation of the CAL weight given that trajectory n reaches
/// attempt i and the reach set does not die right there (someone reaches
/// i+1). On that event the weight identity E[w | history] = prod(1 - rho_j)
/// holds exactly; when nobody reaches i+1 the group carries no information
/// about later attempts and no estimator can be calibrated.
pub fn cal_weight_conditional_expectation(
    atlas: &TrajectoryAtlas,
    i: usize,
    n: usize,
    tuple_ceiling: usize,
) -> Result<f64, OracleError> {
    let base = atlas.outcomes.len();
    base.checked_pow(n as u32)
        .filter(|&t| t <= tuple_ceiling)
        .ok_or(OracleError::CeilingExceeded {
            estimate: base.saturating_pow(n as u32),
            ceiling: tuple_ceiling,
        })?;
    let norm = NormMode::leave_one_out();
    let mut num = Kahan::default();
    let mut mass = Kahan::default();
    for tuple in TupleIter::new(n, base) {
        let (group, prob) = group_from_tuple(atlas, &tuple);
        if prob == 0.0 {
            continue;
        }
        if group.trajectories[0].attempts.len() < i {
            continue;
        }
        if i < atlas.scenario.k && group.reach_set(i + 1).is_empty() {
            continue;
        }
        let rewards = GroupRewards::from_group(&group);
        let weights = crate::estimators::cal_weights(&rewards, &norm);
        num.add(prob * weights.per_trajectory[0][i - 1]);
        mass.add(prob);
    }
    Ok(num.value() / mass.value())
}

/// Least-squares recovery of the effective per-attempt discount weights of
/// the naive attempt-level estimator, with the ratio law they should obey.
#[derive(Debug, Clone)]
pub struct DiscountedReport {
    pub gammas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub residual: f64,
    pub ratio_law_max_rel_err: f64,
    pub nal_gap_max_norm: f64,
}

pub fn discounted_check(
    atlas: &TrajectoryAtlas,
    n: usize,
    tuple_ceiling: usize,
) -> Result<DiscountedReport, OracleError> {
    use crate::policy::ContextScheme;
    if atlas.scenario.trap_variant
        || atlas.scenario.policy.scheme == ContextScheme::AttemptBranchState
    {
        return Err(OracleError::NotIndexOnly);
    }
    let k = atlas.scenario.k;
    let e_nal = match exact_estimator_expectation(
        atlas,
        EstimatorKind::Nal,
        &NormMode::leave_one_out(),
        n,
        tuple_ceiling,
    ) {
        Expectation::Exact(v) => v,
        Expectation::MonteCarlo { .. } => {
            return Err(OracleError::CeilingExceeded {
                estimate: atlas.outcomes.len().saturating_pow(n as u32),
                ceiling: tuple_ceiling,
            })
        }
    };
    let grads: Vec<ScoreVector> = (1..=k)
        .map(|i| exact_attempt_gradient(atlas, i, DEFAULT_OUTCOME_CEILING))
        .collect::<Result<_, _>>()?;
    let rhos = atlas.per_attempt_rates().ok_or(OracleError::NotIndexOnly)?;

    // Normal equations for min || e_nal - sum gamma_i grad_i ||.
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = grads[i].dot(&grads[j]);
        }
        rhs[i] = grads[i].dot(&e_nal);
    }
    let gammas = solve_linear(&mut gram, &mut rhs)?;

    let mut fit = ScoreVector::new();
    for (g, grad) in gammas.iter().zip(&grads) {
        fit.add_scaled(grad, *g);
    }
    let mut diff = fit.clone();
    diff.add_scaled(&e_nal, -1.0);
    let residual = diff.l2_norm();

    let mut max_rel = 0.0f64;
    for i in 0..k {
        for j in 0..i {
            let expected: f64 = (j + 1..=i).map(|t| 1.0 - rhos[t]).product();
            let measured = gammas[i] / gammas[j];
            max_rel = max_rel.max((measured - expected).abs() / expected.abs().max(1e-12));
        }
    }

    let exact = exact_gradient(atlas);
    let nal_gap_max_norm = e_nal.max_abs_diff(&exact);

    Ok(DiscountedReport {
        gammas,
        rhos,
        residual,
        ratio_law_max_rel_err: max_rel,
        nal_gap_max_norm,
    })
}

fn solve_linear(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, OracleError> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot < 1e-12 * scale.max(1e-300) {
            return Err(OracleError::RankDeficient);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    Ok((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Everything the oracle knows about one scenario, rendered as key/value
/// lines for CI-style assertions.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub rho: f64,
    pub rho_product_form: Option<f64>,
    pub grad_norm: f64,
    pub tower_gap: f64,
    pub estimator_gaps: Vec<(String, f64)>,
    pub z_variances: Vec<(usize, f64, f64)>,
    /// Norm of the gradient of P(attempt i succeeds), index-only schemes.
    pub attempt_grad_norms: Option<Vec<f64>>,
    pub discounted: Option<DiscountedReport>,
}

/// Assemble the full report for one scenario at group size `n`.
pub fn oracle_report(
    name: &str,
    atlas: &TrajectoryAtlas,
    n: usize,
    tuple_ceiling: usize,
) -> Result<OracleReport, OracleError> {
    let exact = exact_gradient(atlas);
    let attempt_form = exact_gradient_attempt_form(atlas);
    let mut estimator_gaps = Vec::new();
    for (kind, label) in [
        (EstimatorKind::Tl, "tl"),
        (EstimatorKind::AlExact, "al_exact"),
        (EstimatorKind::Cal, "cal"),
        (EstimatorKind::Nal, "nal"),
    ] {
        let e = exact_estimator_expectation(atlas, kind, &NormMode::leave_one_out(), n, tuple_ceiling);
        estimator_gaps.push((label.to_string(), e.vector().max_abs_diff(&exact)));
    }
    // The group-normalized forms carry no unbiasedness claim; their gaps
    // are reported as measurements only.
    for (kind, label) in [
        (EstimatorKind::Tl, "tl_meanstd"),
        (EstimatorKind::Cal, "cal_meanstd"),
    ] {
        let e = exact_estimator_expectation(atlas, kind, &NormMode::group_mean_std(), n, tuple_ceiling);
        estimator_gaps.push((label.to_string(), e.vector().max_abs_diff(&exact)));
    }
    let z_variances = (1..=atlas.scenario.k)
        .map(|i| exact_z_variance(atlas, i, n, tuple_ceiling).map(|z| (i, z.trace_tl, z.trace_al)))
        .collect::<Result<_, _>>()?;
    let attempt_grad_norms = if atlas.per_attempt_rates().is_some() {
        Some(
            (1..=atlas.scenario.k)
                .map(|i| exact_attempt_gradient(atlas, i, DEFAULT_OUTCOME_CEILING).map(|g| g.l2_norm()))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    let discounted = match discounted_check(atlas, n, tuple_ceiling) {
        Ok(d) => Some(d),
        Err(OracleError::NotIndexOnly) | Err(OracleError::RankDeficient) => None,
        Err(e) => return Err(e),
    };
    Ok(OracleReport {
        name: name.to_string(),
        rho: atlas.rho,
        rho_product_form: atlas.rho_product_form(),
        grad_norm: exact.l2_norm(),
        tower_gap: exact.max_abs_diff(&attempt_form),
        estimator_gaps,
        z_variances,
        attempt_grad_norms,
        discounted,
    })
}

impl OracleReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenario: {}\n", self.name));
        s.push_str(&format!("rho: {:.12}\n", self.rho));
        if let Some(p) = self.rho_product_form {
            s.push_str(&format!("rho_product_form: {p:.12}\n"));
        }
        s.push_str(&format!("grad_norm: {:.12}\n", self.grad_norm));
        s.push_str(&format!("tower_gap: {:.3e}\n", self.tower_gap));
        for (name, gap) in &self.estimator_gaps {
            s.push_str(&format!("expectation_gap_{name}: {gap:.3e}\n"));
        }
        for (i, tl, al) in &self.z_variances {
            s.push_str(&format!("z_var_attempt_{i}: tl={tl:.12} al={al:.12}\n"));
        }
        if let Some(norms) = &self.attempt_grad_norms {
            for (i, g) in norms.iter().enumerate() {
                s.push_str(&format!("attempt_success_grad_norm_{}: {g:.12}\n", i + 1));
            }
        }
        if let Some(d) = &self.discounted {
            s.push_str(&format!("nal_gammas: {:?}\n", d.gammas));
            s.push_str(&format!("nal_fit_residual: {:.3e}\n", d.residual));
            s.push_str(&format!(
                "nal_ratio_law_max_rel_err: {:.3e}\n",
                d.ratio_law_max_rel_err
            ));
        }
        s
    }
}
