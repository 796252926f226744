//! On-policy training loop: sample groups, compute advantages with the
//! configured estimator, ascend with adaptive moments, optionally pull back
//! toward the frozen initial policy with an exact KL penalty.
//!
//! One gradient step per sampled batch keeps the updates exactly the
//! estimators the theory analyzes, so no ratio clipping is involved.

use crate::chain::{sample_start, ChainError, ChainInstance, StateId};
use crate::estimators::{
    assemble_gradient, cal_weights, plan_advantages, EstimatorError, EstimatorKind, GroupRewards,
    NormMode,
};
use crate::oracle::{enumerate_atlas, OracleError, Scenario, TrajectoryAtlas,
    DEFAULT_OUTCOME_CEILING};
use crate::policy::{init_from_optimal, ContextKey, ContextScheme, PolicyParams, ScoreVector};
use crate::rollout::{derive_rng, rollout_group, Group, RolloutLogRecord};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("non-finite gradient at step {step}; offending group: {dump}")]
    NonFiniteGradient { step: usize, dump: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub norm: NormMode,
    pub scheme: ContextScheme,
    pub trap_variant: bool,
    pub k: usize,
    pub n: usize,
    pub batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub kl_coef: f64,
    pub eval_every: usize,
    pub eval_starts: usize,
    pub cap_l: usize,
    pub init_sharpness: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n < 2 {
            return Err(TrainError::InvalidConfig(format!(
                "group size must be >= 2, got {}",
                self.n
            )));
        }
        if self.k < 1 {
            return Err(TrainError::InvalidConfig("k must be >= 1".into()));
        }
        if self.cap_l < 1 {
            return Err(TrainError::InvalidConfig("cap_l must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainError::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub ver_at_k: f64,
    /// Success at attempt i conditioned on reaching it (all earlier failed).
    pub attempt_success: Vec<f64>,
    pub avg_attempts: f64,
    /// Within-group population std of attempt-i rewards, averaged over
    /// groups whose reach set at i is non-empty.
    pub reward_std_per_attempt: Vec<f64>,
    pub mean_cal_weight_per_attempt: Vec<f64>,
}

pub fn metrics_csv_header(k: usize) -> String {
    let mut cols = vec!["step".to_string(), "ver_at_k".to_string()];
    cols.extend((1..=k).map(|i| format!("attempt_success_{i}")));
    cols.push("avg_attempts".to_string());
    cols.extend((1..=k).map(|i| format!("reward_std_{i}")));
    cols.extend((1..=k).map(|i| format!("cal_weight_{i}")));
    cols.join(",")
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let mut cols = vec![self.step.to_string(), self.ver_at_k.to_string()];
        cols.extend(self.attempt_success.iter().map(|v| v.to_string()));
        cols.push(self.avg_attempts.to_string());
        cols.extend(self.reward_std_per_attempt.iter().map(|v| v.to_string()));
        cols.extend(
            self.mean_cal_weight_per_attempt
                .iter()
                .map(|v| v.to_string()),
        );
        cols.join(",")
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow], k: usize) -> String {
    let mut s = metrics_csv_header(k);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Adaptive-moment ascent over the sparse logit table. Every coordinate the
/// optimizer has ever seen keeps its moments decaying, matching dense Adam
/// on the materialized rows.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<(ContextKey, StateId), f64>,
    v: BTreeMap<(ContextKey, StateId), f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, betas: (f64, f64)) -> Self {
        Self {
            learning_rate,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Ascent step along `grad`.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &ScoreVector) {
        self.t += 1;
        let mut keys: Vec<(ContextKey, StateId)> = self.m.keys().copied().collect();
        keys.extend(grad.entries.keys().copied());
        keys.sort_unstable();
        keys.dedup();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for key in keys {
            let g = grad.get(&key);
            let m = self.m.entry(key).or_insert(0.0);
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = self.v.entry(key).or_insert(0.0);
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let delta = self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            if delta != 0.0 {
                params.row_mut(key.0)[key.1 as usize] += delta;
            }
        }
    }
}

/// Continuation values for the exact attempt-level estimator, backed by one
/// atlas per start state.
pub struct OracleValueCache {
    atlases: BTreeMap<StateId, TrajectoryAtlas>,
}

impl OracleValueCache {
    fn atlas(
        &mut self,
        inst: &ChainInstance,
        policy: &PolicyParams,
        cfg: &TrainConfig,
        start: StateId,
    ) -> Result<&TrajectoryAtlas, OracleError> {
        // Values depend on the current policy; the trainer clears the
        // cache after every update, so entries are at most one step stale.
        if let std::collections::btree_map::Entry::Vacant(slot) = self.atlases.entry(start) {
            let sc = Scenario {
                inst: inst.clone(),
                policy: policy.clone(),
                start,
                trap_variant: cfg.trap_variant,
                k: cfg.k,
                cap_l: cfg.cap_l,
            };
            slot.insert(enumerate_atlas(&sc, DEFAULT_OUTCOME_CEILING)?);
        }
        Ok(&self.atlases[&start])
    }
}

fn group_rewards(
    inst: &ChainInstance,
    policy: &PolicyParams,
    cfg: &TrainConfig,
    group: &Group,
    values: &mut OracleValueCache,
) -> Result<GroupRewards, TrainError> {
    Ok(match cfg.estimator {
        EstimatorKind::AlExact => {
            let atlas = values.atlas(inst, policy, cfg, group.start)?;
            GroupRewards::from_group_with_values(group, &|n, i| {
                atlas.value_after(&group.trajectories[n], i)
            })
        }
        _ => GroupRewards::from_group(group),
    })
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub metrics: Vec<MetricsRow>,
    pub policy: PolicyParams,
}

pub fn train(inst: &ChainInstance, cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let mut policy = init_from_optimal(inst, cfg.scheme, cfg.init_sharpness, cfg.trap_variant, cfg.k);
    let reference = policy.clone();
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_betas);
    let mut metrics = vec![evaluate(inst, &policy, cfg, 0)];
    for step in 1..=cfg.steps {
        let mut values = OracleValueCache {
            atlases: BTreeMap::new(),
        };
        let mut batch_grad = ScoreVector::new();
        let mut visited: BTreeMap<ContextKey, f64> = BTreeMap::new();
        let mut last_group = None;
        for b in 0..cfg.batch {
            let mut start_rng = derive_rng(cfg.seed, &[0x57a7, step as u64, b as u64]);
            let start = sample_start(inst, cfg.trap_variant, &mut start_rng)?;
            let group_seed = cfg
                .seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((step as u64) << 20)
                .wrapping_add(b as u64);
            let group = rollout_group(
                inst,
                &policy,
                start,
                cfg.trap_variant,
                cfg.k,
                cfg.n,
                cfg.cap_l,
                group_seed,
            );
            let rewards = group_rewards(inst, &policy, cfg, &group, &mut values)?;
            let plan = plan_advantages(&rewards, cfg.estimator, &cfg.norm)?;
            let grad = assemble_gradient(&group, &plan, &policy)?;
            batch_grad.add_scaled(&grad, 1.0 / cfg.batch as f64);
            if cfg.kl_coef > 0.0 {
                for t in &group.trajectories {
                    for a in &t.attempts {
                        for ctx in &a.contexts {
                            *visited.entry(*ctx).or_insert(0.0) = 1.0;
                        }
                    }
                }
            }
            last_group = Some(group);
        }
        if cfg.kl_coef > 0.0 && !visited.is_empty() {
            let kl_grad = policy
                .kl_grad(&reference, &visited)
                .expect("schemes match by construction");
            batch_grad.add_scaled(&kl_grad, -cfg.kl_coef);
        }
        if !batch_grad.is_finite() {
            let dump = last_group
                .map(|g| {
                    serde_json::to_string(&RolloutLogRecord::from_group(&g, "offending"))
                        .unwrap_or_default()
                })
                .unwrap_or_default();
            return Err(TrainError::NonFiniteGradient { step, dump });
        }
        adam.step(&mut policy, &batch_grad);
        if step % cfg.eval_every == 0 || step == cfg.steps {
            metrics.push(evaluate(inst, &policy, cfg, step));
        }
    }
    Ok(TrainRun { metrics, policy })
}

/// Fresh evaluation rollouts without learning: `eval_starts` groups, each
/// on its own sampled start.
pub fn evaluate(
    inst: &ChainInstance,
    policy: &PolicyParams,
    cfg: &TrainConfig,
    step: usize,
) -> MetricsRow {
    let k = cfg.k;
    let mut total_traj = 0usize;
    let mut wins = 0usize;
    let mut attempts_sum = 0usize;
    let mut reach = vec![0usize; k];
    let mut succ = vec![0usize; k];
    let mut std_sum = vec![0.0f64; k];
    let mut std_groups = vec![0usize; k];
    let mut weight_sum = vec![0.0f64; k];
    let mut weight_count = vec![0usize; k];
    for g in 0..cfg.eval_starts {
        let mut start_rng = derive_rng(cfg.seed, &[0xe7a1, step as u64, g as u64]);
        let start = match sample_start(inst, cfg.trap_variant, &mut start_rng) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let group_seed = cfg
            .seed
            .wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
            .wrapping_add((step as u64) << 24)
            .wrapping_add(g as u64);
        let group = rollout_group(inst, policy, start, cfg.trap_variant, k, cfg.n, cfg.cap_l, group_seed);
        let rewards = GroupRewards::from_group(&group);
        for t in &group.trajectories {
            total_traj += 1;
            wins += t.final_reward() as usize;
            attempts_sum += t.stopping_time();
            for (idx, a) in t.attempts.iter().enumerate() {
                reach[idx] += 1;
                succ[idx] += a.reward as usize;
            }
        }
        let weights = cal_weights(&rewards, &cfg.norm);
        for i in 1..=k {
            let set = rewards.reach_set(i);
            if set.is_empty() {
                continue;
            }
            let vals: Vec<f64> = set.iter().map(|&n| rewards.success[n][i - 1]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            std_sum[i - 1] += var.sqrt();
            std_groups[i - 1] += 1;
            let w = match &weights.per_attempt_renormalized {
                Some(r) => r[i - 1],
                None => {
                    set.iter()
                        .map(|&n| weights.per_trajectory[n][i - 1])
                        .sum::<f64>()
                        / set.len() as f64
                }
            };
            weight_sum[i - 1] += w;
            weight_count[i - 1] += 1;
        }
    }
    let frac = |num: usize, den: usize| {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    MetricsRow {
        step,
        ver_at_k: frac(wins, total_traj),
        attempt_success: (0..k).map(|i| frac(succ[i], reach[i])).collect(),
        avg_attempts: frac(attempts_sum, total_traj),
        reward_std_per_attempt: (0..k)
            .map(|i| {
                if std_groups[i] == 0 {
                    f64::NAN
                } else {
                    std_sum[i] / std_groups[i] as f64
                }
            })
            .collect(),
        mean_cal_weight_per_attempt: (0..k)
            .map(|i| {
                if weight_count[i] == 0 {
                    f64::NAN
                } else {
                    weight_sum[i] / weight_count[i] as f64
                }
            })
            .collect(),
    }
}
