//! Tabular autoregressive softmax policy over chain tokens.
//!
//! A policy is a table of logit rows keyed by context. The context scheme
//! decides what a context is: the current state alone, (attempt index,
//! state), or (attempt index, branch hint, state) where the branch hint
//! names the pre-terminal candidate visited in the most recent failed
//! attempt. The last scheme deliberately breaks the index-only assumption
//! and lets a policy learn trap correction.
//!
//! The vocabulary is `n_states + 2`: state tokens plus RETRY and PAD. RETRY
//! and PAD are never sampled; the rollout harness injects RETRY between
//! attempts on its own. Rows for unseen contexts read as all zeros.

use crate::chain::{ChainInstance, StateId, TrapAssignment};
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("context schemes differ: {0:?} vs {1:?}")]
    SchemeMismatch(ContextScheme, ContextScheme),
    #[error("checkpoint parse failure at line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextScheme {
    /// Context is the current state only; every attempt looks the same.
    CurrentState,
    /// Context is (attempt index, current state); realizes the index-only
    /// assumption for a fixed start.
    AttemptState,
    /// Context is (attempt index, branch hint, current state); the hint is
    /// the trap candidate visited in the most recent failed attempt.
    AttemptBranchState,
}

/// Which pre-terminal candidate the most recent failed attempt walked
/// through, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchHint {
    None,
    Visited(StateId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub attempt: u16,
    pub branch: BranchHint,
    pub state: StateId,
}

impl ContextScheme {
    pub fn context_key(&self, attempt_index: usize, hint: BranchHint, state: StateId) -> ContextKey {
        match self {
            ContextScheme::CurrentState => ContextKey {
                attempt: 0,
                branch: BranchHint::None,
                state,
            },
            ContextScheme::AttemptState => ContextKey {
                attempt: attempt_index as u16,
                branch: BranchHint::None,
                state,
            },
            ContextScheme::AttemptBranchState => ContextKey {
                attempt: attempt_index as u16,
                branch: hint,
                state,
            },
        }
    }
}

/// Sparse vector over (context, token) coordinates. Used both for single
/// score events (grad log prob) and for accumulated gradient estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreVector {
    pub entries: BTreeMap<(ContextKey, StateId), f64>,
}

impl ScoreVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scaled(&mut self, other: &ScoreVector, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for (k, v) in &other.entries {
            *self.entries.entry(*k).or_insert(0.0) += scale * v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.entries.values_mut() {
            *v *= s;
        }
    }

    pub fn get(&self, k: &(ContextKey, StateId)) -> f64 {
        self.entries.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ScoreVector) -> f64 {
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.extend(other.entries.keys());
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .fold(0.0, |a, k| a.max((self.get(k) - other.get(k)).abs()))
    }

    pub fn dot(&self, other: &ScoreVector) -> f64 {
        self.entries
            .iter()
            .map(|(k, v)| v * other.get(k))
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|v| v.is_finite())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Accumulates weighted score events and expands them into a ScoreVector in
/// one pass per context row. Each event token contributes
/// coef * (indicator - softmax); indicator parts fold per token while the
/// softmax part only needs the per-context coefficient total.
#[derive(Debug, Default)]
pub struct ScoreAccumulator {
    acc: BTreeMap<ContextKey, (BTreeMap<StateId, Kahan>, Kahan)>,
}

impl ScoreAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, ctx: ContextKey, token: StateId, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let entry = self.acc.entry(ctx).or_default();
        entry.0.entry(token).or_default().add(coef);
        entry.1.add(coef);
    }

    pub fn finish(&self, policy: &PolicyParams) -> ScoreVector {
        let mut out = ScoreVector::new();
        for (ctx, (token_coefs, total)) in &self.acc {
            let probs = policy.probs(ctx, 1.0);
            let total = total.value();
            for v in 0..policy.n_states as StateId {
                let ind = token_coefs.get(&v).map(|k| k.value()).unwrap_or(0.0);
                let g = ind - probs[v as usize] * total;
                if g != 0.0 {
                    out.entries.insert((*ctx, v), g);
                }
            }
        }
        out
    }
}

/// The logit table; the sole home of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub scheme: ContextScheme,
    pub n_states: usize,
    pub chain_fingerprint: u64,
    pub logits: BTreeMap<ContextKey, Vec<f64>>,
}

impl PolicyParams {
    pub fn new(scheme: ContextScheme, n_states: usize, chain_fingerprint: u64) -> Self {
        Self {
            scheme,
            n_states,
            chain_fingerprint,
            logits: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.n_states + 2
    }

    pub fn retry_token(&self) -> StateId {
        self.n_states as StateId
    }

    pub fn pad_token(&self) -> StateId {
        self.n_states as StateId + 1
    }

    pub fn row(&self, ctx: &ContextKey) -> Option<&[f64]> {
        self.logits.get(ctx).map(|r| r.as_slice())
    }

    pub fn row_mut(&mut self, ctx: ContextKey) -> &mut Vec<f64> {
        let vocab = self.vocab_size();
        self.logits.entry(ctx).or_insert_with(|| vec![0.0; vocab])
    }

    /// Masked softmax over state tokens at the given temperature. RETRY and
    /// PAD get probability zero.
    pub fn probs(&self, ctx: &ContextKey, temperature: f64) -> Vec<f64> {
        debug_assert!(temperature > 0.0);
        let zeros;
        let row = match self.row(ctx) {
            Some(r) => r,
            None => {
                zeros = vec![0.0; self.vocab_size()];
                &zeros
            }
        };
        let scaled: Vec<f64> = row[..self.n_states].iter().map(|l| l / temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut out = vec![0.0; self.vocab_size()];
        for (i, e) in exps.iter().enumerate() {
            out[i] = e / z;
        }
        out
    }

    pub fn log_prob(&self, ctx: &ContextKey, token: StateId) -> f64 {
        debug_assert!((token as usize) < self.n_states, "masked token");
        let zeros;
        let row = match self.row(ctx) {
            Some(r) => r,
            None => {
                zeros = vec![0.0; self.vocab_size()];
                &zeros
            }
        };
        let states = &row[..self.n_states];
        let max = states.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = states.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        states[token as usize] - log_z
    }

    pub fn sample_token(&self, ctx: &ContextKey, rng: &mut StdRng, temperature: f64) -> StateId {
        let p = self.probs(ctx, temperature);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for t in 0..self.n_states {
            acc += p[t];
            if u < acc {
                return t as StateId;
            }
        }
        (self.n_states - 1) as StateId
    }

    /// Score of one sampled token: indicator minus softmax on the context
    /// row, zero elsewhere.
    pub fn grad_log_prob(&self, ctx: &ContextKey, token: StateId) -> ScoreVector {
        let p = self.probs(ctx, 1.0);
        let mut out = ScoreVector::new();
        for t in 0..self.n_states {
            let ind = if t == token as usize { 1.0 } else { 0.0 };
            out.entries.insert((*ctx, t as StateId), ind - p[t]);
        }
        out
    }

    /// Exact categorical KL(self || reference) averaged with the supplied
    /// context weights.
    pub fn kl_to(
        &self,
        reference: &PolicyParams,
        context_weights: &BTreeMap<ContextKey, f64>,
    ) -> Result<f64, PolicyError> {
        if self.scheme != reference.scheme {
            return Err(PolicyError::SchemeMismatch(self.scheme, reference.scheme));
        }
        let total: f64 = context_weights.values().sum();
        if total <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (ctx, w) in context_weights {
            let p = self.probs(ctx, 1.0);
            let q = reference.probs(ctx, 1.0);
            let mut kl = 0.0;
            for t in 0..self.n_states {
                if p[t] > 0.0 {
                    kl += p[t] * (p[t].ln() - q[t].ln());
                }
            }
            acc += w * kl;
        }
        Ok(acc / total)
    }

    /// Gradient of kl_to with respect to this policy's logits, same
    /// weighting.
    pub fn kl_grad(
        &self,
        reference: &PolicyParams,
        context_weights: &BTreeMap<ContextKey, f64>,
    ) -> Result<ScoreVector, PolicyError> {
        if self.scheme != reference.scheme {
            return Err(PolicyError::SchemeMismatch(self.scheme, reference.scheme));
        }
        let total: f64 = context_weights.values().sum();
        let mut out = ScoreVector::new();
        if total <= 0.0 {
            return Ok(out);
        }
        for (ctx, w) in context_weights {
            let p = self.probs(ctx, 1.0);
            let q = reference.probs(ctx, 1.0);
            let mut kl = 0.0;
            for t in 0..self.n_states {
                if p[t] > 0.0 {
                    kl += p[t] * (p[t].ln() - q[t].ln());
                }
            }
            for t in 0..self.n_states {
                let g = p[t] * ((p[t].ln() - q[t].ln()) - kl);
                out.entries.insert((*ctx, t as StateId), w / total * g);
            }
        }
        Ok(out)
    }

    pub fn apply_gradient(&mut self, grad: &ScoreVector, scale: f64) {
        for ((ctx, tok), g) in &grad.entries {
            let row = self.row_mut(*ctx);
            row[*tok as usize] += scale * g;
        }
    }

    /// Checkpoint as a line-oriented text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("verk-policy v1\n");
        let scheme = match self.scheme {
            ContextScheme::CurrentState => "current_state",
            ContextScheme::AttemptState => "attempt_state",
            ContextScheme::AttemptBranchState => "attempt_branch_state",
        };
        let _ = writeln!(s, "scheme {scheme}");
        let _ = writeln!(s, "n_states {}", self.n_states);
        let _ = writeln!(s, "fingerprint {}", self.chain_fingerprint);
        for (ctx, row) in &self.logits {
            let branch = match ctx.branch {
                BranchHint::None => "-".to_string(),
                BranchHint::Visited(c) => c.to_string(),
            };
            let _ = write!(s, "ctx {} {} {}", ctx.attempt, branch, ctx.state);
            for v in row {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let err = |line: usize, reason: &str| PolicyError::Checkpoint {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint"))?;
        if header.trim() != "verk-policy v1" {
            return Err(err(1, "unrecognized header"));
        }
        let mut scheme = None;
        let mut n_states = None;
        let mut fingerprint = None;
        let mut logits = BTreeMap::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("scheme") => {
                    scheme = Some(match parts.next() {
                        Some("current_state") => ContextScheme::CurrentState,
                        Some("attempt_state") => ContextScheme::AttemptState,
                        Some("attempt_branch_state") => ContextScheme::AttemptBranchState,
                        _ => return Err(err(idx + 1, "unknown scheme")),
                    });
                }
                Some("n_states") => {
                    n_states = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| err(idx + 1, "bad n_states"))?,
                    );
                }
                Some("fingerprint") => {
                    fingerprint = Some(
                        parts
                            .next()
                            .and_then(|v| v.parse::<u64>().ok())
                            .ok_or_else(|| err(idx + 1, "bad fingerprint"))?,
                    );
                }
                Some("ctx") => {
                    let attempt = parts
                        .next()
                        .and_then(|v| v.parse::<u16>().ok())
                        .ok_or_else(|| err(idx + 1, "bad attempt"))?;
                    let branch = match parts.next() {
                        Some("-") => BranchHint::None,
                        Some(v) => BranchHint::Visited(
                            v.parse::<StateId>()
                                .map_err(|_| err(idx + 1, "bad branch"))?,
                        ),
                        None => return Err(err(idx + 1, "missing branch")),
                    };
                    let state = parts
                        .next()
                        .and_then(|v| v.parse::<StateId>().ok())
                        .ok_or_else(|| err(idx + 1, "bad state"))?;
                    let row: Result<Vec<f64>, _> = parts.map(|v| v.parse::<f64>()).collect();
                    let row = row.map_err(|_| err(idx + 1, "bad logit"))?;
                    logits.insert(
                        ContextKey {
                            attempt,
                            branch,
                            state,
                        },
                        row,
                    );
                }
                _ => return Err(err(idx + 1, "unknown directive")),
            }
        }
        let scheme = scheme.ok_or_else(|| err(0, "missing scheme"))?;
        let n_states = n_states.ok_or_else(|| err(0, "missing n_states"))?;
        for row in logits.values() {
            if row.len() != n_states + 2 {
                return Err(err(0, "row length does not match vocabulary"));
            }
        }
        Ok(Self {
            scheme,
            n_states,
            chain_fingerprint: fingerprint.unwrap_or(0),
            logits,
        })
    }
}

/// Initialize a policy at the fixed point of supervised training on optimal
/// trajectories: every token on some shortest monotone path gets a logit
/// bonus of `sharpness`, marginalized uniformly over trap candidates in the
/// trap variant. Sharpness 0 is the uniform policy.
pub fn init_from_optimal(
    inst: &ChainInstance,
    scheme: ContextScheme,
    sharpness: f64,
    trap_variant: bool,
    k_max: usize,
) -> PolicyParams {
    let mut params = PolicyParams::new(scheme, inst.n_states(), inst.spec.fingerprint());
    let traps: Vec<(TrapAssignment, f64)> = if trap_variant {
        let (a, b) = inst
            .trap_candidates
            .expect("trap variant requires candidates");
        vec![
            (TrapAssignment::at(a), 0.5),
            (TrapAssignment::at(b), 0.5),
        ]
    } else {
        vec![(TrapAssignment::NONE, 1.0)]
    };

    let attempts: Vec<usize> = match scheme {
        ContextScheme::CurrentState => vec![0],
        _ => (1..=k_max).collect(),
    };
    let hints: Vec<BranchHint> = match (scheme, inst.trap_candidates) {
        (ContextScheme::AttemptBranchState, Some((a, b))) => {
            vec![BranchHint::None, BranchHint::Visited(a), BranchHint::Visited(b)]
        }
        _ => vec![BranchHint::None],
    };

    for &attempt in &attempts {
        for &hint in &hints {
            for s in 0..inst.n_states() as StateId {
                if s == inst.terminal() {
                    continue;
                }
                let ctx = match scheme {
                    ContextScheme::CurrentState => scheme.context_key(1, BranchHint::None, s),
                    _ => scheme.context_key(attempt, hint, s),
                };
                let row = params.row_mut(ctx);
                for &(trap, w) in &traps {
                    let d = inst.distances(trap);
                    let Some(ds) = d[s as usize] else { continue };
                    for &v in inst.successors(s) {
                        if v > s
                            && trap.trap != Some(v)
                            && d[v as usize] == Some(ds.saturating_sub(1))
                            && ds > 0
                        {
                            row[v as usize] += sharpness * w;
                        }
                    }
                }
            }
        }
    }
    params
}
