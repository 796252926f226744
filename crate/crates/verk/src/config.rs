//! Plain-text experiment configs: `[section]` headers and `key = value`
//! lines, sections `chain`, `policy`, `train`. The same renderer writes the
//! fully resolved run manifest, so a manifest is itself a valid config and
//! reruns bit-identically.

use crate::chain::ChainSpec;
use crate::estimators::{EstimatorKind, NormKind, NormMode};
use crate::policy::ContextScheme;
use crate::trainer::TrainConfig;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required key {0}")]
    MissingKey(String),
    #[error("invalid value for {key}: {value:?} ({reason})")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("line {0} is not a section header or key = value pair")]
    Malformed(usize),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub chain: ChainSpec,
    pub train: TrainConfig,
}

struct Raw {
    values: BTreeMap<String, String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut section = String::new();
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let key = if section.is_empty() {
                        k.trim().to_string()
                    } else {
                        format!("{section}.{}", k.trim())
                    };
                    values.insert(key, v.trim().to_string());
                }
                None => return Err(ConfigError::Malformed(idx + 1)),
            }
        }
        Ok(Self { values })
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| ConfigError::Invalid {
                key: key.to_string(),
                value: v,
                reason: format!("expected {}", std::any::type_name::<T>()),
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        self.take(key)?
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }
}

fn parse_scheme(v: &str) -> Option<ContextScheme> {
    match v {
        "current_state" => Some(ContextScheme::CurrentState),
        "attempt_state" => Some(ContextScheme::AttemptState),
        "attempt_branch_state" => Some(ContextScheme::AttemptBranchState),
        _ => None,
    }
}

pub fn parse_estimator(v: &str) -> Option<EstimatorKind> {
    match v {
        "tl" => Some(EstimatorKind::Tl),
        "nal" => Some(EstimatorKind::Nal),
        "cal" => Some(EstimatorKind::Cal),
        "al_exact" => Some(EstimatorKind::AlExact),
        _ => None,
    }
}

pub fn parse_norm(v: &str) -> Option<NormKind> {
    match v {
        "loo" => Some(NormKind::LeaveOneOut),
        "meanstd" => Some(NormKind::GroupMeanStd),
        "meanonly" => Some(NormKind::GroupMeanOnly),
        _ => None,
    }
}

fn estimator_name(e: EstimatorKind) -> &'static str {
    match e {
        EstimatorKind::Tl => "tl",
        EstimatorKind::Nal => "nal",
        EstimatorKind::Cal => "cal",
        EstimatorKind::AlExact => "al_exact",
    }
}

fn norm_name(n: NormKind) -> &'static str {
    match n {
        NormKind::LeaveOneOut => "loo",
        NormKind::GroupMeanStd => "meanstd",
        NormKind::GroupMeanOnly => "meanonly",
    }
}

fn scheme_name(s: ContextScheme) -> &'static str {
    match s {
        ContextScheme::CurrentState => "current_state",
        ContextScheme::AttemptState => "attempt_state",
        ContextScheme::AttemptBranchState => "attempt_branch_state",
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw::parse(text)?;
    let invalid = |key: &str, value: String, reason: &str| ConfigError::Invalid {
        key: key.to_string(),
        value,
        reason: reason.to_string(),
    };

    let chain = ChainSpec {
        n_hubs: raw.require("chain.n_hubs")?,
        m: raw.require("chain.m")?,
        local_window: raw.take("chain.local_window")?.unwrap_or(1),
        boundary_edges_per_pair: raw.take("chain.boundary_edges_per_pair")?.unwrap_or(1),
        seed: raw.take("chain.seed")?.unwrap_or(0),
    };
    let trap = raw.take::<bool>("chain.trap")?.unwrap_or(false);

    let scheme = match raw.take::<String>("policy.scheme")? {
        None => ContextScheme::AttemptState,
        Some(v) => parse_scheme(&v).ok_or_else(|| {
            invalid(
                "policy.scheme",
                v,
                "one of current_state, attempt_state, attempt_branch_state",
            )
        })?,
    };
    let init_sharpness = raw.take("policy.init_sharpness")?.unwrap_or(0.0);

    let estimator = match raw.take::<String>("train.estimator")? {
        None => EstimatorKind::Cal,
        Some(v) => parse_estimator(&v)
            .ok_or_else(|| invalid("train.estimator", v, "one of tl, nal, cal, al_exact"))?,
    };
    let norm_kind = match raw.take::<String>("train.norm")? {
        None => NormKind::GroupMeanStd,
        Some(v) => {
            parse_norm(&v).ok_or_else(|| invalid("train.norm", v, "one of loo, meanstd, meanonly"))?
        }
    };
    let norm = NormMode {
        kind: norm_kind,
        std_floor: raw.take("train.std_floor")?.unwrap_or(1e-6),
    };

    let train = TrainConfig {
        estimator,
        norm,
        scheme,
        trap_variant: trap,
        k: raw.require("train.k")?,
        n: raw.take("train.n")?.unwrap_or(16),
        batch: raw.take("train.batch")?.unwrap_or(4),
        steps: raw.require("train.steps")?,
        learning_rate: raw.take("train.learning_rate")?.unwrap_or(0.05),
        adam_betas: (
            raw.take("train.adam_beta1")?.unwrap_or(0.9),
            raw.take("train.adam_beta2")?.unwrap_or(0.95),
        ),
        kl_coef: raw.take("train.kl_coef")?.unwrap_or(0.0),
        eval_every: raw.take("train.eval_every")?.unwrap_or(10),
        eval_starts: raw.take("train.eval_starts")?.unwrap_or(100),
        cap_l: raw.take("train.cap_l")?.unwrap_or(chain.n_states()),
        init_sharpness,
        seed: raw.take("train.seed")?.unwrap_or(0),
    };

    if let Some(key) = raw.values.keys().next() {
        return Err(ConfigError::UnknownKey(key.clone()));
    }
    Ok(ExperimentConfig { chain, train })
}

/// Canonical rendering of the fully resolved config.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let c = &cfg.chain;
    let t = &cfg.train;
    format!(
        "[chain]\n\
         n_hubs = {}\n\
         m = {}\n\
         local_window = {}\n\
         boundary_edges_per_pair = {}\n\
         seed = {}\n\
         trap = {}\n\
         \n\
         [policy]\n\
         scheme = {}\n\
         init_sharpness = {}\n\
         \n\
         [train]\n\
         estimator = {}\n\
         norm = {}\n\
         std_floor = {}\n\
         k = {}\n\
         n = {}\n\
         batch = {}\n\
         steps = {}\n\
         learning_rate = {}\n\
         adam_beta1 = {}\n\
         adam_beta2 = {}\n\
         kl_coef = {}\n\
         eval_every = {}\n\
         eval_starts = {}\n\
         cap_l = {}\n\
         seed = {}\n",
        c.n_hubs,
        c.m,
        c.local_window,
        c.boundary_edges_per_pair,
        c.seed,
        t.trap_variant,
        scheme_name(t.scheme),
        t.init_sharpness,
        estimator_name(t.estimator),
        norm_name(t.norm.kind),
        t.norm.std_floor,
        t.k,
        t.n,
        t.batch,
        t.steps,
        t.learning_rate,
        t.adam_betas.0,
        t.adam_betas.1,
        t.kl_coef,
        t.eval_every,
        t.eval_starts,
        t.cap_l,
        t.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[chain]\nn_hubs = 2\nm = 3\n\n[train]\nk = 2\nsteps = 10\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.chain.local_window, 1);
        assert_eq!(cfg.train.n, 16);
        assert_eq!(cfg.train.cap_l, 6); // defaults to n_states
        assert_eq!(cfg.train.adam_betas, (0.9, 0.95));
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = parse_config("[chain]\nm = 3\n[train]\nk = 2\nsteps = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::MissingKey(k) if k == "chain.n_hubs"));
    }

    #[test]
    fn bad_value_is_named() {
        let text = MINIMAL.replace("m = 3", "m = three");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { key, .. } if key == "chain.m"));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}typo = 1\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "train.typo"));
    }

    #[test]
    fn manifest_roundtrip_is_stable() {
        let cfg = parse_config(MINIMAL).unwrap();
        let manifest = render_config(&cfg);
        let back = parse_config(&manifest).unwrap();
        assert_eq!(render_config(&back), manifest);
        assert_eq!(back.chain, cfg.chain);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = format!("# experiment\n\n{MINIMAL}\n# done\n");
        assert!(parse_config(&text).is_ok());
    }
}
