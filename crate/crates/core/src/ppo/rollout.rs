//! Episode collection and return computation.

use crate::array::Combiner;
use crate::env::{EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};
use crate::rng::{EpisodeKey, Rng, LANE_ACTION, LANE_CHANNEL, LANE_NOISE};

use super::policy::{ActionMap, PolicyNet};

/// Everything PPO needs from one episode. Index `t` runs over `0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// Observation the policy consumed before acting at step `t`.
    pub observations: Vec<Observation>,
    pub raw_actions: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub gauss_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub key: EpisodeKey,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn terminal_reward(&self) -> f64 {
        self.rewards.last().copied().unwrap_or(0.0)
    }
}

/// Replaces the combiner the policy chose; used by tests to inject oracles.
pub type CombinerHook<'a> = &'a dyn Fn(&EnvState, &Combiner) -> Combiner;

#[derive(Clone, Copy, Default)]
pub struct RolloutOptions<'a> {
    pub deterministic: bool,
    pub hook: Option<CombinerHook<'a>>,
}

/// Runs `keys.len()` episodes in lockstep. Every episode draws its channel,
/// noise and action samples from its own keyed streams, so the traces do
/// not depend on how episodes are grouped.
pub fn collect_rollouts(
    policy: &PolicyNet,
    map: &ActionMap,
    env: &EnvConfig,
    keys: &[EpisodeKey],
    opts: RolloutOptions<'_>,
) -> Result<Vec<EpisodeTrace>> {
    if keys.is_empty() {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    if map.kind() != policy.config().map || env.n_rx != policy.config().n_rx {
        return Err(Error::Config("policy, map and environment disagree".into()));
    }
    let n = keys.len();
    let t_len = env.episode_len;
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for key in keys {
        let (s, o) = EnvState::reset(env, &mut key.lane(LANE_CHANNEL))?;
        states.push(s);
        obs.push(o);
    }
    let mut noise: Vec<Rng> = keys.iter().map(|k| k.lane(LANE_NOISE)).collect();
    let mut action_rngs: Vec<Rng> = keys.iter().map(|k| k.lane(LANE_ACTION)).collect();
    let mut traces: Vec<EpisodeTrace> = keys
        .iter()
        .map(|&key| EpisodeTrace {
            observations: Vec::with_capacity(t_len),
            raw_actions: Vec::with_capacity(t_len),
            actions: Vec::with_capacity(t_len),
            log_probs: Vec::with_capacity(t_len),
            gauss_log_probs: Vec::with_capacity(t_len),
            values: Vec::with_capacity(t_len),
            rewards: Vec::with_capacity(t_len),
            key,
        })
        .collect();

    let mut hidden = policy.zero_state(n);
    for _ in 0..t_len {
        let acts = policy.act_batch(&mut hidden, &obs, &mut action_rngs, opts.deterministic)?;
        for (i, act) in acts.into_iter().enumerate() {
            let mut w = map.combiner(&act.action)?;
            if let Some(hook) = opts.hook {
                w = hook(&states[i], &w);
            }
            let step = states[i].step(&w, &mut noise[i])?;
            let tr = &mut traces[i];
            tr.observations.push(obs[i]);
            tr.raw_actions.push(act.raw);
            tr.actions.push(act.action);
            tr.log_probs.push(act.log_prob);
            tr.gauss_log_probs.push(act.gauss_log_prob);
            tr.values.push(act.value);
            tr.rewards.push(step.reward);
            obs[i] = step.observation;
        }
    }
    Ok(traces)
}

/// Per-step returns and advantages of a batch of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub returns: Vec<Vec<f64>>,
    /// `return - value`, before normalization.
    pub raw: Vec<Vec<f64>>,
    /// Normalized over the whole batch to zero mean and unit variance.
    pub normalized: Vec<Vec<f64>>,
}

pub fn compute_returns(traces: &[EpisodeTrace], gamma: f64) -> Advantages {
    let mut returns = Vec::with_capacity(traces.len());
    let mut raw = Vec::with_capacity(traces.len());
    for tr in traces {
        let mut g = 0.0;
        let mut ret = vec![0.0; tr.len()];
        for t in (0..tr.len()).rev() {
            g = tr.rewards[t] + gamma * g;
            ret[t] = g;
        }
        raw.push(ret.iter().zip(&tr.values).map(|(r, v)| r - v).collect::<Vec<f64>>());
        returns.push(ret);
    }
    let flat: Vec<f64> = raw.iter().flatten().copied().collect();
    let n = flat.len().max(1) as f64;
    let mean = flat.iter().sum::<f64>() / n;
    let std = (flat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let normalized = raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| if std > 1e-12 { (a - mean) / std } else { 0.0 })
                .collect()
        })
        .collect();
    Advantages { returns, raw, normalized }
}
