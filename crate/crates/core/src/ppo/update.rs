//! Clipped-surrogate PPO update with full-episode BPTT.

use rand::seq::SliceRandom;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Gradients, ParamStore, Tape, Tensor};
use crate::rng::{stream, EpisodeKey, LANE_AUX};

use super::policy::{obs_tensor, ActionMap, PolicyNet};
use super::rollout::{collect_rollouts, compute_returns, Advantages, EpisodeTrace, RolloutOptions};

/// Stream `worker` id of training episodes.
pub const TRAIN_WORKER: u64 = 0;
const SHUFFLE_WORKER: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lr: f64,
    /// Episodes collected per update.
    pub batch_episodes: usize,
    /// Parallel environment instances; throughput only.
    pub workers: usize,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub minibatch_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 0.001,
            value_coef: 0.5,
            gamma: 1.0,
            lr: 3e-4,
            batch_episodes: 2000,
            workers: 2000,
            max_grad_norm: 0.5,
            epochs: 4,
            minibatch_episodes: 500,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip", self.clip),
            ("lr", self.lr),
            ("gamma", self.gamma),
            ("max_grad_norm", self.max_grad_norm),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.clip < 1.0) {
            return Err(Error::Config("clip must lie in (0, 1)".into()));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        if self.batch_episodes == 0 || self.workers == 0 || self.epochs == 0 || self.minibatch_episodes == 0 {
            return Err(Error::Config("batch, workers, epochs and minibatch must be positive".into()));
        }
        Ok(())
    }
}

/// Tensors of one minibatch laid out per time step (rows = episodes).
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Vec<Tensor>,
    pub raw_actions: Vec<Tensor>,
    pub old_log_probs: Vec<Tensor>,
    pub advantages: Vec<Tensor>,
    pub returns: Vec<Tensor>,
}

impl Minibatch {
    pub fn gather(traces: &[EpisodeTrace], adv: &Advantages, idx: &[usize]) -> Result<Self> {
        let t_len = traces
            .first()
            .map(EpisodeTrace::len)
            .ok_or_else(|| Error::InvalidArgument("empty trace batch".into()))?;
        if idx.is_empty() || traces.iter().any(|t| t.len() != t_len) {
            return Err(Error::Shape("minibatch needs equal-length, non-empty traces".into()));
        }
        let m = idx.len();
        let col = |f: &dyn Fn(usize) -> f64| Tensor::from_vec(m, 1, idx.iter().map(|&i| f(i)).collect());
        let mut mb = Minibatch {
            obs: Vec::with_capacity(t_len),
            raw_actions: Vec::with_capacity(t_len),
            old_log_probs: Vec::with_capacity(t_len),
            advantages: Vec::with_capacity(t_len),
            returns: Vec::with_capacity(t_len),
        };
        for t in 0..t_len {
            let obs: Vec<_> = idx.iter().map(|&i| traces[i].observations[t]).collect();
            mb.obs.push(obs_tensor(&obs));
            let na = traces[idx[0]].raw_actions[t].len();
            let raw = idx.iter().flat_map(|&i| traces[i].raw_actions[t].iter().copied()).collect();
            mb.raw_actions.push(Tensor::from_vec(m, na, raw)?);
            mb.old_log_probs.push(col(&|i| traces[i].gauss_log_probs[t])?);
            mb.advantages.push(col(&|i| adv.normalized[i][t])?);
            mb.returns.push(col(&|i| adv.returns[i][t])?);
        }
        Ok(mb)
    }

    pub fn rows(&self) -> usize {
        self.obs.first().map(Tensor::rows).unwrap_or(0)
    }
}

/// Scalar parts of the PPO loss for one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Mean importance ratio.
    pub mean_ratio: f64,
    /// Fraction of ratios outside the clip range.
    pub clip_fraction: f64,
}

/// Re-unrolls the policy over full episodes and evaluates
/// `-min(r A, clip(r) A) + c_v (V - R)^2 - c_e H`, averaged over all steps.
/// Gradients are accumulated into `grads` when given.
pub fn ppo_loss(
    policy: &PolicyNet,
    store: &ParamStore,
    mb: &Minibatch,
    cfg: &PpoConfig,
    grads: Option<&mut Gradients>,
) -> Result<LossParts> {
    let m = mb.rows();
    let t_len = mb.obs.len();
    let count = (m * t_len) as f64;
    let mut tape = Tape::new(store);
    let mut state: Vec<_> = policy.zero_state(m).layers.into_iter().map(|t| tape.input(t)).collect();
    let mut policy_terms = Vec::with_capacity(t_len);
    let mut value_terms = Vec::with_capacity(t_len);
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    for t in 0..t_len {
        let x = tape.input(mb.obs[t].clone());
        let out = policy.step(&mut tape, x, &state)?;
        state = out.state;
        let lp = policy.log_prob_node(&mut tape, out.mean, &mb.raw_actions[t])?;
        let log_ratio = tape.sub_const(lp, &mb.old_log_probs[t])?;
        let ratio = tape.exp(log_ratio);
        for &r in tape.value(ratio).data() {
            ratio_sum += r;
            if (r - 1.0).abs() > cfg.clip {
                clipped += 1;
            }
        }
        let surr1 = tape.mul_const(ratio, mb.advantages[t].clone())?;
        let clamped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        let surr2 = tape.mul_const(clamped, mb.advantages[t].clone())?;
        let surr = tape.min(surr1, surr2)?;
        policy_terms.push(tape.sum(surr));
        let err = tape.sub_const(out.value, &mb.returns[t])?;
        let sq = tape.square(err);
        value_terms.push(tape.sum(sq));
    }
    let mut surr_sum = policy_terms[0];
    for &v in &policy_terms[1..] {
        surr_sum = tape.add(surr_sum, v)?;
    }
    let mut sq_sum = value_terms[0];
    for &v in &value_terms[1..] {
        sq_sum = tape.add(sq_sum, v)?;
    }
    let policy_loss = tape.scale(surr_sum, -1.0 / count);
    let value_loss = tape.scale(sq_sum, 1.0 / count);
    let entropy = policy.entropy_node(&mut tape);
    let weighted_value = tape.scale(value_loss, cfg.value_coef);
    let weighted_entropy = tape.scale(entropy, -cfg.entropy_coef);
    let partial = tape.add(policy_loss, weighted_value)?;
    let total = tape.add(partial, weighted_entropy)?;

    let parts = LossParts {
        total: tape.value(total).get(0, 0),
        policy: tape.value(policy_loss).get(0, 0),
        value: tape.value(value_loss).get(0, 0),
        entropy: tape.value(entropy).get(0, 0),
        mean_ratio: ratio_sum / count,
        clip_fraction: clipped as f64 / count,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("PPO loss: {parts:?}")));
    }
    if let Some(g) = grads {
        tape.backward(total, g)?;
    }
    Ok(parts)
}

/// Aggregates of one update, one CSV row each.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub update_index: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    /// Largest global gradient norm after clipping.
    pub clipped_grad_norm: f64,
    /// Mean importance ratio over the first epoch.
    pub first_epoch_ratio: f64,
}

/// Runs `cfg.epochs` passes over shuffled episode minibatches.
pub fn ppo_update(
    policy: &mut PolicyNet,
    adam: &mut Adam,
    traces: &[EpisodeTrace],
    cfg: &PpoConfig,
    shuffle_seed: (u64, u64),
) -> Result<UpdateStats> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("PPO update needs traces".into()));
    }
    let adv = compute_returns(traces, cfg.gamma);
    let mut rng = stream(shuffle_seed.0, SHUFFLE_WORKER, shuffle_seed.1, LANE_AUX);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    let mb_size = cfg.minibatch_episodes.min(traces.len());
    let mut stats = UpdateStats {
        mean_reward: traces.iter().map(EpisodeTrace::terminal_reward).sum::<f64>() / traces.len() as f64,
        ..Default::default()
    };
    let mut steps = 0usize;
    let mut first_ratio = (0.0, 0usize);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb_size) {
            let mb = Minibatch::gather(traces, &adv, chunk)?;
            let mut grads = policy.params().zero_grads();
            let parts = ppo_loss(policy, policy.params(), &mb, cfg, Some(&mut grads))?;
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm {norm}; loss {parts:?}")));
            }
            adam.step(policy.params_mut(), &grads)?;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.grad_norm += norm;
            stats.clipped_grad_norm = stats.clipped_grad_norm.max(grads.global_norm());
            if epoch == 0 {
                first_ratio.0 += parts.mean_ratio * chunk.len() as f64;
                first_ratio.1 += chunk.len();
            }
            steps += 1;
        }
    }
    let s = steps as f64;
    stats.policy_loss /= s;
    stats.value_loss /= s;
    stats.entropy /= s;
    stats.grad_norm /= s;
    stats.first_epoch_ratio = first_ratio.0 / first_ratio.1.max(1) as f64;
    if !policy.params().is_finite() {
        return Err(Error::NonFinite("policy parameters after update".into()));
    }
    Ok(stats)
}

/// Training state: policy, optimizer and counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: PolicyNet,
    pub adam: Adam,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub map: ActionMap,
    /// Updates completed so far.
    pub update_index: u64,
    /// Training episodes consumed so far.
    pub episodes_seen: u64,
}

impl Trainer {
    pub fn new(policy: PolicyNet, ppo: PpoConfig, env: EnvConfig, map: ActionMap) -> Result<Self> {
        ppo.validate()?;
        env.validate()?;
        let adam = Adam::new(policy.params(), AdamConfig { lr: ppo.lr, ..AdamConfig::default() });
        Ok(Self { policy, adam, ppo, env, map, update_index: 0, episodes_seen: 0 })
    }

    /// Keys of the next training batch.
    pub fn next_keys(&self) -> Vec<EpisodeKey> {
        (0..self.ppo.batch_episodes as u64)
            .map(|i| EpisodeKey::new(self.env.seed, TRAIN_WORKER, self.episodes_seen + i))
            .collect()
    }

    /// Collects one batch and applies one PPO update.
    pub fn iterate(&mut self) -> Result<UpdateStats> {
        let keys = self.next_keys();
        let mut traces = Vec::with_capacity(keys.len());
        for chunk in keys.chunks(self.ppo.workers) {
            traces.extend(collect_rollouts(&self.policy, &self.map, &self.env, chunk, RolloutOptions::default())?);
        }
        let mut stats = ppo_update(
            &mut self.policy,
            &mut self.adam,
            &traces,
            &self.ppo,
            (self.env.seed, self.update_index),
        )?;
        stats.update_index = self.update_index;
        self.update_index += 1;
        self.episodes_seen += keys.len() as u64;
        Ok(stats)
    }
}
