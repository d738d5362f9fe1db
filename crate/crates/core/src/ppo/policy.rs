//! Recurrent actor-critic and action squashing.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::array::Combiner;
use crate::beam::{beta_max, direct_map, BeamModule, BeamSpec, MIN_BETA};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Activation, GruStack, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Direct,
    Beamforming,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Direct => "direct",
            MapKind::Beamforming => "beamforming",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(MapKind::Direct),
            "beamforming" => Ok(MapKind::Beamforming),
            other => Err(Error::Config(format!("unknown map kind {other:?}"))),
        }
    }

    pub fn action_dim(self, n_rx: usize) -> usize {
        match self {
            MapKind::Direct => 2 * n_rx,
            MapKind::Beamforming => 2,
        }
    }
}

/// Turns squashed actions into combiners.
#[derive(Debug, Clone)]
pub enum ActionMap {
    Direct,
    Beamforming(Arc<BeamModule>),
}

impl ActionMap {
    pub fn kind(&self) -> MapKind {
        match self {
            ActionMap::Direct => MapKind::Direct,
            ActionMap::Beamforming(_) => MapKind::Beamforming,
        }
    }

    pub fn combiner(&self, action: &[f64]) -> Result<Combiner> {
        match self {
            ActionMap::Direct => direct_map(action),
            ActionMap::Beamforming(module) => {
                module.forward(&BeamSpec::new(action[0], action[1])?)
            }
        }
    }
}

/// `log(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (LN_2 - u.abs() - x.exp().ln_1p())
}

/// Largest beam direction the squash emits, leaving room for `MIN_BETA`.
pub const ALPHA_LIMIT: f64 = FRAC_PI_2 - MIN_BETA;

/// Maps an unbounded Gaussian draw `u` into the action box. Returns the
/// squashed action and `log |det da/du|`.
pub fn squash(kind: MapKind, u: &[f64]) -> (Vec<f64>, f64) {
    match kind {
        MapKind::Direct => {
            let a = u.iter().map(|v| v.tanh()).collect();
            let lj = u.iter().map(|&v| log_one_minus_tanh_sq(v)).sum();
            (a, lj)
        }
        MapKind::Beamforming => {
            let alpha = ALPHA_LIMIT * u[0].tanh();
            let width = (beta_max(alpha) - MIN_BETA).max(0.0);
            let beta = (MIN_BETA + width * 0.5 * (1.0 + u[1].tanh())).min(beta_max(alpha));
            let lj = ALPHA_LIMIT.ln()
                + log_one_minus_tanh_sq(u[0])
                + (0.5 * width).max(1e-300).ln()
                + log_one_minus_tanh_sq(u[1]);
            (vec![alpha, beta], lj)
        }
    }
}

/// Inverse of [`squash`] for actions strictly inside the box.
pub fn unsquash(kind: MapKind, a: &[f64]) -> Option<Vec<f64>> {
    let atanh = |x: f64| if x.abs() < 1.0 { Some(x.atanh()) } else { None };
    match kind {
        MapKind::Direct => a.iter().map(|&x| atanh(x)).collect(),
        MapKind::Beamforming => {
            let u0 = atanh(a[0] / ALPHA_LIMIT)?;
            let width = beta_max(a[0]) - MIN_BETA;
            if !(width > 0.0) {
                return None;
            }
            let u1 = atanh(2.0 * (a[1] - MIN_BETA) / width - 1.0)?;
            Some(vec![u0, u1])
        }
    }
}

/// Diagonal Gaussian log-density of `u`.
pub fn gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| {
            let z = (u - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub n_rx: usize,
    pub map: MapKind,
    pub hidden: usize,
    pub gru_layers: usize,
    pub ff_layers: usize,
    pub log_std_init: f64,
}

impl PolicyConfig {
    pub fn new(n_rx: usize, map: MapKind) -> Self {
        Self { n_rx, map, hidden: 128, gru_layers: 2, ff_layers: 2, log_std_init: -0.5 }
    }

    pub fn action_dim(&self) -> usize {
        self.map.action_dim(self.n_rx)
    }
}

/// GRU trunk, feedforward layers, then action-mean and value heads, plus a
/// state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    config: PolicyConfig,
    gru: GruStack,
    ff: Mlp,
    mean_head: Linear,
    value_head: Linear,
    log_std: ParamId,
    store: ParamStore,
}

/// Per-layer hidden states of a batch of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<Tensor>,
}

/// Outputs of one forward step on the tape.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub mean: Var,
    pub value: Var,
    pub state: Vec<Var>,
}

/// One sampled action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub raw: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-density of the squashed action, including the squash Jacobian.
    pub log_prob: f64,
    /// Log-density of the raw Gaussian draw.
    pub gauss_log_prob: f64,
    pub log_jacobian: f64,
    pub value: f64,
}

pub const OBS_DIM: usize = 2;

impl PolicyNet {
    pub fn new(config: PolicyConfig, rng: &mut Rng) -> Result<Self> {
        if config.n_rx == 0 || config.hidden == 0 || config.gru_layers == 0 {
            return Err(Error::Config("policy needs positive n_rx, hidden width and GRU layers".into()));
        }
        let mut store = ParamStore::new();
        let h = config.hidden;
        let gru = GruStack::new(&mut store, "gru", OBS_DIM, h, config.gru_layers, rng)?;
        let widths = vec![h; config.ff_layers + 1];
        let ff = if config.ff_layers == 0 {
            Mlp { layers: Vec::new(), hidden: Activation::Tanh, output: Activation::Tanh }
        } else {
            Mlp::new(&mut store, "ff", &widths, Activation::Tanh, Activation::Tanh, rng)?
        };
        let na = config.action_dim();
        let mean_head = Linear::new(&mut store, "mean_head", h, na, 0.01, rng)?;
        let value_head = Linear::new(&mut store, "value_head", h, 1, 1.0, rng)?;
        let log_std = store.add("log_std", Tensor::filled(1, na, config.log_std_init))?;
        Ok(Self { config, gru, ff, mean_head, value_head, log_std, store })
    }

    /// Rebuilds a network of the given shape around saved parameters.
    pub fn from_store(config: PolicyConfig, src: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, &mut crate::rng::stream(0, 0, 0, 0))?;
        net.store.assign_from(src)?;
        Ok(net)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn action_dim(&self) -> usize {
        self.config.action_dim()
    }

    pub fn log_std(&self) -> &[f64] {
        self.store.get(self.log_std).data()
    }

    pub fn log_std_id(&self) -> ParamId {
        self.log_std
    }

    pub fn zero_state(&self, rows: usize) -> HiddenState {
        HiddenState {
            layers: (0..self.gru.num_layers())
                .map(|_| Tensor::zeros(rows, self.config.hidden))
                .collect(),
        }
    }

    /// One recurrent step for a batch of observations.
    pub fn step(&self, tape: &mut Tape<'_>, obs: Var, state: &[Var]) -> Result<StepVars> {
        let next = self.gru.step(tape, obs, state)?;
        let top = *next.last().expect("non-empty stack");
        let feat = if self.ff.layers.is_empty() { top } else { self.ff.forward(tape, top)? };
        let mean = self.mean_head.forward(tape, feat)?;
        let value = self.value_head.forward(tape, feat)?;
        Ok(StepVars { mean, value, state: next })
    }

    /// Per-row Gaussian log-density of constant raw actions `u` under the
    /// mean node and the log-std parameter, as an `m x 1` node.
    pub fn log_prob_node(&self, tape: &mut Tape<'_>, mean: Var, u: &Tensor) -> Result<Var> {
        let rows = tape.value(mean).rows();
        let na = self.action_dim();
        let ls = tape.param(self.log_std);
        let ls_b = tape.broadcast_rows(ls, rows)?;
        let diff = tape.sub_const(mean, u)?;
        let neg_ls = tape.scale(ls_b, -1.0);
        let inv_std = tape.exp(neg_ls);
        let z = tape.mul(diff, inv_std)?;
        let z2 = tape.square(z);
        let quad = tape.sum_cols(z2);
        let ls_sum = tape.sum_cols(ls_b);
        let half_quad = tape.scale(quad, -0.5);
        let lp = tape.sub(half_quad, ls_sum)?;
        Ok(tape.affine(lp, 1.0, -0.5 * na as f64 * (2.0 * PI).ln()))
    }

    /// Entropy of the raw Gaussian (identical for every state).
    pub fn entropy_node(&self, tape: &mut Tape<'_>) -> Var {
        let na = self.action_dim() as f64;
        let ls = tape.param(self.log_std);
        let s = tape.sum(ls);
        tape.affine(s, 1.0, 0.5 * na * (1.0 + (2.0 * PI).ln()))
    }

    pub fn entropy(&self) -> f64 {
        let na = self.action_dim() as f64;
        self.log_std().iter().sum::<f64>() + 0.5 * na * (1.0 + (2.0 * PI).ln())
    }

    /// Samples actions for a batch of episodes and advances their hidden
    /// state. `rngs[i]` drives row `i`. With `deterministic`, the raw action
    /// is the mean.
    pub fn act_batch(
        &self,
        state: &mut HiddenState,
        obs: &[Observation],
        rngs: &mut [Rng],
        deterministic: bool,
    ) -> Result<Vec<ActOutput>> {
        let rows = obs.len();
        if rngs.len() != rows || state.layers.iter().any(|t| t.rows() != rows) {
            return Err(Error::Shape(format!(
                "{rows} observations, {} rngs, hidden rows {:?}",
                rngs.len(),
                state.layers.iter().map(Tensor::rows).collect::<Vec<_>>()
            )));
        }
        let mut tape = Tape::new(&self.store);
        let x = tape.input(obs_tensor(obs));
        let hs: Vec<Var> = state.layers.iter().map(|t| tape.input(t.clone())).collect();
        let out = self.step(&mut tape, x, &hs)?;
        let mean = tape.value(out.mean).clone();
        if !mean.is_finite() || !tape.value(out.value).is_finite() {
            return Err(Error::NonFinite("policy network output".into()));
        }
        let log_std = self.log_std().to_vec();
        let na = self.action_dim();
        let mut raw = Vec::with_capacity(rows * na);
        for (r, rng) in rngs.iter_mut().enumerate() {
            for (m, ls) in mean.row_slice(r).iter().zip(&log_std) {
                let eps: f64 = if deterministic { 0.0 } else { rng.sample(StandardNormal) };
                raw.push(m + ls.exp() * eps);
            }
        }
        let u = Tensor::from_vec(rows, na, raw)?;
        let lp = self.log_prob_node(&mut tape, out.mean, &u)?;
        let lp = tape.value(lp).clone();
        let values = tape.value(out.value).clone();
        state.layers = out.state.iter().map(|&v| tape.value(v).clone()).collect();

        (0..rows)
            .map(|r| {
                let raw = u.row_slice(r).to_vec();
                let (action, log_jacobian) = squash(self.config.map, &raw);
                let gauss = lp.get(r, 0);
                Ok(ActOutput {
                    raw,
                    action,
                    log_prob: gauss - log_jacobian,
                    gauss_log_prob: gauss,
                    log_jacobian,
                    value: values.get(r, 0),
                })
            })
            .collect()
    }

    /// Single-episode convenience wrapper around [`PolicyNet::act_batch`].
    pub fn act(
        &self,
        state: &mut HiddenState,
        obs: Observation,
        rng: &mut Rng,
        deterministic: bool,
    ) -> Result<ActOutput> {
        let mut rngs = [rng.clone()];
        let out = self.act_batch(state, &[obs], &mut rngs, deterministic)?;
        *rng = rngs[0].clone();
        Ok(out.into_iter().next().expect("one row"))
    }
}

pub fn obs_tensor(obs: &[Observation]) -> Tensor {
    let data = obs.iter().flat_map(|o| [o.re, o.im]).collect();
    Tensor::from_vec(obs.len(), OBS_DIM, data).expect("two columns")
}
