//! Episodic beam-alignment environment.
//!
//! The hidden state is a channel frozen for the whole episode. The agent
//! emits one combiner per step; the first `T - 1` steps are probes that
//! return a noisy received symbol, and the last step is scored by its
//! noiseless normalized beamforming gain.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::array::{beamforming_gain, inner, sample_channel, Channel, Combiner, C64};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub n_rx: usize,
    /// Episode length `T`: `T - 1` probes plus the final combiner.
    pub episode_len: usize,
    pub paths: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { n_rx: 32, episode_len: 5, paths: 1, snr_db: 20.0, seed: 0 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 {
            return Err(Error::Config("n_rx must be positive".into()));
        }
        if self.episode_len < 2 {
            return Err(Error::Config("episode length must be at least 2".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("path count must be at least 1".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid snr_db {}", self.snr_db)));
        }
        Ok(())
    }

    /// Per-antenna noise variance `10^(-snr_db / 10)`; zero for infinite SNR.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// Received symbol as a real pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub re: f64,
    pub im: f64,
}

impl Observation {
    pub const ZERO: Self = Self { re: 0.0, im: 0.0 };

    pub fn from_complex(y: C64) -> Self {
        Self { re: y.re, im: y.im }
    }

    pub fn to_complex(self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    channel: Channel,
    t: usize,
    done: bool,
    episode_len: usize,
    noise_std: f64,
}

impl EnvState {
    /// Starts an episode on a freshly drawn channel. No probe has happened
    /// yet, so the initial observation is zero.
    pub fn reset(cfg: &EnvConfig, channel_rng: &mut Rng) -> Result<(Self, Observation)> {
        cfg.validate()?;
        let channel = sample_channel(channel_rng, cfg.paths, cfg.n_rx)?;
        Ok((Self::with_channel(cfg, channel)?, Observation::ZERO))
    }

    /// Starts an episode on a given channel.
    pub fn with_channel(cfg: &EnvConfig, channel: Channel) -> Result<Self> {
        cfg.validate()?;
        if channel.num_antennas() != cfg.n_rx {
            return Err(Error::Shape(format!(
                "channel has {} antennas, config {}",
                channel.num_antennas(),
                cfg.n_rx
            )));
        }
        Ok(Self {
            channel,
            t: 0,
            done: false,
            episode_len: cfg.episode_len,
            noise_std: (cfg.noise_variance() / 2.0).sqrt(),
        })
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn is_final_step(&self) -> bool {
        self.t + 1 == self.episode_len
    }

    pub fn step(&mut self, w: &Combiner, noise_rng: &mut Rng) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if w.len() != self.channel.num_antennas() {
            return Err(Error::Shape(format!(
                "combiner has {} elements, channel {}",
                w.len(),
                self.channel.num_antennas()
            )));
        }
        let wn = crate::array::norm(w.as_slice());
        if (wn - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("combiner norm {wn} is not 1")));
        }
        if self.is_final_step() {
            let reward = beamforming_gain(w, &self.channel)?;
            self.t += 1;
            self.done = true;
            return Ok(Step { observation: Observation::ZERO, reward, done: true });
        }
        // w^H n with n ~ CN(0, s^2 I) and ||w|| = 1 is CN(0, s^2).
        let noise = if self.noise_std > 0.0 {
            let re: f64 = noise_rng.sample(StandardNormal);
            let im: f64 = noise_rng.sample(StandardNormal);
            C64::new(re, im) * self.noise_std
        } else {
            C64::new(0.0, 0.0)
        };
        let y = inner(w.as_slice(), self.channel.h()) + noise;
        self.t += 1;
        Ok(Step { observation: Observation::from_complex(y), reward: 0.0, done: false })
    }
}
