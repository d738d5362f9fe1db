//! Paired-seed evaluation sweeps over SNR.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::baselines::{exhaustive_codebook, run_exhaustive_episode, run_mrc_csi_episode, run_mrc_omp_episode, OmpConfig};
use crate::env::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::ppo::{collect_rollouts, MapKind, RolloutOptions};
use crate::rng::{EpisodeKey, LANE_CHANNEL};

use super::config::{ExperimentConfig, Method, Mode};
use super::train::{load_agent, load_beam_module, LoadedAgent};

/// Stream `worker` id of evaluation episodes. Training uses worker 0, so
/// evaluation channels never overlap training channels.
pub const EVAL_WORKER: u64 = 1 << 32;

pub const SWEEP_HEADER: &str = "method,snr_db,episodes,mean_gain,mean_gain_db,ci95,channel_hash";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub snr_db: f64,
    pub episodes: usize,
    /// Mean of the linear gains.
    pub mean_gain: f64,
    /// `10 log10(mean_gain)`.
    pub mean_gain_db: f64,
    /// Half-width of the normal-approximation 95% interval of the mean.
    pub ci95: f64,
    /// Digest of every episode channel the row was computed on.
    pub channel_hash: String,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method.as_str(),
            self.snr_db,
            self.episodes,
            self.mean_gain,
            self.mean_gain_db,
            self.ci95,
            self.channel_hash
        )
    }
}

pub fn eval_keys(seed: u64, episodes: usize) -> Vec<EpisodeKey> {
    (0..episodes as u64).map(|e| EpisodeKey::new(seed, EVAL_WORKER, e)).collect()
}

/// Hex SHA-256 prefix over the channels the keys produce.
pub fn channel_hash(env: &EnvConfig, keys: &[EpisodeKey]) -> Result<String> {
    let mut h = Sha256::new();
    for key in keys {
        let (state, _) = EnvState::reset(env, &mut key.lane(LANE_CHANNEL))?;
        h.update(state.channel().h_bytes());
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Mean, its dB value and the 95% half-width of a gain sample.
pub fn summarize(gains: &[f64]) -> (f64, f64, f64) {
    let n = gains.len() as f64;
    let mean = gains.iter().sum::<f64>() / n;
    let var = if gains.len() > 1 {
        gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, 10.0 * mean.log10(), 1.96 * (var / n).sqrt())
}

enum Runner {
    MrcCsi,
    MrcOmp,
    Exhaustive(Vec<crate::array::Combiner>),
    Agent(Box<LoadedAgent>),
}

fn required(path: &Option<std::path::PathBuf>, method: Method) -> Result<&Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("method {} needs a checkpoint", method.as_str())))
}

fn runner(cfg: &ExperimentConfig, method: Method) -> Result<Runner> {
    let env = &cfg.env;
    Ok(match method {
        Method::MrcCsi => Runner::MrcCsi,
        Method::MrcOmp => Runner::MrcOmp,
        Method::Exhaustive => {
            let module = load_beam_module(required(&cfg.map_checkpoint, method)?)?;
            if module.n_rx() != env.n_rx {
                return Err(Error::Config(format!("map has {} antennas, run has {}", module.n_rx(), env.n_rx)));
            }
            Runner::Exhaustive(exhaustive_codebook(&module, env.episode_len - 1)?)
        }
        Method::DrlBf | Method::DrlDm => {
            let (path, kind) = match method {
                Method::DrlBf => (&cfg.drl_bf_checkpoint, MapKind::Beamforming),
                _ => (&cfg.drl_dm_checkpoint, MapKind::Direct),
            };
            let agent = load_agent(required(path, method)?)?;
            if agent.map.kind() != kind {
                return Err(Error::Config(format!("{} checkpoint uses the {} map", method.as_str(), agent.map.kind().as_str())));
            }
            if agent.policy.config().n_rx != env.n_rx || agent.episode_len != env.episode_len {
                return Err(Error::Config(format!("{} checkpoint does not match the episode layout", method.as_str())));
            }
            Runner::Agent(Box::new(agent))
        }
    })
}

/// Evaluates every method at every SNR on the same episode keys. Agents act
/// with their mean action.
pub fn evaluate_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let methods = cfg.methods();
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let runners = methods.iter().map(|&m| runner(cfg, m)).collect::<Result<Vec<_>>>()?;
    let keys = eval_keys(cfg.env.seed, cfg.eval_episodes);
    let mut rows = Vec::new();
    for &snr_db in &cfg.snr_list {
        let env = EnvConfig { snr_db, ..cfg.env.clone() };
        let hash = channel_hash(&env, &keys)?;
        let omp = if methods.contains(&Method::MrcOmp) { Some(OmpConfig::for_env(&env, cfg.omp_grid)?) } else { None };
        for (&method, run) in methods.iter().zip(&runners) {
            let gains: Vec<f64> = match run {
                Runner::MrcCsi => keys.iter().map(|&k| run_mrc_csi_episode(&env, k)).collect::<Result<_>>()?,
                Runner::MrcOmp => {
                    let omp = omp.as_ref().expect("built above");
                    keys.iter().map(|&k| run_mrc_omp_episode(&env, omp, k)).collect::<Result<_>>()?
                }
                Runner::Exhaustive(cb) => keys.iter().map(|&k| run_exhaustive_episode(&env, cb, k)).collect::<Result<_>>()?,
                Runner::Agent(agent) => {
                    let opts = RolloutOptions { deterministic: true, hook: None };
                    let mut g = Vec::with_capacity(keys.len());
                    for chunk in keys.chunks(cfg.ppo.workers.max(1)) {
                        let traces = collect_rollouts(&agent.policy, &agent.map, &env, chunk, opts)?;
                        g.extend(traces.iter().map(|t| t.terminal_reward()));
                    }
                    g
                }
            };
            if gains.len() != cfg.eval_episodes {
                return Err(Error::Config(format!("{} ran {} of {} episodes", method.as_str(), gains.len(), cfg.eval_episodes)));
            }
            let (mean_gain, mean_gain_db, ci95) = summarize(&gains);
            rows.push(SweepRow {
                method,
                snr_db,
                episodes: gains.len(),
                mean_gain,
                mean_gain_db,
                ci95,
                channel_hash: hash.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Runs the sweep and writes `results.csv` into the output directory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(std::path::PathBuf, Vec<SweepRow>)> {
    if !matches!(cfg.mode, Mode::Eval | Mode::Baselines) {
        return Err(Error::Config(format!("{} is not an evaluation mode", cfg.mode.as_str())));
    }
    let rows = evaluate_sweep(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("results.csv");
    write_sweep_csv(&path, &rows)?;
    Ok((path, rows))
}
