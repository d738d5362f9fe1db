//! Training loops with curves, periodic/best/latest checkpoints and resume.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::beam::{train_step, BeamModule};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::ppo::{ActionMap, MapKind, PolicyConfig, PolicyNet, Trainer, UpdateStats};
use crate::rng::{stream, LANE_AUX};

use super::checkpoint::{Checkpoint, KIND_AGENT, KIND_MAP};
use super::config::{ExperimentConfig, Mode};

/// Stream `worker` ids for initialization and beam-module batches.
pub const INIT_WORKER: u64 = u64::MAX - 1;
pub const MAP_WORKER: u64 = u64::MAX - 2;

pub const AGENT_CURVE_HEADER: &str = "update_index,mean_reward,policy_loss,value_loss,entropy,grad_norm";
pub const MAP_CURVE_HEADER: &str = "update_index,loss";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Updates completed, including those before a resume.
    pub updates: u64,
    /// Best batch metric seen: highest mean reward, or lowest map loss.
    pub best_metric: f64,
    pub curve: PathBuf,
    pub latest: PathBuf,
    pub best: PathBuf,
}

pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_text())?;
    match cfg.mode {
        Mode::TrainMap => train_map(cfg),
        Mode::TrainAgent => train_agent(cfg),
        other => Err(Error::Config(format!("{} is not a training mode", other.as_str()))),
    }
}

fn paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    let d = &cfg.output_dir;
    (d.join("curve.csv"), d.join("latest.ckpt"), d.join("best.ckpt"))
}

fn periodic_path(cfg: &ExperimentConfig, count: u64) -> PathBuf {
    cfg.output_dir.join(format!("update_{count:07}.ckpt"))
}

/// Opens the curve for appending. A resumed run keeps only the rows written
/// before its checkpoint, so the finished curve matches an uninterrupted run.
fn open_curve(path: &Path, header: &str, keep_below: Option<u64>) -> Result<BufWriter<File>> {
    let mut kept = vec![header.to_string()];
    if let (Some(limit), true) = (keep_below, path.exists()) {
        let reader = BufReader::new(File::open(path)?);
        for line in reader.lines().skip(1) {
            let line = line?;
            let idx: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if idx.is_some_and(|i| i < limit) {
                kept.push(line);
            }
        }
    }
    let mut f = BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(path)?);
    for line in kept {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(f)
}

fn check_resume(ckpt: &Checkpoint, kind: &str, cfg: &ExperimentConfig) -> Result<()> {
    ckpt.expect_kind(kind)?;
    if ckpt.fingerprint != cfg.fingerprint() {
        return Err(Error::Checkpoint("resume checkpoint was written by a different configuration".into()));
    }
    Ok(())
}

/// Map checkpoint: module arrays under `beam/`, optimizer under `adam`.
pub fn map_checkpoint(
    cfg: &ExperimentConfig,
    module: &BeamModule,
    adam: &Adam,
    update: u64,
    best: f64,
) -> Checkpoint {
    let mut c = Checkpoint::new(KIND_MAP, cfg.fingerprint(), update);
    c.set_meta("n_rx", module.n_rx());
    c.set_meta("best_metric", best);
    c.set_meta("config", cfg.to_text());
    c.push_store("beam", module.params());
    c.push_adam("adam", adam, module.params());
    c
}

/// Trained beam module from a map checkpoint; untrained ones are rejected.
pub fn load_beam_module(path: &Path) -> Result<BeamModule> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(KIND_MAP)?;
    if ckpt.update == 0 {
        return Err(Error::Checkpoint(format!("{} holds an untrained map", path.display())));
    }
    BeamModule::from_store(ckpt.meta_parse("n_rx")?, &ckpt.store("beam")?)
}

fn train_map(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let bcfg = cfg.beam_config();
    let (curve_path, latest, best_path) = paths(cfg);
    let (mut module, mut adam, mut done, mut best) = match &cfg.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            check_resume(&ckpt, KIND_MAP, cfg)?;
            let module = BeamModule::from_store(ckpt.meta_parse("n_rx")?, &ckpt.store("beam")?)?;
            let adam = ckpt.adam("adam", module.params())?;
            (module, adam, ckpt.update, ckpt.meta_parse("best_metric")?)
        }
        None => {
            let module = BeamModule::new(bcfg.n_rx, &mut stream(cfg.env.seed, INIT_WORKER, 0, LANE_AUX))?;
            let adam = Adam::new(module.params(), AdamConfig { lr: bcfg.lr, ..AdamConfig::default() });
            (module, adam, 0, f64::INFINITY)
        }
    };
    let mut curve = open_curve(&curve_path, MAP_CURVE_HEADER, cfg.resume.as_ref().map(|_| done))?;
    while done < bcfg.updates as u64 {
        let mut rng = stream(cfg.env.seed, MAP_WORKER, done, LANE_AUX);
        let loss = train_step(&mut module, &mut adam, &bcfg, &mut rng)?;
        writeln!(curve, "{done},{loss}")?;
        done += 1;
        if loss < best {
            best = loss;
            map_checkpoint(cfg, &module, &adam, done, best).save(&best_path)?;
        }
        if done % cfg.checkpoint_every as u64 == 0 {
            curve.flush()?;
            let ckpt = map_checkpoint(cfg, &module, &adam, done, best);
            ckpt.save(&periodic_path(cfg, done))?;
            ckpt.save(&latest)?;
        }
    }
    curve.flush()?;
    map_checkpoint(cfg, &module, &adam, done, best).save(&latest)?;
    Ok(TrainSummary { updates: done, best_metric: best, curve: curve_path, latest, best: best_path })
}

fn policy_config(cfg: &ExperimentConfig) -> PolicyConfig {
    PolicyConfig {
        hidden: cfg.agent_hidden,
        log_std_init: cfg.agent_log_std_init,
        ..PolicyConfig::new(cfg.env.n_rx, cfg.map)
    }
}

/// Agent checkpoint: policy under `policy/`, optimizer under `adam`, and
/// for the beamforming map the module it drives under `beam/`.
pub fn agent_checkpoint(cfg: &ExperimentConfig, trainer: &Trainer, best: f64) -> Checkpoint {
    let mut c = Checkpoint::new(KIND_AGENT, cfg.fingerprint(), trainer.update_index);
    let pc = trainer.policy.config();
    c.set_meta("n_rx", pc.n_rx);
    c.set_meta("map", pc.map.as_str());
    c.set_meta("hidden", pc.hidden);
    c.set_meta("gru_layers", pc.gru_layers);
    c.set_meta("ff_layers", pc.ff_layers);
    c.set_meta("log_std_init", pc.log_std_init);
    c.set_meta("episode_len", trainer.env.episode_len);
    c.set_meta("episodes_seen", trainer.episodes_seen);
    c.set_meta("best_metric", best);
    c.set_meta("config", cfg.to_text());
    c.push_store("policy", trainer.policy.params());
    c.push_adam("adam", &trainer.adam, trainer.policy.params());
    if let ActionMap::Beamforming(module) = &trainer.map {
        c.set_meta("beam.n_rx", module.n_rx());
        c.push_store("beam", module.params());
    }
    c
}

/// A trained agent ready for evaluation.
#[derive(Debug, Clone)]
pub struct LoadedAgent {
    pub policy: PolicyNet,
    pub map: ActionMap,
    pub episode_len: usize,
    pub updates: u64,
}

pub fn load_agent(path: &Path) -> Result<LoadedAgent> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.expect_kind(KIND_AGENT)?;
    agent_from_checkpoint(&ckpt)
}

fn agent_from_checkpoint(ckpt: &Checkpoint) -> Result<LoadedAgent> {
    let config = PolicyConfig {
        n_rx: ckpt.meta_parse("n_rx")?,
        map: MapKind::parse(ckpt.meta("map")?)?,
        hidden: ckpt.meta_parse("hidden")?,
        gru_layers: ckpt.meta_parse("gru_layers")?,
        ff_layers: ckpt.meta_parse("ff_layers")?,
        log_std_init: ckpt.meta_parse("log_std_init")?,
    };
    let map = match config.map {
        MapKind::Direct => ActionMap::Direct,
        MapKind::Beamforming => {
            let module = BeamModule::from_store(ckpt.meta_parse("beam.n_rx")?, &ckpt.store("beam")?)?;
            ActionMap::Beamforming(Arc::new(module))
        }
    };
    Ok(LoadedAgent {
        policy: PolicyNet::from_store(config, &ckpt.store("policy")?)?,
        map,
        episode_len: ckpt.meta_parse("episode_len")?,
        updates: ckpt.update,
    })
}

fn train_agent(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let total = cfg.total_updates() as u64;
    let (curve_path, latest, best_path) = paths(cfg);
    let (mut trainer, mut best) = match &cfg.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            check_resume(&ckpt, KIND_AGENT, cfg)?;
            let agent = agent_from_checkpoint(&ckpt)?;
            let adam = ckpt.adam("adam", agent.policy.params())?;
            let mut t = Trainer::new(agent.policy, cfg.ppo.clone(), cfg.env.clone(), agent.map)?;
            t.adam = adam;
            t.update_index = ckpt.update;
            t.episodes_seen = ckpt.meta_parse("episodes_seen")?;
            (t, ckpt.meta_parse("best_metric")?)
        }
        None => {
            let map = match cfg.map {
                MapKind::Direct => ActionMap::Direct,
                MapKind::Beamforming => {
                    let path = cfg.map_checkpoint.as_ref().expect("validated");
                    let module = load_beam_module(path)?;
                    if module.n_rx() != cfg.env.n_rx {
                        return Err(Error::Config(format!(
                            "map checkpoint has {} antennas, run has {}",
                            module.n_rx(),
                            cfg.env.n_rx
                        )));
                    }
                    ActionMap::Beamforming(Arc::new(module))
                }
            };
            let policy = PolicyNet::new(policy_config(cfg), &mut stream(cfg.env.seed, INIT_WORKER, 1, LANE_AUX))?;
            (Trainer::new(policy, cfg.ppo.clone(), cfg.env.clone(), map)?, f64::NEG_INFINITY)
        }
    };
    let mut curve = open_curve(&curve_path, AGENT_CURVE_HEADER, cfg.resume.as_ref().map(|_| trainer.update_index))?;
    while trainer.update_index < total {
        let s: UpdateStats = trainer.iterate()?;
        writeln!(
            curve,
            "{},{},{},{},{},{}",
            s.update_index, s.mean_reward, s.policy_loss, s.value_loss, s.entropy, s.grad_norm
        )?;
        if s.mean_reward > best {
            best = s.mean_reward;
            agent_checkpoint(cfg, &trainer, best).save(&best_path)?;
        }
        if trainer.update_index % cfg.checkpoint_every as u64 == 0 {
            curve.flush()?;
            let ckpt = agent_checkpoint(cfg, &trainer, best);
            ckpt.save(&periodic_path(cfg, trainer.update_index))?;
            ckpt.save(&latest)?;
        }
    }
    curve.flush()?;
    agent_checkpoint(cfg, &trainer, best).save(&latest)?;
    Ok(TrainSummary { updates: trainer.update_index, best_metric: best, curve: curve_path, latest, best: best_path })
}
