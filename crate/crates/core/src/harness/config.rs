//! Flat key-value experiment configuration.
//!
//! The document is TOML restricted to scalar and array values. Dotted keys
//! and `[section]` headers are flattened, so `ppo.lr = 1e-3` and
//! `[ppo]` / `lr = 1e-3` are the same key. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::beam::BeamTrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::{MapKind, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TrainMap,
    TrainAgent,
    Eval,
    Baselines,
    ExportPatterns,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TrainMap => "train-map",
            Mode::TrainAgent => "train-agent",
            Mode::Eval => "eval",
            Mode::Baselines => "baselines",
            Mode::ExportPatterns => "export-patterns",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "train-map" => Mode::TrainMap,
            "train-agent" => Mode::TrainAgent,
            "eval" => Mode::Eval,
            "baselines" => Mode::Baselines,
            "export-patterns" => Mode::ExportPatterns,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

/// Evaluated methods, named as in the results CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    MrcCsi,
    MrcOmp,
    Exhaustive,
    DrlBf,
    DrlDm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::MrcCsi, Method::MrcOmp, Method::Exhaustive, Method::DrlBf, Method::DrlDm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MrcCsi => "mrc_csi",
            Method::MrcOmp => "mrc_omp",
            Method::Exhaustive => "exhaustive",
            Method::DrlBf => "drl_bf",
            Method::DrlDm => "drl_dm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Episode layout and training SNR. `env.seed` is the master seed.
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub map: MapKind,
    pub agent_hidden: usize,
    pub agent_log_std_init: f64,
    pub beam: BeamTrainConfig,
    pub map_checkpoint: Option<PathBuf>,
    pub drl_bf_checkpoint: Option<PathBuf>,
    pub drl_dm_checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Total updates; defaults depend on the mode.
    pub updates: Option<usize>,
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub snr_list: Vec<f64>,
    /// Empty means the mode's default set.
    pub methods: Vec<Method>,
    pub omp_grid: usize,
    pub export_beams: usize,
    /// Explicit `(alpha, beta)` pairs in degrees; overrides `export_beams`.
    pub export_specs: Vec<(f64, f64)>,
    pub output_dir: PathBuf,
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "n_rx",
    "episode_len",
    "paths",
    "snr_db",
    "map",
    "agent.hidden",
    "agent.log_std_init",
    "ppo.clip",
    "ppo.entropy_coef",
    "ppo.value_coef",
    "ppo.gamma",
    "ppo.lr",
    "ppo.batch_episodes",
    "ppo.workers",
    "ppo.max_grad_norm",
    "ppo.epochs",
    "ppo.minibatch_episodes",
    "beam.batch",
    "beam.samples",
    "beam.ripple_weight",
    "beam.lr",
    "map_checkpoint",
    "drl_bf_checkpoint",
    "drl_dm_checkpoint",
    "resume",
    "updates",
    "checkpoint_every",
    "eval_episodes",
    "snr_list",
    "methods",
    "omp_grid",
    "export_beams",
    "export_specs",
    "output_dir",
];

/// Keys that change what a training run learns. Resuming requires them to match.
const TRAINING_KEYS: &[&str] = &[
    "mode",
    "seed",
    "n_rx",
    "episode_len",
    "paths",
    "snr_db",
    "map",
    "agent.hidden",
    "agent.log_std_init",
    "ppo.clip",
    "ppo.entropy_coef",
    "ppo.value_coef",
    "ppo.gamma",
    "ppo.lr",
    "ppo.batch_episodes",
    "ppo.max_grad_norm",
    "ppo.epochs",
    "ppo.minibatch_episodes",
    "beam.batch",
    "beam.samples",
    "beam.ripple_weight",
    "beam.lr",
];

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            map: MapKind::Direct,
            agent_hidden: 128,
            agent_log_std_init: -0.5,
            beam: BeamTrainConfig::default(),
            map_checkpoint: None,
            drl_bf_checkpoint: None,
            drl_dm_checkpoint: None,
            resume: None,
            updates: None,
            checkpoint_every: 1000,
            eval_episodes: 10_000,
            snr_list: (0..9).map(|i| -10.0 + 5.0 * i as f64).collect(),
            methods: Vec::new(),
            omp_grid: 256,
            export_beams: 8,
            export_specs: Vec::new(),
            output_dir: PathBuf::from("out"),
        }
    }

    /// Parses a config document on top of the defaults for `mode`.
    pub fn from_str_with_mode(text: &str, mode: Mode) -> Result<Self> {
        let mut cfg = Self::new(mode);
        let table: Table = text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat)?;
        for (key, value) in flat {
            cfg.apply(&key, &value)?;
        }
        if cfg.mode != mode {
            return Err(Error::Config(format!(
                "config file selects mode {} but {} was requested",
                cfg.mode.as_str(),
                mode.as_str()
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, mode: Mode) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with_mode(&text, mode)
    }

    /// Applies a `key=value` override; the value uses the document syntax,
    /// with bare words read as strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match format!("v = {raw}").parse::<Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(raw.to_string()),
        };
        self.apply(key, &value)
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "mode" => self.mode = Mode::parse(&string(key, v)?)?,
            "seed" => self.env.seed = uint(key, v)?,
            "n_rx" => self.env.n_rx = uint(key, v)? as usize,
            "episode_len" => self.env.episode_len = uint(key, v)? as usize,
            "paths" => self.env.paths = uint(key, v)? as usize,
            "snr_db" => self.env.snr_db = float(key, v)?,
            "map" => self.map = MapKind::parse(&string(key, v)?)?,
            "agent.hidden" => self.agent_hidden = uint(key, v)? as usize,
            "agent.log_std_init" => self.agent_log_std_init = float(key, v)?,
            "ppo.clip" => self.ppo.clip = float(key, v)?,
            "ppo.entropy_coef" => self.ppo.entropy_coef = float(key, v)?,
            "ppo.value_coef" => self.ppo.value_coef = float(key, v)?,
            "ppo.gamma" => self.ppo.gamma = float(key, v)?,
            "ppo.lr" => self.ppo.lr = float(key, v)?,
            "ppo.batch_episodes" => self.ppo.batch_episodes = uint(key, v)? as usize,
            "ppo.workers" => self.ppo.workers = uint(key, v)? as usize,
            "ppo.max_grad_norm" => self.ppo.max_grad_norm = float(key, v)?,
            "ppo.epochs" => self.ppo.epochs = uint(key, v)? as usize,
            "ppo.minibatch_episodes" => self.ppo.minibatch_episodes = uint(key, v)? as usize,
            "beam.batch" => self.beam.batch = uint(key, v)? as usize,
            "beam.samples" => self.beam.samples = uint(key, v)? as usize,
            "beam.ripple_weight" => self.beam.ripple_weight = float(key, v)?,
            "beam.lr" => self.beam.lr = float(key, v)?,
            "map_checkpoint" => self.map_checkpoint = opt_path(key, v)?,
            "drl_bf_checkpoint" => self.drl_bf_checkpoint = opt_path(key, v)?,
            "drl_dm_checkpoint" => self.drl_dm_checkpoint = opt_path(key, v)?,
            "resume" => self.resume = opt_path(key, v)?,
            "updates" => self.updates = Some(uint(key, v)? as usize),
            "checkpoint_every" => self.checkpoint_every = uint(key, v)? as usize,
            "eval_episodes" => self.eval_episodes = uint(key, v)? as usize,
            "snr_list" => self.snr_list = array(key, v)?.iter().map(|x| float(key, x)).collect::<Result<_>>()?,
            "methods" => {
                self.methods = array(key, v)?
                    .iter()
                    .map(|x| Method::parse(&string(key, x)?))
                    .collect::<Result<_>>()?
            }
            "omp_grid" => self.omp_grid = uint(key, v)? as usize,
            "export_beams" => self.export_beams = uint(key, v)? as usize,
            "export_specs" => {
                self.export_specs = array(key, v)?
                    .iter()
                    .map(|pair| match array(key, pair)? {
                        [a, b] => Ok((float(key, a)?, float(key, b)?)),
                        _ => Err(Error::Config(format!("{key}: each entry must be [alpha_deg, beta_deg]"))),
                    })
                    .collect::<Result<_>>()?
            }
            "output_dir" => self.output_dir = PathBuf::from(string(key, v)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Total updates for training modes.
    pub fn total_updates(&self) -> usize {
        self.updates.unwrap_or(match self.mode {
            Mode::TrainMap => 5000,
            _ => 100_000,
        })
    }

    /// Methods to evaluate, falling back to the mode's default set.
    pub fn methods(&self) -> Vec<Method> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        match self.mode {
            Mode::Baselines => {
                let mut m = vec![Method::MrcCsi, Method::MrcOmp];
                if self.map_checkpoint.is_some() {
                    m.push(Method::Exhaustive);
                }
                m
            }
            _ => Method::ALL.to_vec(),
        }
    }

    /// Beam-module training settings with the array size of the run.
    pub fn beam_config(&self) -> BeamTrainConfig {
        BeamTrainConfig { n_rx: self.env.n_rx, updates: self.total_updates(), ..self.beam.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        match self.mode {
            Mode::TrainAgent => {
                self.ppo.validate()?;
                if self.agent_hidden == 0 {
                    return Err(Error::Config("agent.hidden must be positive".into()));
                }
                if self.map == MapKind::Beamforming && self.map_checkpoint.is_none() {
                    return Err(Error::Config("the beamforming map needs map_checkpoint".into()));
                }
            }
            Mode::TrainMap => self.beam_config().validate()?,
            Mode::Eval | Mode::Baselines => {
                if self.snr_list.is_empty() {
                    return Err(Error::Config("snr_list must not be empty".into()));
                }
                if self.eval_episodes == 0 {
                    return Err(Error::Config("eval_episodes must be positive".into()));
                }
                if self.snr_list.iter().any(|s| !s.is_finite()) {
                    return Err(Error::Config("snr_list entries must be finite".into()));
                }
            }
            Mode::ExportPatterns => {
                if self.map_checkpoint.is_none() {
                    return Err(Error::Config("export-patterns needs map_checkpoint".into()));
                }
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        for path in [&self.map_checkpoint, &self.drl_bf_checkpoint, &self.drl_dm_checkpoint, &self.resume]
            .into_iter()
            .flatten()
        {
            if !path.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Value of `key` in document syntax.
    pub fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| match p {
            Some(p) => quote(&p.display().to_string()),
            None => "\"\"".to_string(),
        };
        let list = |v: Vec<String>| format!("[{}]", v.join(", "));
        match key {
            "mode" => quote(self.mode.as_str()),
            "seed" => self.env.seed.to_string(),
            "n_rx" => self.env.n_rx.to_string(),
            "episode_len" => self.env.episode_len.to_string(),
            "paths" => self.env.paths.to_string(),
            "snr_db" => fmt_f64(self.env.snr_db),
            "map" => quote(self.map.as_str()),
            "agent.hidden" => self.agent_hidden.to_string(),
            "agent.log_std_init" => fmt_f64(self.agent_log_std_init),
            "ppo.clip" => fmt_f64(self.ppo.clip),
            "ppo.entropy_coef" => fmt_f64(self.ppo.entropy_coef),
            "ppo.value_coef" => fmt_f64(self.ppo.value_coef),
            "ppo.gamma" => fmt_f64(self.ppo.gamma),
            "ppo.lr" => fmt_f64(self.ppo.lr),
            "ppo.batch_episodes" => self.ppo.batch_episodes.to_string(),
            "ppo.workers" => self.ppo.workers.to_string(),
            "ppo.max_grad_norm" => fmt_f64(self.ppo.max_grad_norm),
            "ppo.epochs" => self.ppo.epochs.to_string(),
            "ppo.minibatch_episodes" => self.ppo.minibatch_episodes.to_string(),
            "beam.batch" => self.beam.batch.to_string(),
            "beam.samples" => self.beam.samples.to_string(),
            "beam.ripple_weight" => fmt_f64(self.beam.ripple_weight),
            "beam.lr" => fmt_f64(self.beam.lr),
            "map_checkpoint" => path(&self.map_checkpoint),
            "drl_bf_checkpoint" => path(&self.drl_bf_checkpoint),
            "drl_dm_checkpoint" => path(&self.drl_dm_checkpoint),
            "resume" => path(&self.resume),
            "updates" => self.total_updates().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "snr_list" => list(self.snr_list.iter().map(|&s| fmt_f64(s)).collect()),
            "methods" => list(self.methods().iter().map(|m| quote(m.as_str())).collect()),
            "omp_grid" => self.omp_grid.to_string(),
            "export_beams" => self.export_beams.to_string(),
            "export_specs" => {
                list(self.export_specs.iter().map(|&(a, b)| format!("[{}, {}]", fmt_f64(a), fmt_f64(b))).collect())
            }
            "output_dir" => quote(&self.output_dir.display().to_string()),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// Canonical document listing every key; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.value_of(key);
            if value == "\"\"" {
                continue;
            }
            writeln!(out, "{key} = {value}").expect("string write");
        }
        out
    }

    /// SHA-256 over the keys that shape a training run.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for key in TRAINING_KEYS {
            h.update(key.as_bytes());
            h.update(b"=");
            h.update(self.value_of(key).as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out)?,
            other => out.push((key, other.clone())),
        }
    }
    Ok(())
}

fn type_error(key: &str, want: &str, v: &Value) -> Error {
    Error::Config(format!("{key}: expected {want}, got {v}"))
}

fn string(key: &str, v: &Value) -> Result<String> {
    v.as_str().map(str::to_string).ok_or_else(|| type_error(key, "a string", v))
}

fn uint(key: &str, v: &Value) -> Result<u64> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| type_error(key, "a non-negative integer", v))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(key, "a number", v)),
    }
}

fn array<'v>(key: &str, v: &'v Value) -> Result<&'v [Value]> {
    v.as_array().map(Vec::as_slice).ok_or_else(|| type_error(key, "an array", v))
}

fn opt_path(key: &str, v: &Value) -> Result<Option<PathBuf>> {
    let s = string(key, v)?;
    Ok(if s.is_empty() { None } else { Some(PathBuf::from(s)) })
}

fn quote(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

/// Shortest round-tripping float text that still reads back as a float.
fn fmt_f64(x: f64) -> String {
    Value::Float(x).to_string()
}
