//! Classical reference methods: perfect-CSI MRC, MRC on an OMP channel
//! estimate, and exhaustive search over a fixed codebook.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::array::{array_response, beamforming_gain, inner, norm, Channel, Combiner, C64, MAX_AOA};
use crate::beam::{alpha_of_angle, build_codebook, BeamModule};
use crate::env::{EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::rng::{stream, EpisodeKey, Rng, LANE_AUX, LANE_CHANNEL, LANE_NOISE};

/// Stream `worker` id of the OMP sensing vectors.
pub const SENSING_WORKER: u64 = u64::MAX;

/// Matched filter `h / ||h||`.
pub fn mrc_csi(ch: &Channel) -> Result<Combiner> {
    Combiner::normalized(ch.h().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpConfig {
    /// Dictionary size over `[-60, 60]` degrees.
    pub grid: usize,
    /// Atoms selected; the true path count.
    pub iterations: usize,
    pub sensing: Vec<Combiner>,
}

impl OmpConfig {
    pub fn new(grid: usize, iterations: usize, sensing: Vec<Combiner>) -> Result<Self> {
        let n = sensing.first().map(Combiner::len).unwrap_or(0);
        if n == 0 || sensing.iter().any(|w| w.len() != n) {
            return Err(Error::Config("OMP needs equal-width, non-empty sensing vectors".into()));
        }
        if grid < n {
            return Err(Error::Config(format!("OMP grid {grid} smaller than {n} antennas")));
        }
        if iterations == 0 {
            return Err(Error::Config("OMP needs at least one iteration".into()));
        }
        Ok(Self { grid, iterations, sensing })
    }

    /// `probes` i.i.d. complex Gaussian sensing vectors, normalized.
    pub fn random(grid: usize, iterations: usize, probes: usize, n: usize, rng: &mut Rng) -> Result<Self> {
        let sensing = (0..probes)
            .map(|_| {
                let v = (0..n)
                    .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
                    .collect();
                Combiner::normalized(v)
            })
            .collect::<Result<_>>()?;
        Self::new(grid, iterations, sensing)
    }

    /// Sensing vectors for an episode layout, fixed by the run seed.
    pub fn for_env(env: &EnvConfig, grid: usize) -> Result<Self> {
        let mut rng = stream(env.seed, SENSING_WORKER, 0, LANE_AUX);
        Self::random(grid, env.paths, env.episode_len - 1, env.n_rx, &mut rng)
    }

    pub fn num_antennas(&self) -> usize {
        self.sensing[0].len()
    }

    /// Dictionary angles, evenly spaced over `[-60, 60]` degrees inclusive.
    pub fn grid_angles(&self) -> Vec<f64> {
        if self.grid == 1 {
            return vec![0.0];
        }
        (0..self.grid)
            .map(|g| -MAX_AOA + 2.0 * MAX_AOA * g as f64 / (self.grid - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpEstimate {
    /// Estimated channel: selected atoms weighted by their refit gains.
    pub h: Vec<C64>,
    /// Selected grid indices, in selection order.
    pub support: Vec<usize>,
    pub gains: Vec<C64>,
    pub residual_norm: f64,
    /// No atom could be selected, so `h` is zero.
    pub degenerate: bool,
}

/// Orthogonal matching pursuit over the angle-grid dictionary seen through
/// the sensing vectors, with a least-squares refit after every selection.
pub fn omp_estimate(y: &[C64], cfg: &OmpConfig) -> Result<OmpEstimate> {
    let m = cfg.sensing.len();
    if y.len() != m {
        return Err(Error::Shape(format!("{} measurements for {m} sensing vectors", y.len())));
    }
    if m < cfg.iterations {
        return Err(Error::InvalidArgument(format!(
            "{m} measurements cannot support {} OMP iterations",
            cfg.iterations
        )));
    }
    let n = cfg.num_antennas();
    let atoms: Vec<Vec<C64>> = cfg.grid_angles().iter().map(|&phi| array_response(phi, n)).collect();
    // Projected atoms p_g[t] = w_t^H a_g.
    let projected: Vec<Vec<C64>> = atoms
        .iter()
        .map(|a| cfg.sensing.iter().map(|w| inner(w.as_slice(), a)).collect())
        .collect();
    let proj_norms: Vec<f64> = projected.iter().map(|p| norm(p)).collect();

    let mut residual = y.to_vec();
    let mut support: Vec<usize> = Vec::with_capacity(cfg.iterations);
    let mut gains: Vec<C64> = Vec::new();
    let tiny = 1e-12 * norm(y).max(f64::MIN_POSITIVE);
    for _ in 0..cfg.iterations {
        if norm(&residual) <= tiny {
            break;
        }
        let best = projected
            .iter()
            .zip(&proj_norms)
            .enumerate()
            .filter(|(g, (_, &pn))| pn > 1e-12 && !support.contains(g))
            .map(|(g, (p, &pn))| (g, inner(p, &residual).norm() / pn))
            .fold(None, |acc: Option<(usize, f64)>, (g, c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((g, c)),
            });
        let Some((g, _)) = best else { break };
        support.push(g);
        gains = least_squares(&projected, &support, y)?;
        residual = y.to_vec();
        for (&s, &x) in support.iter().zip(&gains) {
            for (r, p) in residual.iter_mut().zip(&projected[s]) {
                *r -= p * x;
            }
        }
    }
    let mut h = vec![C64::new(0.0, 0.0); n];
    for (&s, &x) in support.iter().zip(&gains) {
        for (hk, ak) in h.iter_mut().zip(&atoms[s]) {
            *hk += ak * x;
        }
    }
    let degenerate = support.is_empty() || norm(&h) == 0.0;
    Ok(OmpEstimate { h, support, gains, residual_norm: norm(&residual), degenerate })
}

fn least_squares(projected: &[Vec<C64>], support: &[usize], y: &[C64]) -> Result<Vec<C64>> {
    let m = y.len();
    let a = DMatrix::from_fn(m, support.len(), |t, j| projected[support[j]][t]);
    let b = DVector::from_column_slice(y);
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::NonFinite(format!("OMP refit: {e}")))?;
    Ok(x.iter().copied().collect())
}

/// Probes with the sensing vectors, estimates the channel and combines with
/// `h_est / ||h_est||`. A degenerate estimate falls back to the strongest probe.
pub fn run_mrc_omp_episode(env: &EnvConfig, cfg: &OmpConfig, key: EpisodeKey) -> Result<f64> {
    if cfg.sensing.len() != env.episode_len - 1 || cfg.num_antennas() != env.n_rx {
        return Err(Error::Config(format!(
            "OMP sensing layout {}x{} does not match T-1 = {} probes of {} antennas",
            cfg.sensing.len(),
            cfg.num_antennas(),
            env.episode_len - 1,
            env.n_rx
        )));
    }
    let (mut state, _) = EnvState::reset(env, &mut key.lane(LANE_CHANNEL))?;
    let mut noise = key.lane(LANE_NOISE);
    let mut y = Vec::with_capacity(cfg.sensing.len());
    for w in &cfg.sensing {
        y.push(state.step(w, &mut noise)?.observation.to_complex());
    }
    let est = omp_estimate(&y, cfg)?;
    let w = if est.degenerate {
        cfg.sensing[strongest(&y)].clone()
    } else {
        Combiner::normalized(est.h)?
    };
    Ok(state.step(&w, &mut noise)?.reward)
}

/// Index of the largest `|y|`; the first on ties.
fn strongest(y: &[C64]) -> usize {
    y.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v.norm() > bv { (i, v.norm()) } else { (bi, bv) })
        .0
}

/// Probes every codebook beam once, then combines with the strongest.
pub fn run_exhaustive_episode(env: &EnvConfig, codebook: &[Combiner], key: EpisodeKey) -> Result<f64> {
    if codebook.len() != env.episode_len - 1 {
        return Err(Error::Config(format!(
            "codebook has {} beams for {} probes",
            codebook.len(),
            env.episode_len - 1
        )));
    }
    let (mut state, _) = EnvState::reset(env, &mut key.lane(LANE_CHANNEL))?;
    let mut noise = key.lane(LANE_NOISE);
    let mut y = Vec::with_capacity(codebook.len());
    for w in codebook {
        y.push(state.step(w, &mut noise)?.observation.to_complex());
    }
    let best = codebook[strongest(&y)].clone();
    Ok(state.step(&best, &mut noise)?.reward)
}

/// Perfect-CSI gain of an episode's channel; 1 by construction.
pub fn run_mrc_csi_episode(env: &EnvConfig, key: EpisodeKey) -> Result<f64> {
    let (state, _) = EnvState::reset(env, &mut key.lane(LANE_CHANNEL))?;
    beamforming_gain(&mrc_csi(state.channel())?, state.channel())
}

/// Module-coordinate sector matching the channel's `[-60, 60]` degree AoA range.
pub fn aoa_sector() -> (f64, f64) {
    (alpha_of_angle(-MAX_AOA), alpha_of_angle(MAX_AOA))
}

/// `q` equal-width beams from the module, tiling the AoA sector.
pub fn exhaustive_codebook(module: &BeamModule, q: usize) -> Result<Vec<Combiner>> {
    build_codebook(module, q, aoa_sector())
}
