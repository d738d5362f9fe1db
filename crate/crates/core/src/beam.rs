//! Maps from agent actions to unit-norm combiners.
//!
//! The direct map reads a `2 N` real vector as real and imaginary parts of
//! the combiner. The beamforming module is a small network that turns a
//! beam direction `alpha` and half-width `beta` into a combiner whose
//! pattern covers `[2(alpha - beta), 2(alpha + beta)]` in psi-space, where
//! `psi = pi * sin(theta)`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;

use crate::array::{reference_gain, Combiner, C64};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Gradients, Mlp, ParamStore, Tape, Tensor};
use crate::rng::Rng;

/// Smallest half-width the trained module is queried with (0.5 degrees).
pub const MIN_BETA: f64 = 0.5 * PI / 180.0;

/// Hidden width of the beam module.
pub const BEAM_HIDDEN: usize = 128;

pub fn direct_map(a: &[f64]) -> Result<Combiner> {
    if a.is_empty() || !a.len().is_multiple_of(2) {
        return Err(Error::Shape(format!("direct map needs an even-length action, got {}", a.len())));
    }
    let n = a.len() / 2;
    let w: Vec<C64> = (0..n).map(|k| C64::new(a[k], a[n + k])).collect();
    Combiner::normalized(w)
}

/// Widest admissible half-width for a beam pointing at `alpha`.
pub fn beta_max(alpha: f64) -> f64 {
    FRAC_PI_2.min((FRAC_PI_2 - alpha.abs()).abs())
}

/// Module coordinate of a physical angle: `alpha = (pi / 2) sin(theta)`,
/// so that `2 alpha` is the psi-space position of `theta`.
pub fn alpha_of_angle(theta: f64) -> f64 {
    FRAC_PI_2 * theta.sin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl BeamSpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let spec = Self { alpha, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_degrees(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha.to_radians(), beta.to_radians())
    }

    pub fn validate(&self) -> Result<()> {
        let tol = 1e-12;
        if !(self.alpha.abs() <= FRAC_PI_2 + tol) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [-pi/2, pi/2]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= beta_max(self.alpha) + tol) {
            return Err(Error::InvalidArgument(format!(
                "beta {} outside (0, {}]",
                self.beta,
                beta_max(self.alpha)
            )));
        }
        Ok(())
    }

    /// Network input scaled into [-1, 1].
    fn features(&self) -> [f64; 2] {
        [self.alpha / FRAC_PI_2, self.beta / FRAC_PI_2]
    }
}

/// Closed intervals `(lo, hi)` in psi-space.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiIntervals {
    pub inside: Vec<(f64, f64)>,
    pub outside: Vec<(f64, f64)>,
}

fn measure(set: &[(f64, f64)]) -> f64 {
    set.iter().map(|(lo, hi)| hi - lo).sum()
}

fn sample_from(set: &[(f64, f64)], rng: &mut Rng) -> f64 {
    let total = measure(set);
    let mut u = rng.random_range(0.0..total);
    for &(lo, hi) in set {
        let len = hi - lo;
        if u < len {
            return lo + u;
        }
        u -= len;
    }
    set.last().map(|&(_, hi)| hi).unwrap_or(0.0)
}

impl PsiIntervals {
    pub fn inside_measure(&self) -> f64 {
        measure(&self.inside)
    }

    pub fn outside_measure(&self) -> f64 {
        measure(&self.outside)
    }

    pub fn contains_inside(&self, psi: f64) -> bool {
        self.inside.iter().any(|&(lo, hi)| psi >= lo && psi <= hi)
    }

    pub fn sample_inside(&self, rng: &mut Rng, k: usize) -> Vec<f64> {
        if self.inside_measure() <= 0.0 {
            return Vec::new();
        }
        (0..k).map(|_| sample_from(&self.inside, rng)).collect()
    }

    pub fn sample_outside(&self, rng: &mut Rng, k: usize) -> Vec<f64> {
        if self.outside_measure() <= 0.0 {
            return Vec::new();
        }
        (0..k).map(|_| sample_from(&self.outside, rng)).collect()
    }
}

/// `inside = [-pi, pi] ∩ [2(alpha - beta), 2(alpha + beta)]`, `outside` its
/// complement in `[-pi, pi]`. Empty pieces are dropped.
pub fn psi_intervals(spec: &BeamSpec) -> PsiIntervals {
    let lo = (2.0 * (spec.alpha - spec.beta)).max(-PI);
    let hi = (2.0 * (spec.alpha + spec.beta)).min(PI);
    let inside = if hi > lo { vec![(lo, hi)] } else { Vec::new() };
    let mut outside = Vec::new();
    if lo > -PI {
        outside.push((-PI, lo.min(PI)));
    }
    if hi < PI {
        outside.push((hi.max(-PI), PI));
    }
    PsiIntervals { inside, outside }
}

/// `alpha ~ U[-pi/2, pi/2]`, `beta ~ U(0, beta_max(alpha)]`.
pub fn sample_beam_spec(rng: &mut Rng) -> BeamSpec {
    loop {
        let alpha = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
        let bmax = beta_max(alpha);
        // 1 - U[0, 1) lies in (0, 1]
        let beta = bmax * (1.0 - rng.random::<f64>());
        if beta > 0.0 {
            return BeamSpec { alpha, beta };
        }
    }
}

/// Pretrained network mapping a [`BeamSpec`] to a combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamModule {
    n_rx: usize,
    mlp: Mlp,
    store: ParamStore,
}

impl BeamModule {
    /// Fresh module: `2 -> 128 -> 128 -> 2 n_rx`, tanh hidden units, affine output.
    pub fn new(n_rx: usize, rng: &mut Rng) -> Result<Self> {
        if n_rx == 0 {
            return Err(Error::InvalidArgument("n_rx must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "beam",
            &[2, BEAM_HIDDEN, BEAM_HIDDEN, 2 * n_rx],
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?;
        Ok(Self { n_rx, mlp, store })
    }

    /// Rebuilds a module of width `n_rx` around saved parameters.
    pub fn from_store(n_rx: usize, src: &ParamStore) -> Result<Self> {
        let mut module = Self::new(n_rx, &mut crate::rng::stream(0, 0, 0, 0))?;
        module.store.assign_from(src)?;
        Ok(module)
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Raw network outputs, one row per spec.
    fn outputs(&self, store: &ParamStore, specs: &[BeamSpec]) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let x = tape.input(spec_features(specs)?);
        let y = self.mlp.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Combiner for `spec`; `beta` is clamped to at least [`MIN_BETA`].
    pub fn forward(&self, spec: &BeamSpec) -> Result<Combiner> {
        spec.validate()?;
        let clamped = BeamSpec { alpha: spec.alpha, beta: spec.beta.max(MIN_BETA) };
        let out = self.outputs(&self.store, &[clamped])?;
        if !out.is_finite() {
            return Err(Error::NonFinite("beam module output".into()));
        }
        direct_map(out.row_slice(0)).map_err(|_| Error::ZeroVector("beam module output"))
    }
}

fn spec_features(specs: &[BeamSpec]) -> Result<Tensor> {
    let data = specs.iter().flat_map(|s| s.features()).collect();
    Tensor::from_vec(specs.len(), 2, data)
}

pub fn beam_map_forward(module: &BeamModule, spec: &BeamSpec) -> Result<Combiner> {
    module.forward(spec)
}

/// Hyperparameters of beam-module pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamTrainConfig {
    pub n_rx: usize,
    /// Specs per update (`B`).
    pub batch: usize,
    /// Angles drawn from each of the inside and outside sets (`K`).
    pub samples: usize,
    /// Weight of the inside-variance (ripple) term.
    pub ripple_weight: f64,
    pub updates: usize,
    pub lr: f64,
}

impl Default for BeamTrainConfig {
    fn default() -> Self {
        Self { n_rx: 32, batch: 1000, samples: 1000, ripple_weight: 1.0, updates: 5000, lr: 1e-3 }
    }
}

impl BeamTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 || self.batch == 0 || self.samples == 0 {
            return Err(Error::Config("beam training needs positive n_rx, batch and samples".into()));
        }
        if !(self.ripple_weight >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::Config("ripple weight must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }
}

/// One training batch: specs with their sampled psi angles.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamBatch {
    pub specs: Vec<BeamSpec>,
    pub inside: Vec<Vec<f64>>,
    pub outside: Vec<Vec<f64>>,
}

impl BeamBatch {
    pub fn sample(rng: &mut Rng, batch: usize, samples: usize) -> Self {
        let mut specs = Vec::with_capacity(batch);
        let mut inside = Vec::with_capacity(batch);
        let mut outside = Vec::with_capacity(batch);
        for _ in 0..batch {
            let spec = sample_beam_spec(rng);
            let iv = psi_intervals(&spec);
            inside.push(iv.sample_inside(rng, samples));
            outside.push(iv.sample_outside(rng, samples));
            specs.push(spec);
        }
        Self { specs, inside, outside }
    }
}

/// `|w^H a_psi(psi)|` and `w^H a_psi(psi)` for a unit-norm `w`.
fn psi_response(w: &[C64], psi: f64) -> C64 {
    // Horner on sum_k conj(w_k) p^k with p = exp(j psi).
    let p = C64::from_polar(1.0, psi);
    let mut z = C64::new(0.0, 0.0);
    for wk in w.iter().rev() {
        z = z * p + wk.conj();
    }
    z / (w.len() as f64).sqrt()
}

/// Loss of one spec and its derivative with respect to each response modulus.
struct SpecLoss {
    value: f64,
    d_inside: Vec<f64>,
    d_outside: Vec<f64>,
}

fn mean_var(g: &[f64]) -> (f64, f64) {
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `-E_in[g] + E_out[g] + Var_out(g) + eps * Var_in(g)`, dropping the terms
/// of an empty sample set.
fn spec_loss(g_in: &[f64], g_out: &[f64], eps: f64) -> SpecLoss {
    let mut value = 0.0;
    let mut d_inside = Vec::new();
    let mut d_outside = Vec::new();
    if !g_in.is_empty() {
        let (m, v) = mean_var(g_in);
        let n = g_in.len() as f64;
        value += -m + eps * v;
        d_inside = g_in.iter().map(|g| -1.0 / n + eps * 2.0 * (g - m) / n).collect();
    }
    if !g_out.is_empty() {
        let (m, v) = mean_var(g_out);
        let n = g_out.len() as f64;
        value += m + v;
        d_outside = g_out.iter().map(|g| 1.0 / n + 2.0 * (g - m) / n).collect();
    }
    SpecLoss { value, d_inside, d_outside }
}

fn row_to_complex(row: &[f64]) -> Vec<C64> {
    let n = row.len() / 2;
    (0..n).map(|k| C64::new(row[k], row[n + k])).collect()
}

fn normalize(v: &[C64]) -> Result<(Vec<C64>, f64)> {
    let r = crate::array::norm(v);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::ZeroVector("beam module output"));
    }
    Ok((v.iter().map(|z| z / r).collect(), r))
}

impl BeamModule {
    /// Mean training loss over the batch, evaluated with `store` in place of
    /// the module's own parameters.
    pub fn batch_loss_with(&self, store: &ParamStore, batch: &BeamBatch, eps: f64) -> Result<f64> {
        let out = self.outputs(store, &batch.specs)?;
        let mut total = 0.0;
        for (b, _) in batch.specs.iter().enumerate() {
            let (w, _) = normalize(&row_to_complex(out.row_slice(b)))?;
            let g_in: Vec<f64> = batch.inside[b].iter().map(|&p| psi_response(&w, p).norm()).collect();
            let g_out: Vec<f64> = batch.outside[b].iter().map(|&p| psi_response(&w, p).norm()).collect();
            total += spec_loss(&g_in, &g_out, eps).value;
        }
        Ok(total / batch.specs.len() as f64)
    }

    pub fn batch_loss(&self, batch: &BeamBatch, eps: f64) -> Result<f64> {
        self.batch_loss_with(&self.store, batch, eps)
    }

    /// Mean loss over the batch together with its parameter gradient.
    pub fn loss_and_grads(&self, batch: &BeamBatch, eps: f64) -> Result<(f64, Gradients)> {
        let bsz = batch.specs.len();
        if bsz == 0 {
            return Err(Error::InvalidArgument("empty beam batch".into()));
        }
        let n = self.n_rx;
        let scale = 1.0 / (n as f64).sqrt();
        let mut tape = Tape::new(&self.store);
        let x = tape.input(spec_features(&batch.specs)?);
        let y = self.mlp.forward(&mut tape, x)?;
        let out = tape.value(y).clone();
        let mut seed = vec![0.0; bsz * 2 * n];
        let mut total = 0.0;
        for b in 0..bsz {
            let v = row_to_complex(out.row_slice(b));
            let (w, r) = normalize(&v)?;
            let resp_in: Vec<C64> = batch.inside[b].iter().map(|&p| psi_response(&w, p)).collect();
            let resp_out: Vec<C64> = batch.outside[b].iter().map(|&p| psi_response(&w, p)).collect();
            let g_in: Vec<f64> = resp_in.iter().map(|z| z.norm()).collect();
            let g_out: Vec<f64> = resp_out.iter().map(|z| z.norm()).collect();
            let sl = spec_loss(&g_in, &g_out, eps);
            total += sl.value;

            // dJ/dw_k as (d/dRe, d/dIm) packed into a complex number:
            // dg/dRe w_k + j dg/dIm w_k = conj(z) a_k / g.
            let mut dw = vec![C64::new(0.0, 0.0); n];
            let terms = batch.inside[b]
                .iter()
                .zip(resp_in.iter().zip(&g_in))
                .zip(&sl.d_inside)
                .chain(batch.outside[b].iter().zip(resp_out.iter().zip(&g_out)).zip(&sl.d_outside));
            for ((&psi, (z, &g)), &dg) in terms {
                if g < 1e-300 {
                    continue;
                }
                let c = z.conj() * (dg * scale / g);
                let p = C64::from_polar(1.0, psi);
                let mut pk = C64::new(1.0, 0.0);
                for d in dw.iter_mut() {
                    *d += c * pk;
                    pk *= p;
                }
            }
            // Through w = v / ||v||: dv = (dw - w <w, dw>) / ||v|| in R^{2n}.
            let proj: f64 = w.iter().zip(&dw).map(|(a, d)| a.re * d.re + a.im * d.im).sum();
            let row = &mut seed[b * 2 * n..(b + 1) * 2 * n];
            for k in 0..n {
                let g = (dw[k] - w[k] * proj) / r / bsz as f64;
                row[k] = g.re;
                row[n + k] = g.im;
            }
        }
        let mut grads = self.store.zero_grads();
        tape.backward_from(y, Tensor::from_vec(bsz, 2 * n, seed)?, &mut grads)?;
        Ok((total / bsz as f64, grads))
    }
}

/// Trains a fresh module. Returns it with the loss of every update.
pub fn train_beam_module(cfg: &BeamTrainConfig, rng: &mut Rng) -> Result<(BeamModule, Vec<f64>)> {
    cfg.validate()?;
    let mut module = BeamModule::new(cfg.n_rx, rng)?;
    let mut adam = Adam::new(module.params(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut history = Vec::with_capacity(cfg.updates);
    for _ in 0..cfg.updates {
        history.push(train_step(&mut module, &mut adam, cfg, rng)?);
    }
    Ok((module, history))
}

/// One Adam update on a freshly sampled batch; returns the batch loss.
pub fn train_step(
    module: &mut BeamModule,
    adam: &mut Adam,
    cfg: &BeamTrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = BeamBatch::sample(rng, cfg.batch, cfg.samples);
    let (loss, grads) = module.loss_and_grads(&batch, cfg.ripple_weight)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("beam module loss".into()));
    }
    adam.step(&mut module.store, &grads)?;
    Ok(loss)
}

/// Equal-width slices of `sector` (module coordinates, radians), one spec each.
pub fn codebook_specs(q: usize, sector: (f64, f64)) -> Result<Vec<BeamSpec>> {
    let (lo, hi) = sector;
    if q == 0 {
        return Err(Error::InvalidArgument("codebook needs at least one beam".into()));
    }
    if !(lo < hi) || lo < -FRAC_PI_2 - 1e-12 || hi > FRAC_PI_2 + 1e-12 {
        return Err(Error::InvalidArgument(format!("sector ({lo}, {hi}) outside [-pi/2, pi/2]")));
    }
    let half = (hi - lo) / (2.0 * q as f64);
    if half < MIN_BETA {
        return Err(Error::InvalidArgument(format!(
            "{q} beams give half-width {:.3} deg, below the module's {:.1} deg support",
            half.to_degrees(),
            MIN_BETA.to_degrees()
        )));
    }
    (0..q)
        .map(|i| {
            let center = lo + (2 * i + 1) as f64 * half;
            // the last slice can exceed beta_max by rounding only
            BeamSpec::new(center, half.min(beta_max(center)))
        })
        .collect()
}

pub fn build_codebook(module: &BeamModule, q: usize, sector: (f64, f64)) -> Result<Vec<Combiner>> {
    codebook_specs(q, sector)?.iter().map(|s| module.forward(s)).collect()
}

/// `theta` grid of `points` values spanning `[-90, 90]` degrees inclusive.
pub fn theta_grid(points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| -FRAC_PI_2 + PI * i as f64 / (points - 1) as f64)
        .collect()
}

/// Reference gain of `c` at each angle of `thetas`.
pub fn pattern(c: &Combiner, thetas: &[f64]) -> Vec<f64> {
    thetas.iter().map(|&t| reference_gain(t, c)).collect()
}

/// Mean squared psi-space response of `w` inside and outside the spec's
/// intervals, on a uniform grid of `points` psi values over `[-pi, pi)`.
pub fn in_out_gain(w: &Combiner, spec: &BeamSpec, points: usize) -> (f64, f64) {
    let iv = psi_intervals(spec);
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..points {
        let psi = -PI + 2.0 * PI * (i as f64 + 0.5) / points as f64;
        let g2 = psi_response(w.as_slice(), psi).norm_sqr();
        if iv.contains_inside(psi) {
            sin += g2;
            nin += 1;
        } else {
            sout += g2;
            nout += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    (avg(sin, nin), avg(sout, nout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{array_response, inner, psi_array_response};
    use crate::nn::gradcheck;
    use crate::rng::stream;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn direct_map_examples() {
        let mut a = vec![0.0; 8];
        a[0] = 1.0;
        let w = direct_map(&a).unwrap();
        assert_eq!(w.as_slice()[0], C64::new(1.0, 0.0));
        assert!(w.as_slice()[1..].iter().all(|z| *z == C64::new(0.0, 0.0)));

        let a = [0.3, -1.2, 0.7, 2.0, -0.1, 0.4];
        let doubled: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let (w1, w2) = (direct_map(&a).unwrap(), direct_map(&doubled).unwrap());
        for (x, y) in w1.as_slice().iter().zip(w2.as_slice()) {
            assert!((x - y).norm() < 1e-15);
        }
        assert!(direct_map(&[0.0; 6]).is_err());
        assert!(direct_map(&[1.0; 3]).is_err());
    }

    #[test]
    fn interval_examples() {
        let iv = psi_intervals(&BeamSpec::new(0.0, FRAC_PI_2).unwrap());
        assert_eq!(iv.inside, vec![(-PI, PI)]);
        assert!(iv.outside.is_empty());

        let iv = psi_intervals(&BeamSpec::new(FRAC_PI_4, PI / 8.0).unwrap());
        assert_eq!(iv.inside.len(), 1);
        assert!((iv.inside[0].0 - FRAC_PI_4).abs() < 1e-15);
        assert!((iv.inside[0].1 - 3.0 * FRAC_PI_4).abs() < 1e-15);

        assert!((beta_max(PI / 3.0) - PI / 6.0).abs() < 1e-15);
        assert!(BeamSpec::new(PI / 3.0, PI / 5.0).is_err());
    }

    #[test]
    fn spec_sampling() {
        let mut rng = stream(1, 0, 0, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut edge_beta: f64 = 0.0;
        for _ in 0..n {
            let s = sample_beam_spec(&mut rng);
            s.validate().unwrap();
            sum += s.alpha;
            sum_sq += s.alpha * s.alpha;
            if s.alpha.abs() > FRAC_PI_2 - 0.01 {
                edge_beta = edge_beta.max(s.beta);
            }
        }
        let mean = sum / n as f64;
        let se = (sum_sq / n as f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        assert!(edge_beta <= 0.01 + 1e-12);
    }

    #[test]
    fn module_outputs_unit_norm_and_is_deterministic() {
        let module = BeamModule::new(8, &mut stream(2, 0, 0, 0)).unwrap();
        let spec = BeamSpec::from_degrees(-11.25, 22.5).unwrap();
        let a = module.forward(&spec).unwrap();
        let b = module.forward(&spec).unwrap();
        assert_eq!(a, b);
        assert!((crate::array::norm(a.as_slice()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn module_parameter_count() {
        let module = BeamModule::new(32, &mut stream(0, 0, 0, 0)).unwrap();
        // 2*128+128 + 128*128+128 + 128*64+64
        assert_eq!(module.params().num_values(), 25_152);
    }

    #[test]
    fn psi_response_matches_inner_product() {
        let w = Combiner::normalized((0..6).map(|k| C64::new(k as f64 - 2.0, 0.5 * k as f64)).collect()).unwrap();
        for psi in [-3.0, -0.4, 0.0, 1.3, 3.1] {
            let want = inner(w.as_slice(), &psi_array_response(psi, 6));
            assert!((psi_response(w.as_slice(), psi) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = stream(3, 0, 0, 0);
        let module = BeamModule::new(6, &mut rng).unwrap();
        let batch = BeamBatch::sample(&mut rng, 4, 16);
        let (loss, grads) = module.loss_and_grads(&batch, 1.0).unwrap();
        assert!((loss - module.batch_loss(&batch, 1.0).unwrap()).abs() < 1e-12);
        let report = gradcheck::check(
            module.params(),
            &grads,
            |s| module.batch_loss_with(s, &batch, 1.0).unwrap(),
            50,
            1e-5,
            &mut rng,
        );
        assert!(report.passes(1e-4), "max rel error {}", report.max_rel_error());
    }

    #[test]
    fn empty_outside_drops_terms() {
        let sl = spec_loss(&[0.5, 0.7], &[], 1.0);
        assert!((sl.value - (-0.6 + 0.01)).abs() < 1e-15);
        assert!(sl.d_outside.is_empty());
    }

    #[test]
    fn codebook_arithmetic() {
        let specs = codebook_specs(8, (-FRAC_PI_2, FRAC_PI_2)).unwrap();
        let centers: Vec<f64> = specs.iter().map(|s| s.alpha.to_degrees()).collect();
        let want = [-78.75, -56.25, -33.75, -11.25, 11.25, 33.75, 56.25, 78.75];
        for (c, w) in centers.iter().zip(want) {
            assert!((c - w).abs() < 1e-9);
        }
        assert!(specs.iter().all(|s| (s.beta.to_degrees() - 11.25).abs() < 1e-9));

        let four = codebook_specs(4, (-FRAC_PI_2, FRAC_PI_2)).unwrap();
        assert!((four[1].alpha.to_degrees() + 22.5).abs() < 1e-9);
        assert!((four[1].beta.to_degrees() - 22.5).abs() < 1e-9);

        let one = codebook_specs(1, (-FRAC_PI_2, FRAC_PI_2)).unwrap();
        assert!(one[0].alpha.abs() < 1e-15 && (one[0].beta - FRAC_PI_2).abs() < 1e-15);

        assert!(codebook_specs(0, (-1.0, 1.0)).is_err());
        assert!(codebook_specs(400, (-FRAC_PI_2, FRAC_PI_2)).is_err());
    }

    #[test]
    fn alpha_coordinate_matches_psi() {
        let theta = 0.4;
        let a = array_response(theta, 8);
        let b = psi_array_response(2.0 * alpha_of_angle(theta), 8);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn intervals_partition_psi_space(alpha in -FRAC_PI_2..=FRAC_PI_2, frac in 0.001f64..=1.0) {
            let beta = beta_max(alpha) * frac;
            prop_assume!(beta > 0.0);
            let iv = psi_intervals(&BeamSpec { alpha, beta });
            prop_assert!((iv.inside_measure() + iv.outside_measure() - 2.0 * PI).abs() < 1e-12);
        }

        #[test]
        fn maps_emit_unit_norm(a in proptest::collection::vec(-5.0f64..5.0, 2..40), seed in 0u64..50) {
            prop_assume!(a.len() % 2 == 0 && a.iter().any(|v| v.abs() > 1e-6));
            let w = direct_map(&a).unwrap();
            prop_assert!((crate::array::norm(w.as_slice()) - 1.0).abs() < 1e-12);

            let mut rng = stream(seed, 0, 0, 0);
            let module = BeamModule::new(4, &mut stream(9, 0, 0, 0)).unwrap();
            let spec = sample_beam_spec(&mut rng);
            let c = module.forward(&spec).unwrap();
            prop_assert!((crate::array::norm(c.as_slice()) - 1.0).abs() < 1e-9);
        }
    }
}
