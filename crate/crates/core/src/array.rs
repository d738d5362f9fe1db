//! Uniform linear array responses, geometric channels and gain metrics.
//!
//! All complex arithmetic of the crate lives here and in the modules that
//! talk to the physical layer; the learning code only sees real vectors.

use std::f64::consts::{FRAC_PI_3, PI};

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type C64 = Complex64;

/// Largest AoA magnitude of a sampled path (60 degrees).
pub const MAX_AOA: f64 = FRAC_PI_3;

const NORM_TOL: f64 = 1e-9;

/// `w^H h`.
pub fn inner(w: &[C64], h: &[C64]) -> C64 {
    w.iter().zip(h).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    norm_sqr(v).sqrt()
}

/// ULA response with half-wavelength spacing:
/// element `k` is `exp(j*pi*k*sin(phi)) / sqrt(n)`.
pub fn array_response(phi: f64, n: usize) -> Vec<C64> {
    psi_array_response(PI * phi.sin(), n)
}

/// Array response in psi-space, where the phase step between neighbouring
/// elements is `psi` itself: element `k` is `exp(j*k*psi) / sqrt(n)`.
pub fn psi_array_response(psi: f64, n: usize) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| C64::from_polar(scale, k as f64 * psi))
        .collect()
}

/// A narrowband single-antenna-user channel seen by an `n`-element ULA.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    gains: Vec<C64>,
    aoas: Vec<f64>,
    h: Vec<C64>,
}

impl Channel {
    /// Assembles `h = sum_l gains[l] * a(aoas[l])`.
    pub fn from_paths(gains: Vec<C64>, aoas: Vec<f64>, n: usize) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidArgument("channel needs at least one path".into()));
        }
        if gains.len() != aoas.len() {
            return Err(Error::Shape(format!(
                "{} gains but {} angles of arrival",
                gains.len(),
                aoas.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("antenna count must be positive".into()));
        }
        if let Some(phi) = aoas.iter().find(|phi| !(phi.abs() <= MAX_AOA + 1e-12)) {
            return Err(Error::InvalidArgument(format!(
                "angle of arrival {phi} rad outside [-pi/3, pi/3]"
            )));
        }
        let mut h = vec![C64::new(0.0, 0.0); n];
        for (g, &phi) in gains.iter().zip(&aoas) {
            for (hk, ak) in h.iter_mut().zip(array_response(phi, n)) {
                *hk += g * ak;
            }
        }
        Ok(Self { gains, aoas, h })
    }

    pub fn num_paths(&self) -> usize {
        self.gains.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.h.len()
    }

    pub fn gains(&self) -> &[C64] {
        &self.gains
    }

    pub fn aoas(&self) -> &[f64] {
        &self.aoas
    }

    pub fn h(&self) -> &[C64] {
        &self.h
    }

    /// Bit-level bytes of `h`, used for pairing checks across methods.
    pub fn h_bytes(&self) -> Vec<u8> {
        self.h
            .iter()
            .flat_map(|z| z.re.to_le_bytes().into_iter().chain(z.im.to_le_bytes()))
            .collect()
    }
}

/// Draws `paths` paths with `CN(0, 1)` gains and AoAs uniform on [-60, 60] degrees.
pub fn sample_channel(rng: &mut Rng, paths: usize, n: usize) -> Result<Channel> {
    if paths == 0 {
        return Err(Error::InvalidArgument("path count must be at least 1".into()));
    }
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut gains = Vec::with_capacity(paths);
    let mut aoas = Vec::with_capacity(paths);
    for _ in 0..paths {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        gains.push(C64::new(re * half, im * half));
        aoas.push(rng.random_range(-MAX_AOA..=MAX_AOA));
    }
    Channel::from_paths(gains, aoas, n)
}

/// A unit-norm analog combining vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    w: Vec<C64>,
}

impl Combiner {
    /// Wraps `w`, which must already have unit norm.
    pub fn new(w: Vec<C64>) -> Result<Self> {
        let n = norm(&w);
        if w.is_empty() || (n - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "combiner norm {n} is not 1"
            )));
        }
        Ok(Self { w })
    }

    /// Scales `v` to unit norm.
    pub fn normalized(mut v: Vec<C64>) -> Result<Self> {
        let n = norm(&v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroVector("combiner"));
        }
        v.iter_mut().for_each(|z| *z /= n);
        Ok(Self { w: v })
    }

    /// Single active antenna `k`.
    pub fn unit(k: usize, n: usize) -> Self {
        let mut w = vec![C64::new(0.0, 0.0); n];
        w[k] = C64::new(1.0, 0.0);
        Self { w }
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.w
    }
}

/// Normalized beamforming gain `|w^H h|^2 / ||h||^2`, in [0, 1].
pub fn beamforming_gain(w: &Combiner, ch: &Channel) -> Result<f64> {
    let hh = norm_sqr(ch.h());
    if !(hh > 0.0) {
        return Err(Error::ZeroVector("channel"));
    }
    if w.len() != ch.num_antennas() {
        return Err(Error::Shape(format!(
            "combiner has {} elements, channel {}",
            w.len(),
            ch.num_antennas()
        )));
    }
    Ok((inner(w.as_slice(), ch.h()).norm_sqr() / hh).min(1.0))
}

/// Reference gain `|c^H a(theta)|^2` of a codeword towards physical angle `theta`.
pub fn reference_gain(theta: f64, c: &Combiner) -> f64 {
    inner(c.as_slice(), &array_response(theta, c.len())).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn broadside_response_is_flat() {
        let a = array_response(0.0, 4);
        for z in &a {
            assert!(close(*z, C64::new(0.5, 0.0), 1e-15));
        }
    }

    #[test]
    fn endfire_two_elements() {
        let a = array_response(FRAC_PI_2, 2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(a[0], C64::new(s, 0.0), 1e-15));
        assert!(close(a[1], C64::new(-s, 0.0), 1e-15));
    }

    #[test]
    fn psi_response_examples() {
        let a = psi_array_response(0.0, 8);
        let s = 1.0 / 8f64.sqrt();
        assert!(a.iter().all(|z| close(*z, C64::new(s, 0.0), 1e-15)));
        let b = psi_array_response(PI, 2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(b[1], C64::new(-s, 0.0), 1e-15));
    }

    #[test]
    fn single_path_norm_is_gain_modulus() {
        let mut rng = stream(7, 0, 0, 0);
        for _ in 0..100 {
            let ch = sample_channel(&mut rng, 1, 16).unwrap();
            assert!((norm(ch.h()) - ch.gains()[0].norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_energy_matches_path_count() {
        // E||h||^2 = L since E|alpha|^2 = 1 and responses have unit norm.
        let mut rng = stream(11, 0, 0, 0);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let e = norm_sqr(sample_channel(&mut rng, 3, 8).unwrap().h());
            sum += e;
            sum_sq += e * e;
        }
        let mean = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - 3.0).abs() < 0.1, "mean {mean}");
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_channel(&mut stream(3, 1, 2, 0), 4, 8).unwrap();
        let b = sample_channel(&mut stream(3, 1, 2, 0), 4, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_paths_rejected() {
        assert!(sample_channel(&mut stream(0, 0, 0, 0), 0, 8).is_err());
    }

    #[test]
    fn cached_h_matches_paths() {
        let mut rng = stream(5, 0, 0, 0);
        let ch = sample_channel(&mut rng, 3, 12).unwrap();
        for k in 0..12 {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..3 {
                let phase = PI * k as f64 * ch.aoas()[l].sin();
                acc += ch.gains()[l] * C64::from_polar(1.0 / 12f64.sqrt(), phase);
            }
            assert!(close(acc, ch.h()[k], 1e-12));
            assert!(ch.aoas()[0].abs() <= MAX_AOA);
        }
    }

    #[test]
    fn mrc_and_orthogonal_gains() {
        let ch = sample_channel(&mut stream(9, 0, 0, 0), 2, 4).unwrap();
        let mrc = Combiner::normalized(ch.h().to_vec()).unwrap();
        assert!((beamforming_gain(&mrc, &ch).unwrap() - 1.0).abs() < 1e-12);

        // Gram-Schmidt a unit vector against h.
        let h = ch.h();
        let e1: Vec<C64> = (0..4).map(|k| if k == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
        let proj = inner(h, &e1) / norm_sqr(h);
        let orth: Vec<C64> = e1.iter().zip(h).map(|(e, hk)| e - proj * hk).collect();
        let w = Combiner::normalized(orth).unwrap();
        assert!(beamforming_gain(&w, &ch).unwrap() < 1e-24);
    }

    #[test]
    fn random_combiner_gain_is_one_over_n() {
        let n = 32;
        let mut rng = stream(13, 0, 0, 0);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let ch = sample_channel(&mut rng, 1, n).unwrap();
            let v: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            acc += beamforming_gain(&Combiner::normalized(v).unwrap(), &ch).unwrap();
        }
        let mean = acc / draws as f64;
        assert!((mean - 1.0 / n as f64).abs() < 0.2 / n as f64, "mean {mean}");
    }

    #[test]
    fn zero_channel_rejected() {
        let ch = Channel {
            gains: vec![C64::new(0.0, 0.0)],
            aoas: vec![0.0],
            h: vec![C64::new(0.0, 0.0); 4],
        };
        assert!(beamforming_gain(&Combiner::unit(0, 4), &ch).is_err());
    }

    #[test]
    fn reference_gain_examples() {
        let c = Combiner::new(array_response(0.3, 16)).unwrap();
        assert!((reference_gain(0.3, &c) - 1.0).abs() < 1e-12);
        let e1 = Combiner::unit(0, 16);
        for theta in [-1.2, -0.1, 0.0, 0.7] {
            assert!((reference_gain(theta, &e1) - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn combiner_rejects_non_unit() {
        assert!(Combiner::new(vec![C64::new(2.0, 0.0)]).is_err());
        assert!(Combiner::normalized(vec![C64::new(0.0, 0.0); 3]).is_err());
    }

    proptest! {
        #[test]
        fn response_has_unit_norm(phi in -FRAC_PI_2..=FRAC_PI_2, n in 1usize..=256) {
            prop_assert!((norm(&array_response(phi, n)) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn psi_identity(phi in -FRAC_PI_2..=FRAC_PI_2, n in 1usize..=64) {
            let a = array_response(phi, n);
            let b = psi_array_response(PI * phi.sin(), n);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn gain_bounded(seed in 0u64..1000, theta in -FRAC_PI_2..=FRAC_PI_2) {
            let mut rng = stream(seed, 0, 0, 0);
            let ch = sample_channel(&mut rng, 2, 8).unwrap();
            let v: Vec<C64> = (0..8)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let w = Combiner::normalized(v).unwrap();
            let g = beamforming_gain(&w, &ch).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            let r = reference_gain(theta, &w);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        }
    }
}
