use std::f64::consts::FRAC_PI_2;

use ba_core::array::{array_response, reference_gain, Combiner};
use ba_core::baselines::*;
use ba_core::beam::codebook_specs;
use ba_core::env::EnvConfig;
use ba_core::ppo::{collect_rollouts, ActionMap, MapKind, PolicyConfig, PolicyNet, RolloutOptions};
use ba_core::rng::{stream, EpisodeKey};

/// Steering-vector beams at the centers of `q` equal slices of the AoA sector.
fn steering_codebook(q: usize, n: usize) -> (Vec<Combiner>, Vec<(f64, f64)>) {
    let specs = codebook_specs(q, aoa_sector()).unwrap();
    let to_theta = |alpha: f64| (alpha / FRAC_PI_2).clamp(-1.0, 1.0).asin();
    let beams = specs.iter().map(|s| Combiner::new(array_response(to_theta(s.alpha), n)).unwrap()).collect();
    let spans = specs.iter().map(|s| (to_theta(s.alpha - s.beta), to_theta(s.alpha + s.beta))).collect();
    (beams, spans)
}

#[test]
fn mrc_dominates_every_method() {
    let env = EnvConfig { n_rx: 8, paths: 2, snr_db: 10.0, seed: 1, ..EnvConfig::default() };
    let omp = OmpConfig::for_env(&env, 128).unwrap();
    let (codebook, _) = steering_codebook(4, 8);
    let mut cfg = PolicyConfig::new(8, MapKind::Direct);
    cfg.hidden = 16;
    let policy = PolicyNet::new(cfg, &mut stream(1, 0, 0, 0)).unwrap();
    let keys: Vec<_> = (0..1000).map(|e| EpisodeKey::new(1, 2, e)).collect();
    let drl = collect_rollouts(&policy, &ActionMap::Direct, &env, &keys, RolloutOptions::default()).unwrap();
    for (key, trace) in keys.iter().zip(&drl) {
        let upper = run_mrc_csi_episode(&env, *key).unwrap();
        assert!((upper - 1.0).abs() < 1e-9);
        for g in [
            run_mrc_omp_episode(&env, &omp, *key).unwrap(),
            run_exhaustive_episode(&env, &codebook, *key).unwrap(),
            trace.terminal_reward(),
        ] {
            assert!((0.0..=upper + 1e-12).contains(&g), "{g} > {upper}");
        }
    }
}

#[test]
fn omp_gain_drops_with_noise() {
    let mean = |snr_db: f64| {
        let env = EnvConfig { n_rx: 16, snr_db, seed: 2, ..EnvConfig::default() };
        let omp = OmpConfig::for_env(&env, 256).unwrap();
        (0..1000).map(|e| run_mrc_omp_episode(&env, &omp, EpisodeKey::new(2, 2, e)).unwrap()).sum::<f64>() / 1000.0
    };
    let (high, low) = (mean(20.0), mean(0.0));
    assert!(high >= low, "20 dB {high} < 0 dB {low}");
}

#[test]
fn omp_is_reproducible() {
    let env = EnvConfig { n_rx: 16, seed: 3, ..EnvConfig::default() };
    let a = OmpConfig::for_env(&env, 64).unwrap();
    let b = OmpConfig::for_env(&env, 64).unwrap();
    assert_eq!(a, b);
    let key = EpisodeKey::new(3, 2, 7);
    assert_eq!(run_mrc_omp_episode(&env, &a, key).unwrap(), run_mrc_omp_episode(&env, &b, key).unwrap());
}

#[test]
fn exhaustive_gain_bounded_by_worst_in_beam_gain() {
    let n = 8;
    let env = EnvConfig { n_rx: n, snr_db: 300.0, seed: 4, ..EnvConfig::default() };
    let (codebook, spans) = steering_codebook(4, n);
    // Worst reference gain of each beam over its own slice, on a dense grid.
    let bound = codebook
        .iter()
        .zip(&spans)
        .map(|(c, &(lo, hi))| {
            (0..=2000).map(|i| reference_gain(lo + (hi - lo) * i as f64 / 2000.0, c)).fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(bound > 0.0);
    for e in 0..1000 {
        let g = run_exhaustive_episode(&env, &codebook, EpisodeKey::new(4, 2, e)).unwrap();
        assert!(g >= bound * (1.0 - 1e-6), "episode {e}: {g} < {bound}");
    }
}

#[test]
fn exhaustive_selects_beam_covering_the_path() {
    let n = 16;
    let env = EnvConfig { n_rx: n, snr_db: 300.0, seed: 5, ..EnvConfig::default() };
    let (codebook, spans) = steering_codebook(4, n);
    let centers: Vec<f64> = spans.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    for (i, &center) in centers.iter().enumerate() {
        // Dense-grid reference: the beam covering `center` is the strongest there.
        let gains: Vec<f64> = codebook.iter().map(|c| reference_gain(center, c)).collect();
        let argmax = (0..gains.len()).max_by(|&a, &b| gains[a].total_cmp(&gains[b])).unwrap();
        assert_eq!(argmax, i);
    }
    // Single-path episodes land on the covering beam.
    for e in 0..200 {
        let key = EpisodeKey::new(5, 2, e);
        let (state, _) =
            ba_core::env::EnvState::reset(&env, &mut key.lane(ba_core::rng::LANE_CHANNEL)).unwrap();
        let aoa = state.channel().aoas()[0];
        let cover = spans.iter().position(|&(lo, hi)| aoa >= lo - 1e-12 && aoa <= hi + 1e-12).unwrap();
        let g = run_exhaustive_episode(&env, &codebook, key).unwrap();
        let best = codebook.iter().map(|c| reference_gain(aoa, c)).fold(0.0, f64::max);
        assert!((g - best).abs() < 1e-9);
        assert!(g >= reference_gain(aoa, &codebook[cover]) - 1e-9);
    }
}

#[test]
fn rewards_lie_in_unit_interval() {
    for snr in [-10.0, 10.0, 30.0] {
        let env = EnvConfig { n_rx: 8, paths: 3, snr_db: snr, seed: 6, ..EnvConfig::default() };
        let omp = OmpConfig::for_env(&env, 64).unwrap();
        let (codebook, _) = steering_codebook(4, 8);
        for e in 0..200 {
            let key = EpisodeKey::new(6, 2, e);
            for g in [run_mrc_omp_episode(&env, &omp, key).unwrap(), run_exhaustive_episode(&env, &codebook, key).unwrap()]
            {
                assert!((0.0..=1.0 + 1e-12).contains(&g));
            }
        }
    }
}
