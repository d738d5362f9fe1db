//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(seed, worker, episode, lane)`, so results depend only on the key and
//! never on how many workers ran or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Channel draws.
pub const LANE_CHANNEL: u64 = 0;
/// Receiver noise.
pub const LANE_NOISE: u64 = 1;
/// Policy action sampling.
pub const LANE_ACTION: u64 = 2;
/// Anything else a caller needs (minibatch shuffles, sensing vectors, ...).
pub const LANE_AUX: u64 = 3;

pub fn stream(seed: u64, worker: u64, episode: u64, lane: u64) -> Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&worker.to_le_bytes());
    key[16..24].copy_from_slice(&episode.to_le_bytes());
    key[24..].copy_from_slice(b"ba-rngv1");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(lane);
    rng
}

/// Streams for one episode of one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeKey {
    pub seed: u64,
    pub worker: u64,
    pub episode: u64,
}

impl EpisodeKey {
    pub fn new(seed: u64, worker: u64, episode: u64) -> Self {
        Self { seed, worker, episode }
    }

    pub fn lane(&self, lane: u64) -> Rng {
        stream(self.seed, self.worker, self.episode, lane)
    }
}
