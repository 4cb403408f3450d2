//! Independent per-purpose random streams derived from one episode seed.
//!
//! Each draw site asks for a stream by purpose plus a short salt (view,
//! step, object role, ...). Streams never share state, so changing how much
//! one purpose consumes leaves every other purpose's draws unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Identity = 1,
    Placement = 2,
    ObsNoise = 3,
    RefNoise = 4,
    Occlusion = 5,
    Detector = 6,
    Tracker = 7,
    Policy = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, stream: Stream, salt: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &s in salt {
        h = splitmix(h ^ splitmix(s.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, salt: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, salt))
}
