//! Deterministic, independent random streams.
//!
//! Every random decision in a federated run draws from its own stream keyed
//! by `(seed, round, purpose, index)`. Streams never share state, so the
//! order in which clients are processed and whether a policy happens to
//! draw extra masks cannot perturb any other draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    ClientSelection = 2,
    ExchangeMask = 3,
    ReportMask = 4,
    ForwardMask = 5,
    LocalTraining = 6,
    Clustering = 7,
    Synthesis = 8,
    Shuffle = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the stream for `(seed, round, purpose, index)`.
pub fn stream(seed: u64, round: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(round ^ 0xA5A5_0000_0000_0000),
        splitmix(purpose as u64),
        splitmix(index.wrapping_add(0x5151)),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
