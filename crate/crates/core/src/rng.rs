//! Deterministic random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by
//! `(seed, tag, a, b)`, e.g. `(seed, "client", id, round)` for local
//! training. Changing the aggregation strategy therefore never perturbs the
//! randomness seen by clients.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

pub const CLIENT: &str = "client";
pub const SERVER: &str = "server";
pub const SETUP: &str = "setup";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// FNV-1a; only needs to be stable across builds.
fn hash_tag(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// 256-bit key for the stream `(seed, tag, a, b)`.
pub fn stream_key(seed: u64, tag: &str, a: u64, b: u64) -> [u8; 32] {
    let mut state = splitmix64(seed ^ hash_tag(tag));
    state = splitmix64(state ^ a.wrapping_mul(0xa076_1d64_78bd_642f));
    state = splitmix64(state ^ b.wrapping_mul(0xe703_7ed1_a0b4_28db));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

pub fn stream(seed: u64, tag: &str, a: u64, b: u64) -> StreamRng {
    StreamRng::from_seed(stream_key(seed, tag, a, b))
}
