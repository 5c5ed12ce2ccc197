//! Named seed streams.
//!
//! Every random decision in the pipeline draws from a stream derived from the
//! single master seed plus a stream name and index. A resumed run therefore
//! sees exactly the same randomness as an uninterrupted one, because the
//! stream for step `t` depends only on `(master, name, t)`, never on how many
//! values were drawn before.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream coordinates. Stable across platforms and Rust
/// versions, unlike `DefaultHasher`.
pub fn stream_seed(master: u64, name: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in master
        .to_le_bytes()
        .iter()
        .chain(name.as_bytes())
        .chain(index.to_le_bytes().iter())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// RNG for the given stream coordinates.
pub fn stream_rng(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, name, index))
}
