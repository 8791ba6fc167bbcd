//! Reproducible random streams.
//!
//! Every run derives its own ChaCha8 key from the master seed; independent
//! purposes (world construction, round draws, reward noise, seed choice, ...)
//! read from distinct ChaCha stream ids under that key, so a policy that
//! consumes no randomness cannot shift another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RNG_FAMILY: &str =
    "ChaCha8 (rand_chacha); key = seed_from_u64(splitmix64(master ^ splitmix64(run))); one stream id per purpose";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    World = 1,
    Rounds = 2,
    Noise = 3,
    Seeds = 4,
    Truth = 5,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run key derived from the master seed.
pub fn run_key(master: u64, run: u64) -> u64 {
    splitmix64(master ^ splitmix64(run))
}

pub fn stream(master: u64, run: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_key(master, run));
    rng.set_stream(purpose as u64);
    rng
}
