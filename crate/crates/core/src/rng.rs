//! Counter-based RNG streams keyed by (master seed, chain, module, unit, iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Module {
    Elicit = 1,
    Init = 2,
    Latent = 3,
    Node = 4,
    Deep = 5,
    Summary = 6,
    Simulation = 7,
    Prior = 8,
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(master: u64, chain: u64, module: Module, unit: u64, iteration: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, &[chain, module as u64, unit, iteration]))
}
