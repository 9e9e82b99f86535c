//! Counter-based random streams.
//!
//! A stream is addressed by `(master seed, domain, run, lane)`. The first
//! three are hashed with SplitMix64 into a ChaCha8 key; the lane selects the
//! ChaCha stream. Draws for one address never depend on how many other
//! streams exist or in which order they are consumed.

use rand::SeedableRng;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Separates the randomness of unrelated experiment kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    CommonNoise = 1,
    Particles = 2,
    Cost = 3,
    Hitting = 4,
    /// Random evaluation points for checks.
    Validation = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit key derived from a master seed, a domain and a run index.
pub fn derive_key(master: u64, domain: Domain, run: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(domain as u64)) ^ run)
}

pub fn stream(master: u64, domain: Domain, run: u64, lane: u64) -> ChaCha8Rng {
    let key = derive_key(master, domain, run);
    let mut seed = [0u8; 32];
    let mut z = key;
    for chunk in seed.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(lane);
    rng
}

/// Fills `out` with standard normal draws from one stream.
pub fn fill_normals(master: u64, domain: Domain, run: u64, lane: u64, out: &mut [f64]) {
    let mut rng = stream(master, domain, run, lane);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normals(master: u64, domain: Domain, run: u64, lane: u64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    fill_normals(master, domain, run, lane, &mut out);
    out
}
