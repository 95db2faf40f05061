//! Counter-based random streams.
//!
//! Every random quantity is addressed by a `(seed, counter)` pair: the seed
//! keys a ChaCha8 generator and the counter selects one of its 2⁶⁴ independent
//! streams. Bootstrap replicate `b` always reads stream `b`, so draws do not
//! depend on evaluation order or thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::special::norm_quantile;

/// Generator for stream `counter` under `seed`.
pub fn stream(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    rng
}

/// Derives a child seed from a parent seed and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    for &part in path {
        h = splitmix(h ^ splitmix(part.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
pub fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via the inverse CDF, so the value depends only on the
/// underlying integer stream.
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    norm_quantile(open_uniform(rng))
}

/// `len` standard normals from stream `counter`.
pub fn normals(seed: u64, counter: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, counter);
    (0..len).map(|_| standard_normal(&mut rng)).collect()
}
