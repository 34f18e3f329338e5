//! Small deterministic helpers shared across modules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; the standard 64-bit mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from an ordered list of parts. Used to give every
/// RNG consumer (init points, hyperparameter fits, AF starts, MC draws) an
/// isolated, reproducible stream.
pub fn seed_mix(parts: &[u64]) -> u64 {
    let mut acc = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Latin hypercube sample of `n` points in the unit cube of dimension `d`.
pub(crate) fn latin_hypercube(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        // Fisher-Yates shuffle of the strata for this dimension.
        for i in (1..n).rev() {
            let k = rng.gen_range(0..=i);
            strata.swap(i, k);
        }
        for (i, point) in points.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            point[j] = (strata[i] as f64 + u) / n as f64;
        }
    }
    points
}
