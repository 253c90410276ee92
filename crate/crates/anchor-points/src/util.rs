//! Small numeric and RNG helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic seed derivation: a splitmix64 finalizer folded over the base
/// seed and a stream of words. Used everywhere a sub-seed is needed so that
/// results never depend on evaluation order or worker count.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    let mut state = splitmix(base ^ 0x9e37_79b9_7f4a_7c15);
    for &w in words {
        state = splitmix(state ^ w);
    }
    state
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded RNG with a stable cross-platform stream.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Neumaier compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated mean; 0 on empty input.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard error of the mean; 0 when fewer than two values.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64;
    (var / n as f64).sqrt()
}
