//! Deterministic helpers shared across modules: seed mixing, a counter-based
//! Gaussian generator, and order-stable parallel reductions.
//!
//! Floating-point sums are evaluated over fixed-size chunks whose partials are
//! combined in index order, so results are bit-identical regardless of thread
//! count or scheduling.

use rayon::prelude::*;

/// Chunk length for parallel voxel reductions.
pub const REDUCE_CHUNK: usize = 8192;

/// splitmix64 state advance; the standard finalizer constants.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with up to two stream indices into a fresh 64-bit seed.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut s = seed ^ a.wrapping_mul(0xA076_1D64_78BD_642F) ^ b.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let x = splitmix64(&mut s);
    x ^ splitmix64(&mut s)
}

fn unit_f64(bits: u64) -> f64 {
    // 53 mantissa bits -> [0, 1)
    (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal deviate keyed on (seed, counter); Box-Muller on two
/// splitmix64 draws. Pure function of its arguments, safe to evaluate from
/// any thread in any order.
pub fn counter_gauss(seed: u64, counter: u64) -> f64 {
    let mut s = mix_seed(seed, counter, 0x6761_7573_7369_616E);
    let mut u1 = unit_f64(splitmix64(&mut s));
    let u2 = unit_f64(splitmix64(&mut s));
    if u1 <= 0.0 {
        u1 = f64::MIN_POSITIVE;
    }
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform deviate in [0, 1) keyed on (seed, counter).
pub fn counter_uniform(seed: u64, counter: u64) -> f64 {
    let mut s = mix_seed(seed, counter, 0x756E_6966_6F72_6D21);
    unit_f64(splitmix64(&mut s))
}

/// Deterministic parallel sum of `f(i)` for `i` in `0..n`.
///
/// Partial sums are computed per fixed-size chunk and combined serially in
/// chunk order.
pub fn par_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    let partials: Vec<f64> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Deterministic parallel sum returning three accumulators at once.
pub fn par_sum3<F>(n: usize, f: F) -> [f64; 3]
where
    F: Fn(usize) -> [f64; 3] + Sync,
{
    if n == 0 {
        return [0.0; 3];
    }
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    let partials: Vec<[f64; 3]> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(n);
            let mut acc = [0.0; 3];
            for i in lo..hi {
                let v = f(i);
                acc[0] += v[0];
                acc[1] += v[1];
                acc[2] += v[2];
            }
            acc
        })
        .collect();
    let mut out = [0.0; 3];
    for p in partials {
        out[0] += p[0];
        out[1] += p[1];
        out[2] += p[2];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_sum_matches_serial() {
        let n = 100_000;
        let f = |i: usize| (i as f64).sin();
        let par = par_sum(n, f);
        let mut chunks = 0.0;
        let mut i = 0;
        while i < n {
            let hi = (i + REDUCE_CHUNK).min(n);
            let mut acc = 0.0;
            for j in i..hi {
                acc += f(j);
            }
            chunks += acc;
            i = hi;
        }
        assert_eq!(par, chunks);
    }

    #[test]
    fn counter_gauss_is_pure() {
        assert_eq!(counter_gauss(42, 7), counter_gauss(42, 7));
        assert_ne!(counter_gauss(42, 7), counter_gauss(42, 8));
    }

    #[test]
    fn counter_gauss_moments() {
        let n = 200_000u64;
        let mut mean = 0.0;
        let mut var = 0.0;
        for i in 0..n {
            let g = counter_gauss(1, i);
            mean += g;
            var += g * g;
        }
        mean /= n as f64;
        var /= n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
