//! Counter-based deterministic generator for test data.
//!
//! Every draw is a pure function of `(seed, stream, index)`, so any value can
//! be recomputed independently of how many draws came before it. The mixing
//! function is the SplitMix64 finalizer:
//!
//! ```text
//! key   = mix64(seed + stream * 0xD1B54A32D192ED03)
//! draw  = mix64(key + (index + 1) * 0x9E3779B97F4A7C15)
//! unit  = (draw >> 11) * 2^-53                      in [0, 1)
//! ```
//!
//! All arithmetic wraps modulo 2^64.

const STREAM_GAMMA: u64 = 0xD1B5_4A32_D192_ED03;
const INDEX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix64(seed.wrapping_add(stream.wrapping_mul(STREAM_GAMMA))),
        }
    }

    pub fn draw(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(INDEX_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&self, index: u64) -> f64 {
        (self.draw(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&self, index: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit(index)
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn integer(&self, index: u64, lo: i64, hi: i64) -> i64 {
        let span = (hi as i128 - lo as i128 + 1) as f64;
        let offset = (self.unit(index) * span).floor() as i128;
        (lo as i128 + offset).min(hi as i128) as i64
    }
}

/// Combine a test case's own seed with the run seed.
pub fn case_seed(case_seed: u64, run_seed: u64) -> u64 {
    case_seed ^ mix64(run_seed.wrapping_add(INDEX_GAMMA))
}
