//! Deterministic pseudo-randomness.
//!
//! Everything stochastic in this crate (phantom jitter and noise, classifier
//! initialization) draws from SplitMix64 so that outputs are reproducible
//! bit-for-bit from a seed, independent of platform and of any third-party
//! crate's stream definition. SplitMix64 steps a 64-bit counter by the golden
//! gamma 0x9E3779B97F4A7C15 and finalizes with the murmur-style mixer
//! (xor-shift 30/27/31, multipliers 0xBF58476D1CE4E5B9 and
//! 0x94D049BB133111EB), exactly as published by Steele, Lea and Flood.

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output mix applied to one counter value.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for item `index` under a base seed. Used so that
    /// e.g. phantom sample `i` has its own stream regardless of how many
    /// samples were generated before it.
    pub fn for_index(seed: u64, index: u64) -> Self {
        SplitMix64::new(mix64(seed ^ mix64(index.wrapping_add(1).wrapping_mul(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1): 53 mantissa bits of one output.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Box–Muller transform (trigonometric form,
    /// branch-free: two uniforms in, one deviate out).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
