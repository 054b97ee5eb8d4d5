//! Counter-based pseudorandom helpers.
//!
//! Everything here is deterministic, platform-independent and free of
//! shared state, so callers may evaluate streams in any order (or in
//! parallel) and still reproduce identical bytes.

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        // Modulo bias is irrelevant for the tiny ranges used here.
        self.next_u64() % n
    }
}

/// Stable per-coordinate key for counter-based draws.
#[inline]
pub fn mix_key(seed: u64, i: u64, j: u64) -> u64 {
    splitmix64(seed)
        ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ j.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Standard normal draw keyed by `(seed, i, j)` (Box-Muller).
#[inline]
pub fn standard_normal(seed: u64, i: u64, j: u64) -> f64 {
    let key = mix_key(seed, i, j);
    let a = splitmix64(key);
    let b = splitmix64(key ^ 0x94D0_49BB_1331_11EB);
    // u1 in (0, 1] so the log is finite; u2 in [0, 1).
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
