//! Deterministic parameter initialization.

/// FNV-1a over the parameter name, so each parameter owns a stable stream
/// regardless of creation order.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// SplitMix64 stream.
pub struct InitRng {
    state: u64,
}

impl InitRng {
    pub fn for_param(seed: u64, name: &str) -> Self {
        InitRng {
            state: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ name_hash(name),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-bound, bound)`.
    #[inline]
    pub fn uniform_signed(&mut self, bound: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (2.0 * u - 1.0) * bound
    }
}

/// Uniform values in `+-sqrt(1/fan_in)`.
pub fn uniform_fan_in(seed: u64, name: &str, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = InitRng::for_param(seed, name);
    (0..n).map(|_| rng.uniform_signed(bound)).collect()
}
