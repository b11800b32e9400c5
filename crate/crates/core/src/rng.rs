//! Deterministic counter-based random number generator.
//!
//! Every random decision in the toolkit flows through this generator so that
//! a run is fully determined by its seed, on any platform and in any language
//! that reimplements the scheme below.
//!
//! The generator is splitmix64: the internal state advances by the 64-bit
//! golden-ratio constant on every draw and the output is the finalizer
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! all in wrapping 64-bit arithmetic. Uniform doubles take the top 53 bits
//! (`output >> 11`) scaled by 2^-53, giving values in [0, 1). Normal draws
//! use the Box-Muller transform on two consecutive uniforms. Sub-streams are
//! derived by hashing tag words into the seed with the same finalizer, so
//! per-sample streams are reproducible regardless of processing order.

/// Counter-based deterministic RNG. Single-owner: not for concurrent sharing.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derive an independent stream from two tag words (e.g. epoch and
    /// sample index). Same parent seed and tags always yield the same stream.
    pub fn derive(&self, a: u64, b: u64) -> Rng {
        let mut s = mix(self.state ^ GOLDEN);
        s = mix(s ^ mix(a.wrapping_add(GOLDEN)));
        s = mix(s ^ mix(b.wrapping_add(GOLDEN.wrapping_mul(2))));
        Rng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi). Requires lo < hi.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo < hi, "uniform requires lo < hi");
        lo + self.uniform01() * (hi - lo)
    }

    /// Normal draw via Box-Muller. Requires sigma >= 0; sigma = 0 returns mu
    /// exactly (the pair of uniforms is still consumed).
    pub fn normal(&mut self, mu: f64, sigma: f64) -> f64 {
        debug_assert!(sigma >= 0.0, "normal requires sigma >= 0");
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform01();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        mu + sigma * z
    }

    /// Uniform integer in [0, n). Requires n > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 53-bit uniform scaled; bias is negligible for the small n used here.
        (self.uniform01() * n as f64) as usize % n
    }

    /// Bernoulli draw with probability p of true.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }
}
