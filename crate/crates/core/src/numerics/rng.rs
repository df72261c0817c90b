/// Splittable counter-based PRNG (SplitMix64). One seed fully determines the
/// stream, and `split` derives an independent child stream, which is what the
/// data generator and per-layer weight init rely on for reproducibility.
///
/// Gaussian draws use the Box-Muller transform and consume exactly two
/// uniform draws each; no spare value is cached, so the mapping from seed to
/// stream position stays trivial to reason about.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

/// Scramble one word with the SplitMix64 finaliser.
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a well-separated child seed from (seed, a, b); used to give each
/// (epoch, sample) pair its own noise stream without threading an rng
/// through parallel code.
pub fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    let x = finalize(seed.wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    finalize(x.wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Derive an independent generator. The child seed is one output of the
    /// parent stream, so parent and child do not collide.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller from two uniform draws.
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here: n is
    /// tiny compared to 2^64 and bias is far below anything observable.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
