//! Deterministic random number generation.
//!
//! Two flavors are used throughout the engine:
//!
//! - [`SplitMix64`], a tiny sequential generator whose entire state is one
//!   `u64`. It snapshots losslessly and behaves identically on every
//!   platform, which the trainer snapshot format and the determinism
//!   guarantees rely on.
//! - [`counter_mix`], a stateless counter-based mix used by the simulated
//!   power model: sample `i` of stream `seed` is a pure function of
//!   `(seed, i)`.

/// Finalizer from the splitmix64 reference sequence.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based draw: uniform in `[0, 1)` determined solely by `(seed, counter)`.
pub fn counter_mix(seed: u64, counter: u64) -> f64 {
    let z = mix64(seed ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Derive an independent stream seed from a base seed and a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix64(base ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Sequential splitmix64 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Raw state, for snapshotting.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_index(i + 1);
            slice.swap(i, j);
        }
    }
}
