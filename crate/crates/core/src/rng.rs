//! Counter-based random substreams.
//!
//! Every consumer of randomness draws from a [`Substream`] addressed by
//! `(seed, domain, index)`. The ChaCha key is derived from the seed and the
//! domain; the ChaCha stream id is the index (an electron id, a layer, ...).
//! Two substreams never share state, so the order in which work items are
//! processed, and the number of worker threads, cannot change any draw.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which part of the simulation a substream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamDomain {
    /// Per-electron physics draws; index = electron id.
    Electron,
    /// Dark-count processes; index = layer code.
    DarkCounts,
    /// Emission-time process (Poisson arrivals only); index 0.
    Emission,
    /// Fault injection; index = electron id.
    Faults,
    /// Monte Carlo cross-checks of quadratures; index chosen by the caller.
    CrossCheck,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Electron => 0x454c_4543_5452_4f4e,
            StreamDomain::DarkCounts => 0x4441_524b_434e_5453,
            StreamDomain::Emission => 0x454d_4953_5349_4f4e,
            StreamDomain::Faults => 0x4641_554c_5453_2121,
            StreamDomain::CrossCheck => 0x4352_4f53_5343_484b,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Substream {
    rng: ChaCha8Rng,
}

impl Substream {
    pub fn new(seed: u64, domain: StreamDomain, index: u64) -> Self {
        let mut state = seed ^ domain.tag();
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`; safe to take the logarithm of.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by Box-Muller; consumes exactly two uniforms.
    pub fn standard_normal(&mut self) -> f64 {
        let r = self.uniform_open();
        let a = self.uniform();
        (-2.0 * r.ln()).sqrt() * (std::f64::consts::TAU * a).cos()
    }

    /// Exponential with unit mean.
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open().ln()
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
