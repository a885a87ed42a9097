//! Brownian increments keyed by `(seed, path, agent, step)`.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ChaCha words consumed per standard normal (two `u64` draws).
const WORDS_PER_NORMAL: u128 = 4;

/// Source of independent Brownian increments.
///
/// Each `(path, agent)` pair owns a ChaCha stream position: the path selects
/// the ChaCha stream and the agent an offset of `2⁴⁰` words, so agent
/// streams never overlap for fewer than `2³⁸` steps. Increment `step` always
/// comes from the same four words, so regeneration is exact no matter how
/// work is split across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseBank {
    seed: u64,
}

impl NoiseBank {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sequential reader of the standard normals for one agent on one path,
    /// starting at `step`.
    pub fn agent_stream(&self, path: u64, agent: u64, step: u64) -> AgentStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng.set_word_pos(((agent as u128) << 40) + WORDS_PER_NORMAL * step as u128);
        AgentStream { rng }
    }

    /// The standard normal behind increment `step` of `agent` on `path`.
    pub fn normal(&self, path: u64, agent: u64, step: u64) -> f64 {
        self.agent_stream(path, agent, step).next_normal()
    }
}

pub struct AgentStream {
    rng: ChaCha8Rng,
}

impl AgentStream {
    /// Next standard normal via Box–Muller on two 53-bit uniforms; the sine
    /// branch is discarded so every normal uses exactly four words.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = uniform(self.rng.next_u64());
        let u2 = uniform(self.rng.next_u64());
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn uniform(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
