//! Pinned pseudo-randomness for the simulator.
//!
//! Every simulator draw derives its own generator from
//! `(run seed, question id, draw index)`, so draws are reproducible in any
//! implementation language and never share mutable state. The generator is
//! splitmix64; the derivation hash is 64-bit FNV-1a over
//! `seed_le_bytes || id_bytes || tag_byte || index_le_bytes`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 (Steele, Lea, Flood: "Fast splittable pseudorandom number
/// generators").
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, n). Plain modulo by definition: the negligible bias
    /// for small n is part of the pinned behavior.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index drawn proportionally to non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0);
        let mut r = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            r -= w;
            if r < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    let mut h = hash;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Generator for one simulator draw, derived from the run seed, the
/// question id, a domain tag, and the draw (or bucket) index.
pub fn draw_rng(seed: u64, question_id: &str, tag: u8, index: u64) -> SplitMix64 {
    let mut h = FNV_OFFSET;
    h = fnv1a(h, &seed.to_le_bytes());
    h = fnv1a(h, question_id.as_bytes());
    h = fnv1a(h, &[tag]);
    h = fnv1a(h, &index.to_le_bytes());
    SplitMix64::new(h)
}
