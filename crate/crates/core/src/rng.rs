//! Counter-based random substreams.
//!
//! Every replicate draws from its own ChaCha8 stream. The 256-bit key is
//! `(master_seed, domain, 0, 0)` in little-endian words and the 64-bit stream
//! id is the replicate index, so stream `r` of a domain is a fixed function of
//! `(master_seed, domain, r)` and never depends on how replicates are spread
//! over workers. Domains separate experiments and window lengths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master_seed: u64,
    domain: u64,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Streams {
            master_seed,
            domain: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Derive a child family keyed by a label and a number (usually `n`).
    pub fn domain(&self, label: &str, n: u64) -> Self {
        // FNV-1a over the parent domain, label and n.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(&self.domain.to_le_bytes());
        eat(label.as_bytes());
        eat(&n.to_le_bytes());
        Streams {
            master_seed: self.master_seed,
            domain: h,
        }
    }

    pub fn stream(&self, index: u64) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
