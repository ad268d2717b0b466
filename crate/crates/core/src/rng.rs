//! Deterministic, splittable random streams.
//!
//! A stream is identified by a root seed and a path of labels. The path is
//! folded into a 256-bit ChaCha key, so two streams with the same `(seed, path)`
//! produce the same draws on every platform, and child streams can be created
//! for any `(iteration, time, purpose, particle)` combination without any
//! shared mutable generator. Particle loops use the ChaCha stream id to give
//! each particle an independent sequence under a common key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// The concrete generator handed to model hooks.
pub type SimRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Immutable handle on a random substream.
#[derive(Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: Vec<String>,
    key: [u64; 4],
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u64; 4];
        let mut s = seed;
        for (i, k) in key.iter_mut().enumerate() {
            s = splitmix64(s ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f));
            *k = s;
        }
        RngStream {
            seed,
            path: Vec::new(),
            key,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    /// Path rendered as `a/b/c`.
    pub fn path_string(&self) -> String {
        self.path.join("/")
    }

    /// Child stream. `label` may contain `/` separators; `s.substream("a/b")`
    /// is the same stream as `s.substream("a").substream("b")`.
    pub fn substream(&self, label: &str) -> RngStream {
        let mut out = self.clone();
        for part in label.split('/').filter(|p| !p.is_empty()) {
            out.push(part);
        }
        out
    }

    /// Child stream keyed by an integer, equivalent to `substream(&index.to_string())`.
    pub fn substream_index(&self, index: u64) -> RngStream {
        let mut out = self.clone();
        out.push(&index.to_string());
        out
    }

    fn push(&mut self, label: &str) {
        let h = fnv1a(label.as_bytes());
        for (i, k) in self.key.iter_mut().enumerate() {
            *k = splitmix64(*k ^ h.rotate_left(16 * i as u32) ^ (i as u64 + 1));
        }
        self.path.push(label.to_owned());
    }

    fn key_bytes(&self) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_exact_mut(8).zip(self.key.iter()) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        bytes
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> SimRng {
        ChaCha8Rng::from_seed(self.key_bytes())
    }

    /// Generator for lane `lane` of this stream (used per particle).
    pub fn lane(&self, lane: u64) -> SimRng {
        let mut rng = self.generator();
        rng.set_stream(lane);
        rng
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RngStream(seed={}, path=\"{}\")", self.seed, self.path_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(s: &RngStream, n: usize) -> Vec<f64> {
        let mut g = s.generator();
        (0..n).map(|_| g.gen::<f64>()).collect()
    }

    #[test]
    fn same_path_same_stream() {
        let a = RngStream::new(7).substream("rep/3");
        let b = RngStream::new(7).substream("rep/3");
        assert_eq!(draws(&a, 100), draws(&b, 100));
    }

    #[test]
    fn substream_is_associative() {
        let root = RngStream::new(7);
        let a = root.substream("rep").substream("3");
        let b = root.substream("rep/3");
        let c = root.substream("rep").substream_index(3);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(draws(&a, 10), draws(&b, 10));
    }

    #[test]
    fn distinct_labels_distinct_streams() {
        let root = RngStream::new(7);
        assert_ne!(draws(&root.substream("a"), 10), draws(&root.substream("b"), 10));
        assert_ne!(draws(&root, 10), draws(&RngStream::new(8), 10));
        assert_ne!(draws(&root.substream("ab"), 10), draws(&root.substream("a/b"), 10));
    }

    #[test]
    fn lanes_differ() {
        let s = RngStream::new(1).substream("x");
        let a: Vec<u64> = (0..4).map(|_| s.lane(0).gen()).collect();
        let b: u64 = s.lane(1).gen();
        assert!(a.iter().all(|&v| v == a[0]));
        assert_ne!(a[0], b);
    }
}
