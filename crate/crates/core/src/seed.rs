//! Labeled seed derivation.
//!
//! Module seeds are derived from the scenario master seed as
//!
//! ```text
//! seed(master, label, stream) = u64_le(SHA-256(u64_le(master) || label || 0x00 || u64_le(stream))[0..8])
//! ```
//!
//! so that every consumer gets an independent, reproducible stream and adding a
//! new consumer never perturbs the existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_pcg::Pcg64Mcg;
use sha2::{Digest, Sha256};

/// Derive a child seed for `label` / `stream` from `master`.
pub fn derive(master: u64, label: &str, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(stream.to_le_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Sequential generator used for streams that are consumed in order.
pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cheap per-slot generator: the draw for slot `slot` depends only on
/// `(seed, slot)`, never on how many slots were processed before it.
pub fn slot_rng(seed: u64, slot: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(seed ^ slot.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive(42, "link", 0), derive(42, "link", 0));
        assert_ne!(derive(42, "link", 0), derive(42, "link", 1));
        assert_ne!(derive(42, "link", 0), derive(42, "tx", 0));
        assert_ne!(derive(42, "link", 0), derive(43, "link", 0));
    }

    #[test]
    fn slot_streams_do_not_depend_on_order() {
        let a: u64 = slot_rng(7, 1000).random();
        let _: u64 = slot_rng(7, 999).random();
        let b: u64 = slot_rng(7, 1000).random();
        assert_eq!(a, b);
        let c: u64 = slot_rng(7, 1001).random();
        assert_ne!(a, c);
    }
}
