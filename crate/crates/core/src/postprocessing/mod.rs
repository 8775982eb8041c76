//! Classical post-processing of detection records into a final secret key.

pub mod auth;
pub mod cascade;
pub mod decoy;
pub mod keystore;
pub mod privacy;
pub mod sift;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auth::{AuthTag, SharedSecret};
pub use cascade::{cascade_correct, CascadeOutcome};
pub use decoy::{binary_entropy, bb84_rate, decoy_bounds, secret_key_length, DecoyBounds, BB84_QBER_THRESHOLD};
pub use privacy::toeplitz_pa;
pub use sift::{estimate_qber, sample_positions, sift};

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessingError {
    #[error("detection record for slot {0} has no matching quantum frame")]
    Alignment(u64),
    #[error("key lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("QBER sample of {0} bits is below the 50-bit minimum")]
    InsufficientSample(usize),
    #[error("key of {0} bits is below the 100-bit minimum for estimation")]
    KeyTooShort(usize),
    #[error("sample fraction {0} outside (0, 1)")]
    SampleFraction(f64),
    #[error("QBER {0} outside the reconciliation range (0, 0.15]")]
    QberRange(f64),
    #[error("at least 2 Cascade passes are required, got {0}")]
    Passes(usize),
    #[error("verification hash mismatch after reconciliation")]
    ReconciliationFailure,
    #[error("requested {out} output bits from a {input}-bit key")]
    OutputLength { out: usize, input: usize },
    #[error("decoy analysis: {0}")]
    Decoy(String),
    #[error("shared secret exhausted after {0} tags")]
    KeyDepleted(usize),
    #[error("shared secret of {0} bytes is below the {1}-byte minimum")]
    SecretTooShort(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStage {
    Raw,
    Sifted,
    Corrected,
    Final,
}

/// A bit string (one bit per byte, 0 or 1) plus its disclosure accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub bits: Vec<u8>,
    pub stage: KeyStage,
    pub leakage_bits: u64,
    pub source_slots: Vec<u64>,
}

impl KeyMaterial {
    pub fn new(bits: Vec<u8>, stage: KeyStage) -> Self {
        Self {
            bits,
            stage,
            leakage_bits: 0,
            source_slots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn mismatches(&self, other: &KeyMaterial) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Bits packed MSB-first into bytes.
    pub fn packed(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }
}

pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect()
}

/// Mersenne prime 2^61 - 1 used by the polynomial hashes.
pub const P61: u64 = (1 << 61) - 1;

pub(crate) fn mul_mod_p61(a: u64, b: u64) -> u64 {
    let prod = u128::from(a) * u128::from(b);
    let lo = (prod as u64) & P61;
    let hi = (prod >> 61) as u64;
    let s = lo + hi;
    if s >= P61 {
        s - P61
    } else {
        s
    }
}

pub(crate) fn add_mod_p61(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= P61 {
        s - P61
    } else {
        s
    }
}

/// Horner evaluation at `r` of the message split into 7-byte field
/// elements, followed by the byte length.
pub(crate) fn poly_hash(bytes: &[u8], r: u64) -> u64 {
    let r = r % P61;
    let mut h = 0u64;
    for chunk in bytes.chunks(7) {
        let mut w = [0u8; 8];
        w[..chunk.len()].copy_from_slice(chunk);
        h = add_mod_p61(mul_mod_p61(h, r), u64::from_le_bytes(w));
    }
    add_mod_p61(mul_mod_p61(h, r), bytes.len() as u64 % P61)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_round_trip() {
        let bits = vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1];
        let p = pack_bits(&bits);
        assert_eq!(p, vec![0b1011_0001, 0b1100_0000]);
        assert_eq!(unpack_bits(&p, bits.len()), bits);
    }

    #[test]
    fn field_arithmetic() {
        assert_eq!(mul_mod_p61(P61 - 1, P61 - 1), 1);
        assert_eq!(add_mod_p61(P61 - 1, 1), 0);
        let a = 0x0123_4567_89ab_cdef % P61;
        let b = 0x0fed_cba9_8765_4321 % P61;
        assert_eq!(
            u128::from(mul_mod_p61(a, b)),
            u128::from(a) * u128::from(b) % u128::from(P61)
        );
    }

    #[test]
    fn poly_hash_separates_lengths() {
        assert_ne!(poly_hash(&[], 12345), poly_hash(&[0], 12345));
        assert_ne!(poly_hash(&[0; 7], 12345), poly_hash(&[0; 8], 12345));
    }
}
