//! Wegman-Carter authentication of classical messages: a polynomial hash
//! over GF(2^61 - 1) keyed once, masked by a fresh one-time pad word from the
//! pre-shared secret for every tag.

use serde::{Deserialize, Serialize};

use super::{add_mod_p61, poly_hash, PostprocessingError, P61};

/// Hash key plus one mask.
pub const MIN_SECRET_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthTag {
    /// Position of the mask word in the shared secret.
    pub index: usize,
    pub value: u64,
}

/// One party's copy of the pre-shared randomness. Alice and Bob each hold an
/// identical copy and consume masks in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSecret {
    hash_key: u64,
    masks: Vec<u64>,
    next: usize,
}

impl SharedSecret {
    pub fn new(bytes: &[u8]) -> Result<Self, PostprocessingError> {
        if bytes.len() < MIN_SECRET_BYTES {
            return Err(PostprocessingError::SecretTooShort(bytes.len(), MIN_SECRET_BYTES));
        }
        let word = |c: &[u8]| u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let mut words = bytes.chunks_exact(8).map(word);
        let hash_key = words.next().expect("length checked") % P61;
        Ok(Self {
            hash_key,
            masks: words.map(|w| w % P61).collect(),
            next: 0,
        })
    }

    /// Secret drawn from the seeded generator, as distributed before launch.
    pub fn from_seed(seed: u64, tags: usize) -> Self {
        use rand::Rng;
        let mut rng = crate::seed::stream_rng(seed);
        let bytes: Vec<u8> = (0..8 * (tags + 1)).map(|_| rng.random()).collect();
        Self::new(&bytes).expect("at least one mask")
    }

    pub fn remaining(&self) -> usize {
        self.masks.len() - self.next
    }

    pub fn used(&self) -> usize {
        self.next
    }

    fn take_mask(&mut self) -> Result<(usize, u64), PostprocessingError> {
        let i = self.next;
        let m = *self
            .masks
            .get(i)
            .ok_or(PostprocessingError::KeyDepleted(self.masks.len()))?;
        self.next += 1;
        Ok((i, m))
    }

    pub fn authenticate(&mut self, message: &[u8]) -> Result<AuthTag, PostprocessingError> {
        let (index, mask) = self.take_mask()?;
        Ok(AuthTag {
            index,
            value: add_mod_p61(poly_hash(message, self.hash_key), mask),
        })
    }

    /// Check a tag with this party's next mask. A tag produced out of order
    /// fails verification; the mask is consumed either way.
    pub fn verify(&mut self, message: &[u8], tag: &AuthTag) -> Result<bool, PostprocessingError> {
        let (index, mask) = self.take_mask()?;
        Ok(index == tag.index && add_mod_p61(poly_hash(message, self.hash_key), mask) == tag.value)
    }
}

pub fn authenticate(message: &[u8], secret: &mut SharedSecret) -> Result<AuthTag, PostprocessingError> {
    secret.authenticate(message)
}

pub fn verify(message: &[u8], tag: &AuthTag, secret: &mut SharedSecret) -> Result<bool, PostprocessingError> {
    secret.verify(message, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_empty_message() {
        let s = SharedSecret::from_seed(1, 4);
        let (mut a, mut b) = (s.clone(), s);
        for msg in [&b"parities"[..], &[]] {
            let t = a.authenticate(msg).unwrap();
            assert!(b.verify(msg, &t).unwrap());
        }
    }

    #[test]
    fn depletion_is_an_error() {
        let mut s = SharedSecret::from_seed(2, 2);
        s.authenticate(b"a").unwrap();
        s.authenticate(b"b").unwrap();
        assert_eq!(s.authenticate(b"c"), Err(PostprocessingError::KeyDepleted(2)));
        assert_eq!(s.remaining(), 0);
    }

    #[test]
    fn short_secret_rejected() {
        assert!(SharedSecret::new(&[0; 15]).is_err());
    }

    #[test]
    fn masks_are_not_reused() {
        let mut s = SharedSecret::from_seed(3, 2);
        let t1 = s.authenticate(b"same").unwrap();
        let t2 = s.authenticate(b"same").unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn out_of_order_tag_rejected() {
        let s = SharedSecret::from_seed(4, 4);
        let (mut a, mut b) = (s.clone(), s);
        a.authenticate(b"first").unwrap();
        let t = a.authenticate(b"second").unwrap();
        assert!(!b.verify(b"second", &t).unwrap());
    }
}
