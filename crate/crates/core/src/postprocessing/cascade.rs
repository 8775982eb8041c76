//! Cascade information reconciliation with back-tracking across passes and
//! a disclosed polynomial verification hash.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{poly_hash, KeyMaterial, KeyStage, PostprocessingError};
use crate::seed;

/// Bits disclosed by the verification hash.
pub const VERIFICATION_HASH_BITS: u64 = 64;

pub const DEFAULT_PASSES: usize = 4;

/// Pass-1 block size for an expected error rate.
pub fn initial_block_size(qber: f64, n: usize) -> usize {
    ((0.73 / qber).round() as usize).clamp(2, n.max(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub corrected: KeyMaterial,
    /// Parities and verification hash disclosed, in bits.
    pub leakage_bits: u64,
    pub parity_bits: u64,
    pub corrections: usize,
    pub passes: usize,
    pub block_sizes: Vec<usize>,
}

struct Pass {
    order: Vec<usize>,
    pos: Vec<usize>,
    block: usize,
    alice_parity: Vec<u8>,
    bob_parity: Vec<u8>,
}

impl Pass {
    fn block_of(&self, i: usize) -> usize {
        self.pos[i] / self.block
    }

    fn range(&self, b: usize) -> (usize, usize) {
        (b * self.block, ((b + 1) * self.block).min(self.order.len()))
    }
}

fn parity(bits: &[u8], order: &[usize]) -> u8 {
    order.iter().fold(0, |p, &i| p ^ bits[i])
}

struct Reconciler<'a> {
    alice: &'a [u8],
    bob: Vec<u8>,
    passes: Vec<Pass>,
    mismatched: BTreeSet<(usize, usize)>,
    parity_bits: u64,
    corrections: usize,
}

impl Reconciler<'_> {
    fn add_pass(&mut self, order: Vec<usize>, block: usize) {
        let n = order.len();
        let mut pos = vec![0; n];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        let blocks = n.div_ceil(block);
        let mut pass = Pass {
            order,
            pos,
            block,
            alice_parity: Vec::with_capacity(blocks),
            bob_parity: Vec::with_capacity(blocks),
        };
        for b in 0..blocks {
            let (s, e) = pass.range(b);
            pass.alice_parity.push(parity(self.alice, &pass.order[s..e]));
            pass.bob_parity.push(parity(&self.bob, &pass.order[s..e]));
        }
        self.parity_bits += blocks as u64;
        let q = self.passes.len();
        for b in 0..blocks {
            if pass.alice_parity[b] != pass.bob_parity[b] {
                self.mismatched.insert((q, b));
            }
        }
        self.passes.push(pass);
        self.drain();
    }

    /// Correct odd-parity blocks until none remain, smallest pass first.
    fn drain(&mut self) {
        while let Some(&(q, b)) = self.mismatched.iter().next() {
            let i = self.bisect(q, b);
            self.flip(i);
        }
    }

    /// Binary search for an error inside an odd-parity block, disclosing
    /// Alice's parity of the left half at every step.
    fn bisect(&mut self, q: usize, b: usize) -> usize {
        let pass = &self.passes[q];
        let (mut s, mut e) = pass.range(b);
        while e - s > 1 {
            let mid = s + (e - s).div_ceil(2);
            let left = &pass.order[s..mid];
            self.parity_bits += 1;
            if parity(self.alice, left) != parity(&self.bob, left) {
                e = mid;
            } else {
                s = mid;
            }
        }
        pass.order[s]
    }

    fn flip(&mut self, i: usize) {
        self.bob[i] ^= 1;
        self.corrections += 1;
        for (q, pass) in self.passes.iter_mut().enumerate() {
            let b = pass.block_of(i);
            pass.bob_parity[b] ^= 1;
            if pass.bob_parity[b] != pass.alice_parity[b] {
                self.mismatched.insert((q, b));
            } else {
                self.mismatched.remove(&(q, b));
            }
        }
    }
}

/// Reconcile Bob's key to Alice's. Pass 1 uses the natural order with
/// blocks of `initial_block_size(qber)`; each later pass doubles the block
/// size over a fresh seeded permutation. The result is confirmed with a
/// disclosed 64-bit polynomial hash of both keys.
pub fn cascade_correct(
    alice: &KeyMaterial,
    bob: &KeyMaterial,
    qber: f64,
    passes: usize,
    seed: u64,
) -> Result<CascadeOutcome, PostprocessingError> {
    if alice.len() != bob.len() {
        return Err(PostprocessingError::LengthMismatch(alice.len(), bob.len()));
    }
    if !(qber > 0.0 && qber <= 0.15) {
        return Err(PostprocessingError::QberRange(qber));
    }
    if passes < 2 {
        return Err(PostprocessingError::Passes(passes));
    }
    let n = alice.len();
    let mut rng = seed::stream_rng(seed);
    let mut r = Reconciler {
        alice: &alice.bits,
        bob: bob.bits.clone(),
        passes: Vec::with_capacity(passes),
        mismatched: BTreeSet::new(),
        parity_bits: 0,
        corrections: 0,
    };
    let k1 = initial_block_size(qber, n);
    let mut block_sizes = Vec::with_capacity(passes);
    for p in 0..passes {
        let block = (k1 << p.min(40)).min(n.max(1));
        let mut order: Vec<usize> = (0..n).collect();
        if p > 0 {
            order.shuffle(&mut rng);
        }
        block_sizes.push(block);
        r.add_pass(order, block);
    }
    let hash_key: u64 = rng.random();
    let (parity_bits, corrections) = (r.parity_bits, r.corrections);
    if poly_hash(&alice.bits, hash_key) != poly_hash(&r.bob, hash_key) {
        return Err(PostprocessingError::ReconciliationFailure);
    }
    let leakage_bits = parity_bits + VERIFICATION_HASH_BITS;
    Ok(CascadeOutcome {
        corrected: KeyMaterial {
            bits: r.bob,
            stage: KeyStage::Corrected,
            leakage_bits: bob.leakage_bits + leakage_bits,
            source_slots: bob.source_slots.clone(),
        },
        leakage_bits,
        parity_bits,
        corrections,
        passes,
        block_sizes,
    })
}
