//! Toeplitz-hash privacy amplification over GF(2).

use rand::Rng;

use super::{KeyMaterial, KeyStage, PostprocessingError};
use crate::seed;

/// Seeded diagonal bits `t[0 .. m + n - 1]` of the `m x n` Toeplitz matrix
/// `T[i][j] = t[i - j + n - 1]`.
pub fn toeplitz_diagonals(n: usize, m: usize, seed: u64) -> Vec<u8> {
    let mut rng = seed::stream_rng(seed);
    (0..(m + n).saturating_sub(1)).map(|_| u8::from(rng.random::<bool>())).collect()
}

fn pack_words(bits: impl ExactSizeIterator<Item = u8>) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64) + 1];
    for (i, b) in bits.enumerate() {
        words[i / 64] |= u64::from(b & 1) << (i % 64);
    }
    words
}

/// 64 bits of `words` starting at bit `off`.
fn window(words: &[u64], off: usize) -> u64 {
    let (w, s) = (off / 64, off % 64);
    if s == 0 {
        words[w]
    } else {
        (words[w] >> s) | (words[w + 1] << (64 - s))
    }
}

/// `y = T x` over GF(2) with `T` built from `toeplitz_diagonals(n, out_len, seed)`.
pub fn toeplitz_pa(key: &KeyMaterial, seed: u64, out_len: usize) -> Result<KeyMaterial, PostprocessingError> {
    let n = key.len();
    if out_len == 0 || out_len > n {
        return Err(PostprocessingError::OutputLength { out: out_len, input: n });
    }
    let m = out_len;
    let t = toeplitz_diagonals(n, m, seed);
    // Row i of T is r[m-1-i .. m-1-i+n] with r the reversed diagonal string.
    let r = pack_words(t.iter().rev().copied());
    let x = pack_words(key.bits.iter().copied());
    let full = n / 64;
    let tail = n % 64;
    let tail_mask = if tail == 0 { 0 } else { (1u64 << tail) - 1 };
    let bits = (0..m)
        .map(|i| {
            let s = m - 1 - i;
            let mut acc = 0u64;
            for w in 0..full {
                acc ^= window(&r, s + 64 * w) & x[w];
            }
            if tail != 0 {
                acc ^= window(&r, s + 64 * full) & x[full] & tail_mask;
            }
            (acc.count_ones() & 1) as u8
        })
        .collect();
    Ok(KeyMaterial {
        bits,
        stage: KeyStage::Final,
        leakage_bits: 0,
        source_slots: Vec::new(),
    })
}
