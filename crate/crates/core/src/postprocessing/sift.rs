//! Basis sifting and disclosed-sample QBER estimation.

use rand::seq::index;

use super::{KeyMaterial, KeyStage, PostprocessingError};
use crate::link::DetectionRecord;
use crate::seed;
use crate::transmitter::{IntensityClass, PulseFrame, Role};

/// Keep slots that are quantum, signal class, clicked and basis-matched.
/// `records` may cover every quantum frame or only a subset (for example
/// only the clicks); every record must match a quantum frame, and both
/// inputs must be sorted by slot.
pub fn sift(
    alice_frames: &[PulseFrame],
    bob_records: &[DetectionRecord],
) -> Result<(KeyMaterial, KeyMaterial), PostprocessingError> {
    let mut a_bits = Vec::new();
    let mut b_bits = Vec::new();
    let mut slots = Vec::new();
    let mut fi = 0;
    for r in bob_records {
        while fi < alice_frames.len() && alice_frames[fi].slot < r.slot {
            fi += 1;
        }
        let f = alice_frames
            .get(fi)
            .filter(|f| f.slot == r.slot && f.role == Role::Quantum)
            .ok_or(PostprocessingError::Alignment(r.slot))?;
        let Some(bit) = r.outcome.bit() else { continue };
        if f.intensity_class == IntensityClass::Signal && f.basis == r.bob_basis {
            a_bits.push(f.bit);
            b_bits.push(bit);
            slots.push(f.slot);
        }
    }
    let mk = |bits| KeyMaterial {
        bits,
        stage: KeyStage::Sifted,
        leakage_bits: 0,
        source_slots: slots.clone(),
    };
    Ok((mk(a_bits), mk(b_bits)))
}

/// Sorted positions of a uniformly random `k`-subset of `0..n`.
pub fn sample_positions(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::stream_rng(seed);
    let mut v = index::sample(&mut rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Disclose a random `sample_fraction` of positions, return the observed
/// mismatch rate and both keys with those positions removed. Every
/// disclosed bit counts as leakage.
pub fn estimate_qber(
    alice: &KeyMaterial,
    bob: &KeyMaterial,
    sample_fraction: f64,
    seed: u64,
) -> Result<(f64, KeyMaterial, KeyMaterial), PostprocessingError> {
    if alice.len() != bob.len() {
        return Err(PostprocessingError::LengthMismatch(alice.len(), bob.len()));
    }
    if !(sample_fraction > 0.0 && sample_fraction < 1.0) {
        return Err(PostprocessingError::SampleFraction(sample_fraction));
    }
    let n = alice.len();
    let k = (sample_fraction * n as f64).round() as usize;
    if k < 50 {
        return Err(PostprocessingError::InsufficientSample(k));
    }
    if n < 100 {
        return Err(PostprocessingError::KeyTooShort(n));
    }
    let positions = sample_positions(n, k, seed);
    let mut disclosed = vec![false; n];
    for &p in &positions {
        disclosed[p] = true;
    }
    let errors = positions.iter().filter(|&&p| alice.bits[p] != bob.bits[p]).count();
    let keep = |m: &KeyMaterial| KeyMaterial {
        bits: (0..n).filter(|&i| !disclosed[i]).map(|i| m.bits[i]).collect(),
        stage: m.stage,
        leakage_bits: m.leakage_bits + k as u64,
        source_slots: (0..n)
            .filter(|&i| !disclosed[i])
            .filter_map(|i| m.source_slots.get(i).copied())
            .collect(),
    };
    Ok((errors as f64 / k as f64, keep(alice), keep(bob)))
}
