//! Vacuum + weak decoy-state bounds and the resulting secret key length.

use serde::{Deserialize, Serialize};

use super::PostprocessingError;
use crate::link::ClassStats;
use crate::transmitter::IntensityLevels;

/// QBER at which `1 - 2 h2(Q)` reaches zero.
pub const BB84_QBER_THRESHOLD: f64 = 0.110_027_864_438_359_56;

/// Tolerance below zero before a raw bound is reported as inconsistent.
const NEGATIVE_TOLERANCE: f64 = 1e-9;

pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Asymptotic single-photon BB84 rate per sifted bit with reconciliation
/// efficiency `f`: `1 - (1 + f) h2(Q)`.
pub fn bb84_rate(qber: f64, f: f64) -> f64 {
    1.0 - (1.0 + f) * binary_entropy(qber)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y0: f64,
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Raw values before clamping to `[0, 1]`.
    pub y1_lower_raw: f64,
    pub e1_upper_raw: f64,
    pub warnings: Vec<String>,
}

/// Count-based bounds of a rate `k / n` shifted by `n_sigma` standard
/// deviations (Poisson approximation), or the plain rate when `n_sigma` is
/// `None`.
fn shifted(k: u64, n: u64, n_sigma: Option<f64>, up: bool) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let k = k as f64;
    let delta = n_sigma.map_or(0.0, |s| s * k.max(1.0).sqrt());
    let v = if up { k + delta } else { (k - delta).max(0.0) };
    v / n as f64
}

/// Lower bound on the single-photon yield and upper bound on its error
/// rate from signal, decoy and vacuum statistics.
///
/// The vacuum class gives `Y0` and its error rate `e0` directly. With
/// `n_sigma` set, every measured rate is moved by that many standard
/// deviations in the direction that loosens the bound.
pub fn decoy_bounds(
    stats: &[ClassStats; 3],
    levels: &IntensityLevels,
    n_sigma: Option<f64>,
) -> Result<DecoyBounds, PostprocessingError> {
    let (mu, nu) = (levels.signal, levels.decoy);
    if levels.vacuum != 0.0 || !(mu > nu && nu > 0.0) {
        return Err(PostprocessingError::Decoy(format!(
            "need signal > decoy > vacuum = 0, got {mu} / {nu} / {}",
            levels.vacuum
        )));
    }
    let [s, d, v] = stats;
    if s.sent == 0 || d.sent == 0 || v.sent == 0 {
        return Err(PostprocessingError::Decoy("every intensity class needs sent pulses".into()));
    }
    let q_mu = shifted(s.clicks, s.sent, n_sigma, true);
    let q_nu = shifted(d.clicks, d.sent, n_sigma, false);
    let y0_up = shifted(v.clicks, v.sent, n_sigma, true);
    let y0_lo = shifted(v.clicks, v.sent, n_sigma, false);
    let e0 = if v.matched == 0 { 0.5 } else { v.qber() };

    let y1_raw = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0_up);

    // E_nu Q_nu = (errors / matched) (clicks / sent)
    let eq_nu = if d.matched == 0 {
        0.0
    } else {
        shifted(d.errors, d.matched, n_sigma, true) * d.gain()
    };
    let e1_raw = if y1_raw > 0.0 {
        (eq_nu * nu.exp() - e0 * y0_lo) / (y1_raw * nu)
    } else {
        f64::INFINITY
    };

    let mut warnings = Vec::new();
    if y1_raw < -NEGATIVE_TOLERANCE {
        warnings.push(format!("single-photon yield bound is negative ({y1_raw:.3e})"));
    }
    if e1_raw < -NEGATIVE_TOLERANCE {
        warnings.push(format!("single-photon error bound is negative ({e1_raw:.3e})"));
    }
    Ok(DecoyBounds {
        y0: v.gain(),
        y1_lower: y1_raw.clamp(0.0, 1.0),
        e1_upper: if e1_raw.is_finite() { e1_raw.clamp(0.0, 1.0) } else { 1.0 },
        y1_lower_raw: y1_raw,
        e1_upper_raw: e1_raw,
        warnings,
    })
}

/// Estimated count of sifted signal bits that came from single photons.
pub fn single_photon_bits(n_sifted: u64, y1_lower: f64, signal_gain: f64, signal_mu: f64) -> f64 {
    if signal_gain <= 0.0 {
        return 0.0;
    }
    let fraction = (y1_lower * signal_mu * (-signal_mu).exp() / signal_gain).clamp(0.0, 1.0);
    n_sifted as f64 * fraction
}

/// GLLP-style key length:
/// `floor(n1 (1 - h2(e1_upper)) - leakage_bits - margin_bits)`, clamped at 0.
/// Returns 0 when the observed QBER is at or above the BB84 threshold or
/// when `e1_upper >= 0.5`.
#[allow(clippy::too_many_arguments)]
pub fn secret_key_length(
    n_sifted: u64,
    qber: f64,
    leakage_bits: u64,
    bounds: &DecoyBounds,
    signal_gain: f64,
    signal_mu: f64,
    margin_bits: u64,
) -> u64 {
    if qber >= BB84_QBER_THRESHOLD || bounds.e1_upper >= 0.5 {
        return 0;
    }
    let n1 = single_photon_bits(n_sifted, bounds.y1_lower, signal_gain, signal_mu);
    let len = n1 * (1.0 - binary_entropy(bounds.e1_upper)) - leakage_bits as f64 - margin_bits as f64;
    if len > 0.0 {
        len.floor() as u64
    } else {
        0
    }
}
