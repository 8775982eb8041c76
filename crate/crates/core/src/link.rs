//! Slot-by-slot photon transport from the transmitter to a pair of threshold
//! detectors, with an optional intercept-resend eavesdropper.
//!
//! Bob's measurement is an abstract two-basis qubit measurement on the
//! encoded phase: a photon measured in basis `b` lands in detector branch 0
//! with probability `cos^2((phase - b pi/2) / 2)`, then a misalignment error
//! swaps branches with probability `error_prob`. Each branch has its own dark
//! count `d_b` with `(1 - d_b)^2 = 1 - dark_count_prob_per_slot`, so the slot
//! click probability is `1 - (1 - dark) exp(-mu eta efficiency)`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::transmitter::{bb84_phase, IntensityClass, PulseFrame, Role};

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("invalid detector model: {0}")]
    Detector(String),
    #[error("{series} series does not cover slot {slot}")]
    LengthMismatch { series: &'static str, slot: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_count_prob_per_slot: f64,
    pub error_prob: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 0.2,
            dark_count_prob_per_slot: 1e-6,
            error_prob: 0.01,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(LinkError::Detector(format!("efficiency {} outside (0, 1]", self.efficiency)));
        }
        if !(0.0..1.0).contains(&self.dark_count_prob_per_slot) {
            return Err(LinkError::Detector(format!(
                "dark count probability {} outside [0, 1)",
                self.dark_count_prob_per_slot
            )));
        }
        if !(0.0..0.5).contains(&self.error_prob) {
            return Err(LinkError::Detector(format!("error probability {} outside [0, 0.5)", self.error_prob)));
        }
        Ok(())
    }

    fn branch_dark(&self) -> f64 {
        1.0 - (1.0 - self.dark_count_prob_per_slot).sqrt()
    }
}

pub fn click_probability(mu: f64, eta_total: f64, det: &DetectorModel) -> f64 {
    let dark = det.dark_count_prob_per_slot;
    dark + (1.0 - dark) * -(-mu * eta_total * det.efficiency).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "bit")]
pub enum Outcome {
    Click(u8),
    NoClick,
    /// Both branches fired; the bit is the uniformly random squashed value.
    DoubleClick(u8),
}

impl Outcome {
    /// Bit used by post-processing, `None` when nothing fired.
    pub fn bit(self) -> Option<u8> {
        match self {
            Outcome::Click(b) | Outcome::DoubleClick(b) => Some(b),
            Outcome::NoClick => None,
        }
    }

    pub fn is_click(self) -> bool {
        self != Outcome::NoClick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub slot: u64,
    pub bob_basis: u8,
    pub outcome: Outcome,
}

pub const DETECTION_CSV_HEADER: &str = "slot,bob_basis,outcome,bit";

pub fn write_detection_csv<W: Write>(records: &[DetectionRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DETECTION_CSV_HEADER}")?;
    for r in records {
        let (name, bit) = match r.outcome {
            Outcome::Click(b) => ("click", b.to_string()),
            Outcome::NoClick => ("no_click", String::new()),
            Outcome::DoubleClick(b) => ("double_click", b.to_string()),
        };
        writeln!(out, "{},{},{},{}", r.slot, r.bob_basis, name, bit)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Eavesdropper {
    #[default]
    None,
    /// Measure every quantum pulse in a random basis and resend the observed
    /// eigenstate with mean photon number `resend_mu`.
    InterceptResend { resend_mu: f64 },
}

/// Eve's measure-and-resend on one frame. Reference frames pass untouched.
pub fn intercept_resend(frame: &PulseFrame, resend_mu: f64, seed: u64) -> PulseFrame {
    if frame.role == Role::Reference {
        return *frame;
    }
    let mut rng = seed::slot_rng(seed, frame.slot);
    intercept_with(frame, resend_mu, &mut rng)
}

fn intercept_with(frame: &PulseFrame, resend_mu: f64, rng: &mut impl Rng) -> PulseFrame {
    let eve_basis = u8::from(rng.random::<bool>());
    let coin = u8::from(rng.random::<bool>());
    let eve_bit = if eve_basis == frame.basis { frame.bit } else { coin };
    PulseFrame {
        basis: eve_basis,
        bit: eve_bit,
        mean_photon_number: resend_mu,
        phase_rad: bb84_phase(eve_basis, eve_bit),
        ..*frame
    }
}

/// Per-slot values held constant over `slots_per_sample` consecutive slots
/// starting at `start_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSeries {
    pub start_slot: u64,
    pub slots_per_sample: u64,
    pub values: Vec<f64>,
}

impl SlotSeries {
    pub fn constant(value: f64, start_slot: u64, slots: u64) -> Self {
        Self {
            start_slot,
            slots_per_sample: slots.max(1),
            values: vec![value],
        }
    }

    pub fn end_slot(&self) -> u64 {
        self.start_slot + self.slots_per_sample * self.values.len() as u64
    }

    pub fn at(&self, slot: u64) -> Option<f64> {
        let off = slot.checked_sub(self.start_slot)?;
        self.values.get((off / self.slots_per_sample) as usize).copied()
    }
}

/// Photon numbers at or above the last bucket share it.
pub const LEDGER_MAX_N: usize = 8;

/// Ground-truth bookkeeping of emitted photon numbers, which the
/// post-processing never sees. Indexed `[class][n]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonLedger {
    pub sent: [[u64; LEDGER_MAX_N + 1]; 3],
    pub clicked: [[u64; LEDGER_MAX_N + 1]; 3],
    pub matched_clicks: [[u64; LEDGER_MAX_N + 1]; 3],
    pub matched_errors: [[u64; LEDGER_MAX_N + 1]; 3],
}

impl PhotonLedger {
    fn bucket(n: u32) -> usize {
        (n as usize).min(LEDGER_MAX_N)
    }

    /// True yield of `n`-photon emissions across all intensity classes.
    pub fn yield_n(&self, n: usize) -> f64 {
        let s: u64 = self.sent.iter().map(|c| c[n]).sum();
        let c: u64 = self.clicked.iter().map(|c| c[n]).sum();
        if s == 0 {
            0.0
        } else {
            c as f64 / s as f64
        }
    }

    /// True basis-matched error rate of `n`-photon emissions.
    pub fn error_rate_n(&self, n: usize) -> f64 {
        let m: u64 = self.matched_clicks.iter().map(|c| c[n]).sum();
        let e: u64 = self.matched_errors.iter().map(|c| c[n]).sum();
        if m == 0 {
            0.0
        } else {
            e as f64 / m as f64
        }
    }

    pub fn merge(&mut self, other: &PhotonLedger) {
        for k in 0..3 {
            for n in 0..=LEDGER_MAX_N {
                self.sent[k][n] += other.sent[k][n];
                self.clicked[k][n] += other.clicked[k][n];
                self.matched_clicks[k][n] += other.matched_clicks[k][n];
                self.matched_errors[k][n] += other.matched_errors[k][n];
            }
        }
    }
}

fn poisson_small(mu: f64, rng: &mut impl Rng) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    // inverse transform, adequate for the sub-photon means on the quantum channel
    let u: f64 = rng.random();
    let mut p = (-mu).exp();
    let mut cdf = p;
    let mut n = 0u32;
    while u >= cdf && n < 10_000 {
        n += 1;
        p *= mu / f64::from(n);
        cdf += p;
        if p < 1e-300 {
            break;
        }
    }
    n
}

/// Detect one (possibly intercepted) pulse. Returns the outcome and the
/// number of photons Alice emitted.
fn detect_slot(
    alice: &PulseFrame,
    eta_total: f64,
    det: &DetectorModel,
    eve: Eavesdropper,
    rng: &mut impl Rng,
) -> (u8, Outcome, u32) {
    let bob_basis = u8::from(rng.random::<bool>());
    let emitted = poisson_small(alice.mean_photon_number, rng);
    let pulse = match eve {
        Eavesdropper::None => *alice,
        Eavesdropper::InterceptResend { resend_mu } => intercept_with(alice, resend_mu, rng),
    };
    let photons = match eve {
        Eavesdropper::None => emitted,
        Eavesdropper::InterceptResend { .. } => poisson_small(pulse.mean_photon_number, rng),
    };
    let p_det = eta_total * det.efficiency;
    let (mut fire0, mut fire1) = (false, false);
    let mut q0 = f64::NAN;
    for _ in 0..photons {
        if q0.is_nan() {
            let delta = pulse.phase_rad - f64::from(bob_basis) * FRAC_PI_2;
            let q = (delta / 2.0).cos().powi(2);
            q0 = (1.0 - det.error_prob) * q + det.error_prob * (1.0 - q);
        }
        if rng.random::<f64>() < p_det {
            if rng.random::<f64>() < q0 {
                fire0 = true;
            } else {
                fire1 = true;
            }
        }
    }
    let d_b = det.branch_dark();
    fire0 |= rng.random::<f64>() < d_b;
    fire1 |= rng.random::<f64>() < d_b;
    let outcome = match (fire0, fire1) {
        (true, true) => Outcome::DoubleClick(u8::from(rng.random::<bool>())),
        (true, false) => Outcome::Click(0),
        (false, true) => Outcome::Click(1),
        (false, false) => Outcome::NoClick,
    };
    (bob_basis, outcome, emitted)
}

/// Records for every quantum frame plus the photon-number ledger. The
/// outcome of slot `i` depends only on frame `i`, the series values at `i`
/// and `seed`.
pub fn transmit_and_detect_with_ledger(
    frames: &[PulseFrame],
    eta_series: &SlotSeries,
    coupling_series: &SlotSeries,
    det: &DetectorModel,
    eve: Eavesdropper,
    seed: u64,
) -> Result<(Vec<DetectionRecord>, PhotonLedger), LinkError> {
    det.validate()?;
    let mut ledger = PhotonLedger::default();
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let eta = eta_series.at(f.slot).ok_or(LinkError::LengthMismatch {
            series: "transmittance",
            slot: f.slot,
        })?;
        let coupling = coupling_series.at(f.slot).ok_or(LinkError::LengthMismatch {
            series: "coupling",
            slot: f.slot,
        })?;
        if f.role == Role::Reference {
            continue;
        }
        let mut rng = seed::slot_rng(seed, f.slot);
        let (bob_basis, outcome, emitted) = detect_slot(f, eta * coupling, det, eve, &mut rng);
        let k = f.intensity_class.index();
        let n = PhotonLedger::bucket(emitted);
        ledger.sent[k][n] += 1;
        if let Some(bit) = outcome.bit() {
            ledger.clicked[k][n] += 1;
            if bob_basis == f.basis {
                ledger.matched_clicks[k][n] += 1;
                ledger.matched_errors[k][n] += u64::from(bit != f.bit);
            }
        }
        records.push(DetectionRecord {
            slot: f.slot,
            bob_basis,
            outcome,
        });
    }
    Ok((records, ledger))
}

pub fn transmit_and_detect(
    frames: &[PulseFrame],
    eta_series: &SlotSeries,
    coupling_series: &SlotSeries,
    det: &DetectorModel,
    eve: Eavesdropper,
    seed: u64,
) -> Result<Vec<DetectionRecord>, LinkError> {
    transmit_and_detect_with_ledger(frames, eta_series, coupling_series, det, eve, seed).map(|(r, _)| r)
}

/// Measured gain and basis-matched error rate of one intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub sent: u64,
    pub clicks: u64,
    pub matched: u64,
    pub errors: u64,
}

impl ClassStats {
    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.clicks as f64 / self.sent as f64
        }
    }

    pub fn qber(&self) -> f64 {
        if self.matched == 0 {
            0.0
        } else {
            self.errors as f64 / self.matched as f64
        }
    }

    pub fn merge(&mut self, o: &ClassStats) {
        self.sent += o.sent;
        self.clicks += o.clicks;
        self.matched += o.matched;
        self.errors += o.errors;
    }
}

/// Per-class statistics as Alice and Bob can compute them after announcing
/// classes and, for decoy and vacuum slots, their bits.
pub fn class_statistics(frames: &[PulseFrame], records: &[DetectionRecord]) -> [ClassStats; 3] {
    let mut out = [ClassStats::default(); 3];
    let mut ri = 0;
    for f in frames.iter().filter(|f| f.role == Role::Quantum) {
        while ri < records.len() && records[ri].slot < f.slot {
            ri += 1;
        }
        let k = f.intensity_class.index();
        out[k].sent += 1;
        let Some(r) = records.get(ri).filter(|r| r.slot == f.slot) else {
            continue;
        };
        if let Some(bit) = r.outcome.bit() {
            out[k].clicks += 1;
            if r.bob_basis == f.basis {
                out[k].matched += 1;
                out[k].errors += u64::from(bit != f.bit);
            }
        }
    }
    out
}

pub fn class_of(stats: &[ClassStats; 3], class: IntensityClass) -> &ClassStats {
    &stats[class.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transmitter::{generate_block, ProtocolParams};

    fn ideal() -> DetectorModel {
        DetectorModel {
            efficiency: 1.0,
            dark_count_prob_per_slot: 0.0,
            error_prob: 0.0,
        }
    }

    #[test]
    fn click_probability_anchors() {
        let d = DetectorModel {
            dark_count_prob_per_slot: 3e-5,
            ..ideal()
        };
        assert_eq!(click_probability(0.0, 0.3, &d), 3e-5);
        assert!((click_probability(0.5, 1.0, &ideal()) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn detector_validation() {
        assert!(DetectorModel { efficiency: 0.0, ..ideal() }.validate().is_err());
        assert!(DetectorModel { error_prob: 0.5, ..ideal() }.validate().is_err());
        assert!(DetectorModel { dark_count_prob_per_slot: 1.0, ..ideal() }.validate().is_err());
        assert!(DetectorModel::default().validate().is_ok());
    }

    #[test]
    fn short_series_rejected() {
        let p = ProtocolParams::default();
        let frames = generate_block(&p, 100, 1).unwrap();
        let eta = SlotSeries {
            start_slot: 0,
            slots_per_sample: 10,
            values: vec![1.0; 9],
        };
        let one = SlotSeries::constant(1.0, 0, 100);
        let err = transmit_and_detect(&frames, &eta, &one, &ideal(), Eavesdropper::None, 2);
        assert_eq!(err, Err(LinkError::LengthMismatch { series: "transmittance", slot: 90 }));
    }

    #[test]
    fn vacuum_without_dark_counts_never_clicks() {
        let p = ProtocolParams {
            intensity_probabilities: [0.0, 0.0, 1.0],
            ..Default::default()
        };
        let frames = generate_block(&p, 20_000, 1).unwrap();
        let one = SlotSeries::constant(1.0, 0, 20_000);
        let r = transmit_and_detect(&frames, &one, &one, &ideal(), Eavesdropper::None, 2).unwrap();
        assert!(r.iter().all(|r| r.outcome == Outcome::NoClick));
    }

    #[test]
    fn noiseless_channel_has_no_errors() {
        let p = ProtocolParams::default();
        let frames = generate_block(&p, 50_000, 5).unwrap();
        let one = SlotSeries::constant(1.0, 0, 50_000);
        let r = transmit_and_detect(&frames, &one, &one, &ideal(), Eavesdropper::None, 6).unwrap();
        let stats = class_statistics(&frames, &r);
        assert!(stats[0].matched > 5000);
        assert!(stats.iter().all(|s| s.errors == 0));
    }

    #[test]
    fn eve_eigenstate_case_preserves_bit() {
        let p = ProtocolParams::default();
        for f in generate_block(&p, 5000, 3).unwrap() {
            let e = intercept_resend(&f, 0.5, 11);
            if f.role == Role::Quantum && e.basis == f.basis {
                assert_eq!(e.bit, f.bit);
                assert_eq!(e.phase_rad, f.phase_rad);
            }
            if f.role == Role::Reference {
                assert_eq!(e, f);
            }
        }
    }

    #[test]
    fn slot_series_lookup() {
        let s = SlotSeries {
            start_slot: 100,
            slots_per_sample: 10,
            values: vec![1.0, 2.0],
        };
        assert_eq!(s.at(99), None);
        assert_eq!(s.at(100), Some(1.0));
        assert_eq!(s.at(119), Some(2.0));
        assert_eq!(s.at(120), None);
        assert_eq!(s.end_slot(), 120);
    }

    #[test]
    fn detection_csv() {
        let r = vec![
            DetectionRecord { slot: 1, bob_basis: 0, outcome: Outcome::Click(1) },
            DetectionRecord { slot: 2, bob_basis: 1, outcome: Outcome::NoClick },
            DetectionRecord { slot: 3, bob_basis: 1, outcome: Outcome::DoubleClick(0) },
        ];
        let mut buf = Vec::new();
        write_detection_csv(&r, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "slot,bob_basis,outcome,bit\n1,0,click,1\n2,1,no_click,\n3,1,double_click,0\n"
        );
    }
}
