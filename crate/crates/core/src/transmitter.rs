//! Satellite transmitter: BB84 frame generation with decoy intensities,
//! phase/amplitude modulation errors, photodiode feedback calibration,
//! SOA/VOA output control and the optical power monitor.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::telemetry::{PacketType, TelemetryPacket};

#[derive(Debug, Error, PartialEq)]
pub enum TransmitterError {
    #[error("invalid protocol parameters: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("control gain {0} outside (0, 1]")]
    Gain(f64),
    #[error("VOA attenuation {0} dB must be >= 0")]
    Attenuation(f64),
    #[error("quantum frame at slot {slot} would leave with mean photon number {mu} > 1")]
    ProtocolViolation { slot: u64, mu: f64 },
    #[error("power trace has {0} samples, at least 10 are needed")]
    InsufficientData(usize),
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [Self::Signal, Self::Decoy, Self::Vacuum];

    pub fn index(self) -> usize {
        match self {
            Self::Signal => 0,
            Self::Decoy => 1,
            Self::Vacuum => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityLevels {
    pub signal: f64,
    pub decoy: f64,
    pub vacuum: f64,
}

impl IntensityLevels {
    pub fn get(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.signal,
            IntensityClass::Decoy => self.decoy,
            IntensityClass::Vacuum => self.vacuum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub qubit_rate_hz: f64,
    pub basis_probabilities: [f64; 2],
    pub intensity_levels: IntensityLevels,
    pub intensity_probabilities: [f64; 3],
    pub wavelength_m: f64,
    /// Quantum frames between consecutive reference frames; 0 disables them.
    #[serde(default = "default_reference_period")]
    pub reference_period: u64,
    #[serde(default = "default_reference_mu")]
    pub reference_mean_photon_number: f64,
}

fn default_reference_period() -> u64 {
    1000
}

fn default_reference_mu() -> f64 {
    1.0e4
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            qubit_rate_hz: 2.25e9,
            basis_probabilities: [0.5, 0.5],
            intensity_levels: IntensityLevels {
                signal: 0.5,
                decoy: 0.1,
                vacuum: 0.0,
            },
            intensity_probabilities: [0.8, 0.1, 0.1],
            wavelength_m: 1550e-9,
            reference_period: default_reference_period(),
            reference_mean_photon_number: default_reference_mu(),
        }
    }
}

fn check_distribution(name: &str, p: &[f64], errors: &mut Vec<String>) {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        errors.push(format!("{name} entries must lie in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        errors.push(format!("{name} sum to {sum}, not 1"));
    }
}

impl ProtocolParams {
    /// All violated constraints, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.qubit_rate_hz > 0.0 && self.qubit_rate_hz.is_finite()) {
            e.push(format!("qubit_rate_hz {} must be positive", self.qubit_rate_hz));
        }
        check_distribution("basis_probabilities", &self.basis_probabilities, &mut e);
        check_distribution("intensity_probabilities", &self.intensity_probabilities, &mut e);
        let l = &self.intensity_levels;
        if !(l.signal > l.decoy && l.decoy > l.vacuum && l.vacuum >= 0.0) {
            e.push(format!(
                "intensity levels need signal > decoy > vacuum >= 0, got {} / {} / {}",
                l.signal, l.decoy, l.vacuum
            ));
        }
        if l.signal > 1.0 {
            e.push(format!("signal level {} exceeds one photon per pulse", l.signal));
        }
        if !(self.wavelength_m > 0.0) {
            e.push(format!("wavelength_m {} must be positive", self.wavelength_m));
        }
        if self.reference_period > 0 && !(self.reference_mean_photon_number > 1.0) {
            e.push("reference_mean_photon_number must be well above one photon".into());
        }
        e
    }

    fn checked(&self) -> Result<(), TransmitterError> {
        let e = self.validate();
        if e.is_empty() {
            Ok(())
        } else {
            Err(TransmitterError::Config(e))
        }
    }

    pub fn is_reference_slot(&self, slot: u64) -> bool {
        self.reference_period > 0 && (slot + 1).is_multiple_of(self.reference_period + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseFrame {
    pub slot: u64,
    pub role: Role,
    pub basis: u8,
    pub bit: u8,
    pub intensity_class: IntensityClass,
    pub mean_photon_number: f64,
    pub phase_rad: f64,
}

/// Encoded phase for a BB84 state: `pi/2 * (2 bit + basis)`.
pub fn bb84_phase(basis: u8, bit: u8) -> f64 {
    FRAC_PI_2 * f64::from(2 * bit + basis)
}

fn pick(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Frame for one slot. Each slot draws from its own generator, so any range
/// of slots can be produced independently and in any order.
pub fn frame_at(params: &ProtocolParams, slot: u64, seed: u64) -> PulseFrame {
    if params.is_reference_slot(slot) {
        return PulseFrame {
            slot,
            role: Role::Reference,
            basis: 0,
            bit: 0,
            intensity_class: IntensityClass::Signal,
            mean_photon_number: params.reference_mean_photon_number,
            phase_rad: 0.0,
        };
    }
    let mut rng = seed::slot_rng(seed, slot);
    let basis = pick(rng.random::<f64>(), &params.basis_probabilities) as u8;
    let bit = u8::from(rng.random::<bool>());
    let class = IntensityClass::ALL[pick(rng.random::<f64>(), &params.intensity_probabilities)];
    PulseFrame {
        slot,
        role: Role::Quantum,
        basis,
        bit,
        intensity_class: class,
        mean_photon_number: params.intensity_levels.get(class),
        phase_rad: bb84_phase(basis, bit),
    }
}

/// Frames for slots `start .. start + length`.
pub fn generate_range(
    params: &ProtocolParams,
    start: u64,
    length: usize,
    seed: u64,
) -> Result<Vec<PulseFrame>, TransmitterError> {
    params.checked()?;
    Ok((start..start + length as u64)
        .map(|s| frame_at(params, s, seed))
        .collect())
}

pub fn generate_block(params: &ProtocolParams, length: usize, seed: u64) -> Result<Vec<PulseFrame>, TransmitterError> {
    if length == 0 {
        return Err(TransmitterError::Config(vec!["block length must be >= 1".into()]));
    }
    generate_range(params, 0, length, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub phase_bias_rad: f64,
    pub amplitude_bias: f64,
    /// Random-walk step rms of the phase bias per calibration step.
    pub phase_drift_rms: f64,
    /// Random-walk step rms of the amplitude bias per calibration step.
    pub amplitude_drift_rms: f64,
    pub photodiode_reading: f64,
}

impl Default for CalibrationState {
    fn default() -> Self {
        Self {
            phase_bias_rad: 0.0,
            amplitude_bias: 1.0,
            phase_drift_rms: 0.0,
            amplitude_drift_rms: 0.0,
            photodiode_reading: 1.0,
        }
    }
}

/// Emitted phase is `intended + phase_bias`, emitted mean photon number is
/// `intended * amplitude_bias`.
pub fn apply_modulation(frame: &PulseFrame, cal: &CalibrationState) -> PulseFrame {
    PulseFrame {
        phase_rad: frame.phase_rad + cal.phase_bias_rad,
        mean_photon_number: frame.mean_photon_number * cal.amplitude_bias,
        ..*frame
    }
}

/// Interferometric monitor photodiode: unit at zero phase error.
fn photodiode(phase_error: f64, amplitude: f64) -> f64 {
    (amplitude * (phase_error / 2.0).cos().powi(2)).max(0.0)
}

/// One proportional feedback step on the photodiode-derived errors followed
/// by one random-walk drift step.
pub fn calibration_step(
    cal: &CalibrationState,
    target_phase_rad: f64,
    ctrl_gain: f64,
    rng: &mut impl Rng,
) -> Result<CalibrationState, TransmitterError> {
    if !(ctrl_gain > 0.0 && ctrl_gain <= 1.0) {
        return Err(TransmitterError::Gain(ctrl_gain));
    }
    let phase_error = cal.phase_bias_rad - target_phase_rad;
    let amp_error = cal.amplitude_bias - 1.0;
    let mut next = *cal;
    next.phase_bias_rad -= ctrl_gain * phase_error;
    next.amplitude_bias -= ctrl_gain * amp_error;
    if cal.phase_drift_rms > 0.0 {
        next.phase_bias_rad += cal.phase_drift_rms * rng.sample::<f64, _>(StandardNormal);
    }
    if cal.amplitude_drift_rms > 0.0 {
        next.amplitude_bias += cal.amplitude_drift_rms * rng.sample::<f64, _>(StandardNormal);
    }
    next.amplitude_bias = next.amplitude_bias.max(0.0);
    next.photodiode_reading = photodiode(next.phase_bias_rad - target_phase_rad, next.amplitude_bias);
    Ok(next)
}

/// SOA gate plus VOA attenuator in front of the telescope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputStage {
    pub soa_gain: f64,
    pub soa_extinction: f64,
}

impl Default for OutputStage {
    fn default() -> Self {
        Self {
            soa_gain: 1.0,
            soa_extinction: 1e-4,
        }
    }
}

impl OutputStage {
    pub fn set_output_level(
        &self,
        frame: &PulseFrame,
        soa_on: bool,
        voa_attenuation_db: f64,
    ) -> Result<PulseFrame, TransmitterError> {
        if !(voa_attenuation_db >= 0.0) {
            return Err(TransmitterError::Attenuation(voa_attenuation_db));
        }
        let soa = if soa_on { self.soa_gain } else { self.soa_extinction };
        let voa = if voa_attenuation_db == 0.0 {
            1.0
        } else {
            10f64.powf(-voa_attenuation_db / 10.0)
        };
        let mu = frame.mean_photon_number * soa * voa;
        if frame.role == Role::Quantum && mu > 1.0 {
            return Err(TransmitterError::ProtocolViolation { slot: frame.slot, mu });
        }
        Ok(PulseFrame {
            mean_photon_number: mu,
            ..*frame
        })
    }
}

pub fn set_output_level(frame: &PulseFrame, soa_on: bool, voa_attenuation_db: f64) -> Result<PulseFrame, TransmitterError> {
    OutputStage::default().set_output_level(frame, soa_on, voa_attenuation_db)
}

pub const ANOMALY_WINDOW: usize = 31;

/// Robust sigma per median absolute deviation of a Gaussian.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub flagged: Vec<usize>,
    /// Inclusive index ranges of consecutive flagged samples.
    pub regions: Vec<(usize, usize)>,
    pub robust_sigma: f64,
    pub alarms: Vec<TelemetryPacket>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Residuals of a trace against its centred running median.
pub fn running_median_residuals(trace: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    (0..trace.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(trace.len());
            buf.clear();
            buf.extend_from_slice(&trace[lo..hi]);
            trace[i] - median(&mut buf)
        })
        .collect()
}

/// Flag samples further than `threshold_sigma` robust deviations from the
/// running median and raise one alarm per run of flagged samples. Alarm
/// timestamps are `t0_s + index * sample_period_s`.
pub fn detect_anomaly_timed(
    trace: &[f64],
    threshold_sigma: f64,
    t0_s: f64,
    sample_period_s: f64,
) -> Result<AnomalyReport, TransmitterError> {
    if trace.len() < 10 {
        return Err(TransmitterError::InsufficientData(trace.len()));
    }
    if !(threshold_sigma > 0.0) {
        return Err(TransmitterError::Threshold(threshold_sigma));
    }
    let resid = running_median_residuals(trace, ANOMALY_WINDOW);
    let mut abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
    let sigma = MAD_TO_SIGMA * median(&mut abs);
    let flagged: Vec<usize> = resid
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > threshold_sigma * sigma && r.abs() > 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for &i in &flagged {
        match regions.last_mut() {
            Some((_, end)) if *end + 1 == i => *end = i,
            _ => regions.push((i, i)),
        }
    }
    let alarms = regions
        .iter()
        .map(|&(a, b)| {
            let peak = (a..=b).map(|i| resid[i].abs()).fold(0.0, f64::max);
            let mut f = BTreeMap::new();
            f.insert("start_index".to_string(), a as f64);
            f.insert("end_index".to_string(), b as f64);
            f.insert("peak_deviation".to_string(), peak);
            f.insert("robust_sigma".to_string(), sigma);
            TelemetryPacket::new(t0_s + a as f64 * sample_period_s, PacketType::Alarm, f)
        })
        .collect();
    Ok(AnomalyReport {
        flagged,
        regions,
        robust_sigma: sigma,
        alarms,
    })
}

pub fn detect_anomaly(trace: &[f64], threshold_sigma: f64) -> Result<AnomalyReport, TransmitterError> {
    detect_anomaly_timed(trace, threshold_sigma, 0.0, 1.0)
}

/// Housekeeping packet carrying the calibration state and the given counters.
pub fn telemetry_snapshot(cal: &CalibrationState, counters: &BTreeMap<String, f64>, t_s: f64) -> TelemetryPacket {
    let mut f = counters.clone();
    f.insert("phase_bias_rad".into(), cal.phase_bias_rad);
    f.insert("amplitude_bias".into(), cal.amplitude_bias);
    f.insert("photodiode_reading".into(), cal.photodiode_reading);
    TelemetryPacket::new(t_s, PacketType::Housekeeping, f)
}
