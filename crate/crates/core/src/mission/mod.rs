//! End-to-end pass simulation: geometry, PAT timeline, channel and AO at the
//! loop rate, transmitter and detection per slot, then the classical
//! post-processing session.
//!
//! Every random stream is seeded with `seed::derive(cfg.seed, label, 0)`:
//!
//! | label         | consumer                                        |
//! |---------------|-------------------------------------------------|
//! | `pat`         | acquisition delay jitter                        |
//! | `screen`      | phase-screen segments (`derive(.., "segment", i)`) |
//! | `wfs`         | wavefront-sensor noise                          |
//! | `downlink`    | downlink fading (`derive(.., "second", s)`)     |
//! | `beacon`      | uplink beacon fading (`derive(.., "second", s)`) |
//! | `transmitter` | per-slot basis, bit and intensity draws         |
//! | `link`        | per-slot photon and detector draws              |
//! | `calibration` | modulator drift                                 |
//! | `monitor`     | photodiode readout noise                        |
//! | `auth`        | pre-shared authentication secret                |
//! | `qber`        | disclosed sample positions                      |
//! | `cascade`     | Cascade permutations                            |
//! | `pa`          | Toeplitz seed                                   |
//!
//! Slot `s` belongs to loop step `s / slots_per_step` and sees that step's
//! transmittance and coupling.

pub mod bench;
pub mod channel;
pub mod report;
pub mod scenario;
pub mod session;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use thiserror::Error;

use crate::ao::{AdaptiveOptics, AoError, PupilGeometry};
use crate::geometry::{propagate_pass, write_pass_csv, GeometryError, PassSample};
use crate::link::{
    class_statistics, transmit_and_detect_with_ledger, ClassStats, DetectionRecord, LinkError, Outcome, PhotonLedger,
    SlotSeries,
};
use crate::pat::{run_pass, PassTimeline, PatError, State};
use crate::postprocessing::keystore::{write_keystore, write_transcript, StoredKey, TranscriptEntry};
use crate::screen::ScreenError;
use crate::seed;
use crate::telemetry::{write_log, PacketType, TelemetryPacket};
use crate::transmitter::{
    apply_modulation, calibration_step, detect_anomaly_timed, frame_at, telemetry_snapshot, CalibrationState,
    IntensityClass, PulseFrame, Role, TransmitterError,
};
use crate::turbulence::TurbulenceError;

use channel::{channel_transmittance, static_transmittance, FadingStream, ScreenStream};
use report::{ClassReport, PassReport, ReportError, ReportFormat};
use scenario::ScenarioConfig;
use session::{run_session, SessionInput};

pub use report::REPORT_CSV_COLUMNS;
pub use scenario::{load_scenario, ScenarioError};

/// Loop steps whose slots are generated and detected together.
const CHUNK_STEPS: usize = 256;

/// Photodiode excursion produced by an injected bright-light pulse.
const BRIGHT_LIGHT_READING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Turbulence(#[from] TurbulenceError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Ao(#[from] AoError),
    #[error(transparent)]
    Pat(#[from] PatError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Transmitter(#[from] TransmitterError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("pass has no samples")]
    NoSamples,
}

impl MissionError {
    /// True for a violation of the single-photon output invariant.
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, MissionError::Transmitter(TransmitterError::ProtocolViolation { .. }))
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: PassReport,
    pub telemetry: Vec<TelemetryPacket>,
    pub transcript: Vec<TranscriptEntry>,
    pub key: Option<StoredKey>,
    pub timeline: PassTimeline,
    pub pass_samples: Vec<PassSample>,
    /// Photon-number bookkeeping of the channel simulation.
    pub ledger: PhotonLedger,
    /// Largest mean photon number of any quantum frame after the output stage.
    pub max_quantum_mu: f64,
}

pub fn run_end_to_end(cfg: &ScenarioConfig) -> Result<PassReport, MissionError> {
    Ok(run_mission(cfg)?.report)
}

struct Monitor {
    cal: CalibrationState,
    gain: f64,
    interval_s: f64,
    noise_rms: f64,
    injections: Vec<f64>,
    cal_rng: rand_chacha::ChaCha8Rng,
    noise_rng: rand_chacha::ChaCha8Rng,
    trace_start_s: f64,
    trace: Vec<f64>,
    hk_interval_s: f64,
    next_hk_s: f64,
    packets: Vec<TelemetryPacket>,
}

impl Monitor {
    fn new(cfg: &ScenarioConfig, start_s: f64) -> Self {
        let m = &cfg.monitor;
        let mut injections: Vec<f64> = m.injected_bright_light_s.iter().map(|t| start_s + t).collect();
        injections.sort_by(f64::total_cmp);
        Self {
            cal: CalibrationState {
                phase_drift_rms: m.phase_drift_rms,
                amplitude_drift_rms: m.amplitude_drift_rms,
                ..CalibrationState::default()
            },
            gain: m.ctrl_gain,
            interval_s: m.calibration_interval_s,
            noise_rms: m.photodiode_noise_rms,
            injections,
            cal_rng: seed::stream_rng(seed::derive(cfg.seed, "calibration", 0)),
            noise_rng: seed::stream_rng(seed::derive(cfg.seed, "monitor", 0)),
            trace_start_s: start_s + m.calibration_interval_s,
            trace: Vec::new(),
            hk_interval_s: m.housekeeping_interval_s,
            next_hk_s: start_s,
            packets: Vec::new(),
        }
    }

    /// Run calibration and housekeeping up to and including `t_s`.
    fn advance_to(&mut self, t_s: f64, counters: &BTreeMap<String, f64>) -> Result<(), TransmitterError> {
        loop {
            let n_cal = self.trace.len() as f64;
            let cal_t = self.trace_start_s + n_cal * self.interval_s;
            let hk_t = self.next_hk_s;
            if cal_t.min(hk_t) > t_s {
                return Ok(());
            }
            if hk_t <= cal_t {
                self.packets.push(telemetry_snapshot(&self.cal, counters, hk_t));
                self.next_hk_s = hk_t + self.hk_interval_s;
                continue;
            }
            self.cal = calibration_step(&self.cal, 0.0, self.gain, &mut self.cal_rng)?;
            let mut reading = self.cal.photodiode_reading;
            if self.noise_rms > 0.0 {
                reading += self.noise_rms * self.noise_rng.sample::<f64, _>(StandardNormal);
            }
            if self.injections.iter().any(|&t| t > cal_t - self.interval_s && t <= cal_t) {
                reading += BRIGHT_LIGHT_READING;
            }
            self.trace.push(reading);
        }
    }
}

#[derive(Default)]
struct Totals {
    transmitted: u64,
    quantum: u64,
    detected: u64,
    double_clicks: u64,
    ao_steps: u64,
    coupling_sum: f64,
    eta_sum: f64,
    max_mu: f64,
    stats: [ClassStats; 3],
    ledger: PhotonLedger,
    alice: Vec<PulseFrame>,
    bob: Vec<DetectionRecord>,
}

impl Totals {
    fn counters(&self) -> BTreeMap<String, f64> {
        let mut c = BTreeMap::new();
        c.insert("transmitted_slots".into(), self.transmitted as f64);
        c.insert("detected_slots".into(), self.detected as f64);
        c.insert("ao_steps".into(), self.ao_steps as f64);
        c
    }
}

struct StepState {
    index: u64,
    eta: f64,
    coupling: f64,
    cal: CalibrationState,
}

fn flush(
    cfg: &ScenarioConfig,
    steps: &[StepState],
    slots_per_step: u64,
    totals: &mut Totals,
) -> Result<(), MissionError> {
    let Some(first) = steps.first() else {
        return Ok(());
    };
    let tx_seed = seed::derive(cfg.seed, "transmitter", 0);
    let first_slot = first.index * slots_per_step;
    let mut frames = Vec::with_capacity(steps.len() * slots_per_step as usize);
    for st in steps {
        for slot in st.index * slots_per_step..(st.index + 1) * slots_per_step {
            let f = apply_modulation(&frame_at(&cfg.protocol, slot, tx_seed), &st.cal);
            let f = cfg.output_stage.set_output_level(&f, true, 0.0)?;
            if f.role == Role::Quantum {
                totals.max_mu = totals.max_mu.max(f.mean_photon_number);
            }
            frames.push(f);
        }
    }
    let series = |values: Vec<f64>| SlotSeries {
        start_slot: first_slot,
        slots_per_sample: slots_per_step,
        values,
    };
    let eta = series(steps.iter().map(|s| s.eta).collect());
    let coupling = series(steps.iter().map(|s| s.coupling).collect());
    let (records, ledger) = transmit_and_detect_with_ledger(
        &frames,
        &eta,
        &coupling,
        &cfg.detector,
        cfg.eavesdropper,
        seed::derive(cfg.seed, "link", 0),
    )?;
    for (t, c) in totals.stats.iter_mut().zip(class_statistics(&frames, &records)) {
        t.merge(&c);
    }
    totals.ledger.merge(&ledger);
    totals.transmitted += frames.len() as u64;
    totals.quantum += frames.iter().filter(|f| f.role == Role::Quantum).count() as u64;
    for r in records.into_iter().filter(|r| r.outcome.is_click()) {
        totals.detected += 1;
        totals.double_clicks += u64::from(matches!(r.outcome, Outcome::DoubleClick(_)));
        totals.alice.push(frames[(r.slot - first_slot) as usize]);
        totals.bob.push(r);
    }
    Ok(())
}

fn empty_report(cfg: &ScenarioConfig, reason: &str) -> PassReport {
    let zero = ClassReport::from(&ClassStats::default());
    PassReport {
        seed: cfg.seed,
        pass_duration_s: 0.0,
        peak_elevation_deg: 0.0,
        qkd_active_s: 0.0,
        availability_fraction: 0.0,
        terminal_state: State::Idle.name().to_string(),
        mean_coupling_eta: 0.0,
        mean_channel_eta: 0.0,
        ao_steps: 0,
        slot_rate_hz: cfg.scaled_slot_rate_hz,
        configured_qubit_rate_hz: cfg.protocol.qubit_rate_hz,
        transmitted_slots: 0,
        quantum_slots: 0,
        detected_slots: 0,
        double_clicks: 0,
        signal: zero.clone(),
        decoy: zero.clone(),
        vacuum: zero,
        signal_mu: cfg.protocol.intensity_levels.signal,
        y0: 0.0,
        y1_lower: 0.0,
        e1_upper: 0.0,
        sifted_bits: 0,
        sample_bits: 0,
        qber: 0.0,
        corrected_bits: 0,
        leakage_bits: 0,
        pa_margin_bits: cfg.postprocessing.pa_margin_bits,
        final_key_bits: 0,
        projected_key_rate_bps: 0.0,
        alarms: 0,
        abort_reason: Some(reason.to_string()),
    }
}

/// Loop steps per slot block, requiring the slot rate to be a whole multiple
/// of the loop rate.
fn slots_per_step(cfg: &ScenarioConfig) -> Result<u64, MissionError> {
    let ratio = cfg.scaled_slot_rate_hz / cfg.loop_cfg.rate_hz;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
        return Err(MissionError::Config(vec![format!(
            "scaled_slot_rate_hz ({}) must be a whole multiple of loop.rate_hz ({})",
            cfg.scaled_slot_rate_hz, cfg.loop_cfg.rate_hz
        )]));
    }
    Ok(n as u64)
}

/// Simulate one pass of `cfg` and collect every artifact.
pub fn run_mission(cfg: &ScenarioConfig) -> Result<RunArtifacts, MissionError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(MissionError::Config(errs));
    }
    let sps = slots_per_step(cfg)?;
    let pass = propagate_pass(&cfg.orbit, &cfg.station, cfg.pass_step_s)?;
    let samples = pass.samples().to_vec();
    let Some(first) = samples.first() else {
        return Ok(RunArtifacts {
            report: empty_report(cfg, "no visibility above the elevation mask"),
            telemetry: Vec::new(),
            transcript: Vec::new(),
            key: None,
            timeline: PassTimeline {
                transitions: Vec::new(),
                start_s: 0.0,
                end_s: 0.0,
                availability: 0.0,
            },
            pass_samples: samples,
            ledger: PhotonLedger::default(),
            max_quantum_mu: 0.0,
        });
    };
    let origin = first.t_s;
    let blockages: Vec<(f64, f64)> = cfg.cloud_blockages.iter().map(|&(a, b)| (origin + a, origin + b)).collect();
    let timeline = run_pass(&samples, &blockages, &cfg.pat, seed::derive(cfg.seed, "pat", 0))?;
    let (start, end) = (timeline.start_s, timeline.end_s);

    let pupil = cfg.station.aperture_diameter_m;
    let mut screens = ScreenStream::new(
        &cfg.turbulence,
        cfg.protocol.wavelength_m,
        pupil,
        &cfg.channel,
        seed::derive(cfg.seed, "screen", 0),
    )?;
    let geometry = PupilGeometry {
        grid_n: cfg.channel.ao_grid_n,
        pixel_m: screens.pixel_m(),
        pupil_diameter_m: pupil,
    };
    let mut ao = AdaptiveOptics::new(
        geometry,
        &cfg.loop_cfg,
        cfg.loop_cfg.subapertures,
        cfg.loop_cfg.wfs_noise_rad,
        seed::derive(cfg.seed, "wfs", 0),
    )?;
    let rate = cfg.loop_cfg.rate_hz;
    let mut fading = FadingStream::new(
        &cfg.turbulence,
        &cfg.channel,
        cfg.station.uplink_beam_count,
        rate,
        seed::derive(cfg.seed, "downlink", 0),
        seed::derive(cfg.seed, "beacon", 0),
    );

    let mut monitor = Monitor::new(cfg, start);
    let mut totals = Totals::default();
    let mut pending: Vec<StepState> = Vec::with_capacity(CHUNK_STEPS);
    for (a, b) in timeline.intervals(State::QkdActive) {
        ao.reset();
        let k0 = ((a - start) * rate).ceil() as u64;
        let k1 = ((b - start) * rate).ceil() as u64;
        for k in k0..k1 {
            let t_rel = k as f64 / rate;
            let t = start + t_rel;
            monitor.advance_to(t, &totals.counters())?;
            let (sample, static_eta) = static_transmittance(&samples, t, &cfg.channel, &cfg.station)?;
            let zenith = (90.0 - sample.elevation_deg).clamp(0.0, 89.9);
            let screen = screens.screen_at(t_rel, zenith)?;
            let step = ao.step(&screen)?;
            let (fade, beacon) = fading.at(t_rel, zenith)?;
            let eta = channel_transmittance(static_eta, fade, beacon, &cfg.channel);
            totals.ao_steps += 1;
            totals.coupling_sum += step.coupling_eta;
            totals.eta_sum += eta;
            pending.push(StepState {
                index: k,
                eta,
                coupling: step.coupling_eta,
                cal: monitor.cal,
            });
            if pending.len() == CHUNK_STEPS {
                flush(cfg, &pending, sps, &mut totals)?;
                pending.clear();
            }
        }
        flush(cfg, &pending, sps, &mut totals)?;
        pending.clear();
    }
    monitor.advance_to(end, &totals.counters())?;

    let mut telemetry = std::mem::take(&mut monitor.packets);
    let mut alarms = 0;
    if monitor.trace.len() >= 10 {
        let anomaly = detect_anomaly_timed(
            &monitor.trace,
            cfg.monitor.alarm_threshold_sigma,
            monitor.trace_start_s,
            monitor.interval_s,
        )?;
        alarms = anomaly.alarms.len() as u64;
        telemetry.extend(anomaly.alarms);
    }
    for &(t, s) in &timeline.transitions {
        let mut f = BTreeMap::new();
        f.insert("pat_state".to_string(), State::ALL.iter().position(|x| *x == s).unwrap_or(0) as f64);
        telemetry.push(TelemetryPacket::new(t, PacketType::Housekeeping, f));
    }
    telemetry.sort_by(|x, y| x.t_s.total_cmp(&y.t_s));

    let levels = cfg.protocol.intensity_levels;
    let outcome = run_session(&SessionInput {
        frames: &totals.alice,
        records: &totals.bob,
        stats: &totals.stats,
        levels: &levels,
        cfg: &cfg.postprocessing,
        master_seed: cfg.seed,
    });

    let qkd_active_s = timeline.time_in(State::QkdActive);
    let final_bits = outcome.final_key.as_ref().map_or(0, |k| k.len() as u64);
    let steps = totals.ao_steps.max(1) as f64;
    let bounds = outcome.bounds.clone().unwrap_or_default();
    let [signal, decoy, vacuum] = totals.stats;
    let report = PassReport {
        seed: cfg.seed,
        pass_duration_s: end - start,
        peak_elevation_deg: samples.iter().map(|s| s.elevation_deg).fold(f64::MIN, f64::max),
        qkd_active_s,
        availability_fraction: timeline.availability,
        terminal_state: timeline.terminal_state().name().to_string(),
        mean_coupling_eta: totals.coupling_sum / steps,
        mean_channel_eta: totals.eta_sum / steps,
        ao_steps: totals.ao_steps,
        slot_rate_hz: cfg.scaled_slot_rate_hz,
        configured_qubit_rate_hz: cfg.protocol.qubit_rate_hz,
        transmitted_slots: totals.transmitted,
        quantum_slots: totals.quantum,
        detected_slots: totals.detected,
        double_clicks: totals.double_clicks,
        signal: ClassReport::from(&signal),
        decoy: ClassReport::from(&decoy),
        vacuum: ClassReport::from(&vacuum),
        signal_mu: levels.get(IntensityClass::Signal),
        y0: bounds.y0,
        y1_lower: bounds.y1_lower,
        e1_upper: bounds.e1_upper,
        sifted_bits: outcome.sifted_bits,
        sample_bits: outcome.sample_bits,
        qber: outcome.qber,
        corrected_bits: outcome.corrected_bits,
        leakage_bits: outcome.leakage_bits,
        pa_margin_bits: cfg.postprocessing.pa_margin_bits,
        final_key_bits: final_bits,
        projected_key_rate_bps: if qkd_active_s > 0.0 {
            final_bits as f64 / qkd_active_s * cfg.protocol.qubit_rate_hz / cfg.scaled_slot_rate_hz
        } else {
            0.0
        },
        alarms,
        abort_reason: outcome.abort.clone(),
    };

    let key = outcome.final_key.as_ref().map(|k| {
        let mut metadata = BTreeMap::new();
        metadata.insert("seed".to_string(), Value::from(cfg.seed));
        metadata.insert("final_key_bits".to_string(), Value::from(final_bits));
        metadata.insert("qber".to_string(), Value::from(outcome.qber));
        metadata.insert("sifted_bits".to_string(), Value::from(outcome.sifted_bits));
        metadata.insert("leakage_bits".to_string(), Value::from(outcome.leakage_bits));
        metadata.insert("qkd_active_s".to_string(), Value::from(qkd_active_s));
        StoredKey {
            session_id: cfg.seed,
            bits: k.bits.clone(),
            metadata,
        }
    });

    Ok(RunArtifacts {
        report,
        telemetry,
        transcript: outcome.transcript,
        key,
        timeline,
        pass_samples: samples,
        ledger: totals.ledger,
        max_quantum_mu: totals.max_mu,
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TELEMETRY_LOG: &str = "telemetry.jsonl";
pub const TRANSCRIPT_LOG: &str = "transcript.jsonl";
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const PASS_CSV: &str = "pass.csv";
pub const KEY_FILE: &str = "key.qksk";

/// Every artifact file of a run as `(file name, bytes)`, in a fixed order.
/// The key file is present only when a key was produced.
pub fn serialize_artifacts(artifacts: &RunArtifacts) -> Vec<(&'static str, Vec<u8>)> {
    let mut out = Vec::new();
    let mut push = |name, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory cannot fail");
        out.push((name, buf));
    };
    push(REPORT_JSON, &|w| artifacts.report.write(ReportFormat::Json, w));
    push(REPORT_CSV, &|w| artifacts.report.write(ReportFormat::Csv, w));
    push(TELEMETRY_LOG, &|w| write_log(&artifacts.telemetry, w));
    push(TRANSCRIPT_LOG, &|w| write_transcript(&artifacts.transcript, w));
    push(TIMELINE_CSV, &|w| artifacts.timeline.write_csv(w));
    push(PASS_CSV, &|w| write_pass_csv(&artifacts.pass_samples, w));
    if let Some(k) = &artifacts.key {
        push(KEY_FILE, &|w| write_keystore(k, w));
    }
    out
}

/// Write every artifact into `dir`, returning the paths written. A stale key
/// file from an earlier run is removed when this run produced no key.
pub fn write_outputs(dir: &Path, artifacts: &RunArtifacts) -> Result<Vec<PathBuf>, MissionError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MissionError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, bytes) in serialize_artifacts(artifacts) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        written.push(path);
    }
    let key_path = dir.join(KEY_FILE);
    if artifacts.key.is_none() && key_path.exists() {
        fs::remove_file(&key_path).map_err(io(&key_path))?;
    }
    Ok(written)
}
