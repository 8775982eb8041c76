//! Scenario files: one TOML document holding every module's configuration
//! and the master seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ao::LoopConfig;
use crate::geometry::{OrbitConfig, StationConfig};
use crate::link::{DetectorModel, Eavesdropper};
use crate::pat::PatConfig;
use crate::transmitter::{OutputStage, ProtocolParams};
use crate::turbulence::TurbulenceProfile;

/// Text of the bundled `default.scenario`.
pub const DEFAULT_SCENARIO: &str = include_str!("../../scenarios/default.scenario");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Full-angle divergence of the downlink beam.
    pub divergence_full_angle_rad: f64,
    pub zenith_atm_loss_db: f64,
    /// Receive optics between telescope and fibre coupler.
    pub receiver_loss_db: f64,
    /// Downlink scintillation index relative to the uplink one (aperture averaging).
    pub downlink_scintillation_factor: f64,
    /// Normalised beacon power below which satellite tracking degrades.
    pub beacon_fade_threshold: f64,
    /// Downlink transmittance factor while the beacon is faded.
    pub beacon_fade_penalty: f64,
    /// Side of each generated phase-screen segment, pixels.
    pub screen_grid_n: usize,
    /// Side of the pupil grid the AO loop runs on, pixels.
    pub ao_grid_n: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            divergence_full_angle_rad: 10e-6,
            zenith_atm_loss_db: 0.5,
            receiver_loss_db: 3.0,
            downlink_scintillation_factor: 0.1,
            beacon_fade_threshold: 0.3,
            beacon_fade_penalty: 0.5,
            screen_grid_n: 256,
            ao_grid_n: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub calibration_interval_s: f64,
    pub ctrl_gain: f64,
    pub phase_drift_rms: f64,
    pub amplitude_drift_rms: f64,
    pub photodiode_noise_rms: f64,
    pub alarm_threshold_sigma: f64,
    /// Times at which a bright-light injection hits the power monitor.
    #[serde(default)]
    pub injected_bright_light_s: Vec<f64>,
    pub housekeeping_interval_s: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            calibration_interval_s: 0.01,
            ctrl_gain: 0.3,
            phase_drift_rms: 0.005,
            amplitude_drift_rms: 0.002,
            photodiode_noise_rms: 1e-3,
            alarm_threshold_sigma: 8.0,
            injected_bright_light_s: Vec::new(),
            housekeeping_interval_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessingConfig {
    pub qber_sample_fraction: f64,
    pub cascade_passes: usize,
    /// Cascade is seeded with `max(estimated QBER, this)`.
    pub cascade_qber_floor: f64,
    /// Standard deviations applied to the decoy statistics; 0 gives the
    /// asymptotic bounds.
    pub decoy_n_sigma: f64,
    pub pa_margin_bits: u64,
    /// Authentication tags available from the pre-shared secret.
    pub auth_secret_tags: usize,
}

impl Default for PostprocessingConfig {
    fn default() -> Self {
        Self {
            qber_sample_fraction: 0.1,
            cascade_passes: 6,
            cascade_qber_floor: 0.01,
            decoy_n_sigma: 3.0,
            pa_margin_bits: 64,
            auth_secret_tags: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scaled_slot_rate_hz: f64,
    pub pass_step_s: f64,
    /// Cloud blockages as `[start_s, end_s]` relative to the first visible sample.
    #[serde(default)]
    pub cloud_blockages: Vec<(f64, f64)>,
    pub orbit: OrbitConfig,
    pub station: StationConfig,
    pub turbulence: TurbulenceProfile,
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub output_stage: OutputStage,
    pub detector: DetectorModel,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub pat: PatConfig,
    #[serde(default)]
    pub eavesdropper: Eavesdropper,
    pub channel: ChannelConfig,
    pub monitor: MonitorConfig,
    pub postprocessing: PostprocessingConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scaled_slot_rate_hz: 1e6,
            pass_step_s: 1.0,
            cloud_blockages: vec![(150.0, 158.0)],
            orbit: OrbitConfig::default(),
            station: StationConfig::default(),
            turbulence: TurbulenceProfile::default(),
            protocol: ProtocolParams::default(),
            output_stage: OutputStage::default(),
            detector: DetectorModel::default(),
            loop_cfg: LoopConfig::default(),
            pat: PatConfig::default(),
            eavesdropper: Eavesdropper::None,
            channel: ChannelConfig::default(),
            monitor: MonitorConfig::default(),
            postprocessing: PostprocessingConfig::default(),
        }
    }
}

fn prefixed(prefix: &str, errs: Vec<String>) -> Vec<String> {
    errs.into_iter().map(|e| format!("{prefix}.{e}")).collect()
}

fn positive(name: &str, v: f64, errs: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(format!("{name} must be positive, got {v}"));
    }
}

fn unit_interval(name: &str, v: f64, errs: &mut Vec<String>) {
    if !(0.0..=1.0).contains(&v) {
        errs.push(format!("{name} must lie in [0, 1], got {v}"));
    }
}

impl ScenarioConfig {
    pub fn bundled_default() -> Self {
        Self::from_toml(DEFAULT_SCENARIO).expect("bundled default scenario is valid")
    }

    /// Every violated constraint, each prefixed with its field path.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        positive("scaled_slot_rate_hz", self.scaled_slot_rate_hz, &mut e);
        positive("pass_step_s", self.pass_step_s, &mut e);
        if self.scaled_slot_rate_hz > self.protocol.qubit_rate_hz {
            e.push("scaled_slot_rate_hz must not exceed protocol.qubit_rate_hz".into());
        }
        for &(s, t) in &self.cloud_blockages {
            if !(s < t) {
                e.push(format!("cloud_blockages entry [{s}, {t}] must have start < end"));
            }
        }
        if let Err(err) = self.orbit.validate() {
            e.push(format!("orbit: {err}"));
        }
        if let Err(err) = self.station.validate() {
            e.push(format!("station: {err}"));
        }
        e.extend(prefixed("turbulence", self.turbulence.validate()));
        e.extend(prefixed("protocol", self.protocol.validate()));
        if !(self.output_stage.soa_gain > 0.0) {
            e.push("output_stage.soa_gain must be positive".into());
        }
        unit_interval("output_stage.soa_extinction", self.output_stage.soa_extinction, &mut e);
        if let Err(err) = self.detector.validate() {
            e.push(format!("detector: {err}"));
        }
        if let Err(err) = self.loop_cfg.validate() {
            e.push(format!("loop: {err}"));
        }
        if self.loop_cfg.rate_hz > self.scaled_slot_rate_hz {
            e.push("loop.rate_hz must not exceed scaled_slot_rate_hz".into());
        }
        e.extend(prefixed("pat", self.pat.validate()));
        if let Eavesdropper::InterceptResend { resend_mu } = self.eavesdropper {
            if !(resend_mu > 0.0 && resend_mu <= 1.0) {
                e.push(format!("eavesdropper.resend_mu must lie in (0, 1], got {resend_mu}"));
            }
        }
        let c = &self.channel;
        positive("channel.divergence_full_angle_rad", c.divergence_full_angle_rad, &mut e);
        if !(c.zenith_atm_loss_db >= 0.0) {
            e.push("channel.zenith_atm_loss_db must be >= 0".into());
        }
        if !(c.receiver_loss_db >= 0.0) {
            e.push("channel.receiver_loss_db must be >= 0".into());
        }
        if !(c.downlink_scintillation_factor >= 0.0) {
            e.push("channel.downlink_scintillation_factor must be >= 0".into());
        }
        if !(c.beacon_fade_threshold >= 0.0) {
            e.push("channel.beacon_fade_threshold must be >= 0".into());
        }
        unit_interval("channel.beacon_fade_penalty", c.beacon_fade_penalty, &mut e);
        if !(c.ao_grid_n.is_power_of_two() && c.ao_grid_n >= 16) {
            e.push(format!("channel.ao_grid_n must be a power of two >= 16, got {}", c.ao_grid_n));
        }
        if !(c.screen_grid_n.is_power_of_two() && c.screen_grid_n > c.ao_grid_n) {
            e.push(format!(
                "channel.screen_grid_n must be a power of two larger than ao_grid_n, got {}",
                c.screen_grid_n
            ));
        }
        if !c.ao_grid_n.is_multiple_of(self.loop_cfg.subapertures.max(1)) || c.ao_grid_n / self.loop_cfg.subapertures.max(1) < 2 {
            e.push("loop.subapertures must split channel.ao_grid_n into cells of >= 2 px".into());
        }
        let m = &self.monitor;
        positive("monitor.calibration_interval_s", m.calibration_interval_s, &mut e);
        positive("monitor.housekeeping_interval_s", m.housekeeping_interval_s, &mut e);
        positive("monitor.alarm_threshold_sigma", m.alarm_threshold_sigma, &mut e);
        if !(m.ctrl_gain > 0.0 && m.ctrl_gain <= 1.0) {
            e.push(format!("monitor.ctrl_gain must lie in (0, 1], got {}", m.ctrl_gain));
        }
        for (name, v) in [
            ("monitor.phase_drift_rms", m.phase_drift_rms),
            ("monitor.amplitude_drift_rms", m.amplitude_drift_rms),
            ("monitor.photodiode_noise_rms", m.photodiode_noise_rms),
        ] {
            if !(v >= 0.0) {
                e.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        let p = &self.postprocessing;
        if !(p.qber_sample_fraction > 0.0 && p.qber_sample_fraction < 1.0) {
            e.push("postprocessing.qber_sample_fraction must lie in (0, 1)".into());
        }
        if p.cascade_passes < 2 {
            e.push("postprocessing.cascade_passes must be >= 2".into());
        }
        if !(p.cascade_qber_floor > 0.0 && p.cascade_qber_floor <= 0.15) {
            e.push("postprocessing.cascade_qber_floor must lie in (0, 0.15]".into());
        }
        if !(p.decoy_n_sigma >= 0.0) {
            e.push("postprocessing.decoy_n_sigma must be >= 0".into());
        }
        if p.auth_secret_tags < 16 {
            e.push("postprocessing.auth_secret_tags must be >= 16".into());
        }
        e
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario is always serialisable")
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_toml()).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_toml(&text)
}
