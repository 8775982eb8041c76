//! Stand-alone benches of the AO loop and the channel model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ao::{coupling_efficiency, AdaptiveOptics, LoopConfig, LoopStep, LoopTelemetry, PupilGeometry};
use crate::geometry::propagate_pass;
use crate::seed;
use crate::turbulence::fried_parameter;

use super::channel::{channel_transmittance, static_transmittance, FadingStream, ScreenStream};
use super::scenario::{ChannelConfig, ScenarioConfig};
use super::MissionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoBenchConfig {
    pub d_over_r0: f64,
    pub pupil_diameter_m: f64,
    pub wind_speed_mps: f64,
    pub duration_s: f64,
    pub loop_cfg: LoopConfig,
    pub ao_grid_n: usize,
    pub screen_grid_n: usize,
    pub seed: u64,
}

impl Default for AoBenchConfig {
    fn default() -> Self {
        Self {
            d_over_r0: 10.0,
            pupil_diameter_m: 0.8,
            wind_speed_mps: 10.0,
            duration_s: 2.0,
            loop_cfg: LoopConfig::default(),
            ao_grid_n: 32,
            screen_grid_n: 256,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoBenchResult {
    pub open_loop: Vec<f64>,
    pub closed_loop: LoopTelemetry,
    pub open_loop_mean: f64,
    pub closed_loop_mean: f64,
}

impl AoBenchResult {
    pub fn benefit(&self) -> f64 {
        if self.open_loop_mean > 0.0 {
            self.closed_loop_mean / self.open_loop_mean
        } else {
            f64::INFINITY
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,open_loop_eta,closed_loop_eta,residual_rms_rad")?;
        for (o, s) in self.open_loop.iter().zip(&self.closed_loop.steps) {
            writeln!(out, "{},{},{},{}", s.step, o, s.coupling_eta, s.residual_rms_rad)?;
        }
        Ok(())
    }
}

/// Open- and closed-loop fibre coupling over the same frozen-flow screens.
pub fn ao_bench(cfg: &AoBenchConfig) -> Result<AoBenchResult, MissionError> {
    if !(cfg.d_over_r0 > 0.0 && cfg.duration_s > 0.0) {
        return Err(MissionError::Config(vec![format!(
            "d_over_r0 ({}) and duration_s ({}) must be positive",
            cfg.d_over_r0, cfg.duration_s
        )]));
    }
    cfg.loop_cfg.validate()?;
    let channel = ChannelConfig {
        ao_grid_n: cfg.ao_grid_n,
        screen_grid_n: cfg.screen_grid_n,
        ..ChannelConfig::default()
    };
    let mut screens = ScreenStream::with_fixed_r0(
        cfg.pupil_diameter_m / cfg.d_over_r0,
        cfg.wind_speed_mps,
        cfg.pupil_diameter_m,
        &channel,
        seed::derive(cfg.seed, "screen", 0),
    )?;
    let geometry = PupilGeometry {
        grid_n: cfg.ao_grid_n,
        pixel_m: screens.pixel_m(),
        pupil_diameter_m: cfg.pupil_diameter_m,
    };
    let mut ao = AdaptiveOptics::new(
        geometry,
        &cfg.loop_cfg,
        cfg.loop_cfg.subapertures,
        cfg.loop_cfg.wfs_noise_rad,
        seed::derive(cfg.seed, "wfs", 0),
    )?;
    let steps = (cfg.duration_s * cfg.loop_cfg.rate_hz).round() as usize;
    let mut open = Vec::with_capacity(steps);
    let mut closed: Vec<LoopStep> = Vec::with_capacity(steps);
    for k in 0..steps {
        let screen = screens.screen_at(k as f64 / cfg.loop_cfg.rate_hz, 0.0)?;
        open.push(coupling_efficiency(&screen, cfg.loop_cfg.mode_radius_ratio));
        closed.push(ao.step(&screen)?);
    }
    let closed = LoopTelemetry { steps: closed };
    Ok(AoBenchResult {
        open_loop_mean: open.iter().sum::<f64>() / steps.max(1) as f64,
        closed_loop_mean: closed.mean_coupling(),
        open_loop: open,
        closed_loop: closed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    pub t_s: f64,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
    pub static_loss_db: f64,
    pub r0_m: f64,
    pub scintillation_index: f64,
    /// Mean downlink transmittance over the following second.
    pub mean_eta: f64,
    /// Fraction of that second with the beacon below the fade threshold.
    pub beacon_fade_fraction: f64,
}

pub const CHANNEL_CSV_HEADER: &str =
    "t_s,elevation_deg,slant_range_km,static_loss_db,r0_m,scintillation_index,mean_eta,beacon_fade_fraction";

/// Link budget along the pass of `cfg`, one row per pass sample.
pub fn channel_bench(cfg: &ScenarioConfig) -> Result<Vec<ChannelSample>, MissionError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(MissionError::Config(errs));
    }
    let pass = propagate_pass(&cfg.orbit, &cfg.station, cfg.pass_step_s)?;
    let samples = pass.samples();
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let rate = cfg.loop_cfg.rate_hz;
    let mut fading = FadingStream::new(
        &cfg.turbulence,
        &cfg.channel,
        cfg.station.uplink_beam_count,
        rate,
        seed::derive(cfg.seed, "downlink", 0),
        seed::derive(cfg.seed, "beacon", 0),
    );
    let per_second = rate.round().max(1.0) as usize;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let t_rel = s.t_s - first.t_s;
        let (sample, static_eta) = static_transmittance(samples, s.t_s, &cfg.channel, &cfg.station)?;
        let zenith = (90.0 - sample.elevation_deg).clamp(0.0, 89.9);
        let (mut eta_sum, mut faded) = (0.0, 0usize);
        for k in 0..per_second {
            let (fade, beacon) = fading.at(t_rel.floor() + k as f64 / rate, zenith)?;
            eta_sum += channel_transmittance(static_eta, fade, beacon, &cfg.channel);
            faded += usize::from(beacon < cfg.channel.beacon_fade_threshold);
        }
        out.push(ChannelSample {
            t_s: s.t_s,
            elevation_deg: s.elevation_deg,
            slant_range_km: s.slant_range_km,
            static_loss_db: -10.0 * static_eta.log10(),
            r0_m: fried_parameter(&cfg.turbulence, zenith, cfg.protocol.wavelength_m)?,
            scintillation_index: cfg.turbulence.scintillation_index(zenith),
            mean_eta: eta_sum / per_second as f64,
            beacon_fade_fraction: faded as f64 / per_second as f64,
        });
    }
    Ok(out)
}

pub fn write_channel_csv<W: Write>(rows: &[ChannelSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CHANNEL_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t_s,
            r.elevation_deg,
            r.slant_range_km,
            r.static_loss_db,
            r.r0_m,
            r.scintillation_index,
            r.mean_eta,
            r.beacon_fade_fraction
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_ao_bench_is_paired_and_deterministic() {
        let cfg = AoBenchConfig {
            duration_s: 0.05,
            ..AoBenchConfig::default()
        };
        let a = ao_bench(&cfg).unwrap();
        let b = ao_bench(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.open_loop.len(), 100);
        // the first closed-loop frame sees an uncorrected screen
        assert_eq!(a.open_loop[0], a.closed_loop.steps[0].coupling_eta);
    }

    #[test]
    fn bench_rejects_bad_ratio() {
        let cfg = AoBenchConfig {
            d_over_r0: 0.0,
            ..AoBenchConfig::default()
        };
        assert!(matches!(ao_bench(&cfg), Err(MissionError::Config(_))));
    }

    #[test]
    fn channel_budget_degrades_towards_the_horizon() {
        let cfg = ScenarioConfig::default();
        let rows = channel_bench(&cfg).unwrap();
        let peak = rows
            .iter()
            .max_by(|a, b| a.elevation_deg.total_cmp(&b.elevation_deg))
            .unwrap();
        let edge = &rows[0];
        assert!(edge.static_loss_db > peak.static_loss_db);
        assert!(edge.r0_m < peak.r0_m);
        assert!(edge.scintillation_index > peak.scintillation_index);
    }
}
