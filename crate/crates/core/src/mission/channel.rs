//! Time-indexed channel state for the mission loop: frozen-flow pupil
//! screens and the downlink/beacon fading streams.

use crate::geometry::{interpolate, static_loss_db, PassSample, StationConfig};
use crate::screen::WavefrontScreen;
use crate::seed;
use crate::turbulence::{fried_parameter, generate_phase_screen, scintillation_series, TurbulenceProfile};

use super::scenario::ChannelConfig;
use super::MissionError;

/// Mean used when drawing fading series that are renormalised to unit mean.
const UNIT_FADING_MEAN: f64 = 1e-3;

/// Pupil screens drifting across the aperture at the wind speed.
///
/// The wind-blown strip is tiled by independently generated segments of
/// `screen_grid_n` pixels; a segment's Fried parameter is taken at the zenith
/// angle of the moment it enters the pupil.
#[derive(Debug)]
pub struct ScreenStream {
    profile: TurbulenceProfile,
    fixed_r0_m: Option<f64>,
    wavelength_m: f64,
    pupil_m: f64,
    screen_n: usize,
    ao_n: usize,
    pixel_m: f64,
    seed: u64,
    segment: Option<(u64, WavefrontScreen)>,
}

impl ScreenStream {
    pub fn new(
        profile: &TurbulenceProfile,
        wavelength_m: f64,
        pupil_m: f64,
        channel: &ChannelConfig,
        seed: u64,
    ) -> Result<Self, MissionError> {
        if channel.ao_grid_n < 8 || channel.screen_grid_n <= channel.ao_grid_n {
            return Err(MissionError::Config(vec![format!(
                "channel: screen_grid_n ({}) must exceed ao_grid_n ({}) >= 8",
                channel.screen_grid_n, channel.ao_grid_n
            )]));
        }
        Ok(Self {
            profile: profile.clone(),
            fixed_r0_m: None,
            wavelength_m,
            pupil_m,
            screen_n: channel.screen_grid_n,
            ao_n: channel.ao_grid_n,
            pixel_m: pupil_m / channel.ao_grid_n as f64,
            seed,
            segment: None,
        })
    }

    /// Stream with a fixed Fried parameter at the working wavelength.
    pub fn with_fixed_r0(
        r0_m: f64,
        wind_speed_mps: f64,
        pupil_m: f64,
        channel: &ChannelConfig,
        seed: u64,
    ) -> Result<Self, MissionError> {
        let profile = TurbulenceProfile {
            wind_speed_mps,
            ..TurbulenceProfile::default()
        };
        let mut s = Self::new(&profile, profile.reference_wavelength_m, pupil_m, channel, seed)?;
        s.fixed_r0_m = Some(r0_m);
        Ok(s)
    }

    pub fn pixel_m(&self) -> f64 {
        self.pixel_m
    }

    fn segment_len_px(&self) -> usize {
        self.screen_n - self.ao_n
    }

    /// Pupil screen `t_s` seconds after the stream origin.
    pub fn screen_at(&mut self, t_s: f64, zenith_deg: f64) -> Result<WavefrontScreen, MissionError> {
        let x_px = self.profile.wind_speed_mps * t_s.max(0.0) / self.pixel_m;
        let len = self.segment_len_px() as f64;
        let index = (x_px / len).floor() as u64;
        let offset = x_px - index as f64 * len;
        let current = matches!(&self.segment, Some((i, _)) if *i == index);
        if !current {
            let r0 = match self.fixed_r0_m {
                Some(r0) => r0,
                None => fried_parameter(&self.profile, zenith_deg, self.wavelength_m)?,
            };
            let s = generate_phase_screen(
                self.screen_n,
                self.pixel_m,
                r0,
                seed::derive(self.seed, "segment", index),
            )?;
            self.segment = Some((index, s));
        }
        let (_, segment) = self.segment.as_ref().expect("segment present");
        let row = (self.screen_n - self.ao_n) / 2;
        Ok(segment.window(offset, row, self.ao_n, Some(self.pupil_m))?)
    }
}

/// Unit-mean downlink fading and normalised beacon power, regenerated for
/// each whole second of the pass.
#[derive(Debug)]
pub struct FadingStream {
    profile: TurbulenceProfile,
    downlink_factor: f64,
    beams: usize,
    rate_hz: f64,
    downlink_seed: u64,
    beacon_seed: u64,
    second: Option<(u64, Vec<f64>, Vec<f64>)>,
}

impl FadingStream {
    pub fn new(
        profile: &TurbulenceProfile,
        channel: &ChannelConfig,
        beams: usize,
        rate_hz: f64,
        downlink_seed: u64,
        beacon_seed: u64,
    ) -> Self {
        Self {
            profile: profile.clone(),
            downlink_factor: channel.downlink_scintillation_factor,
            beams,
            rate_hz,
            downlink_seed,
            beacon_seed,
            second: None,
        }
    }

    /// `(downlink fading, beacon power)` at `t_s` seconds after the origin.
    pub fn at(&mut self, t_s: f64, zenith_deg: f64) -> Result<(f64, f64), MissionError> {
        let t = t_s.max(0.0);
        let sec = t.floor() as u64;
        if !matches!(&self.second, Some((s, _, _)) if *s == sec) {
            let index = self.profile.scintillation_index(zenith_deg);
            let unit = |v: Vec<f64>| v.into_iter().map(|x| x / UNIT_FADING_MEAN).collect::<Vec<_>>();
            let down = scintillation_series(
                UNIT_FADING_MEAN,
                index * self.downlink_factor,
                self.rate_hz,
                1.0,
                1,
                seed::derive(self.downlink_seed, "second", sec),
            )?;
            let beacon = scintillation_series(
                UNIT_FADING_MEAN,
                index,
                self.rate_hz,
                1.0,
                self.beams,
                seed::derive(self.beacon_seed, "second", sec),
            )?;
            self.second = Some((sec, unit(down.samples), unit(beacon.samples)));
        }
        let (_, down, beacon) = self.second.as_ref().expect("second present");
        let k = (((t - sec as f64) * self.rate_hz) as usize).min(down.len() - 1);
        Ok((down[k], beacon[k]))
    }
}

/// Static transmittance (geometric, atmospheric and receiver losses) at `t_s`.
pub fn static_transmittance(
    samples: &[PassSample],
    t_s: f64,
    channel: &ChannelConfig,
    station: &StationConfig,
) -> Result<(PassSample, f64), MissionError> {
    let sample = interpolate(samples, t_s).ok_or(MissionError::NoSamples)?;
    let db = static_loss_db(&sample, channel.divergence_full_angle_rad, station, channel.zenith_atm_loss_db)?
        + channel.receiver_loss_db.max(0.0);
    Ok((sample, 10f64.powf(-db / 10.0)))
}

/// Downlink transmittance including fading and the beacon-fade penalty.
pub fn channel_transmittance(static_eta: f64, fading: f64, beacon: f64, channel: &ChannelConfig) -> f64 {
    let penalty = if beacon < channel.beacon_fade_threshold {
        channel.beacon_fade_penalty
    } else {
        1.0
    };
    (static_eta * fading * penalty).min(1.0)
}
