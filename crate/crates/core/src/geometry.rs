//! LEO pass geometry and static link-budget losses.
//!
//! The pass model is a circular orbit over a spherical, non-rotating Earth.
//! A pass is fully described by its culmination elevation, so the elevation
//! and range profiles are closed-form and need no ephemeris.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravitational parameter of the Earth, km^3/s^2.
pub const EARTH_MU_KM3_S2: f64 = 398_600.441_8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("elevation {0} deg outside [0, 90]")]
    Elevation(f64),
    #[error("invalid orbit: {0}")]
    Orbit(String),
    #[error("invalid station: {0}")]
    Station(String),
    #[error("step must be positive, got {0}")]
    Step(f64),
    #[error("divergence must be positive, got {0}")]
    Divergence(f64),
    #[error("airmass undefined at elevation {0} deg with non-zero atmospheric loss")]
    Airmass(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    pub altitude_km: f64,
    pub max_elevation_deg: f64,
    #[serde(default = "default_earth_radius")]
    pub earth_radius_km: f64,
}

fn default_earth_radius() -> f64 {
    6371.0
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            altitude_km: 500.0,
            max_elevation_deg: 90.0,
            earth_radius_km: default_earth_radius(),
        }
    }
}

impl OrbitConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.altitude_km > 0.0 && self.altitude_km.is_finite()) {
            return Err(GeometryError::Orbit(format!(
                "altitude_km must be positive, got {}",
                self.altitude_km
            )));
        }
        if !(self.max_elevation_deg > 0.0 && self.max_elevation_deg <= 90.0) {
            return Err(GeometryError::Orbit(format!(
                "max_elevation_deg must lie in (0, 90], got {}",
                self.max_elevation_deg
            )));
        }
        if !(self.earth_radius_km > 0.0 && self.earth_radius_km.is_finite()) {
            return Err(GeometryError::Orbit(format!(
                "earth_radius_km must be positive, got {}",
                self.earth_radius_km
            )));
        }
        Ok(())
    }

    fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Mean motion of the circular orbit, rad/s.
    pub fn mean_motion(&self) -> f64 {
        (EARTH_MU_KM3_S2 / self.orbit_radius_km().powi(3)).sqrt()
    }

    /// Earth-central angle between station and sub-satellite point at `elevation_deg`.
    fn central_angle(&self, elevation_deg: f64) -> f64 {
        let e = elevation_deg.to_radians();
        (self.earth_radius_km * e.cos() / self.orbit_radius_km())
            .clamp(-1.0, 1.0)
            .acos()
            - e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    #[serde(default = "default_aperture")]
    pub aperture_diameter_m: f64,
    pub elevation_mask_deg: f64,
    #[serde(default = "default_beam_count")]
    pub uplink_beam_count: usize,
}

fn default_aperture() -> f64 {
    0.80
}

fn default_beam_count() -> usize {
    4
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            aperture_diameter_m: default_aperture(),
            elevation_mask_deg: 20.0,
            uplink_beam_count: default_beam_count(),
        }
    }
}

impl StationConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.aperture_diameter_m > 0.0 && self.aperture_diameter_m.is_finite()) {
            return Err(GeometryError::Station(format!(
                "aperture_diameter_m must be positive, got {}",
                self.aperture_diameter_m
            )));
        }
        if !(self.elevation_mask_deg >= 0.0 && self.elevation_mask_deg < 90.0) {
            return Err(GeometryError::Station(format!(
                "elevation_mask_deg must lie in [0, 90), got {}",
                self.elevation_mask_deg
            )));
        }
        if self.uplink_beam_count == 0 {
            return Err(GeometryError::Station("uplink_beam_count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassSample {
    pub t_s: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub slant_range_km: f64,
}

/// Result of [`propagate_pass`].
#[derive(Debug, Clone, PartialEq)]
pub enum Pass {
    Visible(Vec<PassSample>),
    /// The culmination stays below the station elevation mask.
    NoVisibility,
}

impl Pass {
    pub fn samples(&self) -> &[PassSample] {
        match self {
            Pass::Visible(s) => s,
            Pass::NoVisibility => &[],
        }
    }

    pub fn duration_s(&self) -> f64 {
        match self.samples() {
            [first, .., last] => last.t_s - first.t_s,
            _ => 0.0,
        }
    }
}

/// Slant range from station to satellite, km.
pub fn slant_range(elevation_deg: f64, orbit: &OrbitConfig) -> Result<f64, GeometryError> {
    orbit.validate()?;
    if !(0.0..=90.0).contains(&elevation_deg) {
        return Err(GeometryError::Elevation(elevation_deg));
    }
    Ok(slant_range_unchecked(elevation_deg, orbit))
}

fn slant_range_unchecked(elevation_deg: f64, orbit: &OrbitConfig) -> f64 {
    let re = orbit.earth_radius_km;
    let h = orbit.altitude_km;
    let s = re * elevation_deg.to_radians().sin();
    (s * s + 2.0 * re * h + h * h).sqrt() - s
}

/// Sample an overhead pass at `step_s`, keeping only samples above the mask.
///
/// Samples are placed symmetrically about culmination, so the peak sample
/// always sits exactly at `max_elevation_deg`. `t_s` counts from the first
/// emitted sample.
pub fn propagate_pass(
    orbit: &OrbitConfig,
    station: &StationConfig,
    step_s: f64,
) -> Result<Pass, GeometryError> {
    orbit.validate()?;
    station.validate()?;
    if !(step_s > 0.0 && step_s.is_finite()) {
        return Err(GeometryError::Step(step_s));
    }
    if orbit.max_elevation_deg < station.elevation_mask_deg {
        return Ok(Pass::NoVisibility);
    }

    let ratio = orbit.earth_radius_km / orbit.orbit_radius_km();
    let omega = orbit.mean_motion();
    let gamma_min = orbit.central_angle(orbit.max_elevation_deg);
    let gamma_mask = orbit.central_angle(station.elevation_mask_deg);
    // Spherical right triangle: cos(gamma) = cos(gamma_min) * cos(omega * t).
    let half_window = (gamma_mask.cos() / gamma_min.cos()).clamp(-1.0, 1.0).acos() / omega;
    let half_steps = (half_window / step_s).floor() as i64;

    let mut samples = Vec::with_capacity((2 * half_steps + 1) as usize);
    for k in -half_steps..=half_steps {
        let tc = k as f64 * step_s;
        let (sin_a, cos_a) = (omega * tc).sin_cos();
        // Sub-satellite unit vector in a frame with the station on +x, east +y, north +z.
        let px = cos_a * gamma_min.cos();
        let py = cos_a * gamma_min.sin();
        let pz = sin_a;
        let horiz = (py * py + pz * pz).sqrt();
        let elevation = (px - ratio)
            .atan2(horiz)
            .to_degrees()
            .min(orbit.max_elevation_deg);
        if elevation < station.elevation_mask_deg {
            continue;
        }
        let azimuth = py.atan2(pz).to_degrees().rem_euclid(360.0);
        samples.push(PassSample {
            t_s: (k + half_steps) as f64 * step_s,
            elevation_deg: elevation,
            azimuth_deg: azimuth,
            slant_range_km: slant_range_unchecked(elevation, orbit),
        });
    }
    if samples.is_empty() {
        return Ok(Pass::NoVisibility);
    }
    Ok(Pass::Visible(samples))
}

/// Flat-top footprint loss: `-20 log10(min(1, D_rx / (theta * L)))`.
pub fn geometric_loss_db(
    slant_range_km: f64,
    divergence_full_angle_rad: f64,
    aperture_diameter_m: f64,
) -> Result<f64, GeometryError> {
    if !(divergence_full_angle_rad > 0.0) {
        return Err(GeometryError::Divergence(divergence_full_angle_rad));
    }
    let footprint_m = divergence_full_angle_rad * slant_range_km * 1e3;
    let captured = (aperture_diameter_m / footprint_m).min(1.0);
    Ok(-20.0 * captured.log10())
}

/// Airmass-scaled absorption, `zenith_loss / sin(elevation)`.
pub fn atmospheric_loss_db(elevation_deg: f64, zenith_atm_loss_db: f64) -> Result<f64, GeometryError> {
    if zenith_atm_loss_db == 0.0 {
        return Ok(0.0);
    }
    if elevation_deg <= 0.0 {
        return Err(GeometryError::Airmass(elevation_deg));
    }
    Ok(zenith_atm_loss_db / elevation_deg.to_radians().sin())
}

/// Total static loss for one pass sample, dB (always >= 0).
pub fn static_loss_db(
    sample: &PassSample,
    divergence_full_angle_rad: f64,
    station: &StationConfig,
    zenith_atm_loss_db: f64,
) -> Result<f64, GeometryError> {
    let geo = geometric_loss_db(
        sample.slant_range_km,
        divergence_full_angle_rad,
        station.aperture_diameter_m,
    )?;
    let atm = atmospheric_loss_db(sample.elevation_deg, zenith_atm_loss_db.max(0.0))?;
    Ok(geo + atm)
}

/// Linear interpolation of the pass profile at `t_s` (clamped to the pass window).
pub fn interpolate(samples: &[PassSample], t_s: f64) -> Option<PassSample> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t_s <= first.t_s {
        return Some(*first);
    }
    if t_s >= last.t_s {
        return Some(*last);
    }
    let idx = samples.partition_point(|s| s.t_s <= t_s);
    let (a, b) = (samples[idx - 1], samples[idx]);
    let w = (t_s - a.t_s) / (b.t_s - a.t_s);
    let lerp = |x: f64, y: f64| x + w * (y - x);
    Some(PassSample {
        t_s,
        elevation_deg: lerp(a.elevation_deg, b.elevation_deg),
        azimuth_deg: lerp(a.azimuth_deg, b.azimuth_deg),
        slant_range_km: lerp(a.slant_range_km, b.slant_range_km),
    })
}

pub const PASS_CSV_HEADER: &str = "t_s,elevation_deg,azimuth_deg,slant_range_km";

pub fn write_pass_csv<W: Write>(samples: &[PassSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PASS_CSV_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            s.t_s, s.elevation_deg, s.azimuth_deg, s.slant_range_km
        )?;
    }
    Ok(())
}
