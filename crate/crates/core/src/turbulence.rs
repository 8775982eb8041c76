//! Atmospheric turbulence: Fried-parameter scaling, Kolmogorov phase screens,
//! frozen-flow evolution and lognormal intensity fading with multi-beam
//! averaging.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::screen::{ScreenError, WavefrontScreen};
use crate::seed;

/// Kolmogorov phase PSD constant: `Phi(f) = C r0^{-5/3} f^{-11/3}`, f in cycles/m.
pub const KOLMOGOROV_PSD_CONSTANT: f64 = 0.022_895_587_108_555_2;

/// Structure-function prefactor: `D(r) = 6.88 (r / r0)^{5/3}`.
pub const KOLMOGOROV_SF_PREFACTOR: f64 = 6.883_877_182_293_81;

/// Subharmonic levels added below the FFT fundamental.
pub const SUBHARMONIC_LEVELS: u32 = 3;

/// Largest log-domain variance the lognormal parameterisation accepts.
pub const MAX_LOG_VARIANCE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TurbulenceError {
    #[error("zenith angle {0} deg outside [0, 90)")]
    ZenithAngle(f64),
    #[error("{0} must be positive and finite, got {1}")]
    NonPositive(&'static str, f64),
    #[error("scintillation index {index} needs log-variance {log_variance:.3} > {MAX_LOG_VARIANCE}")]
    Scintillation { index: f64, log_variance: f64 },
    #[error("mean transmittance {0} outside (0, 1]")]
    MeanTransmittance(f64),
    #[error(transparent)]
    Screen(#[from] ScreenError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceProfile {
    pub r0_zenith_m: f64,
    pub reference_wavelength_m: f64,
    pub wind_speed_mps: f64,
    pub scintillation_index_zenith: f64,
}

impl Default for TurbulenceProfile {
    fn default() -> Self {
        Self {
            r0_zenith_m: 0.05,
            reference_wavelength_m: 500e-9,
            wind_speed_mps: 10.0,
            scintillation_index_zenith: 0.3,
        }
    }
}

impl TurbulenceProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.r0_zenith_m > 0.0 && self.r0_zenith_m.is_finite()) {
            errs.push(format!("r0_zenith_m must be positive, got {}", self.r0_zenith_m));
        }
        if !(self.reference_wavelength_m > 0.0 && self.reference_wavelength_m.is_finite()) {
            errs.push(format!(
                "reference_wavelength_m must be positive, got {}",
                self.reference_wavelength_m
            ));
        }
        if !(self.wind_speed_mps >= 0.0 && self.wind_speed_mps.is_finite()) {
            errs.push(format!("wind_speed_mps must be >= 0, got {}", self.wind_speed_mps));
        }
        if !(self.scintillation_index_zenith >= 0.0 && self.scintillation_index_zenith.is_finite()) {
            errs.push(format!(
                "scintillation_index_zenith must be >= 0, got {}",
                self.scintillation_index_zenith
            ));
        }
        errs
    }

    /// Weak-turbulence scaling of the scintillation index with zenith angle,
    /// `sigma_I^2(zeta) = sigma_I^2(0) sec(zeta)^{11/6}`.
    pub fn scintillation_index(&self, zenith_angle_deg: f64) -> f64 {
        let c = zenith_angle_deg.to_radians().cos().max(1e-3);
        self.scintillation_index_zenith * c.powf(-11.0 / 6.0)
    }
}

/// Fried parameter at `wavelength_m` and zenith angle.
pub fn fried_parameter(
    profile: &TurbulenceProfile,
    zenith_angle_deg: f64,
    wavelength_m: f64,
) -> Result<f64, TurbulenceError> {
    if !(0.0..90.0).contains(&zenith_angle_deg) {
        return Err(TurbulenceError::ZenithAngle(zenith_angle_deg));
    }
    if !(wavelength_m > 0.0 && wavelength_m.is_finite()) {
        return Err(TurbulenceError::NonPositive("wavelength_m", wavelength_m));
    }
    if !(profile.r0_zenith_m > 0.0 && profile.reference_wavelength_m > 0.0) {
        return Err(TurbulenceError::NonPositive("r0_zenith_m", profile.r0_zenith_m));
    }
    let cz = zenith_angle_deg.to_radians().cos();
    Ok(profile.r0_zenith_m
        * (wavelength_m / profile.reference_wavelength_m).powf(1.2)
        * cz.powf(0.6))
}

fn phase_psd(f: f64, r0_m: f64) -> f64 {
    if f == 0.0 {
        0.0
    } else {
        KOLMOGOROV_PSD_CONSTANT * r0_m.powf(-5.0 / 3.0) * f.powf(-11.0 / 3.0)
    }
}

/// Mean of the phase PSD over the square frequency cell of side `d` centred
/// on `(fx, fy)`, by midpoint sampling.
fn cell_mean_psd(fx: f64, fy: f64, d: f64, r0_m: f64) -> f64 {
    const M: usize = 16;
    let mut acc = 0.0;
    for iy in 0..M {
        let y = fy + ((iy as f64 + 0.5) / M as f64 - 0.5) * d;
        for ix in 0..M {
            let x = fx + ((ix as f64 + 0.5) / M as f64 - 0.5) * d;
            acc += phase_psd((x * x + y * y).sqrt(), r0_m);
        }
    }
    acc / (M * M) as f64
}

/// Kolmogorov phase screen by the FFT spectral method plus three levels of
/// subharmonics whose weights are the PSD averaged over each subharmonic
/// cell. The screen is zero-mean over the grid and its pupil is the
/// inscribed circle.
pub fn generate_phase_screen(
    grid_n: usize,
    pixel_m: f64,
    r0_m: f64,
    seed: u64,
) -> Result<WavefrontScreen, TurbulenceError> {
    if grid_n < 16 || !grid_n.is_power_of_two() {
        return Err(ScreenError::GridSize(grid_n).into());
    }
    if !(pixel_m > 0.0 && pixel_m.is_finite()) {
        return Err(TurbulenceError::NonPositive("pixel_m", pixel_m));
    }
    if !(r0_m > 0.0) {
        return Err(TurbulenceError::NonPositive("r0_m", r0_m));
    }
    let n = grid_n;
    let extent = n as f64 * pixel_m;
    let df = 1.0 / extent;
    let mut rng = seed::stream_rng(seed);

    // High-frequency part: random spectrum shaped by sqrt(PSD), summed by an inverse FFT.
    let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
    for ky in 0..n {
        let fy = signed_index(ky, n) as f64 * df;
        for kx in 0..n {
            let fx = signed_index(kx, n) as f64 * df;
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let amp = phase_psd((fx * fx + fy * fy).sqrt(), r0_m).sqrt() * df;
            spec[ky * n + kx] = Complex64::new(a * amp, b * amp);
        }
    }
    inverse_fft_2d(&mut spec, n);
    let mut phase: Vec<f64> = spec.iter().map(|c| c.re).collect();

    // Low-frequency part: 3x3 subharmonic grids at 1/3, 1/9 and 1/27 of the fundamental.
    let coords: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * pixel_m).collect();
    let mut low = vec![0.0; n * n];
    for level in 1..=SUBHARMONIC_LEVELS {
        let dfp = df / 3f64.powi(level as i32);
        for jy in -1i32..=1 {
            for jx in -1i32..=1 {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                if jx == 0 && jy == 0 {
                    continue;
                }
                let (fx, fy) = (jx as f64 * dfp, jy as f64 * dfp);
                let amp = cell_mean_psd(fx, fy, dfp, r0_m).sqrt() * dfp;
                let c = Complex64::new(a * amp, b * amp);
                let ex: Vec<Complex64> = coords
                    .iter()
                    .map(|x| Complex64::from_polar(1.0, 2.0 * PI * fx * x))
                    .collect();
                for (row, y) in coords.iter().enumerate() {
                    let cy = c * Complex64::from_polar(1.0, 2.0 * PI * fy * y);
                    let out = &mut low[row * n..(row + 1) * n];
                    for (o, e) in out.iter_mut().zip(&ex) {
                        *o += (cy * e).re;
                    }
                }
            }
        }
    }
    for (p, l) in phase.iter_mut().zip(&low) {
        *p += l;
    }
    let mean = phase.iter().sum::<f64>() / (n * n) as f64;
    phase.iter_mut().for_each(|p| *p -= mean);

    let mut screen = WavefrontScreen::new(n, pixel_m, phase);
    screen.r0_m = r0_m;
    screen.seed = seed;
    Ok(screen)
}

fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn inverse_fft_2d(data: &mut [Complex64], n: usize) {
    let fft = FftPlanner::new().plan_fft_inverse(n);
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
}

/// Ensemble phase structure function `D(r) = <(phi(x + r) - phi(x))^2>` at
/// each separation in pixels, averaged over x and y displacements of every
/// screen without wraparound.
pub fn structure_function(screens: &[WavefrontScreen], separations_px: &[usize]) -> Vec<f64> {
    separations_px
        .iter()
        .map(|&r| {
            let (mut sum, mut count) = (0.0, 0usize);
            for s in screens {
                let n = s.grid_n();
                if r == 0 || r >= n {
                    continue;
                }
                let p = s.phase();
                for row in 0..n {
                    for col in 0..n - r {
                        sum += (p[row * n + col + r] - p[row * n + col]).powi(2);
                    }
                }
                for row in 0..n - r {
                    for col in 0..n {
                        sum += (p[(row + r) * n + col] - p[row * n + col]).powi(2);
                    }
                }
                count += 2 * n * (n - r);
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// `6.88 (r / r0)^(5/3)`.
pub fn kolmogorov_structure_function(r_m: f64, r0_m: f64) -> f64 {
    KOLMOGOROV_SF_PREFACTOR * (r_m / r0_m).powf(5.0 / 3.0)
}

/// Taylor frozen flow: translate the screen by `wind_speed * dt` along +x
/// with wraparound. Sub-pixel shifts interpolate linearly; shifts within
/// 1e-9 px of an integer are exact column permutations.
pub fn evolve_screen(
    screen: &WavefrontScreen,
    wind_speed_mps: f64,
    dt_s: f64,
) -> Result<WavefrontScreen, TurbulenceError> {
    if !(dt_s >= 0.0) {
        return Err(TurbulenceError::NonPositive("dt_s", dt_s));
    }
    let shift_px = frozen_flow_shift_px(screen.pixel_m(), wind_speed_mps, dt_s);
    if shift_px == 0.0 {
        return Ok(screen.clone());
    }
    let out = screen.window(-shift_px, 0, screen.grid_n(), Some(screen.pupil_diameter_m()))?;
    Ok(out)
}

/// Translation in pixels after `dt_s`, snapped to an integer when within 1e-9.
pub fn frozen_flow_shift_px(pixel_m: f64, wind_speed_mps: f64, dt_s: f64) -> f64 {
    let s = wind_speed_mps * dt_s / pixel_m;
    if (s - s.round()).abs() < 1e-9 {
        s.round()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmittanceSeries {
    pub rate_hz: f64,
    pub samples: Vec<f64>,
    pub mean_transmittance: f64,
}

impl TransmittanceSeries {
    pub fn sample_mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Empirical normalised variance `var(I) / mean(I)^2`.
    pub fn normalized_variance(&self) -> f64 {
        let m = self.sample_mean();
        let var = self.samples.iter().map(|s| (s - m).powi(2)).sum::<f64>()
            / self.samples.len().max(1) as f64;
        var / (m * m)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_s,transmittance")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 / self.rate_hz, s)?;
        }
        Ok(())
    }
}

/// Lognormal intensity fading averaged over `beam_count` independent beams.
///
/// Each beam draw has mean `mean_eta` and normalised variance `scint_index`.
/// Samples are capped at 1 (a passive channel cannot amplify); for the small
/// transmittances of a space link the cap is never active.
pub fn scintillation_series(
    mean_eta: f64,
    scint_index: f64,
    rate_hz: f64,
    duration_s: f64,
    beam_count: usize,
    seed: u64,
) -> Result<TransmittanceSeries, TurbulenceError> {
    if !(mean_eta > 0.0 && mean_eta <= 1.0) {
        return Err(TurbulenceError::MeanTransmittance(mean_eta));
    }
    if !(scint_index >= 0.0 && scint_index.is_finite()) {
        return Err(TurbulenceError::NonPositive("scint_index", scint_index));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(TurbulenceError::NonPositive("rate_hz", rate_hz));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(TurbulenceError::NonPositive("duration_s", duration_s));
    }
    if beam_count == 0 {
        return Err(TurbulenceError::NonPositive("beam_count", 0.0));
    }
    let log_variance = (1.0 + scint_index).ln();
    if log_variance > MAX_LOG_VARIANCE {
        return Err(TurbulenceError::Scintillation {
            index: scint_index,
            log_variance,
        });
    }
    let sigma = log_variance.sqrt();
    let len = ((rate_hz * duration_s).round() as usize).max(1);
    let mut rng = seed::stream_rng(seed);
    let samples = (0..len)
        .map(|_| {
            if sigma == 0.0 {
                return mean_eta;
            }
            let sum: f64 = (0..beam_count)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (sigma * z - 0.5 * log_variance).exp()
                })
                .sum();
            (mean_eta * sum / beam_count as f64).min(1.0)
        })
        .collect();
    Ok(TransmittanceSeries {
        rate_hz,
        samples,
        mean_transmittance: mean_eta,
    })
}
