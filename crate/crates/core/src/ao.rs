//! Adaptive optics: Shack-Hartmann slope sensing, least-squares modal
//! reconstruction, modal tip-tilt/DM correction, single-mode-fibre coupling
//! and the integrator closed loop that ties them together.
//!
//! Coefficients are in radians rms of Noll-ordered Zernike modes with piston
//! excluded; index `k` holds mode `j = k + 2`. Modes 2 and 3 are driven by the
//! fast steering mirror, the rest by the deformable mirror.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::screen::WavefrontScreen;
use crate::seed;
use crate::zernike::ZernikeBasis;

/// Fibre mode field radius over pupil radius that maximises coupling of a
/// flat, unobstructed circular pupil (amplitude `exp(-r^2 / w^2)`).
pub const OPTIMAL_MODE_RADIUS_RATIO: f64 = 0.892_135_1;

/// Reconstruction fails when the response matrix condition number exceeds this.
pub const MAX_CONDITION_NUMBER: f64 = 1e10;

#[derive(Debug, Error, PartialEq)]
pub enum AoError {
    #[error("{subap_n} subapertures do not divide a {grid_n} px grid into >= 2 px cells")]
    SubapertureGrid { subap_n: usize, grid_n: usize },
    #[error("{modes} modes need at least {modes} valid subapertures, have {valid}")]
    TooManyModes { modes: usize, valid: usize },
    #[error("response matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("loop gain {0} outside (0, 1]")]
    Gain(f64),
    #[error("loop rate {0} Hz must be positive")]
    Rate(f64),
    #[error("correction has {len} modes but the mirror drives {max}")]
    CorrectionLength { len: usize, max: usize },
    #[error("screen geometry differs from the one the loop was built for")]
    Geometry,
    #[error("noise must be >= 0, got {0}")]
    Noise(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub rate_hz: f64,
    pub gain: f64,
    pub dm_mode_count: usize,
    #[serde(default = "default_subapertures")]
    pub subapertures: usize,
    #[serde(default)]
    pub wfs_noise_rad: f64,
    #[serde(default = "default_ratio")]
    pub mode_radius_ratio: f64,
}

fn default_subapertures() -> usize {
    16
}

fn default_ratio() -> f64 {
    OPTIMAL_MODE_RADIUS_RATIO
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rate_hz: 2000.0,
            gain: 0.5,
            dm_mode_count: 36,
            subapertures: default_subapertures(),
            wfs_noise_rad: 0.0,
            mode_radius_ratio: default_ratio(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), AoError> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(AoError::Gain(self.gain));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(AoError::Rate(self.rate_hz));
        }
        if !(self.wfs_noise_rad >= 0.0) {
            return Err(AoError::Noise(self.wfs_noise_rad));
        }
        Ok(())
    }
}

/// Pupil sampling shared by a sensor, reconstructor and mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilGeometry {
    pub grid_n: usize,
    pub pixel_m: f64,
    pub pupil_diameter_m: f64,
}

impl PupilGeometry {
    pub fn of(screen: &WavefrontScreen) -> Self {
        Self {
            grid_n: screen.grid_n(),
            pixel_m: screen.pixel_m(),
            pupil_diameter_m: screen.pupil_diameter_m(),
        }
    }

    fn flat_screen(&self) -> WavefrontScreen {
        WavefrontScreen::flat(self.grid_n, self.pixel_m)
            .with_pupil(self.pupil_diameter_m)
            .expect("geometry taken from a valid screen")
    }
}

/// Per-subaperture mean phase gradients in radians per subaperture width.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeMeasurement {
    pub subap_n: usize,
    pub x_slopes: Vec<f64>,
    pub y_slopes: Vec<f64>,
    pub validity_mask: Vec<bool>,
    pub geometry: PupilGeometry,
}

impl SlopeMeasurement {
    pub fn valid_count(&self) -> usize {
        self.validity_mask.iter().filter(|&&v| v).count()
    }

    /// Valid x slopes followed by valid y slopes.
    fn stacked(&self) -> Vec<f64> {
        let xs = self.x_slopes.iter().zip(&self.validity_mask).filter(|(_, &v)| v);
        let ys = self.y_slopes.iter().zip(&self.validity_mask).filter(|(_, &v)| v);
        xs.chain(ys).map(|(s, _)| *s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModalCoefficients(pub Vec<f64>);

impl ModalCoefficients {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Coefficient of Noll mode `j` (>= 2).
    pub fn noll(&self, j: usize) -> f64 {
        self.0.get(j - 2).copied().unwrap_or(0.0)
    }

    /// Steering-mirror part (Noll 2 and 3).
    pub fn tip_tilt(&self) -> [f64; 2] {
        [self.noll(2), self.noll(3)]
    }

    /// Deformable-mirror part (Noll 4 and up).
    pub fn dm_modes(&self) -> &[f64] {
        self.0.get(2..).unwrap_or(&[])
    }
}

fn check_subapertures(grid_n: usize, subap_n: usize) -> Result<usize, AoError> {
    if subap_n == 0 || !grid_n.is_multiple_of(subap_n) || grid_n / subap_n < 2 {
        return Err(AoError::SubapertureGrid { subap_n, grid_n });
    }
    Ok(grid_n / subap_n)
}

fn measure_noiseless(screen: &WavefrontScreen, subap_n: usize) -> Result<SlopeMeasurement, AoError> {
    let grid_n = screen.grid_n();
    let p = check_subapertures(grid_n, subap_n)?;
    let mask = screen.mask();
    let phase = screen.phase();
    let cells = subap_n * subap_n;
    let mut xs = vec![0.0; cells];
    let mut ys = vec![0.0; cells];
    let mut valid = vec![false; cells];
    for sr in 0..subap_n {
        for sc in 0..subap_n {
            let (r0, c0) = (sr * p, sc * p);
            let inside = (r0..r0 + p)
                .flat_map(|r| (c0..c0 + p).map(move |c| r * grid_n + c))
                .filter(|&i| mask[i])
                .count();
            if 2 * inside < p * p {
                continue;
            }
            let (mut gx, mut nx, mut gy, mut ny) = (0.0, 0usize, 0.0, 0usize);
            for r in r0..r0 + p {
                for c in c0..c0 + p {
                    let i = r * grid_n + c;
                    if !mask[i] {
                        continue;
                    }
                    if c + 1 < c0 + p && mask[i + 1] {
                        gx += phase[i + 1] - phase[i];
                        nx += 1;
                    }
                    if r + 1 < r0 + p && mask[i + grid_n] {
                        gy += phase[i + grid_n] - phase[i];
                        ny += 1;
                    }
                }
            }
            if nx == 0 || ny == 0 {
                continue;
            }
            let cell = sr * subap_n + sc;
            valid[cell] = true;
            xs[cell] = gx / nx as f64 * p as f64;
            ys[cell] = gy / ny as f64 * p as f64;
        }
    }
    Ok(SlopeMeasurement {
        subap_n,
        x_slopes: xs,
        y_slopes: ys,
        validity_mask: valid,
        geometry: PupilGeometry::of(screen),
    })
}

fn add_noise(m: &mut SlopeMeasurement, noise_rad: f64, rng: &mut impl Rng) {
    if noise_rad == 0.0 {
        return;
    }
    for i in 0..m.validity_mask.len() {
        if m.validity_mask[i] {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            m.x_slopes[i] += noise_rad * nx;
            m.y_slopes[i] += noise_rad * ny;
        }
    }
}

/// Shack-Hartmann measurement: mean finite-difference gradient of the phase
/// inside each subaperture plus Gaussian noise of `noise_rad` per slope.
/// A subaperture is valid when at least half its pixels lie in the pupil.
pub fn shwfs_measure(
    screen: &WavefrontScreen,
    subap_n: usize,
    noise_rad: f64,
    seed: u64,
) -> Result<SlopeMeasurement, AoError> {
    if !(noise_rad >= 0.0) {
        return Err(AoError::Noise(noise_rad));
    }
    let mut m = measure_noiseless(screen, subap_n)?;
    add_noise(&mut m, noise_rad, &mut seed::stream_rng(seed));
    Ok(m)
}

/// Least-squares modal reconstructor built from the numerically sensed
/// gradients of each Zernike mode.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    geometry: PupilGeometry,
    subap_n: usize,
    validity: Vec<bool>,
    pinv: DMatrix<f64>,
    condition: f64,
}

impl Reconstructor {
    pub fn new(geometry: PupilGeometry, subap_n: usize, mode_count: usize) -> Result<Self, AoError> {
        let basis = ZernikeBasis::new(
            geometry.grid_n,
            geometry.pixel_m,
            geometry.pupil_diameter_m,
            mode_count,
        );
        Self::with_basis(geometry, subap_n, &basis)
    }

    fn with_basis(geometry: PupilGeometry, subap_n: usize, basis: &ZernikeBasis) -> Result<Self, AoError> {
        let mode_count = basis.len();
        let flat = geometry.flat_screen();
        let probe = measure_noiseless(&flat, subap_n)?;
        let valid = probe.valid_count();
        if mode_count == 0 || mode_count > valid {
            return Err(AoError::TooManyModes {
                modes: mode_count,
                valid,
            });
        }
        let rows = 2 * valid;
        let mut response = DMatrix::<f64>::zeros(rows, mode_count);
        for k in 0..mode_count {
            let mut unit = vec![0.0; mode_count];
            unit[k] = 1.0;
            let mode_screen = basis.screen(&unit);
            let m = measure_noiseless(&mode_screen, subap_n)?;
            for (r, s) in m.stacked().into_iter().enumerate() {
                response[(r, k)] = s;
            }
        }
        let (pinv, condition) = pseudo_inverse(response)?;
        Ok(Self {
            geometry,
            subap_n,
            validity: probe.validity_mask,
            pinv,
            condition,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.pinv.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn reconstruct(&self, slopes: &SlopeMeasurement) -> Result<ModalCoefficients, AoError> {
        if slopes.geometry != self.geometry
            || slopes.subap_n != self.subap_n
            || slopes.validity_mask != self.validity
        {
            return Err(AoError::Geometry);
        }
        let s = DVector::from_vec(slopes.stacked());
        Ok(ModalCoefficients((&self.pinv * s).iter().copied().collect()))
    }
}

fn pseudo_inverse(response: DMatrix<f64>) -> Result<(DMatrix<f64>, f64), AoError> {
    let svd = response.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION_NUMBER) {
        return Err(AoError::RankDeficient { condition });
    }
    let pinv = svd
        .pseudo_inverse(smax * 1e-12)
        .map_err(|_| AoError::RankDeficient { condition })?;
    Ok((pinv, condition))
}

/// Least-squares fit of `mode_count` Zernike modes to measured slopes.
pub fn reconstruct(slopes: &SlopeMeasurement, mode_count: usize) -> Result<ModalCoefficients, AoError> {
    Reconstructor::new(slopes.geometry, slopes.subap_n, mode_count)?.reconstruct(slopes)
}

/// Modal corrector: a steering mirror for tip/tilt and a deformable mirror
/// that reproduces the next `dm_mode_count - 2` Zernike modes exactly.
#[derive(Debug, Clone)]
pub struct ModalMirror {
    basis: ZernikeBasis,
    pupil_idx: Vec<usize>,
}

impl ModalMirror {
    pub fn new(geometry: PupilGeometry, mode_count: usize) -> Self {
        let basis = ZernikeBasis::new(
            geometry.grid_n,
            geometry.pixel_m,
            geometry.pupil_diameter_m,
            mode_count,
        );
        Self::from_basis(basis, &geometry.flat_screen())
    }

    fn from_basis(basis: ZernikeBasis, screen: &WavefrontScreen) -> Self {
        let pupil_idx = screen
            .mask()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        Self { basis, pupil_idx }
    }

    pub fn mode_count(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &ZernikeBasis {
        &self.basis
    }

    pub fn apply(&self, screen: &WavefrontScreen, correction: &ModalCoefficients) -> Result<WavefrontScreen, AoError> {
        if correction.len() > self.basis.len() {
            return Err(AoError::CorrectionLength {
                len: correction.len(),
                max: self.basis.len(),
            });
        }
        if !self.basis.matches(screen) {
            return Err(AoError::Geometry);
        }
        let mut out = screen.clone();
        let phase = out.phase_mut();
        for (k, &c) in correction.0.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let z = self.basis.mode(k);
            for &i in &self.pupil_idx {
                phase[i] -= c * z[i];
            }
        }
        Ok(out)
    }
}

/// `screen - sum_k c_k Z_{k+2}` over the pupil; pixels outside are untouched.
pub fn apply_correction(screen: &WavefrontScreen, correction: &ModalCoefficients) -> Result<WavefrontScreen, AoError> {
    let basis = ZernikeBasis::for_screen(screen, correction.len());
    ModalMirror::from_basis(basis, screen).apply(screen, correction)
}

/// Least-squares projection of the pupil phase onto piston plus `basis`.
/// Returns the non-piston coefficients.
pub fn fit_modes(screen: &WavefrontScreen, basis: &ZernikeBasis) -> ModalCoefficients {
    let idx: Vec<usize> = (0..screen.mask().len()).filter(|&i| screen.mask()[i]).collect();
    let cols = basis.len() + 1;
    let a = DMatrix::from_fn(idx.len(), cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            basis.mode(c - 1)[idx[r]]
        }
    });
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| screen.phase()[i]));
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("SVD was computed with U and V");
    ModalCoefficients(x.iter().skip(1).copied().collect())
}

/// Gaussian fibre mode back-propagated to the pupil, cached per geometry.
#[derive(Debug, Clone)]
struct FibreMode {
    weights: Vec<(usize, f64)>,
    norm: f64,
}

impl FibreMode {
    fn new(screen: &WavefrontScreen, mode_radius_ratio: f64) -> Self {
        let radius = screen.pupil_diameter_m() / 2.0;
        let w = mode_radius_ratio * radius;
        let da = screen.pixel_m().powi(2);
        let mut weights = Vec::with_capacity(screen.pupil_pixel_count());
        for row in 0..screen.grid_n() {
            for col in 0..screen.grid_n() {
                let i = row * screen.grid_n() + col;
                if screen.mask()[i] {
                    let (x, y) = screen.coords(row, col);
                    weights.push((i, (-(x * x + y * y) / (w * w)).exp()));
                }
            }
        }
        let pupil_area = weights.len() as f64 * da;
        // |int_pupil M|^2 / (A_pupil * int_plane |M|^2), int_plane |M|^2 = pi w^2 / 2
        let norm = da * da / (pupil_area * PI * w * w / 2.0);
        Self { weights, norm }
    }

    fn eta(&self, phase: &[f64]) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for &(i, m) in &self.weights {
            let (s, c) = phase[i].sin_cos();
            re += m * c;
            im += m * s;
        }
        ((re * re + im * im) * self.norm).clamp(0.0, 1.0)
    }
}

/// Single-mode-fibre coupling efficiency of the pupil field `exp(i phase)`
/// against a Gaussian mode whose field radius is `mode_radius_ratio` times
/// the pupil radius.
pub fn coupling_efficiency(screen: &WavefrontScreen, mode_radius_ratio: f64) -> f64 {
    if !(mode_radius_ratio > 0.0) || screen.pupil_pixel_count() == 0 {
        return 0.0;
    }
    FibreMode::new(screen, mode_radius_ratio).eta(screen.phase())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopStep {
    pub step: usize,
    pub residual_rms_rad: f64,
    pub coupling_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopTelemetry {
    pub steps: Vec<LoopStep>,
}

impl LoopTelemetry {
    pub fn mean_coupling(&self) -> f64 {
        self.steps.iter().map(|s| s.coupling_eta).sum::<f64>() / self.steps.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,residual_rms_rad,coupling_eta")?;
        for s in &self.steps {
            writeln!(out, "{},{},{}", s.step, s.residual_rms_rad, s.coupling_eta)?;
        }
        Ok(())
    }
}

/// Stateful integrator loop with a one-frame delay: the correction applied
/// to frame `t` was computed from the residual of frame `t - 1`.
#[derive(Debug, Clone)]
pub struct AdaptiveOptics {
    cfg: LoopConfig,
    subap_n: usize,
    noise_rad: f64,
    reconstructor: Reconstructor,
    mirror: ModalMirror,
    fibre: FibreMode,
    command: ModalCoefficients,
    rng: ChaCha8Rng,
    step: usize,
}

impl AdaptiveOptics {
    pub fn new(
        geometry: PupilGeometry,
        cfg: &LoopConfig,
        subap_n: usize,
        noise_rad: f64,
        seed: u64,
    ) -> Result<Self, AoError> {
        cfg.validate()?;
        if !(noise_rad >= 0.0) {
            return Err(AoError::Noise(noise_rad));
        }
        let basis = ZernikeBasis::new(
            geometry.grid_n,
            geometry.pixel_m,
            geometry.pupil_diameter_m,
            cfg.dm_mode_count,
        );
        let reconstructor = Reconstructor::with_basis(geometry, subap_n, &basis)?;
        let flat = geometry.flat_screen();
        let fibre = FibreMode::new(&flat, cfg.mode_radius_ratio);
        let mirror = ModalMirror::from_basis(basis, &flat);
        Ok(Self {
            cfg: cfg.clone(),
            subap_n,
            noise_rad,
            reconstructor,
            mirror,
            fibre,
            command: ModalCoefficients::zeros(cfg.dm_mode_count),
            rng: seed::stream_rng(seed),
            step: 0,
        })
    }

    pub fn command(&self) -> &ModalCoefficients {
        &self.command
    }

    /// Flatten the mirrors (loop re-initialisation after a link interruption).
    pub fn reset(&mut self) {
        self.command = ModalCoefficients::zeros(self.cfg.dm_mode_count);
    }

    /// Correct one incoming frame, report it, and update the command.
    pub fn step(&mut self, screen: &WavefrontScreen) -> Result<LoopStep, AoError> {
        let residual = self.mirror.apply(screen, &self.command)?;
        let out = LoopStep {
            step: self.step,
            residual_rms_rad: residual.pupil_rms(),
            coupling_eta: self.fibre.eta(residual.phase()),
        };
        let mut slopes = measure_noiseless(&residual, self.subap_n)?;
        add_noise(&mut slopes, self.noise_rad, &mut self.rng);
        let delta = self.reconstructor.reconstruct(&slopes)?;
        for (c, d) in self.command.0.iter_mut().zip(&delta.0) {
            *c += self.cfg.gain * d;
        }
        self.step += 1;
        Ok(out)
    }
}

/// Run the integrator loop over a time sequence of screens sampled at the
/// loop rate.
pub fn run_closed_loop<I>(
    screens: I,
    cfg: &LoopConfig,
    subap_n: usize,
    noise_rad: f64,
    seed: u64,
) -> Result<LoopTelemetry, AoError>
where
    I: IntoIterator<Item = WavefrontScreen>,
{
    cfg.validate()?;
    let mut ao: Option<AdaptiveOptics> = None;
    let mut steps = Vec::new();
    for screen in screens {
        let loop_state = match &mut ao {
            Some(a) => a,
            None => ao.insert(AdaptiveOptics::new(
                PupilGeometry::of(&screen),
                cfg,
                subap_n,
                noise_rad,
                seed,
            )?),
        };
        steps.push(loop_state.step(&screen)?);
    }
    Ok(LoopTelemetry { steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> PupilGeometry {
        PupilGeometry {
            grid_n: 64,
            pixel_m: 0.8 / 64.0,
            pupil_diameter_m: 0.8,
        }
    }

    #[test]
    fn flat_screen_has_zero_slopes() {
        let s = geometry().flat_screen();
        let m = shwfs_measure(&s, 16, 0.0, 1).unwrap();
        assert!(m.valid_count() > 150);
        assert!(m.x_slopes.iter().chain(&m.y_slopes).all(|&v| v == 0.0));
    }

    #[test]
    fn tilt_gives_uniform_slope() {
        let g = geometry();
        let subap_width = g.pupil_diameter_m / 16.0;
        let a = 0.37;
        let s = WavefrontScreen::from_fn(g.grid_n, g.pixel_m, |x, _| a * x / subap_width)
            .with_pupil(g.pupil_diameter_m)
            .unwrap();
        let m = shwfs_measure(&s, 16, 0.0, 1).unwrap();
        for i in 0..m.validity_mask.len() {
            if m.validity_mask[i] {
                assert!((m.x_slopes[i] - a).abs() < 1e-12);
                assert!(m.y_slopes[i].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subapertures_must_divide_grid() {
        let s = geometry().flat_screen();
        assert!(matches!(
            shwfs_measure(&s, 15, 0.0, 1),
            Err(AoError::SubapertureGrid { .. })
        ));
        assert!(shwfs_measure(&s, 64, 0.0, 1).is_err());
    }

    #[test]
    fn zero_slopes_reconstruct_to_zero() {
        let s = geometry().flat_screen();
        let m = shwfs_measure(&s, 16, 0.0, 1).unwrap();
        let c = reconstruct(&m, 20).unwrap();
        assert!(c.0.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn too_many_modes_rejected() {
        let s = geometry().flat_screen();
        let m = shwfs_measure(&s, 4, 0.0, 1).unwrap();
        assert!(matches!(reconstruct(&m, 40), Err(AoError::TooManyModes { .. })));
    }

    #[test]
    fn rank_deficiency_reports_condition() {
        // two modes with identical slope signatures
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5]);
        match pseudo_inverse(d) {
            Err(AoError::RankDeficient { condition }) => assert!(condition > MAX_CONDITION_NUMBER),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let (_, c) = pseudo_inverse(DMatrix::identity(3, 2)).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn zero_correction_is_identity() {
        let g = geometry();
        let s = WavefrontScreen::from_fn(g.grid_n, g.pixel_m, |x, y| x * y * 3.0)
            .with_pupil(g.pupil_diameter_m)
            .unwrap();
        assert_eq!(apply_correction(&s, &ModalCoefficients::zeros(10)).unwrap(), s);
    }

    #[test]
    fn correction_length_checked() {
        let g = geometry();
        let mirror = ModalMirror::new(g, 5);
        let err = mirror.apply(&g.flat_screen(), &ModalCoefficients::zeros(6));
        assert_eq!(err, Err(AoError::CorrectionLength { len: 6, max: 5 }));
    }

    #[test]
    fn gain_validated() {
        let cfg = LoopConfig {
            gain: 1.5,
            ..Default::default()
        };
        let err = run_closed_loop(vec![geometry().flat_screen()], &cfg, 16, 0.0, 1);
        assert_eq!(err.unwrap_err(), AoError::Gain(1.5));
        let cfg = LoopConfig {
            gain: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn coupling_piston_invariant() {
        let g = geometry();
        let a = WavefrontScreen::from_fn(g.grid_n, g.pixel_m, |x, _| 2.0 * x);
        let b = WavefrontScreen::from_fn(g.grid_n, g.pixel_m, |x, _| 2.0 * x + 1.234);
        let (ea, eb) = (coupling_efficiency(&a, 0.9), coupling_efficiency(&b, 0.9));
        assert!((ea - eb).abs() < 1e-12);
    }

    #[test]
    fn modal_accessors() {
        let c = ModalCoefficients(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.tip_tilt(), [1.0, 2.0]);
        assert_eq!(c.dm_modes(), &[3.0, 4.0]);
        assert_eq!(c.noll(5), 4.0);
        assert_eq!(c.noll(30), 0.0);
    }

    #[test]
    fn loop_telemetry_csv() {
        let t = LoopTelemetry {
            steps: vec![LoopStep {
                step: 0,
                residual_rms_rad: 0.5,
                coupling_eta: 0.25,
            }],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,residual_rms_rad,coupling_eta\n0,0.5,0.25\n"
        );
    }
}
