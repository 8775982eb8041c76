//! Zernike polynomials in Noll ordering, normalised to unit rms over the unit disk.

use crate::screen::WavefrontScreen;

/// Radial and azimuthal orders `(n, m)` of Noll index `j >= 1`.
/// Positive `m` selects the cosine term, negative `m` the sine term.
pub fn noll_to_nm(j: usize) -> (u32, i32) {
    assert!(j >= 1, "Noll indices start at 1");
    let mut n = 0usize;
    let mut j1 = j - 1;
    while j1 > n {
        n += 1;
        j1 -= n;
    }
    let m_abs = (n % 2) + 2 * ((j1 + (n + 1) % 2) / 2);
    let m = if j.is_multiple_of(2) { m_abs as i32 } else { -(m_abs as i32) };
    (n as u32, m)
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn radial(n: u32, m: u32, rho: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..=(n - m) / 2 {
        let c = factorial(n - k)
            / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * c * rho.powi((n - 2 * k) as i32);
    }
    acc
}

/// `Z_j(rho, theta)` on the unit disk.
pub fn zernike(j: usize, rho: f64, theta: f64) -> f64 {
    let (n, m) = noll_to_nm(j);
    let ma = m.unsigned_abs();
    let r = radial(n, ma, rho);
    if m == 0 {
        f64::from(n + 1).sqrt() * r
    } else {
        let norm = (2.0 * f64::from(n + 1)).sqrt();
        if m > 0 {
            norm * r * (f64::from(ma) * theta).cos()
        } else {
            norm * r * (f64::from(ma) * theta).sin()
        }
    }
}

/// Sampled Zernike modes `Z_2 .. Z_{mode_count + 1}` over a screen geometry.
#[derive(Debug, Clone)]
pub struct ZernikeBasis {
    grid_n: usize,
    pixel_m: f64,
    pupil_diameter_m: f64,
    modes: Vec<Vec<f64>>,
}

impl ZernikeBasis {
    pub fn new(grid_n: usize, pixel_m: f64, pupil_diameter_m: f64, mode_count: usize) -> Self {
        let radius = pupil_diameter_m / 2.0;
        let c = (grid_n as f64 - 1.0) / 2.0;
        let modes = (0..mode_count)
            .map(|k| {
                let j = k + 2;
                let mut grid = Vec::with_capacity(grid_n * grid_n);
                for row in 0..grid_n {
                    for col in 0..grid_n {
                        let x = (col as f64 - c) * pixel_m / radius;
                        let y = (row as f64 - c) * pixel_m / radius;
                        grid.push(zernike(j, x.hypot(y), y.atan2(x)));
                    }
                }
                grid
            })
            .collect();
        Self {
            grid_n,
            pixel_m,
            pupil_diameter_m,
            modes,
        }
    }

    pub fn for_screen(screen: &WavefrontScreen, mode_count: usize) -> Self {
        Self::new(
            screen.grid_n(),
            screen.pixel_m(),
            screen.pupil_diameter_m(),
            mode_count,
        )
    }

    pub fn matches(&self, screen: &WavefrontScreen) -> bool {
        self.grid_n == screen.grid_n()
            && self.pixel_m == screen.pixel_m()
            && self.pupil_diameter_m == screen.pupil_diameter_m()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Grid of mode index `k` (Noll `j = k + 2`).
    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k]
    }

    /// `sum_k coeffs[k] * Z_{k+2}` on the grid.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_n * self.grid_n];
        for (c, mode) in coeffs.iter().zip(&self.modes) {
            if *c == 0.0 {
                continue;
            }
            for (o, z) in out.iter_mut().zip(mode) {
                *o += c * z;
            }
        }
        out
    }

    /// Screen containing exactly `sum_k coeffs[k] Z_{k+2}` with the given pupil.
    pub fn screen(&self, coeffs: &[f64]) -> WavefrontScreen {
        WavefrontScreen::new(self.grid_n, self.pixel_m, self.synthesize(coeffs))
            .with_pupil(self.pupil_diameter_m)
            .expect("basis pupil fits its own grid")
    }
}
