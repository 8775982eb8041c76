//! Gridded wavefront phase over a circular receive pupil.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("grid size {0} must be a power of two and at least 16")]
    GridSize(usize),
    #[error("pupil diameter {diameter_m} m exceeds grid extent {extent_m} m")]
    PupilTooLarge { diameter_m: f64, extent_m: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("window of {size} px at offset ({x}, {y}) does not fit in a {grid} px grid")]
    Window { size: usize, x: f64, y: usize, grid: usize },
    #[error("screen file: {0}")]
    Io(#[from] io::Error),
}

/// Phase map (radians) on an `n x n` grid, row-major with `x` along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefrontScreen {
    grid_n: usize,
    pixel_m: f64,
    pupil_diameter_m: f64,
    phase: Vec<f64>,
    mask: Vec<bool>,
    /// Generation metadata kept for the binary file header.
    pub r0_m: f64,
    pub seed: u64,
}

impl WavefrontScreen {
    /// Build a screen whose pupil is the circle inscribed in the grid.
    pub fn new(grid_n: usize, pixel_m: f64, phase: Vec<f64>) -> Self {
        assert_eq!(phase.len(), grid_n * grid_n, "phase grid must be n x n");
        let diameter = grid_n as f64 * pixel_m;
        Self {
            grid_n,
            pixel_m,
            pupil_diameter_m: diameter,
            mask: circular_mask(grid_n, pixel_m, diameter),
            phase,
            r0_m: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn flat(grid_n: usize, pixel_m: f64) -> Self {
        Self::new(grid_n, pixel_m, vec![0.0; grid_n * grid_n])
    }

    /// Build a screen by evaluating `f(x_m, y_m)` at pixel centres
    /// (coordinates relative to the grid centre).
    pub fn from_fn(grid_n: usize, pixel_m: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut phase = Vec::with_capacity(grid_n * grid_n);
        for row in 0..grid_n {
            for col in 0..grid_n {
                let (x, y) = pixel_centre(grid_n, pixel_m, row, col);
                phase.push(f(x, y));
            }
        }
        Self::new(grid_n, pixel_m, phase)
    }

    /// Replace the pupil with a centred circle of `diameter_m`.
    pub fn with_pupil(mut self, diameter_m: f64) -> Result<Self, ScreenError> {
        let extent = self.extent_m();
        if !(diameter_m > 0.0) {
            return Err(ScreenError::NonPositive("pupil diameter"));
        }
        if diameter_m > extent * (1.0 + 1e-12) {
            return Err(ScreenError::PupilTooLarge {
                diameter_m,
                extent_m: extent,
            });
        }
        self.pupil_diameter_m = diameter_m;
        self.mask = circular_mask(self.grid_n, self.pixel_m, diameter_m);
        Ok(self)
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn pixel_m(&self) -> f64 {
        self.pixel_m
    }

    pub fn extent_m(&self) -> f64 {
        self.grid_n as f64 * self.pixel_m
    }

    pub fn pupil_diameter_m(&self) -> f64 {
        self.pupil_diameter_m
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn phase_mut(&mut self) -> &mut [f64] {
        &mut self.phase
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.phase[row * self.grid_n + col]
    }

    /// Pupil-plane coordinates of a pixel centre, metres from the grid centre.
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        pixel_centre(self.grid_n, self.pixel_m, row, col)
    }

    pub fn pupil_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean phase over the pupil.
    pub fn pupil_mean(&self) -> f64 {
        let (sum, n) = self
            .phase
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (p, _)| (s + p, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Piston-removed rms phase over the pupil.
    pub fn pupil_rms(&self) -> f64 {
        let mean = self.pupil_mean();
        let (ss, n) = self
            .phase
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (p, _)| (s + (p - mean).powi(2), n + 1));
        if n == 0 {
            0.0
        } else {
            (ss / n as f64).sqrt()
        }
    }

    /// rms over the whole grid about the grid mean.
    pub fn grid_rms(&self) -> f64 {
        let n = self.phase.len() as f64;
        let mean = self.phase.iter().sum::<f64>() / n;
        (self.phase.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Extract an `size x size` sub-grid whose left edge sits at fractional
    /// column `x_px` (periodic in x, linear interpolation) and top edge at row
    /// `y_px`. The pupil of the result is inscribed unless `pupil_m` is given.
    ///
    /// `window(x, ..)` of a screen equals the same window of
    /// `evolve_screen(screen, v, dt)` at `x + v dt / pixel` for the frozen-flow
    /// convention used in [`crate::turbulence::evolve_screen`].
    pub fn window(
        &self,
        x_px: f64,
        y_px: usize,
        size: usize,
        pupil_m: Option<f64>,
    ) -> Result<Self, ScreenError> {
        if size == 0 || size > self.grid_n || y_px + size > self.grid_n || !x_px.is_finite() {
            return Err(ScreenError::Window {
                size,
                x: x_px,
                y: y_px,
                grid: self.grid_n,
            });
        }
        let n = self.grid_n as i64;
        let base = x_px.floor();
        let frac = x_px - base;
        let base = base as i64;
        let mut phase = Vec::with_capacity(size * size);
        for r in 0..size {
            let row = &self.phase[(y_px + r) * self.grid_n..(y_px + r + 1) * self.grid_n];
            for c in 0..size {
                let c0 = (base + c as i64).rem_euclid(n) as usize;
                let v = if frac == 0.0 {
                    row[c0]
                } else {
                    let c1 = (c0 + 1) % self.grid_n;
                    (1.0 - frac) * row[c0] + frac * row[c1]
                };
                phase.push(v);
            }
        }
        let mut out = Self::new(size, self.pixel_m, phase);
        out.r0_m = self.r0_m;
        out.seed = self.seed;
        match pupil_m {
            Some(d) => out.with_pupil(d),
            None => Ok(out),
        }
    }

    /// Binary layout (little endian):
    /// `grid_n: u32, pixel_m: f64, r0_m: f64, seed: u64`, then `grid_n^2`
    /// `f64` phase values in row-major order. The pupil is not stored; a
    /// screen read back has the inscribed pupil.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&(self.grid_n as u32).to_le_bytes())?;
        out.write_all(&self.pixel_m.to_le_bytes())?;
        out.write_all(&self.r0_m.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in &self.phase {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, ScreenError> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        let grid_n = u32::from_le_bytes(b4) as usize;
        if grid_n == 0 || grid_n > 1 << 14 {
            return Err(ScreenError::GridSize(grid_n));
        }
        input.read_exact(&mut b8)?;
        let pixel_m = f64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let r0_m = f64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        if !(pixel_m > 0.0) {
            return Err(ScreenError::NonPositive("pixel_m"));
        }
        let mut phase = Vec::with_capacity(grid_n * grid_n);
        for _ in 0..grid_n * grid_n {
            input.read_exact(&mut b8)?;
            phase.push(f64::from_le_bytes(b8));
        }
        let mut s = Self::new(grid_n, pixel_m, phase);
        s.r0_m = r0_m;
        s.seed = seed;
        Ok(s)
    }
}

fn pixel_centre(grid_n: usize, pixel_m: f64, row: usize, col: usize) -> (f64, f64) {
    let c = (grid_n as f64 - 1.0) / 2.0;
    ((col as f64 - c) * pixel_m, (row as f64 - c) * pixel_m)
}

fn circular_mask(grid_n: usize, pixel_m: f64, diameter_m: f64) -> Vec<bool> {
    let r2 = (diameter_m / 2.0).powi(2);
    let mut mask = Vec::with_capacity(grid_n * grid_n);
    for row in 0..grid_n {
        for col in 0..grid_n {
            let (x, y) = pixel_centre(grid_n, pixel_m, row, col);
            mask.push(x * x + y * y <= r2);
        }
    }
    mask
}
