//! Brute-force reference implementations used by the test suites.
//!
//! Nothing here calls into the modules it checks; each routine is written
//! from the textbook definition and favours clarity over speed. Sizes are
//! capped at [`MAX_ORACLE_DIM`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest matrix side or key length the oracles accept.
pub const MAX_ORACLE_DIM: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("dimension mismatch: matrix has {cols} columns, vector has {len} entries")]
    Dimension { cols: usize, len: usize },
    #[error("ragged matrix: row {row} has {len} columns, expected {cols}")]
    Ragged { row: usize, len: usize, cols: usize },
    #[error("size {0} exceeds the oracle cap of {MAX_ORACLE_DIM}")]
    TooLarge(usize),
}

/// One recorded oracle evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    /// Hex SHA-256 of the textual inputs.
    pub inputs_digest: String,
    pub values: Vec<f64>,
    pub tolerance: f64,
}

impl OracleResult {
    pub fn new(name: &str, inputs: &str, values: Vec<f64>, tolerance: f64) -> Self {
        let digest = Sha256::digest(inputs.as_bytes());
        Self {
            name: name.to_string(),
            inputs_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
            values,
            tolerance,
        }
    }

    /// True when `actual` matches every value within the tolerance.
    pub fn accepts(&self, actual: &[f64]) -> bool {
        actual.len() == self.values.len()
            && self
                .values
                .iter()
                .zip(actual)
                .all(|(v, a)| (v - a).abs() <= self.tolerance)
    }
}

/// Reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        fn gcd(a: u64, b: u64) -> u64 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bb84Enumeration {
    pub sift_fraction: Ratio,
    pub qber: Ratio,
}

/// Outcomes of measuring a state prepared as `(basis, bit)` in
/// `measure_basis`, each with its weight out of 2.
fn measure(basis: u8, bit: u8, measure_basis: u8) -> Vec<(u8, u64)> {
    if basis == measure_basis {
        vec![(bit, 2)]
    } else {
        vec![(0, 1), (1, 1)]
    }
}

/// Exact sifting fraction and QBER of ideal BB84, with or without a full
/// intercept-resend attack, by enumeration of every equiprobable case.
pub fn enumerate_bb84(eve_present: bool) -> Bb84Enumeration {
    // weights are counted in units of 1/4 (two binary random outcomes at most)
    let (mut total, mut sifted, mut errors) = (0u64, 0u64, 0u64);
    for a_basis in 0..2u8 {
        for a_bit in 0..2u8 {
            for e_basis in 0..2u8 {
                if !eve_present && e_basis == 1 {
                    continue;
                }
                for b_basis in 0..2u8 {
                    let arriving: Vec<(u8, u8, u64)> = if eve_present {
                        measure(a_basis, a_bit, e_basis)
                            .into_iter()
                            .map(|(e_bit, w)| (e_basis, e_bit, w))
                            .collect()
                    } else {
                        vec![(a_basis, a_bit, 2)]
                    };
                    for (basis, bit, w1) in arriving {
                        for (b_bit, w2) in measure(basis, bit, b_basis) {
                            let w = w1 * w2;
                            total += w;
                            if a_basis == b_basis {
                                sifted += w;
                                if b_bit != a_bit {
                                    errors += w;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Bb84Enumeration {
        sift_fraction: Ratio::new(sifted, total),
        qber: Ratio::new(errors, sifted),
    }
}

/// Textbook `y = M x` over GF(2).
pub fn dense_gf2_mul(matrix: &[Vec<u8>], vector: &[u8]) -> Result<Vec<u8>, OracleError> {
    let cols = matrix.first().map_or(vector.len(), Vec::len);
    if matrix.len() > MAX_ORACLE_DIM || cols > MAX_ORACLE_DIM {
        return Err(OracleError::TooLarge(matrix.len().max(cols)));
    }
    if cols != vector.len() {
        return Err(OracleError::Dimension {
            cols,
            len: vector.len(),
        });
    }
    let mut out = Vec::with_capacity(matrix.len());
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != cols {
            return Err(OracleError::Ragged {
                row,
                len: r.len(),
                cols,
            });
        }
        let mut acc = 0u8;
        for j in 0..cols {
            acc ^= (r[j] & 1) & (vector[j] & 1);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Dense `rows x cols` Toeplitz matrix with `T[i][j] = diagonals[i - j + cols - 1]`.
pub fn toeplitz_matrix(diagonals: &[u8], rows: usize, cols: usize) -> Vec<Vec<u8>> {
    assert_eq!(diagonals.len(), rows + cols - 1, "need rows + cols - 1 diagonals");
    (0..rows)
        .map(|i| (0..cols).map(|j| diagonals[i + cols - 1 - j]).collect())
        .collect()
}

fn fact(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Noll index to `(n, m)` by walking the ordering table row by row.
fn noll_nm(j: usize) -> (i64, i64) {
    let mut count = 0usize;
    let mut n = 0i64;
    loop {
        // modes of radial order n sorted by |m|, cosine/sine pairs split by parity of j
        let mut ms: Vec<i64> = (0..=n).filter(|m| (n - m) % 2 == 0).collect();
        ms.sort_unstable();
        for &m in &ms {
            let copies = if m == 0 { 1 } else { 2 };
            for _ in 0..copies {
                count += 1;
                if count == j {
                    let signed = if m == 0 {
                        0
                    } else if j.is_multiple_of(2) {
                        m
                    } else {
                        -m
                    };
                    return (n, signed);
                }
            }
        }
        n += 1;
    }
}

fn zernike_value(j: usize, rho: f64, theta: f64) -> f64 {
    let (n, m) = noll_nm(j);
    let ma = m.abs();
    let mut r = 0.0;
    for s in 0..=(n - ma) / 2 {
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        r += sign * fact(n - s) / (fact(s) * fact((n + ma) / 2 - s) * fact((n - ma) / 2 - s)) * rho.powi((n - 2 * s) as i32);
    }
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => r,
        std::cmp::Ordering::Greater => r * (ma as f64 * theta).cos(),
        std::cmp::Ordering::Less => r * (ma as f64 * theta).sin(),
    }
}

/// Pupil pixels of an `n x n` grid: a pixel belongs to the pupil when its
/// centre lies within `diameter / 2` of the grid centre.
fn pupil_pixels(grid_n: usize, pixel_m: f64, diameter_m: f64) -> Vec<(usize, f64, f64)> {
    let radius = diameter_m / 2.0;
    let c = (grid_n as f64 - 1.0) / 2.0;
    let mut out = Vec::new();
    for row in 0..grid_n {
        for col in 0..grid_n {
            let x = (col as f64 - c) * pixel_m;
            let y = (row as f64 - c) * pixel_m;
            if x * x + y * y <= radius * radius {
                out.push((row * grid_n + col, (x * x + y * y).sqrt() / radius, y.atan2(x)));
            }
        }
    }
    out
}

/// Zernike grids `Z_1 .. Z_mode_count` (piston included) over the pupil,
/// Gram-Schmidt orthonormalised in Noll order under the pupil-mean inner
/// product `<a, b> = mean(a b)`. Entries outside the pupil are zero.
pub fn orthonormal_zernike_grids(grid_n: usize, pixel_m: f64, diameter_m: f64, mode_count: usize) -> Vec<Vec<f64>> {
    let pix = pupil_pixels(grid_n, pixel_m, diameter_m);
    let np = pix.len() as f64;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 1..=mode_count {
        let mut v: Vec<f64> = pix.iter().map(|&(_, rho, th)| zernike_value(j, rho, th)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / np;
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = (v.iter().map(|x| x * x).sum::<f64>() / np).sqrt();
        for x in &mut v {
            *x /= norm;
        }
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| {
            let mut g = vec![0.0; grid_n * grid_n];
            for (&(i, _, _), x) in pix.iter().zip(v) {
                g[i] = x;
            }
            g
        })
        .collect()
}

/// Coefficients of `phase` (row-major `grid_n x grid_n`) on the orthonormal
/// grids of [`orthonormal_zernike_grids`], index `j - 1` for Noll `j`.
pub fn zernike_project(phase: &[f64], grid_n: usize, pixel_m: f64, diameter_m: f64, mode_count: usize) -> Vec<f64> {
    let pix = pupil_pixels(grid_n, pixel_m, diameter_m);
    let np = pix.len() as f64;
    orthonormal_zernike_grids(grid_n, pixel_m, diameter_m, mode_count)
        .iter()
        .map(|g| pix.iter().map(|&(i, _, _)| phase[i] * g[i]).sum::<f64>() / np)
        .collect()
}

/// Mean square of `phase` over the pupil of [`zernike_project`].
pub fn pupil_mean_square(phase: &[f64], grid_n: usize, pixel_m: f64, diameter_m: f64) -> f64 {
    let pix = pupil_pixels(grid_n, pixel_m, diameter_m);
    pix.iter().map(|&(i, _, _)| phase[i] * phase[i]).sum::<f64>() / pix.len() as f64
}

/// Slant range from the law of cosines in the Earth-centre triangle.
pub fn slant_range_closed_form(elevation_deg: f64, altitude_km: f64, earth_radius_km: f64) -> f64 {
    let e = elevation_deg.to_radians();
    let rs = earth_radius_km + altitude_km;
    // rs^2 = re^2 + L^2 + 2 re L sin(e)
    let b = earth_radius_km * e.sin();
    -b + (b * b + rs * rs - earth_radius_km * earth_radius_km).sqrt()
}

/// Timing of a zenith pass of a circular two-body orbit over a
/// non-rotating station, integrated with fixed-step RK4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBodyPass {
    pub duration_s: f64,
    pub peak_elevation_deg: f64,
}

pub fn two_body_pass(altitude_km: f64, earth_radius_km: f64, mu_km3_s2: f64, mask_deg: f64, dt_s: f64) -> TwoBodyPass {
    let rs = earth_radius_km + altitude_km;
    let v = (mu_km3_s2 / rs).sqrt();
    let station = [earth_radius_km, 0.0, 0.0];
    let accel = |r: [f64; 3]| {
        let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let k = -mu_km3_s2 / (d * d * d);
        [k * r[0], k * r[1], k * r[2]]
    };
    let deriv = |s: [f64; 6]| {
        let a = accel([s[0], s[1], s[2]]);
        [s[3], s[4], s[5], a[0], a[1], a[2]]
    };
    let add = |s: [f64; 6], k: [f64; 6], h: f64| {
        let mut o = s;
        for i in 0..6 {
            o[i] += h * k[i];
        }
        o
    };
    let elevation = |s: &[f64; 6]| {
        let los = [s[0] - station[0], s[1] - station[1], s[2] - station[2]];
        let len = (los[0] * los[0] + los[1] * los[1] + los[2] * los[2]).sqrt();
        (los[0] / len).asin().to_degrees()
    };
    let period = 2.0 * PI * (rs * rs * rs / mu_km3_s2).sqrt();
    let mut s = [0.0, -rs, 0.0, v, 0.0, 0.0];
    let (mut t, mut first, mut last, mut peak) = (0.0, f64::NAN, f64::NAN, f64::MIN);
    while t <= period / 2.0 {
        let el = elevation(&s);
        peak = peak.max(el);
        if el >= mask_deg {
            if first.is_nan() {
                first = t;
            }
            last = t;
        }
        let k1 = deriv(s);
        let k2 = deriv(add(s, k1, dt_s / 2.0));
        let k3 = deriv(add(s, k2, dt_s / 2.0));
        let k4 = deriv(add(s, k3, dt_s));
        for i in 0..6 {
            s[i] += dt_s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += dt_s;
    }
    TwoBodyPass {
        duration_s: if first.is_nan() { 0.0 } else { last - first },
        peak_elevation_deg: peak,
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Flat unit-radius pupil coupled into the Gaussian mode `exp(-r^2 / w^2)`
/// with `w = ratio`, by Simpson quadrature of the radial overlap.
pub fn flat_pupil_coupling(ratio: f64) -> f64 {
    let w = ratio;
    let overlap = simpson(|r| 2.0 * PI * r * (-r * r / (w * w)).exp(), 0.0, 1.0, 2000);
    let mode_power = simpson(|r| 2.0 * PI * r * (-2.0 * r * r / (w * w)).exp(), 0.0, 12.0 * w, 20_000);
    overlap * overlap / (PI * mode_power)
}

/// Golden-section maximisation of `f` on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > tol {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let x = (a + b) / 2.0;
    (x, f(x))
}

/// Shannon binary entropy, written out independently.
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / 2f64.ln()
}

/// Root of a decreasing `f` on `[a, b]` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    assert!(f(a) > 0.0 && f(b) < 0.0, "root must be bracketed");
    while b - a > tol {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Interval-oracle availability: total length of the `active` intervals
/// clipped to `[start, end]`, over `end - start`.
pub fn interval_availability(active: &[(f64, f64)], start: f64, end: f64) -> f64 {
    if end <= start {
        return 0.0;
    }
    let total: f64 = active
        .iter()
        .map(|&(a, b)| (b.min(end) - a.max(start)).max(0.0))
        .sum();
    total / (end - start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bb84_without_eve() {
        let e = enumerate_bb84(false);
        assert_eq!(e.sift_fraction, Ratio::new(1, 2));
        assert_eq!(e.qber, Ratio::new(0, 1));
    }

    #[test]
    fn bb84_with_eve() {
        let e = enumerate_bb84(true);
        assert_eq!(e.sift_fraction, Ratio::new(1, 2));
        assert_eq!(e.qber, Ratio::new(1, 4));
    }

    #[test]
    fn gf2_identity_and_parity() {
        let id: Vec<Vec<u8>> = (0..5).map(|i| (0..5).map(|j| u8::from(i == j)).collect()).collect();
        let v = vec![1, 0, 1, 1, 0];
        assert_eq!(dense_gf2_mul(&id, &v).unwrap(), v);
        assert_eq!(dense_gf2_mul(&[vec![1, 1], vec![1, 1]], &[1, 1]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn gf2_dimension_errors() {
        assert_eq!(
            dense_gf2_mul(&[vec![1, 0, 1]], &[1, 1]),
            Err(OracleError::Dimension { cols: 3, len: 2 })
        );
        assert!(matches!(
            dense_gf2_mul(&[vec![1, 0], vec![1]], &[1, 1]),
            Err(OracleError::Ragged { row: 1, .. })
        ));
    }

    #[test]
    fn toeplitz_layout() {
        let t = toeplitz_matrix(&[1, 2, 3, 4], 2, 3);
        assert_eq!(t, vec![vec![3, 2, 1], vec![4, 3, 2]]);
    }

    #[test]
    fn noll_table() {
        let expected = [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (3, -3), (3, 3), (4, 0)];
        for (j, nm) in expected.iter().enumerate() {
            assert_eq!(noll_nm(j + 1), *nm, "j = {}", j + 1);
        }
    }

    #[test]
    fn projection_of_a_basis_grid_is_a_unit_vector() {
        let grids = orthonormal_zernike_grids(32, 0.025, 0.8, 10);
        let c = zernike_project(&grids[3], 32, 0.025, 0.8, 10);
        for (k, v) in c.iter().enumerate() {
            let want = if k == 3 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "k = {k}: {v}");
        }
        let z = zernike_project(&vec![0.0; 32 * 32], 32, 0.025, 0.8, 10);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slant_range_limits() {
        assert!((slant_range_closed_form(90.0, 500.0, 6371.0) - 500.0).abs() < 1e-9);
        let horizon = ((6871.0f64).powi(2) - 6371.0f64.powi(2)).sqrt();
        assert!((slant_range_closed_form(0.0, 500.0, 6371.0) - horizon).abs() < 1e-9);
    }

    #[test]
    fn coupling_quadrature_matches_closed_form() {
        for ratio in [0.6f64, 0.8921351, 1.2] {
            let w2 = ratio * ratio;
            let closed = 2.0 * w2 * (1.0 - (-1.0 / w2).exp()).powi(2);
            assert!((flat_pupil_coupling(ratio) - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn bisection_finds_entropy_root() {
        let q = bisect(|q| 1.0 - 2.0 * h2(q), 0.01, 0.2, 1e-12);
        assert!((q - 0.110_028).abs() < 1e-5);
    }

    #[test]
    fn availability_clips_intervals() {
        assert_eq!(interval_availability(&[(-5.0, 10.0), (20.0, 30.0)], 0.0, 40.0), 0.5);
        assert_eq!(interval_availability(&[], 0.0, 0.0), 0.0);
    }

    #[test]
    fn oracle_result_digest_is_stable() {
        let a = OracleResult::new("x", "n=3", vec![1.0], 1e-9);
        let b = OracleResult::new("x", "n=3", vec![1.0], 1e-9);
        assert_eq!(a, b);
        assert_eq!(a.inputs_digest.len(), 64);
        assert!(a.accepts(&[1.0 + 1e-10]));
        assert!(!a.accepts(&[1.1]));
    }
}
