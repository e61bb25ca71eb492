//! Electron kinematics and the pinhole diffraction pattern.
//!
//! The angular density is the Fraunhofer pattern of a circular aperture,
//! `I(θ) = [2 J₁(x) / x]²` with `x = (π d / λ) sin θ`, normalised per unit
//! solid angle over the forward hemisphere. The pattern is azimuthally
//! symmetric, so a [`DiffractionProfile`] only tabulates `θ`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{Read, Write};

use thiserror::Error;

use crate::constants::{ELECTRON_MASS, ELECTRON_REST_ENERGY, KEV, PLANCK, SPEED_OF_LIGHT};

#[derive(Debug, Error)]
pub enum DiffractionError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("profile needs at least 64 grid points, got {0}")]
    GridTooSmall(usize),
    #[error("profile normalisation integral {0:e} is below 1e-300")]
    Degenerate(f64),
    #[error("invalid tabulated profile: {0}")]
    BadTable(String),
    #[error("profile csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Source energy and mean emission rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamSpec {
    energy_kev: f64,
    emission_rate_mhz: f64,
}

impl BeamSpec {
    pub fn new(energy_kev: f64, emission_rate_mhz: f64) -> Result<Self, DiffractionError> {
        positive("beam energy", energy_kev)?;
        positive("emission rate", emission_rate_mhz)?;
        Ok(Self { energy_kev, emission_rate_mhz })
    }

    pub fn energy_kev(&self) -> f64 {
        self.energy_kev
    }

    pub fn emission_rate_mhz(&self) -> f64 {
        self.emission_rate_mhz
    }

    /// Mean spacing between emissions, `1/f`, in ns.
    pub fn period_ns(&self) -> f64 {
        1.0e3 / self.emission_rate_mhz
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeSpec {
    diameter_nm: f64,
}

impl PinholeSpec {
    pub fn new(diameter_nm: f64) -> Result<Self, DiffractionError> {
        positive("pinhole diameter", diameter_nm)?;
        Ok(Self { diameter_nm })
    }

    pub fn diameter_nm(&self) -> f64 {
        self.diameter_nm
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, DiffractionError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DiffractionError::NonPositive { what, value })
    }
}

/// Relativistic momentum in kg m/s: `p = sqrt(2 m E (1 + E / 2mc²))`.
pub fn momentum(energy_kev: f64) -> Result<f64, DiffractionError> {
    let e = positive("energy", energy_kev)? * KEV;
    Ok((2.0 * ELECTRON_MASS * e * (1.0 + e / (2.0 * ELECTRON_REST_ENERGY))).sqrt())
}

/// de Broglie wavelength in pm.
pub fn de_broglie_wavelength(energy_kev: f64) -> Result<f64, DiffractionError> {
    Ok(PLANCK / momentum(energy_kev)? * 1.0e12)
}

/// Relativistic speed in m/s: `v = c sqrt(1 - γ⁻²)` with `γ = 1 + E/mc²`.
pub fn electron_speed(energy_kev: f64) -> Result<f64, DiffractionError> {
    let e = positive("energy", energy_kev)? * KEV;
    let gamma = 1.0 + e / ELECTRON_REST_ENERGY;
    // 1 - γ⁻² = (γ - 1)(γ + 1) / γ², which stays accurate for E ≪ mc².
    let g1 = e / ELECTRON_REST_ENERGY;
    Ok(SPEED_OF_LIGHT * (g1 * (gamma + 1.0)).sqrt() / gamma)
}

/// Ballistic flight time across `gap_cm`, in ns.
pub fn transit_time(gap_cm: f64, energy_kev: f64) -> Result<f64, DiffractionError> {
    positive("gap", gap_cm)?;
    Ok(gap_cm * 1.0e-2 / electron_speed(energy_kev)? * 1.0e9)
}

/// Relative far-field intensity of a circular aperture, 1 on axis.
pub fn airy_intensity(theta: f64, wavelength_pm: f64, diameter_nm: f64) -> f64 {
    let x = PI * diameter_nm * 1.0e3 / wavelength_pm * theta.sin();
    if x.abs() < 1e-8 {
        return 1.0;
    }
    let a = 2.0 * libm::j1(x) / x;
    a * a
}

/// Tabulated polar density `p(θ)` per steradian on `[0, π/2]` with its
/// cumulative distribution in `θ`.
#[derive(Clone, Debug)]
pub struct DiffractionProfile {
    theta: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    uniform_step: Option<f64>,
}

impl DiffractionProfile {
    pub const DEFAULT_GRID_POINTS: usize = 4096;

    /// Airy profile for the given beam and pinhole on a uniform grid.
    pub fn build(beam: &BeamSpec, pinhole: &PinholeSpec, grid_points: usize) -> Result<Self, DiffractionError> {
        if grid_points < 64 {
            return Err(DiffractionError::GridTooSmall(grid_points));
        }
        let lambda = de_broglie_wavelength(beam.energy_kev())?;
        let d = pinhole.diameter_nm();
        let theta = uniform_grid(grid_points);
        let pdf = theta.iter().map(|&t| airy_intensity(t, lambda, d)).collect();
        Self::from_parts(theta, pdf, true)
    }

    /// Isotropic density `1/2π` over the hemisphere; used for debugging maps.
    pub fn uniform(grid_points: usize) -> Result<Self, DiffractionError> {
        if grid_points < 64 {
            return Err(DiffractionError::GridTooSmall(grid_points));
        }
        let theta = uniform_grid(grid_points);
        let pdf = vec![1.0; grid_points];
        Self::from_parts(theta, pdf, true)
    }

    /// Any tabulated density on a strictly increasing grid from 0 to π/2.
    /// The values are renormalised.
    pub fn from_table(theta: Vec<f64>, pdf: Vec<f64>) -> Result<Self, DiffractionError> {
        if theta.len() != pdf.len() {
            return Err(DiffractionError::BadTable("theta and pdf lengths differ".into()));
        }
        if theta.len() < 2 {
            return Err(DiffractionError::BadTable("need at least two rows".into()));
        }
        if theta[0].abs() > 1e-9 || (theta[theta.len() - 1] - FRAC_PI_2).abs() > 1e-9 {
            return Err(DiffractionError::BadTable("theta must run from 0 to pi/2".into()));
        }
        if let Some(w) = theta.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DiffractionError::BadTable(format!("theta not strictly increasing at row {}", w + 2)));
        }
        if let Some(i) = pdf.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(DiffractionError::BadTable(format!("negative or non-finite pdf at row {}", i + 1)));
        }
        let mut theta = theta;
        theta[0] = 0.0;
        let last = theta.len() - 1;
        theta[last] = FRAC_PI_2;
        Self::from_parts(theta, pdf, false)
    }

    /// Reads `theta_rad,pdf_per_sr` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, DiffractionError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["theta_rad", "pdf_per_sr"] {
            return Err(DiffractionError::BadTable(format!("expected header theta_rad,pdf_per_sr, got {}", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut theta = Vec::new();
        let mut pdf = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64, DiffractionError> {
                rec.get(j)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| DiffractionError::BadTable(format!("unparsable value on data row {}", i + 1)))
            };
            theta.push(parse(0)?);
            pdf.push(parse(1)?);
        }
        Self::from_table(theta, pdf)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DiffractionError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta_rad", "pdf_per_sr"])?;
        for (t, p) in self.theta.iter().zip(&self.pdf) {
            w.write_record([format!("{t:.15e}"), format!("{p:.15e}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    fn from_parts(theta: Vec<f64>, mut pdf: Vec<f64>, uniform: bool) -> Result<Self, DiffractionError> {
        let n = theta.len();
        // Trapezoidal accumulation of 2π p(θ) sin θ.
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            let a = pdf[i - 1] * theta[i - 1].sin();
            let b = pdf[i] * theta[i].sin();
            cdf[i] = cdf[i - 1] + PI * (a + b) * (theta[i] - theta[i - 1]);
        }
        let z = cdf[n - 1];
        if !(z >= 1e-300) {
            return Err(DiffractionError::Degenerate(z));
        }
        for (p, c) in pdf.iter_mut().zip(cdf.iter_mut()) {
            *p /= z;
            *c /= z;
        }
        cdf[n - 1] = 1.0;
        let uniform_step = uniform.then(|| theta[1] - theta[0]);
        Ok(Self { theta, pdf, cdf, uniform_step })
    }

    pub fn grid(&self) -> &[f64] {
        &self.theta
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Spacing of a uniform grid; `None` for tabulated overrides.
    pub fn grid_step(&self) -> Option<f64> {
        self.uniform_step
    }

    /// `∫ p dΩ` over the hemisphere by the trapezoidal rule on the grid.
    pub fn normalization(&self) -> f64 {
        self.theta
            .windows(2)
            .zip(self.pdf.windows(2))
            .map(|(t, p)| PI * (p[0] * t[0].sin() + p[1] * t[1].sin()) * (t[1] - t[0]))
            .sum()
    }

    /// Index `i` of the grid interval `[θ_i, θ_{i+1}]` containing `theta`.
    fn interval(&self, theta: f64) -> usize {
        let last = self.theta.len() - 2;
        match self.uniform_step {
            Some(h) => ((theta / h) as usize).min(last),
            None => self.theta.partition_point(|&t| t <= theta).saturating_sub(1).min(last),
        }
    }

    /// Linearly interpolated density; zero outside `[0, π/2]`.
    pub fn pdf_at(&self, theta: f64) -> f64 {
        if !(0.0..=FRAC_PI_2).contains(&theta) {
            return 0.0;
        }
        let i = self.interval(theta);
        let (t0, t1) = (self.theta[i], self.theta[i + 1]);
        let f = ((theta - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.pdf[i] + f * (self.pdf[i + 1] - self.pdf[i])
    }

    /// Linearly interpolated cumulative probability of polar angle `≤ theta`.
    pub fn cdf_at(&self, theta: f64) -> f64 {
        if theta <= 0.0 {
            return 0.0;
        }
        if theta >= FRAC_PI_2 {
            return 1.0;
        }
        let i = self.interval(theta);
        let (t0, t1) = (self.theta[i], self.theta[i + 1]);
        let f = ((theta - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.cdf[i] + f * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Largest interpolated density for polar angles in `[lo, hi]`. Exact for
    /// the piecewise-linear interpolant: the maximum sits on a node or an end.
    pub fn max_pdf_between(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(FRAC_PI_2);
        if hi < lo {
            return 0.0;
        }
        let start = self.theta.partition_point(|&t| t < lo);
        let end = self.theta.partition_point(|&t| t <= hi);
        let inner = self.pdf[start..end].iter().copied().fold(0.0, f64::max);
        inner.max(self.pdf_at(lo)).max(self.pdf_at(hi))
    }

    /// Inverse-transform sample of `(θ, φ)` from two uniforms in `[0, 1)`.
    pub fn sample_direction(&self, u1: f64, u2: f64) -> (f64, f64) {
        (self.inverse_cdf(u1), TAU * u2)
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let j = self.cdf.partition_point(|&c| c <= u).clamp(1, n - 1);
        let i = j - 1;
        let (c0, c1) = (self.cdf[i], self.cdf[j]);
        let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.theta[i] + f.clamp(0.0, 1.0) * (self.theta[j] - self.theta[i])
    }
}

fn uniform_grid(n: usize) -> Vec<f64> {
    let h = FRAC_PI_2 / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    g[n - 1] = FRAC_PI_2;
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed-form oracles, evaluated independently with CODATA 2018 values.
    const LAMBDA_5KEV_NONREL_PM: f64 = 17.344_282_345_873_81;
    const LAMBDA_5KEV_PM: f64 = 17.302_009_999_680_13;
    const LAMBDA_1KEV_PM: f64 = 38.764_034_152_582_32;
    const SPEED_5KEV: f64 = 41_633_379.476_012_94;
    const SPEED_1EV: f64 = 593_096.087_979_598_6;
    const TRANSIT_10CM_5KEV_NS: f64 = 2.401_918_875_156_771;
    const FIRST_BESSEL_ZERO: f64 = 3.831_705_970_207_512;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn wavelengths() {
        let l5 = de_broglie_wavelength(5.0).unwrap();
        assert!(rel(l5, LAMBDA_5KEV_PM) < 1e-9, "{l5}");
        assert!((l5 - 17.3).abs() < 0.05);
        // Relativistic correction is about 0.24 % at 5 keV.
        let shift = rel(LAMBDA_5KEV_NONREL_PM, l5);
        assert!(shift > 0.002 && shift < 0.003, "{shift}");
        let l1 = de_broglie_wavelength(1.0).unwrap();
        assert!(rel(l1, LAMBDA_1KEV_PM) < 1e-9);
        assert!((l1 - 38.8).abs() < 0.05);
    }

    #[test]
    fn quadrupling_energy_roughly_halves_wavelength() {
        for e in [0.01, 0.1, 1.0] {
            let r = de_broglie_wavelength(4.0 * e).unwrap() / de_broglie_wavelength(e).unwrap();
            // Exactly 1/2 non-relativistically; the correction is O(E/mc²).
            assert!((r - 0.5).abs() < 3.0 * e / 511.0, "{e}: {r}");
        }
    }

    #[test]
    fn wavelength_momentum_product_is_planck() {
        for e in [0.001, 1.0, 5.0, 300.0] {
            let lp = de_broglie_wavelength(e).unwrap() * 1e-12 * momentum(e).unwrap();
            assert!(rel(lp, PLANCK) < 1e-12);
        }
    }

    #[test]
    fn speeds() {
        let v5 = electron_speed(5.0).unwrap();
        assert!(rel(v5, SPEED_5KEV) < 1e-9);
        assert!(rel(v5, 4.2e7) < 0.01);
        assert!(rel(electron_speed(0.001).unwrap(), SPEED_1EV) < 1e-8);
        let tiny = electron_speed(1e-12).unwrap();
        assert!(tiny > 0.0 && tiny < 1.0e3);
    }

    #[test]
    fn transit_times() {
        let t = transit_time(0.5, 5.0).unwrap();
        assert!((t - 0.12).abs() / 0.12 < 0.02, "{t}");
        assert!(rel(transit_time(10.0, 5.0).unwrap(), TRANSIT_10CM_5KEV_NS) < 1e-9);
        let ratio = transit_time(1.0, 5.0).unwrap() / transit_time(0.5, 5.0).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(de_broglie_wavelength(0.0).is_err());
        assert!(electron_speed(-1.0).is_err());
        assert!(transit_time(0.0, 5.0).is_err());
        assert!(transit_time(1.0, f64::NAN).is_err());
        assert!(BeamSpec::new(1.0, 0.0).is_err());
        assert!(PinholeSpec::new(-2.0).is_err());
    }

    #[test]
    fn airy_centre_and_first_zero() {
        let lambda = LAMBDA_5KEV_PM;
        assert_eq!(airy_intensity(0.0, lambda, 2.0), 1.0);
        let zero = (FIRST_BESSEL_ZERO * lambda / (PI * 2000.0)).asin();
        assert!((zero.to_degrees() - 0.6046).abs() < 1e-3);
        assert!(airy_intensity(zero, lambda, 2.0) < 1e-12);
        let grid = 10_000;
        for i in 0..=grid {
            let t = FRAC_PI_2 * i as f64 / grid as f64;
            assert!(airy_intensity(t, lambda, 2.0) >= 0.0);
        }
    }

    #[test]
    fn j1_matches_integral_representation() {
        // J1(x) = (1/π) ∫₀^π cos(τ - x sin τ) dτ; trapezoid is spectral here.
        let n = 4000;
        for &x in &[0.3, 1.0, 3.8317, 10.0, 57.0, 160.0] {
            let h = PI / n as f64;
            let mut s = 0.5 * ((0.0f64).cos() + (PI - 0.0).cos());
            for k in 1..n {
                let t = k as f64 * h;
                s += (t - x * t.sin()).cos();
            }
            let oracle = s * h / PI;
            assert!((libm::j1(x) - oracle).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn profile_normalised_and_monotone() {
        let beam = BeamSpec::new(5.0, 1.0).unwrap();
        let p = DiffractionProfile::build(&beam, &PinholeSpec::new(2.0).unwrap(), 4096).unwrap();
        assert!((p.normalization() - 1.0).abs() < 1e-6);
        assert!(p.cdf().windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*p.cdf().last().unwrap(), 1.0);
        assert!(p.pdf().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn grid_too_small() {
        let beam = BeamSpec::new(5.0, 1.0).unwrap();
        let pin = PinholeSpec::new(2.0).unwrap();
        assert!(matches!(DiffractionProfile::build(&beam, &pin, 63), Err(DiffractionError::GridTooSmall(63))));
    }

    #[test]
    fn degenerate_table_rejected() {
        let theta = vec![0.0, 0.5, FRAC_PI_2];
        let err = DiffractionProfile::from_table(theta, vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, DiffractionError::Degenerate(_)));
    }

    #[test]
    fn central_lobe_holds_encircled_energy() {
        let beam = BeamSpec::new(5.0, 1.0).unwrap();
        let p = DiffractionProfile::build(&beam, &PinholeSpec::new(2.0).unwrap(), 4096).unwrap();
        let zero = (FIRST_BESSEL_ZERO * de_broglie_wavelength(5.0).unwrap() / (PI * 2000.0)).asin();
        let inside = p.cdf_at(zero);
        // Textbook encircled energy inside the first dark ring: 83.8 %.
        assert!(inside >= 0.83, "{inside}");
        assert!((inside - 0.8378).abs() < 2e-3, "{inside}");
    }

    #[test]
    fn sampling_endpoints_and_determinism() {
        let p = DiffractionProfile::uniform(256).unwrap();
        assert_eq!(p.sample_direction(0.0, 0.0), (0.0, 0.0));
        assert_eq!(p.sample_direction(0.37, 0.81), p.sample_direction(0.37, 0.81));
        // Uniform on the hemisphere: P(θ ≤ t) = 1 - cos t.
        let t = p.inverse_cdf(0.5);
        assert!((t - (0.5f64).acos()).abs() < 1e-4);
    }

    #[test]
    fn csv_table_roundtrip_and_errors() {
        let p = DiffractionProfile::uniform(128).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = DiffractionProfile::from_csv(buf.as_slice()).unwrap();
        assert_eq!(q.grid_step(), None);
        for &t in &[0.0, 0.3, 1.2, FRAC_PI_2] {
            assert!((p.pdf_at(t) - q.pdf_at(t)).abs() < 1e-12);
            assert!((p.cdf_at(t) - q.cdf_at(t)).abs() < 1e-12);
        }
        let bad = "theta_rad,pdf_per_sr\n0,1\n1.0,1\n0.5,1\n1.5707963267948966,1\n";
        assert!(DiffractionProfile::from_csv(bad.as_bytes()).is_err());
        let wrong_header = "theta,pdf\n0,1\n1.5707963267948966,1\n";
        assert!(DiffractionProfile::from_csv(wrong_header.as_bytes()).is_err());
    }

    #[test]
    fn max_pdf_between_is_an_upper_bound() {
        let beam = BeamSpec::new(1.0, 1.0).unwrap();
        let p = DiffractionProfile::build(&beam, &PinholeSpec::new(0.5).unwrap(), 1024).unwrap();
        let (lo, hi) = (0.05, 0.2);
        let m = p.max_pdf_between(lo, hi);
        for k in 0..=10_000 {
            let t = lo + (hi - lo) * k as f64 / 10_000.0;
            assert!(p.pdf_at(t) <= m * (1.0 + 1e-15));
        }
    }
}
