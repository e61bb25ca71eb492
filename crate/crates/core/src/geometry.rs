//! Hemisphere tessellation, direction lookup and the sensor reference map.
//!
//! Sensor centers sit on a golden-angle (Fibonacci) lattice over the polar
//! range `[0, θ_max - r]`, where `r` is the common angular radius of the
//! circular sensor caps, so every cap lies inside the usable hemisphere.
//! Lattice point `i` has `cos θ_i = 1 - (i + ½) Δ`, which means centers are
//! ordered by polar angle and a lookup only scans the few indices whose polar
//! band can reach the query direction.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

use crate::diffraction::DiffractionProfile;
use crate::quad::gauss_legendre;
use crate::rng::{StreamDomain, Substream};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("sensor count must be at least 1")]
    NoSensors,
    #[error("coverage fraction {0} outside (0, 0.9]")]
    Coverage(f64),
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("maximum polar angle {0} rad outside (0, pi/2]")]
    MaxPolar(f64),
    #[error("cap radius {cap:.6} rad does not fit below the maximum polar angle {max:.6} rad")]
    CapTooLarge { cap: f64, max: f64 },
    #[error(
        "caps overlap: sensors {a} and {b} are {separation_deg:.4} deg apart, \
         need more than {required_deg:.4} deg; lower the coverage"
    )]
    Overlap { a: SensorId, b: SensorId, separation_deg: f64, required_deg: f64 },
    #[error("inner radius {inner} cm must be below outer radius {outer} cm")]
    RadiiOrder { inner: f64, outer: f64 },
    #[error("sensor {0} receives zero weight; use larger caps or a wider profile")]
    ZeroWeight(SensorId),
    #[error("invalid reference map: {0}")]
    BadMap(String),
    #[error("reference map csv: {0}")]
    Csv(#[from] csv::Error),
}

/// 1-based sensor serial number, the eigenvalue of the sensor-number basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SensorId(pub u32);

impl SensorId {
    pub fn from_index(index: usize) -> Self {
        SensorId(index as u32 + 1)
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Inner,
    Outer,
    Single,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Inner => "INNER",
            Layer::Outer => "OUTER",
            Layer::Single => "SINGLE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "INNER" => Some(Layer::Inner),
            "OUTER" => Some(Layer::Outer),
            "SINGLE" => Some(Layer::Single),
            _ => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A direction from the pinhole, in polar/azimuthal angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn from_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        let mut phi = v[1].atan2(v[0]);
        if phi < 0.0 {
            phi += TAU;
        }
        Self { theta: z.acos(), phi }
    }

    pub fn angle_to(&self, other: &Direction) -> f64 {
        angle_between(self.unit_vector(), other.unit_vector())
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle between unit vectors, accurate for small angles.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    s.atan2(dot(a, b))
}

/// Tangent basis at a center: `e_theta`, `e_phi`.
pub(crate) fn tangent_basis(d: &Direction) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = d.theta.sin_cos();
    let (sp, cp) = d.phi.sin_cos();
    ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
}

/// Rotate `axis` by `tilt` toward the tangent direction at azimuth `alpha`.
pub(crate) fn offset_direction(center: &Direction, tilt: f64, alpha: f64) -> [f64; 3] {
    let c = center.unit_vector();
    let (e1, e2) = tangent_basis(center);
    let (sr, cr) = tilt.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        cr * c[0] + sr * (ca * e1[0] + sa * e2[0]),
        cr * c[1] + sr * (ca * e1[1] + sa * e2[1]),
        cr * c[2] + sr * (ca * e1[2] + sa * e2[2]),
    ]
}

/// Result of looking a direction up on a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Landing {
    Sensor(SensorId),
    Gap,
}

#[derive(Clone, Debug)]
pub struct SensorLayout {
    radius_cm: f64,
    centers: Vec<Direction>,
    vectors: Vec<[f64; 3]>,
    cap_radius: f64,
    cos_cap: f64,
    coverage: f64,
    max_polar: f64,
    /// `Δ` in `cos θ_i = 1 - (i + ½) Δ`; zero for the single polar sensor.
    dz: f64,
}

impl SensorLayout {
    pub const DEFAULT_MAX_POLAR_DEG: f64 = 89.0;

    /// `n` caps of equal size subtending `coverage` of the 2π sr hemisphere.
    pub fn build(n: usize, radius_cm: f64, coverage: f64, max_polar: f64) -> Result<Self, GeometryError> {
        if n == 0 {
            return Err(GeometryError::NoSensors);
        }
        if !(coverage > 0.0 && coverage <= 0.9) {
            return Err(GeometryError::Coverage(coverage));
        }
        if !(radius_cm > 0.0 && radius_cm.is_finite()) {
            return Err(GeometryError::NonPositive { what: "radius", value: radius_cm });
        }
        if !(max_polar > 0.0 && max_polar <= FRAC_PI_2) {
            return Err(GeometryError::MaxPolar(max_polar));
        }
        // Cap solid angle 2π(1 - cos r) = 2π coverage / n.
        let cos_cap = 1.0 - coverage / n as f64;
        let cap_radius = cos_cap.acos();
        if cap_radius >= max_polar {
            return Err(GeometryError::CapTooLarge { cap: cap_radius, max: max_polar });
        }
        let (centers, dz) = if n == 1 {
            (vec![Direction::new(0.0, 0.0)], 0.0)
        } else {
            let dz = (1.0 - (max_polar - cap_radius).cos()) / n as f64;
            let golden = PI * (3.0 - 5f64.sqrt());
            let centers = (0..n)
                .map(|i| {
                    let z = 1.0 - (i as f64 + 0.5) * dz;
                    Direction::new(z.acos(), (i as f64 * golden) % TAU)
                })
                .collect();
            (centers, dz)
        };
        let vectors: Vec<[f64; 3]> = centers.iter().map(Direction::unit_vector).collect();
        let layout = Self { radius_cm, centers, vectors, cap_radius, cos_cap, coverage, max_polar, dz };
        layout.check_overlap()?;
        Ok(layout)
    }

    fn check_overlap(&self) -> Result<(), GeometryError> {
        let n = self.vectors.len();
        let mut closest: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            for j in i + 1..n {
                let sep = angle_between(self.vectors[i], self.vectors[j]);
                if closest.is_none_or(|(_, _, s)| sep < s) {
                    closest = Some((i, j, sep));
                }
            }
        }
        match closest {
            Some((i, j, sep)) if sep <= 2.0 * self.cap_radius => Err(GeometryError::Overlap {
                a: SensorId::from_index(i),
                b: SensorId::from_index(j),
                separation_deg: sep.to_degrees(),
                required_deg: (2.0 * self.cap_radius).to_degrees(),
            }),
            _ => Ok(()),
        }
    }

    /// Same angular layout at a different radius.
    pub fn with_radius(&self, radius_cm: f64) -> Result<Self, GeometryError> {
        if !(radius_cm > 0.0 && radius_cm.is_finite()) {
            return Err(GeometryError::NonPositive { what: "radius", value: radius_cm });
        }
        Ok(Self { radius_cm, ..self.clone() })
    }

    pub fn sensor_count(&self) -> usize {
        self.centers.len()
    }

    pub fn radius_cm(&self) -> f64 {
        self.radius_cm
    }

    pub fn centers(&self) -> &[Direction] {
        &self.centers
    }

    pub fn center(&self, id: SensorId) -> Direction {
        self.centers[id.index()]
    }

    pub fn center_vector(&self, id: SensorId) -> [f64; 3] {
        self.vectors[id.index()]
    }

    pub fn cap_angular_radius(&self) -> f64 {
        self.cap_radius
    }

    /// Solid angle of one cap, sr.
    pub fn cap_solid_angle(&self) -> f64 {
        TAU * (1.0 - self.cos_cap)
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.coverage
    }

    pub fn max_polar_angle(&self) -> f64 {
        self.max_polar
    }

    /// Sensor whose cap contains `dir`, or `Gap`. The nearest center wins,
    /// then the lowest index.
    pub fn locate(&self, dir: &Direction) -> Landing {
        self.locate_vector(dir.unit_vector())
    }

    pub fn locate_vector(&self, v: [f64; 3]) -> Landing {
        let n = self.vectors.len();
        let (lo, hi) = if self.dz == 0.0 {
            (0, 0)
        } else {
            let theta = v[2].clamp(-1.0, 1.0).acos();
            let t_lo = (theta - self.cap_radius).max(0.0);
            let t_hi = (theta + self.cap_radius).min(PI);
            let i_lo = ((1.0 - t_lo.cos()) / self.dz - 0.5).floor() - 2.0;
            let i_hi = ((1.0 - t_hi.cos()) / self.dz - 0.5).ceil() + 2.0;
            if i_lo > (n - 1) as f64 || i_hi < 0.0 {
                return Landing::Gap;
            }
            (i_lo.max(0.0) as usize, (i_hi as usize).min(n - 1))
        };
        let mut best: Option<(usize, f64)> = None;
        for i in lo..=hi {
            let c = dot(self.vectors[i], v);
            if c >= self.cos_cap && best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        match best {
            Some((i, _)) => Landing::Sensor(SensorId::from_index(i)),
            None => Landing::Gap,
        }
    }
}

/// Inner transparent and outer opaque layers with identical angular centers.
#[derive(Clone, Debug)]
pub struct DualLayerLayout {
    pub inner: SensorLayout,
    pub outer: SensorLayout,
}

impl DualLayerLayout {
    pub fn build(
        n: usize,
        r_inner_cm: f64,
        r_outer_cm: f64,
        coverage: f64,
        max_polar: f64,
    ) -> Result<Self, GeometryError> {
        if !(r_inner_cm < r_outer_cm) {
            return Err(GeometryError::RadiiOrder { inner: r_inner_cm, outer: r_outer_cm });
        }
        let inner = SensorLayout::build(n, r_inner_cm, coverage, max_polar)?;
        let outer = inner.with_radius(r_outer_cm)?;
        Ok(Self { inner, outer })
    }

    /// Radial separation `ΔR` in cm.
    pub fn gap_cm(&self) -> f64 {
        self.outer.radius_cm() - self.inner.radius_cm()
    }

    /// Index alignment between the layers is the identity.
    pub fn aligned(&self, inner: SensorId) -> SensorId {
        inner
    }
}

/// Born weights per sensor plus the undetected (gap) remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMap {
    centers: Vec<Direction>,
    weights: Vec<f64>,
    gap_weight: f64,
}

impl ReferenceMap {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(centers: Vec<Direction>, weights: Vec<f64>, gap_weight: f64) -> Result<Self, GeometryError> {
        if centers.len() != weights.len() {
            return Err(GeometryError::BadMap("centers and weights differ in length".into()));
        }
        if weights.is_empty() {
            return Err(GeometryError::BadMap("no sensors".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            if weights[i] == 0.0 {
                return Err(GeometryError::ZeroWeight(SensorId::from_index(i)));
            }
            return Err(GeometryError::BadMap(format!("sensor {} weight {} is not positive", i + 1, weights[i])));
        }
        if !(gap_weight.is_finite() && gap_weight >= 0.0) {
            return Err(GeometryError::BadMap(format!("gap weight {gap_weight} is negative")));
        }
        let total: f64 = weights.iter().sum::<f64>() + gap_weight;
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(GeometryError::BadMap(format!("weights sum to {total:.15}, not 1")));
        }
        Ok(Self { centers, weights, gap_weight })
    }

    pub fn sensor_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, id: SensorId) -> f64 {
        self.weights[id.index()]
    }

    pub fn gap_weight(&self) -> f64 {
        self.gap_weight
    }

    pub fn centers(&self) -> &[Direction] {
        &self.centers
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.gap_weight
    }

    /// The map restricted to detected outcomes and renormalised.
    pub fn conditional_on_detection(&self) -> Self {
        let s: f64 = self.weights.iter().sum();
        Self { centers: self.centers.clone(), weights: self.weights.iter().map(|w| w / s).collect(), gap_weight: 0.0 }
    }

    /// `sensor_id,theta_rad,phi_rad,weight` rows, then `gap,,,w_gap`;
    /// 12 significant digits throughout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GeometryError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sensor_id", "theta_rad", "phi_rad", "weight"])?;
        for (i, (c, wt)) in self.centers.iter().zip(&self.weights).enumerate() {
            w.write_record([(i + 1).to_string(), sig12(c.theta), sig12(c.phi), sig12(*wt)])?;
        }
        w.write_record(["gap", "", "", &sig12(self.gap_weight)])?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeometryError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["sensor_id", "theta_rad", "phi_rad", "weight"] {
            return Err(GeometryError::BadMap("expected header sensor_id,theta_rad,phi_rad,weight".into()));
        }
        let mut centers = Vec::new();
        let mut weights = Vec::new();
        let mut gap = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let num = |j: usize| -> Result<f64, GeometryError> {
                field(j).parse::<f64>().map_err(|_| GeometryError::BadMap(format!("data row {}: bad number '{}'", row + 1, field(j))))
            };
            if gap.is_some() {
                return Err(GeometryError::BadMap("rows after the gap row".into()));
            }
            if field(0) == "gap" {
                gap = Some(num(3)?);
                continue;
            }
            let id: usize = field(0).parse().map_err(|_| GeometryError::BadMap(format!("data row {}: bad sensor id", row + 1)))?;
            if id != weights.len() + 1 {
                return Err(GeometryError::BadMap(format!("sensor ids must run 1..N in order; found {id} at row {}", row + 1)));
            }
            centers.push(Direction::new(num(1)?, num(2)?));
            weights.push(num(3)?);
        }
        let gap = gap.ok_or_else(|| GeometryError::BadMap("missing final gap row".into()))?;
        Self::new(centers, weights, gap)
    }
}

fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Product-grid rule over a cap: Gauss-Legendre in the angular distance
/// from the center, uniform in the azimuth around it.
#[derive(Clone, Copy, Debug)]
pub struct CapQuadrature {
    pub radial: usize,
    pub azimuthal: usize,
}

impl Default for CapQuadrature {
    fn default() -> Self {
        Self { radial: 32, azimuthal: 64 }
    }
}

impl CapQuadrature {
    /// `∫_cap p dΩ` for an azimuthally symmetric density.
    pub fn integrate(&self, center: &Direction, cap_radius: f64, profile: &DiffractionProfile) -> f64 {
        let (st, ct) = center.theta.sin_cos();
        let dalpha = TAU / self.azimuthal as f64;
        let alphas: Vec<f64> = (0..self.azimuthal).map(|j| (j as f64 + 0.5) * dalpha).map(f64::cos).collect();
        let mut total = 0.0;
        for (rho, w) in gauss_legendre(self.radial, 0.0, cap_radius) {
            let (sr, cr) = rho.sin_cos();
            let ring: f64 = alphas
                .iter()
                .map(|&ca| {
                    let z = (cr * ct - sr * st * ca).clamp(-1.0, 1.0);
                    profile.pdf_at(z.acos())
                })
                .sum();
            total += w * sr * ring * dalpha;
        }
        total
    }
}

/// Per-sensor Born weights `w_k = ∫_cap p dΩ`, gap weight `1 - Σ w_k`.
pub fn sensor_weights(layout: &SensorLayout, profile: &DiffractionProfile) -> Result<ReferenceMap, GeometryError> {
    sensor_weights_with(layout, profile, CapQuadrature::default())
}

pub fn sensor_weights_with(
    layout: &SensorLayout,
    profile: &DiffractionProfile,
    rule: CapQuadrature,
) -> Result<ReferenceMap, GeometryError> {
    let weights: Vec<f64> = layout
        .centers()
        .iter()
        .map(|c| rule.integrate(c, layout.cap_angular_radius(), profile))
        .collect();
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(GeometryError::ZeroWeight(SensorId::from_index(i)));
    }
    let sum: f64 = weights.iter().sum();
    if sum > 1.0 + ReferenceMap::SUM_TOLERANCE {
        return Err(GeometryError::BadMap(format!("cap weights sum to {sum}, above 1")));
    }
    let gap = (1.0 - sum).max(0.0);
    ReferenceMap::new(layout.centers().to_vec(), weights, gap)
}

/// Monte Carlo estimate of the reference map: sample directions from the
/// profile and count cap hits. Returns `(weights, standard errors)` with the
/// gap as the last element.
pub fn monte_carlo_weights(
    layout: &SensorLayout,
    profile: &DiffractionProfile,
    samples: u64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let n = layout.sensor_count();
    let mut counts = vec![0u64; n + 1];
    let mut s = Substream::new(seed, StreamDomain::CrossCheck, 0);
    for _ in 0..samples {
        let (theta, phi) = profile.sample_direction(s.uniform(), s.uniform());
        match layout.locate(&Direction::new(theta, phi)) {
            Landing::Sensor(id) => counts[id.index()] += 1,
            Landing::Gap => counts[n] += 1,
        }
    }
    let m = samples as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let errs = weights.iter().map(|&p| (p * (1.0 - p) / m).sqrt()).collect();
    (weights, errs)
}
