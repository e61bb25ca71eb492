//! Experiment configuration files.
//!
//! The format is a flat list of `[section]` headers and `key = value` lines.
//! `#` starts a comment. Dimensioned values take an optional unit suffix;
//! a bare number is read in the default unit listed below.
//!
//! | section    | key                 | default        | units            |
//! |------------|---------------------|----------------|------------------|
//! | `run`      | `mode`              | `single`       | `single`, `dual` |
//! | `run`      | `interpretation`    | `BHSI`         | `BHSI`, `MWI`, `CI` |
//! | `run`      | `electrons`         | `1000`         | count, at least 1 |
//! | `run`      | `seed`              | `1`            | integer          |
//! | `run`      | `workers`           | `0` (all cores)| integer          |
//! | `run`      | `emission`          | `comb`         | `comb`, `poisson`|
//! | `run`      | `output_dir`        | `run`          | path             |
//! | `run`      | `trace`             | `false`        | bool             |
//! | `beam`     | `energy`            | `5 keV`        | eV, keV, MeV     |
//! | `beam`     | `rate`              | `1 MHz`        | Hz, kHz, MHz, GHz|
//! | `pinhole`  | `diameter`          | `0.5 nm`       | pm, nm, um       |
//! | `profile`  | `kind`              | `airy`         | `airy`, `uniform`|
//! | `profile`  | `grid_points`       | `4096`         | count            |
//! | `profile`  | `override`          | none           | csv path         |
//! | `geometry` | `sensors`           | `1000`         | count            |
//! | `geometry` | `radius`            | `10 cm`        | mm, cm, m        |
//! | `geometry` | `inner_radius`      | `19.5 cm`      | mm, cm, m        |
//! | `geometry` | `outer_radius`      | `20 cm`        | mm, cm, m        |
//! | `geometry` | `coverage`          | `0.5`          | fraction         |
//! | `geometry` | `max_polar_angle`   | `89 deg`       | deg, rad         |
//! | `inner`    | `efficiency`        | `0.98`         | fraction         |
//! | `inner`    | `delay_mean`        | `1 ns`         | ps, ns, us       |
//! | `inner`    | `delay_sigma`       | `1 ns`         | ps, ns, us       |
//! | `inner`    | `dark_rate`         | `0 Hz`         | Hz, kHz, MHz     |
//! | `outer`    | `efficiency`        | `1.0`          | fraction         |
//! | `outer`    | `delay_mean`        | `0.1 ns`       | ps, ns, us       |
//! | `outer`    | `delay_sigma`       | `0.03 ns`      | ps, ns, us       |
//! | `outer`    | `dark_rate`         | `0 Hz`         | Hz, kHz, MHz     |
//! | `transit`  | `p_absorb`          | `0.005`        | probability      |
//! | `transit`  | `p_scatter`         | `0.01`         | probability      |
//! | `transit`  | `scatter_sigma`     | `1 deg`        | deg, rad         |
//! | `timing`   | `window`            | `6 ns`         | ps, ns, us       |
//! | `timing`   | `separation_factor` | `100`          | ratio            |
//! | `faults`   | `duplicate_inner`   | `0`            | probability      |
//! | `faults`   | `duplicate_outer`   | `0`            | probability      |
//!
//! A single-layer run uses `radius` and the `[outer]` response; a dual run
//! uses `inner_radius`, `outer_radius` and both responses.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::branching::InterpretationMode;
use crate::coincidence::{validate_timing, TimingConfig, TimingViolation};
use crate::detector::{FaultPlan, ResponseModel, TransitModel};
use crate::diffraction::{transit_time, DiffractionProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key '{key}' in section [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("timing hierarchy violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Timing(Vec<TimingViolation>),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApparatusMode {
    Single,
    Dual,
}

impl fmt::Display for ApparatusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApparatusMode::Single => "single",
            ApparatusMode::Dual => "dual",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emission {
    Comb,
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    Airy,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: ApparatusMode,
    pub interpretation: InterpretationMode,
    pub electrons: u64,
    pub seed: u64,
    pub workers: usize,
    pub emission: Emission,
    pub output_dir: PathBuf,
    pub trace: bool,
    pub energy_kev: f64,
    pub rate_mhz: f64,
    pub pinhole_nm: f64,
    pub profile_kind: ProfileKind,
    pub grid_points: usize,
    pub profile_override: Option<PathBuf>,
    pub sensors: usize,
    pub radius_cm: f64,
    pub inner_radius_cm: f64,
    pub outer_radius_cm: f64,
    pub coverage: f64,
    pub max_polar_rad: f64,
    pub inner: ResponseModel,
    pub outer: ResponseModel,
    pub transit: TransitModel,
    pub window_ns: f64,
    pub separation_factor: f64,
    pub faults: FaultPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: ApparatusMode::Single,
            interpretation: InterpretationMode::Bhsi,
            electrons: 1000,
            seed: 1,
            workers: 0,
            emission: Emission::Comb,
            output_dir: PathBuf::from("run"),
            trace: false,
            energy_kev: 5.0,
            rate_mhz: 1.0,
            pinhole_nm: 0.5,
            profile_kind: ProfileKind::Airy,
            grid_points: DiffractionProfile::DEFAULT_GRID_POINTS,
            profile_override: None,
            sensors: 1000,
            radius_cm: 10.0,
            inner_radius_cm: 19.5,
            outer_radius_cm: 20.0,
            coverage: 0.5,
            max_polar_rad: 89f64.to_radians(),
            inner: ResponseModel::inner_default(),
            outer: ResponseModel::outer_default(),
            transit: TransitModel::default(),
            window_ns: 6.0,
            separation_factor: TimingConfig::DEFAULT_SEPARATION_FACTOR,
            faults: FaultPlan::default(),
        }
    }
}

pub const PRESET_SINGLE: &str = include_str!("../../../../presets/paper-single.conf");
pub const PRESET_DUAL: &str = include_str!("../../../../presets/paper-dual.conf");

/// Built-in preset by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "paper-single" => Some(PRESET_SINGLE),
        "paper-dual" => Some(PRESET_DUAL),
        _ => None,
    }
}

#[derive(Clone, Copy)]
enum Unit {
    Energy,
    Time,
    Length,
    Aperture,
    Frequency,
    Angle,
}

impl Unit {
    /// Scale from `suffix` to the default unit.
    fn scale(self, suffix: &str) -> Option<f64> {
        let s = match (self, suffix) {
            (_, "") => 1.0,
            (Unit::Energy, "eV") => 1e-3,
            (Unit::Energy, "keV") => 1.0,
            (Unit::Energy, "MeV") => 1e3,
            (Unit::Time, "ps") => 1e-3,
            (Unit::Time, "ns") => 1.0,
            (Unit::Time, "us") => 1e3,
            (Unit::Time, "ms") => 1e6,
            (Unit::Time, "s") => 1e9,
            (Unit::Length, "mm") => 0.1,
            (Unit::Length, "cm") => 1.0,
            (Unit::Length, "m") => 100.0,
            (Unit::Aperture, "pm") => 1e-3,
            (Unit::Aperture, "nm") => 1.0,
            (Unit::Aperture, "um") => 1e3,
            (Unit::Frequency, "Hz") => 1.0,
            (Unit::Frequency, "kHz") => 1e3,
            (Unit::Frequency, "MHz") => 1e6,
            (Unit::Frequency, "GHz") => 1e9,
            (Unit::Angle, "deg") => 1.0,
            (Unit::Angle, "rad") => 180.0 / std::f64::consts::PI,
            _ => return None,
        };
        Some(s)
    }
}

struct Line<'a> {
    no: usize,
    value: &'a str,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Syntax { line: self.no, message: message.into() }
    }

    fn number(&self) -> Result<f64, ConfigError> {
        self.value.parse::<f64>().map_err(|_| self.err(format!("expected a number, got '{}'", self.value)))
    }

    fn quantity(&self, unit: Unit) -> Result<f64, ConfigError> {
        let v = self.value;
        let split = v.find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E').unwrap_or(v.len());
        // `e` only belongs to the number when followed by a digit or sign.
        let split = match v[..split].rfind(['e', 'E']) {
            Some(i) if !v[i + 1..].starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+') => i,
            _ => split,
        };
        let (num, suffix) = (v[..split].trim(), v[split..].trim());
        let x: f64 = num.parse().map_err(|_| self.err(format!("expected a number with optional unit, got '{v}'")))?;
        let scale = unit.scale(suffix).ok_or_else(|| self.err(format!("unsupported unit '{suffix}'")))?;
        Ok(x * scale)
    }

    fn integer(&self) -> Result<u64, ConfigError> {
        let cleaned: String = self.value.chars().filter(|&c| c != '_').collect();
        if let Ok(n) = cleaned.parse::<u64>() {
            return Ok(n);
        }
        match cleaned.parse::<f64>() {
            Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
            _ => Err(self.err(format!("expected a non-negative integer, got '{}'", self.value))),
        }
    }

    fn boolean(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "yes" | "on" => Ok(true),
            "false" | "no" | "off" => Ok(false),
            v => Err(self.err(format!("expected true or false, got '{v}'"))),
        }
    }

    fn text(&self) -> String {
        self.value.trim_matches('"').to_string()
    }
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::default();
    let mut section = String::new();
    let mut polar_deg = 89.0;
    let mut sigma_deg = 1.0;
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax { line: no, message: "unterminated section header".into() })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: no, message: format!("expected 'key = value', got '{content}'") })?;
        let key = key.trim();
        let l = Line { no, value: value.trim() };
        if l.value.is_empty() {
            return Err(l.err(format!("missing value for '{key}'")));
        }
        match (section.as_str(), key) {
            ("run", "mode") => {
                c.mode = match l.value {
                    "single" => ApparatusMode::Single,
                    "dual" => ApparatusMode::Dual,
                    v => return Err(l.err(format!("mode must be single or dual, got '{v}'"))),
                }
            }
            ("run", "interpretation") => c.interpretation = l.value.parse().map_err(|e: String| l.err(e))?,
            ("run", "electrons") => c.electrons = l.integer()?,
            ("run", "seed") => c.seed = l.integer()?,
            ("run", "workers") => c.workers = l.integer()? as usize,
            ("run", "emission") => {
                c.emission = match l.value {
                    "comb" => Emission::Comb,
                    "poisson" => Emission::Poisson,
                    v => return Err(l.err(format!("emission must be comb or poisson, got '{v}'"))),
                }
            }
            ("run", "output_dir") => c.output_dir = PathBuf::from(l.text()),
            ("run", "trace") => c.trace = l.boolean()?,
            ("beam", "energy") => c.energy_kev = l.quantity(Unit::Energy)?,
            ("beam", "rate") => c.rate_mhz = l.quantity(Unit::Frequency)? / 1e6,
            ("pinhole", "diameter") => c.pinhole_nm = l.quantity(Unit::Aperture)?,
            ("profile", "kind") => {
                c.profile_kind = match l.value {
                    "airy" => ProfileKind::Airy,
                    "uniform" => ProfileKind::Uniform,
                    v => return Err(l.err(format!("profile kind must be airy or uniform, got '{v}'"))),
                }
            }
            ("profile", "grid_points") => c.grid_points = l.integer()? as usize,
            ("profile", "override") => c.profile_override = Some(PathBuf::from(l.text())),
            ("geometry", "sensors") => c.sensors = l.integer()? as usize,
            ("geometry", "radius") => c.radius_cm = l.quantity(Unit::Length)?,
            ("geometry", "inner_radius") => c.inner_radius_cm = l.quantity(Unit::Length)?,
            ("geometry", "outer_radius") => c.outer_radius_cm = l.quantity(Unit::Length)?,
            ("geometry", "coverage") => c.coverage = l.number()?,
            ("geometry", "max_polar_angle") => polar_deg = l.quantity(Unit::Angle)?,
            ("inner" | "outer", k) => {
                let m = if section == "inner" { &mut c.inner } else { &mut c.outer };
                match k {
                    "efficiency" => m.efficiency = l.number()?,
                    "delay_mean" => m.delay_mean_ns = l.quantity(Unit::Time)?,
                    "delay_sigma" => m.delay_sigma_ns = l.quantity(Unit::Time)?,
                    "dark_rate" => m.dark_rate_hz = l.quantity(Unit::Frequency)?,
                    _ => return Err(unknown(no, &section, key)),
                }
            }
            ("transit", "p_absorb") => c.transit.p_absorb = l.number()?,
            ("transit", "p_scatter") => c.transit.p_scatter = l.number()?,
            ("transit", "scatter_sigma") => sigma_deg = l.quantity(Unit::Angle)?,
            ("timing", "window") => c.window_ns = l.quantity(Unit::Time)?,
            ("timing", "separation_factor") => c.separation_factor = l.number()?,
            ("faults", "duplicate_inner") => c.faults.duplicate_inner = l.number()?,
            ("faults", "duplicate_outer") => c.faults.duplicate_outer = l.number()?,
            _ => return Err(unknown(no, &section, key)),
        }
    }
    c.max_polar_rad = polar_deg.to_radians();
    c.transit.scatter_sigma_rad = sigma_deg.to_radians();
    c.validate()?;
    Ok(c)
}

fn unknown(line: usize, section: &str, key: &str) -> ConfigError {
    ConfigError::UnknownKey { line, section: section.to_string(), key: key.to_string() }
}

/// Reads a config file; a relative profile override is taken relative to
/// the file's directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text)?;
    if let (Some(p), Some(dir)) = (&cfg.profile_override, path.parent()) {
        if p.is_relative() {
            cfg.profile_override = Some(dir.join(p));
        }
    }
    Ok((cfg, text))
}

impl ExperimentConfig {
    pub fn period_ns(&self) -> f64 {
        1.0e3 / self.rate_mhz
    }

    /// Radius of the layer `Born-selection` happens on.
    pub fn selection_radius_cm(&self) -> f64 {
        match self.mode {
            ApparatusMode::Single => self.radius_cm,
            ApparatusMode::Dual => self.inner_radius_cm,
        }
    }

    /// The timing hierarchy implied by the geometry and response models.
    pub fn timing(&self) -> Result<TimingConfig, ConfigError> {
        let dt = transit_time(self.outer_radius_cm - self.inner_radius_cm, self.energy_kev)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(TimingConfig {
            dt_transit_ns: dt,
            tau_in_ns: self.inner.delay_mean_ns,
            tau_out_ns: self.outer.delay_mean_ns,
            window_ns: self.window_ns,
            period_ns: self.period_ns(),
            separation_factor: self.separation_factor,
        })
    }

    /// Checks every invariant; the error names the failing clause.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.electrons < 1 {
            return bad("electrons must be at least 1".into());
        }
        if self.sensors < 1 {
            return bad("sensors must be at least 1".into());
        }
        for (name, v) in [
            ("beam energy", self.energy_kev),
            ("beam rate", self.rate_mhz),
            ("pinhole diameter", self.pinhole_nm),
            ("timing window", self.window_ns),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.grid_points < 64 {
            return bad(format!("grid_points must be at least 64, got {}", self.grid_points));
        }
        if !(self.coverage > 0.0 && self.coverage <= 0.9) {
            return bad(format!("coverage must lie in (0, 0.9], got {}", self.coverage));
        }
        if !(self.max_polar_rad > 0.0 && self.max_polar_rad <= std::f64::consts::FRAC_PI_2) {
            return bad("max_polar_angle must lie in (0, 90] deg".into());
        }
        for (layer, m) in [("inner", &self.inner), ("outer", &self.outer)] {
            ResponseModel::new(m.efficiency, m.delay_mean_ns, m.delay_sigma_ns, m.dark_rate_hz)
                .map_err(|e| ConfigError::Invalid(format!("[{layer}] {e}")))?;
        }
        TransitModel::new(self.transit.p_absorb, self.transit.p_scatter, self.transit.scatter_sigma_rad)
            .map_err(|e| ConfigError::Invalid(format!("[transit] {e}")))?;
        for (name, p) in [("duplicate_inner", self.faults.duplicate_inner), ("duplicate_outer", self.faults.duplicate_outer)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("[faults] {name} must lie in [0, 1], got {p}"));
            }
        }
        match self.mode {
            ApparatusMode::Single => {
                if !(self.radius_cm > 0.0) {
                    return bad(format!("radius must be positive, got {}", self.radius_cm));
                }
                if self.faults.duplicate_inner > 0.0 {
                    return bad("[faults] duplicate_inner needs a dual-layer run".into());
                }
            }
            ApparatusMode::Dual => {
                if !(self.inner_radius_cm > 0.0 && self.inner_radius_cm < self.outer_radius_cm) {
                    return bad(format!(
                        "need 0 < inner_radius < outer_radius, got {} and {} cm",
                        self.inner_radius_cm, self.outer_radius_cm
                    ));
                }
                let violations = validate_timing(&self.timing()?);
                if !violations.is_empty() {
                    return Err(ConfigError::Timing(violations));
                }
            }
        }
        Ok(())
    }
}
