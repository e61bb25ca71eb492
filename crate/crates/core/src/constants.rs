//! CODATA 2018 constants in SI units, 10 significant digits.

/// Planck constant, J s (exact).
pub const PLANCK: f64 = 6.626_070_150e-34;
/// Electron rest mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_702e-31;
/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// One keV in joules.
pub const KEV: f64 = 1.0e3 * ELEMENTARY_CHARGE;
/// Electron rest energy m c^2 in joules.
pub const ELECTRON_REST_ENERGY: f64 = ELECTRON_MASS * SPEED_OF_LIGHT * SPEED_OF_LIGHT;
