//! Relative altitude from a static base station and a moving rover.

use crate::error::{ensure_finite, Error, Result};

/// Dry-air atmosphere constants, U.S. Standard Atmosphere by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtmosphereConstants {
    /// Specific gas constant of dry air, J/(kg K).
    pub r_dry: f64,
    /// Gravity, m/s^2.
    pub g: f64,
    /// Temperature lapse rate, K/m.
    pub lapse_rate: f64,
    /// Sea-level pressure, Pa.
    pub p_std: f64,
    /// Sea-level temperature, K.
    pub t_std: f64,
}

impl Default for AtmosphereConstants {
    fn default() -> Self {
        Self { r_dry: 287.058, g: 9.80665, lapse_rate: 0.0065, p_std: 101_325.0, t_std: 288.15 }
    }
}

impl AtmosphereConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_dry", self.r_dry),
            ("g", self.g),
            ("lapse_rate", self.lapse_rate),
            ("p_std", self.p_std),
            ("t_std", self.t_std),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Scale height `R_dry T / g` in meters.
    pub fn scale_height(&self, temperature: f64) -> f64 {
        self.r_dry * temperature / self.g
    }
}

/// Rover altitude relative to the base at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AltitudeReading {
    pub timestamp: f64,
    /// Meters, rover minus base.
    pub delta_z: f64,
    /// m^2.
    pub variance: f64,
}

/// A time-sorted pressure channel with its per-sample variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureStream {
    /// `(timestamp s, pressure Pa)`.
    pub samples: Vec<(f64, f64)>,
    /// Pa^2.
    pub variance: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    ensure_finite(name, v)?;
    if v <= 0.0 {
        return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

/// `ln(p0 / p1)` computed so that swapping the arguments negates the result
/// bit for bit and power-of-two rescaling of both is exact.
fn log_ratio(p0: f64, p1: f64) -> f64 {
    if p0 >= p1 {
        ((p0 - p1) / p1).ln_1p()
    } else {
        -((p1 - p0) / p0).ln_1p()
    }
}

/// Hypsometric altitude difference `z1 - z0 = (R_dry T_v / g) ln(p0 / p1)`.
pub fn hypsometric_delta_z(p0: f64, p1: f64, t_v: f64, consts: &AtmosphereConstants) -> Result<f64> {
    check_positive("p0", p0)?;
    check_positive("p1", p1)?;
    check_positive("virtual temperature", t_v)?;
    consts.validate()?;
    Ok(consts.scale_height(t_v) * log_ratio(p0, p1))
}

/// Altitude difference under a linear temperature lapse starting at `t0`
/// on the `p0` level: `(T0 / lapse) (1 - (p1 / p0)^(R_dry lapse / g))`.
pub fn barometric_formula_delta_z(p0: f64, p1: f64, t0: f64, consts: &AtmosphereConstants) -> Result<f64> {
    check_positive("p0", p0)?;
    check_positive("p1", p1)?;
    check_positive("t0", t0)?;
    consts.validate()?;
    let exponent = consts.r_dry * consts.lapse_rate / consts.g;
    // expm1 keeps the small-lapse limit accurate.
    Ok(-(t0 / consts.lapse_rate) * (exponent * log_ratio(p1, p0)).exp_m1())
}

fn check_sorted(name: &str, samples: &[(f64, f64)]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{name} stream is empty")));
    }
    for (t, p) in samples {
        ensure_finite(&format!("{name} timestamp"), *t)?;
        check_positive(&format!("{name} pressure"), *p)?;
    }
    if let Some(w) = samples.windows(2).find(|w| w[1].0 < w[0].0) {
        return Err(Error::InvalidInput(format!(
            "{name} timestamps are not sorted ({} after {})",
            w[1].0, w[0].0
        )));
    }
    Ok(())
}

/// Linear interpolation of a sorted series at `t`, `None` outside its span.
pub fn interpolate(samples: &[(f64, f64)], t: f64) -> Option<f64> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t < first.0 || t > last.0 {
        return None;
    }
    let idx = samples.partition_point(|s| s.0 < t);
    if idx < samples.len() && samples[idx].0 == t {
        return Some(samples[idx].1);
    }
    let (t0, v0) = samples[idx - 1];
    let (t1, v1) = samples[idx];
    let w = (t - t0) / (t1 - t0);
    Some(v0 + w * (v1 - v0))
}

/// Altitude of every rover sample relative to the base station, with the
/// base pressure interpolated at the rover timestamp.
pub fn differential_altitude(
    base: &PressureStream,
    rover: &PressureStream,
    t_v: f64,
    consts: &AtmosphereConstants,
) -> Result<Vec<AltitudeReading>> {
    check_sorted("base", &base.samples)?;
    check_sorted("rover", &rover.samples)?;
    for (name, v) in [("base variance", base.variance), ("rover variance", rover.variance)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let start = base.samples[0].0;
    let end = base.samples[base.samples.len() - 1].0;
    let h = consts.scale_height(t_v);
    rover
        .samples
        .iter()
        .map(|&(timestamp, p1)| {
            let p0 = interpolate(&base.samples, timestamp)
                .ok_or(Error::OutOfRange { timestamp, start, end })?;
            let delta_z = hypsometric_delta_z(p0, p1, t_v, consts)?;
            let variance = (h / p0).powi(2) * base.variance + (h / p1).powi(2) * rover.variance;
            Ok(AltitudeReading { timestamp, delta_z, variance })
        })
        .collect()
}
