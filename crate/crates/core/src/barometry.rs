//! Temperature compensation and smoothing of MEMS pressure readings.
//!
//! A calibration model is a bivariate polynomial
//! `p_cal = sum_ij c_ij * p_raw^i * t^j` with `i, j` in `0..=3`, where only
//! the coefficients enabled by a [`Pattern`] may be non-zero. Row `i` of the
//! coefficient matrix multiplies `p_raw^i` and column `j` multiplies `t^j`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Polynomial degree per axis.
pub const ORDER: usize = 3;
const SIZE: usize = ORDER + 1;

/// Condition number of the standardized design above which a fit is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// One raw reading from a pressure sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureSample {
    /// Seconds, monotonic within a stream.
    pub timestamp: f64,
    /// Raw pressure in pascals.
    pub p_raw: f64,
    /// Sensor temperature in degrees Celsius.
    pub t: f64,
    pub sensor_id: String,
}

/// Sparsity pattern of the coefficient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// `A_p`: pressure polynomial only, temperature ignored.
    Pressure,
    /// `A_simple`: pressure polynomial plus a linear temperature term.
    Simple,
    /// `A_ind`: independent pressure and temperature polynomials.
    Independent,
    /// `A_m`: the manufacturer's layout, re-optimized.
    Manufacturer,
    /// `A'_m`: the manufacturer's layout with factory coefficients.
    ManufacturerFixed,
    /// `A_full`: every coefficient free.
    Full,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::Pressure,
        Pattern::Simple,
        Pattern::Independent,
        Pattern::Manufacturer,
        Pattern::ManufacturerFixed,
        Pattern::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Pressure => "A_p",
            Pattern::Simple => "A_simple",
            Pattern::Independent => "A_ind",
            Pattern::Manufacturer => "A_m",
            Pattern::ManufacturerFixed => "A'_m",
            Pattern::Full => "A_full",
        }
    }

    /// Whether `c_ij` (pressure power `i`, temperature power `j`) may be non-zero.
    pub fn is_free(self, i: usize, j: usize) -> bool {
        if i > ORDER || j > ORDER {
            return false;
        }
        match self {
            Pattern::Pressure => j == 0,
            Pattern::Simple => j == 0 || (i == 0 && j == 1),
            Pattern::Independent => j == 0 || i == 0,
            Pattern::Manufacturer | Pattern::ManufacturerFixed => j == 0 || (j == 1 && i < ORDER),
            Pattern::Full => true,
        }
    }

    /// Free `(i, j)` entries in row-major order.
    pub fn free_terms(self) -> Vec<(usize, usize)> {
        (0..SIZE)
            .flat_map(|i| (0..SIZE).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_free(i, j))
            .collect()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Pattern::ALL.iter().map(|p| p.name()).collect();
                Error::InvalidInput(format!("unknown pattern {s:?}, expected one of {names:?}"))
            })
    }
}

/// A temperature-compensation polynomial with its fitted residual variance.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationModel {
    pattern: Pattern,
    coeffs: [[f64; SIZE]; SIZE],
    sigma_p2: f64,
}

impl CalibrationModel {
    /// Builds a model, rejecting non-zero coefficients outside the pattern.
    pub fn new(pattern: Pattern, coeffs: [[f64; SIZE]; SIZE], sigma_p2: f64) -> Result<Self> {
        for (i, row) in coeffs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                ensure_finite(&format!("c_{i}{j}"), c)?;
                if c != 0.0 && !pattern.is_free(i, j) {
                    return Err(Error::InvalidInput(format!(
                        "c_{i}{j} = {c} is masked out by pattern {pattern}"
                    )));
                }
            }
        }
        if !(sigma_p2 >= 0.0) || !sigma_p2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma_p2 must be finite and >= 0, got {sigma_p2}"
            )));
        }
        Ok(Self { pattern, coeffs, sigma_p2 })
    }

    /// `p_cal = p_raw` with the given residual variance.
    pub fn identity(sigma_p2: f64) -> Result<Self> {
        let mut coeffs = [[0.0; SIZE]; SIZE];
        coeffs[1][0] = 1.0;
        Self::new(Pattern::Pressure, coeffs, sigma_p2)
    }

    /// Factory coefficients in the manufacturer layout, used as given.
    pub fn manufacturer(coeffs: [[f64; SIZE]; SIZE], sigma_p2: f64) -> Result<Self> {
        Self::new(Pattern::ManufacturerFixed, coeffs, sigma_p2)
    }

    pub fn order(&self) -> usize {
        ORDER
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    pub fn coeffs(&self) -> &[[f64; SIZE]; SIZE] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i][j]
    }

    /// Residual variance of the fit, in Pa^2.
    pub fn sigma_p2(&self) -> f64 {
        self.sigma_p2
    }

    /// Calibrated pressure for a raw reading.
    pub fn apply(&self, p_raw: f64, t: f64) -> Result<f64> {
        ensure_finite("p_raw", p_raw)?;
        ensure_finite("t", t)?;
        if p_raw <= 0.0 {
            return Err(Error::InvalidInput(format!("p_raw must be > 0, got {p_raw}")));
        }
        Ok(self.eval(p_raw, t))
    }

    fn eval(&self, p: f64, t: f64) -> f64 {
        // Horner in p over rows that are themselves Horner polynomials in t.
        self.coeffs.iter().rev().fold(0.0, |acc, row| {
            let row_value = row.iter().rev().fold(0.0, |r, &c| r * t + c);
            acc * p + row_value
        })
    }

    pub fn apply_sample(&self, sample: &PressureSample) -> Result<f64> {
        self.apply(sample.p_raw, sample.t)
    }
}

/// `p_cal = model(p_raw, t)`, summing only the unmasked coefficients.
pub fn apply_calibration(model: &CalibrationModel, p_raw: f64, t: f64) -> Result<f64> {
    model.apply(p_raw, t)
}

/// Residuals `p_cal - p_ref` of a model over reference pairs.
pub fn residuals(model: &CalibrationModel, samples: &[(PressureSample, f64)]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|(s, p_ref)| Ok(model.apply_sample(s)? - p_ref))
        .collect()
}

pub fn residual_sum_of_squares(model: &CalibrationModel, samples: &[(PressureSample, f64)]) -> Result<f64> {
    Ok(residuals(model, samples)?.iter().map(|r| r * r).sum())
}

/// Affine standardization `x -> (x - mean) / scale`.
#[derive(Clone, Copy, Debug)]
struct Standardizer {
    mean: f64,
    scale: f64,
}

impl Standardizer {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = var.sqrt();
        // A constant input leaves its columns at exactly zero, which the
        // rank check below reports.
        Self { mean, scale: if scale > 0.0 { scale } else { 1.0 } }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    /// Raw-power expansion of `((x - mean) / scale)^n` as coefficients of `x^k`.
    fn expand_power(&self, n: usize) -> [f64; SIZE] {
        let m = self.mean / self.scale;
        let mut out = [0.0; SIZE];
        for (k, slot) in out.iter_mut().enumerate().take(n + 1) {
            *slot = binomial(n, k) as f64 * (-m).powi((n - k) as i32) / self.scale.powi(k as i32);
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Least-squares fit of the free coefficients of `pattern` to reference pressures.
///
/// The regression runs on standardized pressure and temperature and the
/// result is expanded back into raw units; this relies on every pattern
/// being closed under lowering either power.
pub fn fit_calibration(samples: &[(PressureSample, f64)], pattern: Pattern) -> Result<CalibrationModel> {
    let terms = pattern.free_terms();
    let n = samples.len();
    if n < 2 * terms.len() {
        return Err(Error::InvalidInput(format!(
            "pattern {pattern} has {} free coefficients and needs at least {} samples, got {n}",
            terms.len(),
            2 * terms.len()
        )));
    }
    for (s, p_ref) in samples {
        ensure_finite("p_raw", s.p_raw)?;
        ensure_finite("t", s.t)?;
        ensure_finite("p_ref", *p_ref)?;
        if s.p_raw <= 0.0 {
            return Err(Error::InvalidInput(format!("p_raw must be > 0, got {}", s.p_raw)));
        }
    }

    let sp = Standardizer::fit(samples.iter().map(|(s, _)| s.p_raw));
    let st = Standardizer::fit(samples.iter().map(|(s, _)| s.t));

    let mut design = DMatrix::<f64>::zeros(n, terms.len());
    for (row, (s, _)) in samples.iter().enumerate() {
        let u = sp.apply(s.p_raw);
        let v = st.apply(s.t);
        for (col, &(i, j)) in terms.iter().enumerate() {
            design[(row, col)] = u.powi(i as i32) * v.powi(j as i32);
        }
    }
    let target = DVector::from_iterator(n, samples.iter().map(|(_, p)| *p));

    let norms: Vec<f64> = design.column_iter().map(|c| c.norm()).collect();
    if let Some(col) = norms.iter().position(|&c| !(c > 0.0)) {
        return Err(degenerate(terms[col], f64::INFINITY));
    }
    for (col, norm) in norms.iter().enumerate() {
        design.column_mut(col).unscale_mut(*norm);
    }

    let svd = design.svd(true, true);
    let (min_idx, &sigma_min) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one free coefficient");
    let sigma_max = svd.singular_values.max();
    let condition = sigma_max / sigma_min;
    if !(condition <= MAX_CONDITION) {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let weakest = v_t.row(min_idx);
        let col = weakest.transpose().iamax();
        return Err(degenerate(terms[col], condition));
    }
    let solution = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))?;

    let mut coeffs = [[0.0; SIZE]; SIZE];
    for (col, &(i, j)) in terms.iter().enumerate() {
        let b = solution[col] / norms[col];
        let pu = sp.expand_power(i);
        let tv = st.expand_power(j);
        for (k, pk) in pu.iter().enumerate().take(i + 1) {
            for (l, tl) in tv.iter().enumerate().take(j + 1) {
                coeffs[k][l] += b * pk * tl;
            }
        }
    }
    // Lower-closed patterns keep the expansion inside the mask; scrub any
    // rounding that would otherwise violate the zero invariant.
    for (i, row) in coeffs.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            if !pattern.is_free(i, j) {
                *c = 0.0;
            }
        }
    }

    let mut model = CalibrationModel::new(pattern, coeffs, 0.0)?;
    let rss = residual_sum_of_squares(&model, samples)?;
    model.sigma_p2 = rss / (n - terms.len()) as f64;
    Ok(model)
}

fn degenerate((i, j): (usize, usize), condition: f64) -> Error {
    let what = match (i, j) {
        (0, 0) => "the constant term".to_string(),
        (i, 0) => format!("p_raw^{i}"),
        (0, j) => format!("t^{j}"),
        (i, j) => format!("p_raw^{i} t^{j}"),
    };
    Error::DegenerateFit { direction: format!("c_{i}{j} ({what})"), condition }
}

/// Noise parameters of the scalar pressure smoother.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    /// Pa^2 added to the state variance per sample.
    pub process_variance: f64,
    /// Pa^2, normally the calibration residual variance.
    pub observation_variance: f64,
}

impl FilterConfig {
    pub fn new(process_variance: f64, observation_variance: f64) -> Result<Self> {
        let cfg = Self { process_variance, observation_variance };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Observation noise from the model's residual variance, process noise a
    /// hundredth of it.
    pub fn for_model(model: &CalibrationModel) -> Result<Self> {
        Self::new(model.sigma_p2() / 100.0, model.sigma_p2())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_variance", self.process_variance),
            ("observation_variance", self.observation_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Constant-state Kalman filter over a single pressure channel.
#[derive(Clone, Debug)]
pub struct PressureFilter {
    cfg: FilterConfig,
    estimate: f64,
    variance: f64,
    gain: f64,
    started: bool,
}

impl PressureFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, estimate: 0.0, variance: 0.0, gain: 1.0, started: false })
    }

    pub fn update(&mut self, observation: f64) -> Result<f64> {
        ensure_finite("pressure", observation)?;
        if !self.started {
            self.started = true;
            self.estimate = observation;
            self.variance = self.cfg.observation_variance;
            return Ok(observation);
        }
        let predicted = self.variance + self.cfg.process_variance;
        self.gain = predicted / (predicted + self.cfg.observation_variance);
        self.estimate += self.gain * (observation - self.estimate);
        self.variance = (1.0 - self.gain) * predicted;
        Ok(self.estimate)
    }

    /// Gain used by the last update.
    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Posterior variance after the last update.
    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Runs [`PressureFilter`] over a whole stream.
pub fn filter_pressure(stream: &[f64], cfg: &FilterConfig) -> Result<Vec<f64>> {
    if stream.is_empty() {
        return Err(Error::InvalidInput("cannot filter an empty stream".into()));
    }
    let mut filter = PressureFilter::new(*cfg)?;
    stream.iter().map(|&p| filter.update(p)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    order: usize,
    pattern: String,
    coeffs: Vec<f64>,
    sigma_p2: f64,
}

impl CalibrationModel {
    /// JSON text with `order`, `pattern`, row-major `coeffs` and `sigma_p2`.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            order: ORDER,
            pattern: self.pattern.name().to_string(),
            coeffs: self.coeffs.iter().flatten().copied().collect(),
            sigma_p2: self.sigma_p2,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.order != ORDER {
            return Err(Error::InvalidInput(format!(
                "only order {ORDER} models are supported, got {}",
                file.order
            )));
        }
        if file.coeffs.len() != SIZE * SIZE {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, got {}",
                SIZE * SIZE,
                file.coeffs.len()
            )));
        }
        let mut coeffs = [[0.0; SIZE]; SIZE];
        for (k, c) in file.coeffs.iter().enumerate() {
            coeffs[k / SIZE][k % SIZE] = *c;
        }
        Self::new(file.pattern.parse()?, coeffs, file.sigma_p2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(p: f64, t: f64) -> PressureSample {
        PressureSample { timestamp: 0.0, p_raw: p, t, sensor_id: "s".into() }
    }

    fn grid(model: &CalibrationModel) -> Vec<(PressureSample, f64)> {
        let mut out = Vec::new();
        for a in 0..12 {
            for b in 0..8 {
                let p = 95_000.0 + 1_000.0 * a as f64;
                let t = 5.0 + 6.0 * b as f64;
                out.push((sample(p, t), model.eval(p, t)));
            }
        }
        out
    }

    #[test]
    fn identity_model() {
        let mut c = [[0.0; 4]; 4];
        c[1][0] = 1.0;
        let m = CalibrationModel::new(Pattern::Pressure, c, 0.0).unwrap();
        assert_eq!(apply_calibration(&m, 101_325.0, 20.0).unwrap(), 101_325.0);
    }

    #[test]
    fn constant_offset() {
        let mut c = [[0.0; 4]; 4];
        c[0][0] = 5.0;
        c[1][0] = 1.0;
        let m = CalibrationModel::new(Pattern::Pressure, c, 0.0).unwrap();
        assert_eq!(m.apply(100_000.0, -3.0).unwrap(), 100_005.0);
    }

    #[test]
    fn fitted_simple_model_evaluates_like_generator() {
        let mut c = [[0.0; 4]; 4];
        c[0][0] = 120.0;
        c[1][0] = 0.999;
        c[0][1] = 0.8;
        let generator = CalibrationModel::new(Pattern::Simple, c, 0.0).unwrap();
        // Direct evaluation: 120 + 0.999 * 100000 + 0.8 * 25.
        let expected: f64 = 120.0 + 0.999 * 100_000.0 + 0.8 * 25.0;
        assert!((expected - 100_040.0).abs() < 1e-9);
        let fitted = fit_calibration(&grid(&generator), Pattern::Simple).unwrap();
        assert!((fitted.apply(100_000.0, 25.0).unwrap() - 100_040.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_and_non_positive() {
        let m = CalibrationModel::identity(0.0).unwrap();
        assert!(matches!(m.apply(f64::NAN, 20.0), Err(Error::InvalidInput(_))));
        assert!(matches!(m.apply(1e5, f64::INFINITY), Err(Error::InvalidInput(_))));
        assert!(matches!(m.apply(-1.0, 20.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn masked_coefficients_rejected() {
        let mut c = [[0.0; 4]; 4];
        c[1][1] = 1.0;
        assert!(CalibrationModel::new(Pattern::Simple, c, 0.0).is_err());
        assert!(CalibrationModel::new(Pattern::Manufacturer, c, 0.0).is_ok());
    }

    #[test]
    fn pattern_masks() {
        let count = |p: Pattern| p.free_terms().len();
        assert_eq!(count(Pattern::Pressure), 4);
        assert_eq!(count(Pattern::Simple), 5);
        assert_eq!(count(Pattern::Independent), 7);
        assert_eq!(count(Pattern::Manufacturer), 7);
        assert_eq!(count(Pattern::ManufacturerFixed), 7);
        assert_eq!(count(Pattern::Full), 16);
        assert!(Pattern::Manufacturer.is_free(2, 1));
        assert!(!Pattern::Manufacturer.is_free(3, 1));
        // Nesting used by the residual ordering.
        for (i, j) in Pattern::Pressure.free_terms() {
            assert!(Pattern::Simple.is_free(i, j));
        }
        for (i, j) in Pattern::Simple.free_terms() {
            assert!(Pattern::Manufacturer.is_free(i, j));
        }
    }

    #[test]
    fn pattern_names_round_trip() {
        for p in Pattern::ALL {
            assert_eq!(p.name().parse::<Pattern>().unwrap(), p);
        }
        assert!("A_x".parse::<Pattern>().is_err());
    }

    #[test]
    fn identity_data_gives_identity_model() {
        let samples: Vec<_> = (0..40)
            .map(|k| {
                let p = 98_000.0 + 100.0 * k as f64;
                (sample(p, 10.0 + k as f64), p)
            })
            .collect();
        let m = fit_calibration(&samples, Pattern::Pressure).unwrap();
        assert!((m.coeff(1, 0) - 1.0).abs() < 1e-9);
        assert!(m.coeff(0, 0).abs() < 1e-4);
        assert!(m.coeff(2, 0).abs() < 1e-12);
        assert!(m.sigma_p2() < 1e-12);
    }

    #[test]
    fn constant_temperature_is_degenerate_for_temperature_patterns() {
        let samples: Vec<_> = (0..40)
            .map(|k| {
                let p = 98_000.0 + 100.0 * k as f64;
                (sample(p, 21.0), p + 3.0)
            })
            .collect();
        match fit_calibration(&samples, Pattern::Simple) {
            Err(Error::DegenerateFit { direction, .. }) => assert!(direction.starts_with("c_01"), "{direction}"),
            other => panic!("expected degenerate fit, got {other:?}"),
        }
        assert!(fit_calibration(&samples, Pattern::Pressure).is_ok());
    }

    #[test]
    fn too_few_samples() {
        let samples: Vec<_> = (0..9).map(|k| (sample(1e5 + k as f64, k as f64), 1e5)).collect();
        assert!(matches!(fit_calibration(&samples, Pattern::Simple), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut c = [[0.0; 4]; 4];
        c[0][0] = 120.0;
        c[1][0] = 0.999;
        c[0][1] = 0.8;
        let m = CalibrationModel::new(Pattern::Simple, c, 2.5).unwrap();
        let back = CalibrationModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(CalibrationModel::from_json(r#"{"order":3,"pattern":"A_p","coeffs":[1],"sigma_p2":0}"#).is_err());
        assert!(CalibrationModel::from_json(
            r#"{"order":3,"pattern":"A_p","coeffs":[0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,0],"sigma_p2":0,"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn filter_fixed_point_and_first_sample() {
        let cfg = FilterConfig::new(0.01, 1.0).unwrap();
        let out = filter_pressure(&[101_325.0; 50], &cfg).unwrap();
        assert!(out.iter().all(|&p| p == 101_325.0));
        let out = filter_pressure(&[3.0, 5.0], &cfg).unwrap();
        assert_eq!(out[0], 3.0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn filter_rejects_bad_input() {
        assert!(filter_pressure(&[], &FilterConfig::new(1.0, 1.0).unwrap()).is_err());
        assert!(FilterConfig::new(0.0, 1.0).is_err());
        assert!(FilterConfig::new(1.0, -1.0).is_err());
        assert!(filter_pressure(&[1.0, f64::NAN], &FilterConfig::new(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn filter_defaults_follow_model_variance() {
        let m = CalibrationModel::identity(4.0).unwrap();
        let cfg = FilterConfig::for_model(&m).unwrap();
        assert_eq!(cfg.observation_variance, 4.0);
        assert_eq!(cfg.process_variance, 0.04);
        assert!(FilterConfig::for_model(&CalibrationModel::identity(0.0).unwrap()).is_err());
    }
}
