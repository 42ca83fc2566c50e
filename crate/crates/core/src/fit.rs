//! Log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::correctors::mu;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum RateModel {
    /// `y = C x^s`.
    Power,
    /// `y = C x^s ln(r0 / x)`.
    PowerLog { r0: f64 },
    /// `y = C x^s ln(r0 / x) mu_2(r0 / x)`, the strong-error model.
    PowerLogGauge { r0: f64 },
}

impl RateModel {
    /// Factor divided out of `y` before the log-log fit.
    pub fn divisor(&self, x: f64) -> f64 {
        match *self {
            RateModel::Power => 1.0,
            RateModel::PowerLog { r0 } => (r0 / x).ln(),
            RateModel::PowerLogGauge { r0 } => (r0 / x).ln() * mu(2, r0 / x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln(y / divisor(x))` against `ln x`.
pub fn fit_rate(xs: &[f64], ys: &[f64], model: RateModel) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "{} abscissae for {} values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "rate fit needs 3 points, got {}",
            xs.len()
        )));
    }
    let mut lx = Vec::with_capacity(xs.len());
    let mut ly = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        if !(x > 0.0) {
            return Err(Error::NonPositiveValue(x));
        }
        if !(y > 0.0) {
            return Err(Error::NonPositiveValue(y));
        }
        let d = model.divisor(x);
        if !(d > 0.0) {
            return Err(Error::NonPositiveValue(d));
        }
        lx.push(x.ln());
        ly.push((y / d).ln());
    }
    let (slope, intercept, r_squared) = least_squares(&lx, &ly);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

/// Slope, intercept and coefficient of determination of `y ~ a x + b`.
/// A constant `y` has `R^2 = 1`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r_squared)
}

#[cfg(test)]
mod tests {
    use super::*;

    const XS: [f64; 4] = [0.125, 0.0625, 0.03125, 0.015625];

    #[test]
    fn identity_has_unit_slope() {
        let f = fit_rate(&XS, &XS, RateModel::Power).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_slope() {
        let f = fit_rate(&XS, &[3.0; 4], RateModel::Power).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn log_corrected_sequence() {
        // y = x^2 ln(1/x), evaluated independently of the fitting code
        let ys: Vec<f64> = XS.iter().map(|x| x * x * (1.0 / x).ln()).collect();
        let power = fit_rate(&XS, &ys, RateModel::Power).unwrap();
        assert!(power.slope > 1.6 && power.slope < 2.0, "{}", power.slope);
        let log = fit_rate(&XS, &ys, RateModel::PowerLog { r0: 1.0 }).unwrap();
        assert!((log.slope - 2.0).abs() < 0.01, "{}", log.slope);
    }

    #[test]
    fn gauge_model_recovers_the_exponent() {
        let ys: Vec<f64> = XS
            .iter()
            .map(|x| x * (2.0f64 / x).ln() * (2.0 + 2.0 / x).ln().sqrt())
            .collect();
        let f = fit_rate(&XS, &ys, RateModel::PowerLogGauge { r0: 2.0 }).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            fit_rate(&XS, &[1.0, 0.0, 1.0, 1.0], RateModel::Power),
            Err(Error::NonPositiveValue(_))
        ));
        assert!(fit_rate(&XS[..2], &[1.0, 2.0], RateModel::Power).is_err());
    }
}
