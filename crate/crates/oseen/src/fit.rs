//! Log-log regression for scaling laws.

use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};

/// Least-squares fit of `log y = intercept + slope·log x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    /// `e^{intercept}`, the fitted prefactor `C` in `y ≈ C x^{slope}`.
    pub fn prefactor(&self) -> f64 {
        self.intercept.exp()
    }

    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Fit a power law through positive points with strictly increasing `x`.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(OseenError::InvalidArgument(format!("need at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(OseenError::InvalidArgument("scaling fit needs positive finite values".into()));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(OseenError::InvalidArgument("x values must be strictly increasing".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = linear_regression(&lx, &ly);
    Ok(ScalingFit {
        x_values: points.iter().map(|p| p.0).collect(),
        y_values: points.iter().map(|p| p.1).collect(),
        slope,
        intercept,
        r_squared,
    })
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, r²)`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    (slope, intercept, r2)
}

/// Minimax (Chebyshev) line `y ≈ a + b x`; returns `(b, a, max deviation)`.
pub fn chebyshev_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let spread = |b: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (xi, yi) in x.iter().zip(y) {
            let r = yi - b * xi;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (hi - lo, 0.5 * (hi + lo))
    };
    let (b0, _, _) = linear_regression(x, y);
    let width = b0.abs().max(1.0);
    let (mut lo, mut hi) = (b0 - 4.0 * width, b0 + 4.0 * width);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (spread(c).0, spread(d).0);
    for _ in 0..200 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = spread(c).0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = spread(d).0;
        }
    }
    let b = 0.5 * (lo + hi);
    let (w, a) = spread(b);
    (b, a, 0.5 * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = (1..8).map(|k| (k as f64, (k as f64).sqrt())).collect();
        let f = fit_scaling(&pts).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, -1.0), (3.0, 1.0), (4.0, 1.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0), (1.0, 1.0), (3.0, 1.0), (4.0, 1.0)]).is_err());
    }

    #[test]
    fn chebyshev_recovers_line() {
        let x: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| 2.0 - 0.7 * v + if k % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let (b, a, e) = chebyshev_line(&x, &y);
        assert!((b + 0.7).abs() < 1e-8 && (a - 2.0).abs() < 1e-8 && (e - 0.01).abs() < 1e-8);
    }
}
