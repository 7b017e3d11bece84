//! Closed-form profiles of the Lamb-Oseen vortex and the coefficient
//! functions of the mode operators.
//!
//! Everything is expressed in self-similar variables. The vorticity profile
//! is `G(r) = e^{-r²/4}/(4π)`, the angular velocity is
//! `φ(r) = (1 - e^{-r²/4})/(2π r²)` and `g = G`.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Below this value of `r²` the angular velocity switches to its Taylor series.
pub const PHI_SERIES_SWITCH: f64 = 1e-2;

/// `1/(8π)`, the supremum of `φ`, attained at the origin.
pub const PHI_MAX: f64 = 1.0 / (8.0 * PI);

/// Oseen vorticity profile `G(r) = e^{-r²/4}/(4π)`.
pub fn gaussian_profile(r: f64) -> f64 {
    (-0.25 * r * r).exp() / (4.0 * PI)
}

/// Weight function `g(r) = e^{-r²/4}/(4π)`.
pub fn g(r: f64) -> f64 {
    gaussian_profile(r)
}

/// Square root of `g`, evaluated without forming `g` so it stays finite
/// and accurate far into the tail.
pub fn sqrt_g(r: f64) -> f64 {
    (-0.125 * r * r).exp() / (4.0 * PI).sqrt()
}

/// Angular velocity `φ(r) = (1 - e^{-r²/4})/(2π r²)`, continuous at `r = 0`.
pub fn phi(r: f64) -> f64 {
    if r * r < PHI_SERIES_SWITCH {
        phi_series(r)
    } else {
        phi_direct(r)
    }
}

/// Direct branch of `φ`, using `expm1` for the numerator.
pub fn phi_direct(r: f64) -> f64 {
    let x = 0.25 * r * r;
    -(-x).exp_m1() / (2.0 * PI * r * r)
}

/// Taylor branch of `φ` around the origin: `φ = (1/8π)·Σ (-x)^k/(k+1)!`, `x = r²/4`.
pub fn phi_series(r: f64) -> f64 {
    let x = 0.25 * r * r;
    PHI_MAX * series_one_minus_exp_over_x(x)
}

fn series_one_minus_exp_over_x(x: f64) -> f64 {
    // (1 - e^{-x})/x = Σ_{k≥0} (-x)^k/(k+1)!
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..24 {
        term *= -x / (k as f64 + 1.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Magnitude of the Oseen velocity field, `|v^G|(r) = r·φ(r)`.
pub fn oseen_azimuthal_speed(r: f64) -> f64 {
    r * phi(r)
}

/// `φ` continued to complex arguments (used on complex-scaled contours).
pub fn phi_complex(z: Complex64) -> Complex64 {
    let x = 0.25 * z * z;
    if (z * z).norm() < PHI_SERIES_SWITCH {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for k in 1..24 {
            term *= -x / (k as f64 + 1.0);
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum * PHI_MAX
    } else {
        (Complex64::new(1.0, 0.0) - (-x).exp()) / (2.0 * PI * z * z)
    }
}

/// Analytic continuation of `g^{1/2}(r) = e^{-r²/8}/sqrt(4π)`.
pub fn sqrt_g_complex(z: Complex64) -> Complex64 {
    (-0.125 * z * z).exp() / (4.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_at_origin() {
        assert!((gaussian_profile(0.0) - 0.079_577_471_545_947_67).abs() < 1e-15);
        assert_eq!(g(0.0), 1.0 / (4.0 * PI));
    }

    #[test]
    fn phi_limits() {
        assert!((phi(0.0) - PHI_MAX).abs() < 1e-17);
        assert!((phi(1e-6) - PHI_MAX * (1.0 - 1e-12 / 8.0)).abs() < 1e-17);
        let expected = (1.0 - (-1.0f64).exp()) / (8.0 * PI);
        assert!((phi(2.0) - expected).abs() < 1e-16);
    }

    #[test]
    fn branches_agree() {
        let mut r = 0.05;
        while r <= 0.5 {
            assert!((phi_series(r) - phi_direct(r)).abs() < 1e-16, "r = {r}");
            r += 0.001;
        }
    }

    #[test]
    fn ratio_identity() {
        for &r in &[0.3, 1.0, 2.5, 6.0] {
            let lhs = g(r) / phi(r);
            let rhs = r * r * (-r * r / 4.0).exp() / (2.0 * (1.0 - (-r * r / 4.0).exp()));
            assert!((lhs - rhs).abs() < 1e-14 * rhs.abs());
        }
    }

    #[test]
    fn complex_phi_matches_real_axis() {
        for &r in &[0.01, 0.08, 0.5, 3.0, 12.0] {
            let z = phi_complex(Complex64::new(r, 0.0));
            assert!((z.re - phi(r)).abs() < 1e-16 && z.im.abs() < 1e-18);
        }
        let s = sqrt_g_complex(Complex64::new(3.0, 0.0)).re;
        assert!((s * s - g(3.0)).abs() < 1e-17);
    }
}
