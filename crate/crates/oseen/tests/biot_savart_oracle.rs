//! Mode-wise velocities against a direct planar Biot–Savart integral.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use oseen::biot_savart::VelocitySolver;
use oseen::field::ModalField;
use oseen::grid::{build_grid, MapKind};
use oseen::profiles::g;
use oseen::radial::{WeightedRadialFunction, C64};

const PHASE: f64 = 0.3;

/// `ω(x) = G(r) + 0.8 r cos θ e^{-r²/4} + r² cos(2θ + 0.3) e^{-r²/6}`.
fn omega(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let th = y.atan2(x);
    g(r2.sqrt()) + 0.8 * x * (-r2 / 4.0).exp() + r2 * (2.0 * th + PHASE).cos() * (-r2 / 6.0).exp()
}

fn modal() -> ModalField {
    let grid = Arc::new(build_grid(200, 30.0, MapKind::default()).unwrap());
    let w0 = WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(g(r), 0.0));
    let w1 = WeightedRadialFunction::from_physical_fn(grid.clone(), 1, |r| C64::new(0.4 * r * (-r * r / 4.0).exp(), 0.0));
    let w2 = WeightedRadialFunction::from_physical_fn(grid.clone(), 2, |r| {
        C64::from_polar(0.5 * r * r * (-r * r / 6.0).exp(), PHASE)
    });
    ModalField::from_modes(grid, vec![w0, w1, w2]).unwrap()
}

/// `u(x) = (2π)⁻¹ ∫₀^{2π} ∫₀^∞ (sin φ, -cos φ) ω(x + ρ e_φ) dρ dφ`,
/// Gauss–Legendre panels in `ρ`, trapezoid in `φ`.
fn direct_velocity(x: f64, y: f64) -> (f64, f64) {
    let rule = GaussLegendre::new(NonZeroUsize::new(24).unwrap());
    let panels: Vec<(f64, f64)> = (0..24).map(|k| (k as f64, k as f64 + 1.0)).collect();
    let n_phi = 256;
    let (mut u1, mut u2) = (0.0, 0.0);
    for k in 0..n_phi {
        let phi = 2.0 * PI * k as f64 / n_phi as f64;
        let (s, c) = phi.sin_cos();
        let mut line = 0.0;
        for &(a, b) in &panels {
            line += rule.integrate(a, b, |rho| omega(x + rho * c, y + rho * s));
        }
        u1 += s * line;
        u2 -= c * line;
    }
    let h = 1.0 / n_phi as f64;
    (u1 * h, u2 * h)
}

#[test]
fn modewise_velocity_matches_planar_convolution() {
    let field = modal();
    let grid = field.grid.clone();
    let vel = VelocitySolver::new(grid.clone(), 2).unwrap().velocity_field(&field).unwrap();
    let theta = 0.7f64;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for target in [0.4, 1.1, 2.0, 3.5, 6.0] {
        let j = grid.nodes.iter().enumerate().min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs())).unwrap().0;
        let r = grid.nodes[j];
        let mut ur = vel[0].u_r[j].re;
        let mut ut = vel[0].u_theta[j].re;
        for v in &vel[1..] {
            let e = C64::from_polar(1.0, v.mode as f64 * theta);
            ur += 2.0 * (v.u_r[j] * e).re;
            ut += 2.0 * (v.u_theta[j] * e).re;
        }
        let (s, c) = theta.sin_cos();
        let model = (ur * c - ut * s, ur * s + ut * c);
        let direct = direct_velocity(r * c, r * s);
        worst = worst.max((model.0 - direct.0).hypot(model.1 - direct.1));
        scale = scale.max(direct.0.hypot(direct.1));
    }
    assert!(scale > 1e-2);
    assert!(worst / scale < 1e-6, "relative velocity error {:.3e}", worst / scale);
}

#[test]
fn synthesized_vorticity_matches_analytic_field() {
    let field = modal();
    for (r, th) in [(0.5, 0.2), (1.7, 2.5), (3.2, -1.0)] {
        let want = omega(r * f64::cos(th), r * f64::sin(th));
        assert!((field.eval(r, th) - want).abs() < 1e-10);
    }
}
