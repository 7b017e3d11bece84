//! Normalization, splitting, right-hand side and trajectory properties of
//! the perturbation system.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use oseen::corpus::{field_corpus_with, hermite_function, CorpusSpace};
use oseen::field::ModalField;
use oseen::fit::ScalingFit;
use oseen::grid::{build_grid, MapKind, RadialGrid};
use oseen::nonlinear::{
    energy_inequality_check, evolve, fit_decay_rate, measure_relaxation, mode2_initial, nonlinear_rhs,
    normalize_perturbation, split_radial, EnergySpace, EvolveOptions, RelaxationRun, TrajectoryRecord, VortexState,
};
use oseen::profiles::g;
use oseen::radial::{WeightedRadialFunction, C64};

fn grid(n: usize) -> Arc<RadialGrid> {
    Arc::new(build_grid(n, 30.0, MapKind::default()).unwrap())
}

#[test]
fn field_in_x1_is_left_unchanged() {
    let gr = grid(120);
    let w0 = field_corpus_with(&gr, CorpusSpace::X1, 11, 1).remove(0).scale(0.05);
    let s = normalize_perturbation(&w0, 10.0).unwrap();
    assert_eq!(s.alpha, 10.0);
    assert!(s.field.add(&w0.scale(-1.0)).x_norm() < 1e-12);
}

#[test]
fn gradient_direction_lands_in_the_shift() {
    let gr = grid(160);
    let eps = 1e-3;
    // ε∂₁G = -(ε/2) ξ₁ G, whose e^{iθ} coefficient is -(ε/4) r G.
    let w1 = WeightedRadialFunction::from_physical_fn(gr.clone(), 1, |r| C64::new(-0.25 * eps * r * g(r), 0.0));
    let w0 = ModalField::from_modes(gr.clone(), vec![w1]).unwrap().truncated(4);
    let s = normalize_perturbation(&w0, 1.0).unwrap();
    let (mx, my) = s.field.first_moment();
    assert!(mx.hypot(my) < 1e-8);
    // Only the second-order remainder of the shift survives.
    assert!(s.field.x_norm() < 2e-3 * w0.x_norm(), "{}", s.field.x_norm() / w0.x_norm());
}

#[test]
fn random_field_loses_mean_and_moment() {
    let gr = grid(160);
    let w0 = field_corpus_with(&gr, CorpusSpace::X, 5, 1).remove(0).scale(0.05);
    assert!(w0.mean().abs() > 1e-3);
    let s = normalize_perturbation(&w0, 5.0).unwrap();
    assert!((s.alpha - (5.0 + w0.mean())).abs() < 1e-14);
    assert!(s.field.mean().abs() < 1e-10);
    let (mx, my) = s.field.first_moment();
    assert!(mx.hypot(my) < 1e-8, "{mx} {my}");
}

#[test]
fn zero_circulation_with_moment_is_rejected() {
    let gr = grid(80);
    let w0 = field_corpus_with(&gr, CorpusSpace::X0, 3, 1).remove(0);
    assert!(normalize_perturbation(&w0, 0.0).is_err());
}

#[test]
fn radial_split_examples() {
    let gr = grid(100);
    let mut axi = ModalField::zeros(gr.clone(), 4);
    axi.modes[0] = hermite_function(gr.clone(), 0, 2);
    let s = VortexState::new(1.0, axi.clone()).unwrap();
    let (r, p) = split_radial(&s);
    assert_eq!(r.modes[0].values, axi.modes[0].values);
    assert_eq!(p.x_norm(), 0.0);

    let mut m3 = ModalField::zeros(gr.clone(), 4);
    m3.modes[3] = hermite_function(gr.clone(), 3, 1);
    let (r, p) = split_radial(&VortexState::new(1.0, m3.clone()).unwrap());
    assert_eq!(r.x_norm(), 0.0);
    assert_eq!(p.modes[3].values, m3.modes[3].values);
}

/// `w₂(r) = r² e^{-r²/4}(1 + i r²/2)`: a sheared mode-2 profile whose
/// self-interaction feeds mode 0.
fn spiral(r: f64) -> C64 {
    r * r * (-r * r / 4.0).exp() * C64::new(1.0, 0.5 * r * r)
}

fn spiral_dr(r: f64) -> C64 {
    (-r * r / 4.0).exp() * (C64::new(2.0 * r - 0.5 * r.powi(3), 0.0) * C64::new(1.0, 0.5 * r * r) + C64::new(0.0, r.powi(3)))
}

fn spiral_omega(x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    2.0 * (spiral(r) * C64::from_polar(1.0, 2.0 * y.atan2(x))).re
}

fn direct_velocity(x: f64, y: f64) -> (f64, f64) {
    let rule = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    let n_phi = 128;
    let (mut u1, mut u2) = (0.0, 0.0);
    for k in 0..n_phi {
        let phi = 2.0 * PI * k as f64 / n_phi as f64;
        let (s, c) = phi.sin_cos();
        let line: f64 = (0..16).map(|p| rule.integrate(p as f64, p as f64 + 1.0, |rho| spiral_omega(x + rho * c, y + rho * s))).sum();
        u1 += s * line;
        u2 -= c * line;
    }
    (u1 / n_phi as f64, u2 / n_phi as f64)
}

#[test]
fn mode_zero_feedback_matches_direct_advection() {
    let gr = grid(160);
    let mut f = ModalField::zeros(gr.clone(), 4);
    f.modes[2] = WeightedRadialFunction::from_physical_fn(gr.clone(), 2, spiral);
    let rhs = nonlinear_rhs(&VortexState::new(0.0, f).unwrap()).unwrap();
    assert!(rhs.mean().abs() < 1e-12);
    let model = rhs.modes[0].physical_values();
    let n_theta = 32;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for target in [0.8, 1.6, 2.6] {
        let j = gr.nodes.iter().enumerate().min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs())).unwrap().0;
        let r = gr.nodes[j];
        let mut mean = 0.0;
        for k in 0..n_theta {
            let th = 2.0 * PI * k as f64 / n_theta as f64;
            let e = C64::from_polar(1.0, 2.0 * th);
            let dwdr = 2.0 * (spiral_dr(r) * e).re;
            let dwdth_r = 2.0 * (C64::new(0.0, 2.0) * spiral(r) * e).re / r;
            let (s, c) = th.sin_cos();
            let (u1, u2) = direct_velocity(r * c, r * s);
            let (ur, ut) = (u1 * c + u2 * s, -u1 * s + u2 * c);
            mean += ur * dwdr + ut * dwdth_r;
        }
        mean /= n_theta as f64;
        worst = worst.max((model[j].re + mean).abs());
        scale = scale.max(mean.abs());
    }
    assert!(scale > 1e-3, "feedback too small to test: {scale}");
    assert!(worst / scale < 1e-6, "relative feedback error {:.3e}", worst / scale);
}

#[test]
fn mean_and_moment_are_conserved_along_a_run() {
    let gr = grid(96);
    let w0 = field_corpus_with(&gr, CorpusSpace::X1, 21, 1).remove(0).scale(0.05).truncated(8);
    let rec = evolve(&VortexState::new(50.0, w0).unwrap(), 1.0, &EvolveOptions::default()).unwrap();
    assert!(rec.mean.iter().all(|m| m.abs() < 1e-10));
    assert!(rec.moment.iter().all(|m| m.abs() < 1e-6));
    assert!(rec.norm_r.iter().chain(&rec.norm_perp).all(|v| *v >= 0.0));
    assert!(rec.m_value.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn axisymmetric_data_contract_at_rate_one() {
    let gr = grid(120);
    let mut f = ModalField::zeros(gr.clone(), 4);
    f.modes[0] = hermite_function(gr.clone(), 0, 1).scale(C64::new(0.05, 0.0)).add(&hermite_function(gr.clone(), 0, 2).scale(C64::new(0.05, 0.0)));
    let rec = evolve(&VortexState::new(20.0, f).unwrap(), 3.0, &EvolveOptions::default()).unwrap();
    let n0 = rec.norm_r[0];
    for (t, v) in rec.tau.iter().zip(&rec.norm_r) {
        assert!(*v <= (-t).exp() * n0 * (1.0 + 1e-6), "tau {t}: {v} vs {}", (-t).exp() * n0);
    }
}

#[test]
fn mode_two_baseline_rate_is_one() {
    let gr = grid(120);
    let rec = evolve(&VortexState::new(0.0, mode2_initial(&gr, 4, 0.1)).unwrap(), 3.0, &EvolveOptions::default()).unwrap();
    let fit = fit_decay_rate(&rec.tau, &rec.norm_perp, (0.5, 3.0)).unwrap();
    assert!((fit.rate - 1.0).abs() < 1e-4, "{}", fit.rate);
}

#[test]
fn energy_equalities_on_gap_eigenfunctions() {
    let gr = grid(160);
    let mut d = ModalField::zeros(gr.clone(), 2);
    d.modes[1] = hermite_function(gr.clone(), 1, 0);
    let r = energy_inequality_check(&d, EnergySpace::X0).unwrap();
    assert!((r.energy - 0.5 * r.norm_sq).abs() < 1e-10 * r.norm_sq);
    let mut q = ModalField::zeros(gr.clone(), 2);
    q.modes[2] = hermite_function(gr.clone(), 2, 0);
    q.modes[0] = hermite_function(gr.clone(), 0, 1);
    let r = energy_inequality_check(&q, EnergySpace::X1).unwrap();
    assert!((r.energy - r.norm_sq).abs() < 1e-10 * r.norm_sq);
    assert!(r.holds);
}

#[test]
fn synthetic_cube_root_rates_give_slope_one_third() {
    let alphas = [100.0, 300.0, 1000.0, 3000.0];
    let runs: Vec<RelaxationRun> = alphas
        .iter()
        .map(|&a: &f64| {
            let rho = a.cbrt();
            let tau: Vec<f64> = (0..=40).map(|k| 0.01 * k as f64).collect();
            let norm_perp = tau.iter().map(|t| (-rho * t).exp()).collect();
            let record = TrajectoryRecord { alpha: a, tau, norm_perp, ..TrajectoryRecord::default() };
            RelaxationRun { alpha: a, tau0: 0.0, record, window: (0.0, 0.4), radial_window: None }
        })
        .collect();
    let rep = measure_relaxation(&runs).unwrap();
    let ScalingFit { slope, r_squared, .. } = rep.scaling;
    assert!((slope - 1.0 / 3.0).abs() < 1e-10);
    assert!((r_squared - 1.0).abs() < 1e-12);
}
