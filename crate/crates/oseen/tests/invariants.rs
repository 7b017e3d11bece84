//! Property tests of operator, propagator and field invariants.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use faer::Mat;
use oseen::corpus::{field_corpus_with, CorpusSpace};
use oseen::grid::{build_grid, MapKind, RadialGrid};
use oseen::linalg;
use oseen::nonlinear::{energy_inequality_check, lambda_skew_defect, normalize_perturbation, split_radial, EnergySpace};
use oseen::profiles::g;
use oseen::radial::{ModeBlocks, Subspace, WeightedRadialFunction, C64};
use oseen::semigroup::{heat_propagate, mehler_apply, propagator_norm};
use oseen::spectral::{eigenvalues, resolvent_norm_matrix, resolvent_norm_svd};
use proptest::prelude::*;

fn small_grid() -> Arc<RadialGrid> {
    static G: OnceLock<Arc<RadialGrid>> = OnceLock::new();
    G.get_or_init(|| Arc::new(build_grid(72, 25.0, MapKind::default()).unwrap())).clone()
}

fn field_grid() -> Arc<RadialGrid> {
    static G: OnceLock<Arc<RadialGrid>> = OnceLock::new();
    G.get_or_init(|| Arc::new(build_grid(120, 30.0, MapKind::default()).unwrap())).clone()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn numerical_range_lies_right_of_mode_gap(
        n in 1i32..6,
        beta in 0.0f64..1e4,
        re in prop::collection::vec(-1.0f64..1.0, 72),
        im in prop::collection::vec(-1.0f64..1.0, 72),
    ) {
        let h = ModeBlocks::new(small_grid(), n).unwrap().h(beta);
        let y: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
        let norm_sq: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        let mut q = C64::new(0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                q += y[i].conj() * h[(i, j)] * y[j];
            }
        }
        prop_assert!(q.re / norm_sq >= n as f64 / 2.0 - 1e-9);
    }

    #[test]
    fn resolvent_routes_agree_and_respect_spectral_distance(
        n in 1i32..4,
        beta in 0.0f64..2e3,
        lambda in -3e3f64..3e3,
    ) {
        let op = ModeBlocks::new(small_grid(), n).unwrap().h_operator(beta);
        let lanczos = resolvent_norm_matrix(&op.matrix, lambda).unwrap();
        let svd = resolvent_norm_svd(&op.matrix, lambda).unwrap();
        prop_assert!((lanczos - svd).abs() <= 1e-8 * svd);
        let spec = eigenvalues(&op, Subspace::Full).unwrap();
        let dist = spec
            .eigenvalues
            .iter()
            .map(|z| (*z - C64::new(0.0, lambda)).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(svd >= (1.0 - 1e-8) / dist);
        prop_assert!(svd <= 2.0 / n as f64 * (1.0 + 1e-8));
    }

    #[test]
    fn propagator_contracts_at_mode_rate(n in 1i32..5, beta in 0.0f64..5e3, tau in 0.05f64..2.0) {
        let op = ModeBlocks::new(small_grid(), n).unwrap().h_operator(beta);
        let v = propagator_norm(&op, tau, Subspace::Full).unwrap();
        prop_assert!(v <= (-(n as f64) * tau / 2.0).exp() * (1.0 + 1e-8));
    }

    #[test]
    fn hermitian_part_is_minus_l(n in 1i32..6, beta in -1e4f64..1e4) {
        let b = ModeBlocks::new(small_grid(), n).unwrap();
        let h = b.h(beta);
        let len = h.nrows();
        let sym = Mat::from_fn(len, len, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
        let diff = Mat::from_fn(len, len, |i, j| sym[(i, j)] - C64::new(b.neg_l[(i, j)], 0.0));
        prop_assert!(linalg::norm2(&diff).unwrap() <= 1e-10 * linalg::norm2(&sym).unwrap());
    }
}

proptest! {
    #![proptest_config(config(10))]

    #[test]
    fn mehler_matches_matrix_exponential(n in -4i32..=4, tau in 0.05f64..3.0, c in -0.5f64..0.5) {
        let gr = field_grid();
        let a = n.abs();
        let w = WeightedRadialFunction::from_scaled_fn(gr, n, |r| {
            C64::new(r.powi(a) * (1.0 + c * r * r) * (-r * r / 8.0).exp(), c * r.powi(a) * (-r * r / 7.0).exp())
        });
        let m = mehler_apply(&w, tau).unwrap();
        let e = heat_propagate(&w, tau).unwrap();
        prop_assert!(m.add(&e.scale(C64::new(-1.0, 0.0))).z_norm() <= 1e-6 * w.z_norm());
    }

    #[test]
    fn lambda_is_skew_on_random_pairs(seed in any::<u64>()) {
        let f = field_corpus_with(&field_grid(), CorpusSpace::X, seed, 2);
        prop_assert!(lambda_skew_defect(&f[0], &f[1]).unwrap() <= 1e-8);
    }

    #[test]
    fn energy_bounds_hold_on_random_fields(seed in any::<u64>()) {
        let gr = field_grid();
        let x0 = field_corpus_with(&gr, CorpusSpace::X0, seed, 1).remove(0);
        prop_assert!(energy_inequality_check(&x0, EnergySpace::X0).unwrap().holds);
        let x1 = field_corpus_with(&gr, CorpusSpace::X1, seed, 1).remove(0);
        prop_assert!(energy_inequality_check(&x1, EnergySpace::X1).unwrap().holds);
    }

    #[test]
    fn x_norm_matches_polar_quadrature(seed in any::<u64>()) {
        let gr = field_grid();
        let f = field_corpus_with(&gr, CorpusSpace::X, seed, 1).remove(0);
        let m = 32;
        let vals = f.physical_on_polar(m);
        let mut direct = 0.0;
        for (j, &r) in gr.nodes.iter().enumerate() {
            let row: f64 = vals[j * m..(j + 1) * m].iter().map(|v| v * v).sum();
            direct += gr.quad_weights[j] * r * (2.0 * PI / m as f64) * row / g(r);
        }
        prop_assert!((direct - f.x_norm_sq()).abs() <= 1e-10 * direct);
    }

    #[test]
    fn radial_split_is_orthogonal(seed in any::<u64>(), alpha in 1.0f64..100.0) {
        let f = field_corpus_with(&field_grid(), CorpusSpace::X, seed, 1).remove(0);
        let s = oseen::nonlinear::VortexState::new(alpha, f.clone()).unwrap();
        let (r, p) = split_radial(&s);
        prop_assert!((r.x_norm_sq() + p.x_norm_sq() - f.x_norm_sq()).abs() <= 1e-12 * f.x_norm_sq());
        prop_assert!(r.x_inner(&p).abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(config(4))]

    #[test]
    fn normalization_removes_mean_and_moment(seed in any::<u64>(), alpha in 2.0f64..50.0, amp in 0.01f64..0.1) {
        let f = field_corpus_with(&field_grid(), CorpusSpace::X, seed, 1).remove(0).scale(amp);
        let s = normalize_perturbation(&f, alpha).unwrap();
        prop_assert!(s.field.mean().abs() < 1e-10);
        let (mx, my) = s.field.first_moment();
        prop_assert!(mx.hypot(my) < 1e-8);
    }
}
