//! Propagators `e^{-τH_{n,β}}` and `e^{τ𝓛ₙ}`.
//!
//! Two independent routes to the same propagator are kept: the dense matrix
//! exponential and the inverse Laplace transform along a contour left of the
//! spectrum. On top of them sit the decay-envelope fit, the Mehler kernel,
//! the `L^p → L^q` smoothing checks and the Duhamel divergence bound.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::Mat;
use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};
use crate::fit::{chebyshev_line, fit_scaling, ScalingFit};
use crate::grid::{build_grid, kappa, Closure, MapKind, RadialGrid};
use crate::linalg;
use crate::radial::{matvec, metric, restricted_matrix, z_norm_scaled, ModeBlocks, ModeOperator, Subspace, WeightedRadialFunction, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// `e^{-τA}` for a Euclidean matrix `A`.
pub fn propagator_matrix(a: &Mat<C64>, tau: f64) -> Result<Mat<C64>> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(OseenError::InvalidArgument(format!("tau must be finite and non-negative, got {tau}")));
    }
    let n = a.nrows();
    linalg::expm(&Mat::from_fn(n, n, |i, j| a[(i, j)] * (-tau)))
}

/// `‖e^{-τH}‖_{Z→Z}`, optionally restricted to `Z₀`.
pub fn propagator_norm(op: &ModeOperator, tau: f64, subspace: Subspace) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(OseenError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let a = restricted_matrix(op, subspace)?;
    linalg::norm2(&propagator_matrix(&a, tau)?)
}

/// Norms `‖e^{-τ_k A}‖` on an increasing grid. Uniform grids are marched
/// by repeated multiplication with one step propagator.
pub fn propagator_norms(a: &Mat<C64>, taus: &[f64]) -> Result<Vec<f64>> {
    if taus.is_empty() {
        return Ok(Vec::new());
    }
    if taus.iter().any(|&t| !(t > 0.0) || !t.is_finite()) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OseenError::InvalidArgument("tau grid must be positive and strictly increasing".into()));
    }
    let uniform = taus.len() > 2 && {
        let h = taus[1] - taus[0];
        taus.iter().enumerate().all(|(k, &t)| (t - taus[0] - k as f64 * h).abs() <= 1e-10 * t)
    };
    if !uniform {
        return taus.iter().map(|&t| linalg::norm2_lanczos(&propagator_matrix(a, t)?)).collect();
    }
    let step = propagator_matrix(a, taus[1] - taus[0])?;
    let mut p = propagator_matrix(a, taus[0])?;
    let mut out = Vec::with_capacity(taus.len());
    for k in 0..taus.len() {
        if k > 0 {
            p = &step * &p;
        }
        out.push(linalg::norm2_lanczos(&p)?);
    }
    Ok(out)
}

/// Norm window `[lo, hi]` on which the exponential rate `c₅` is fitted.
pub const ENVELOPE_WINDOW: (f64, f64) = (1e-4, 0.367_879_441_171_442_33);

/// Tolerance on the contraction bound `‖e^{-τH}‖ ≤ e^{-rτ}`.
pub const CONTRACTION_TOL: f64 = 1e-6;

/// Decay curve `τ ↦ ‖e^{-τH_{n,β}}‖` with the fitted envelope
/// `min(e^{-rτ}, c₄|β|^{2/3} e^{-c₅|β|^{1/3}τ})`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub mode: i32,
    pub beta: f64,
    pub subspace: Subspace,
    pub tau_samples: Vec<f64>,
    pub norms: Vec<f64>,
    /// `r` of the contraction branch: `|n|/2`, or `1` on `Z₀`.
    pub contraction_rate: f64,
    pub c4_hat: Option<f64>,
    pub c5_hat: Option<f64>,
    /// τ range of the samples used for `c₅`.
    pub fit_window: Option<(f64, f64)>,
    /// `max_τ ‖e^{-τH}‖ e^{rτ} - 1`.
    pub max_contraction_excess: f64,
    pub envelope_holds: bool,
}

impl DecayEnvelope {
    /// Envelope value at `τ`.
    pub fn bound(&self, tau: f64) -> f64 {
        let contraction = (-self.contraction_rate * tau).exp();
        match (self.c4_hat, self.c5_hat) {
            (Some(c4), Some(c5)) => {
                let b = self.beta.abs();
                contraction.min(c4 * b.powf(2.0 / 3.0) * (-c5 * b.cbrt() * tau).exp())
            }
            _ => contraction,
        }
    }

    /// Exponential rate of the last third of the samples whose norm
    /// lies below `ceiling`.
    pub fn tail_rate(&self, ceiling: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .tau_samples
            .iter()
            .zip(&self.norms)
            .filter(|(_, &v)| v < ceiling && v > 0.0)
            .map(|(&t, &v)| (t, v.ln()))
            .collect();
        if pts.len() < 6 {
            return None;
        }
        let tail = &pts[2 * pts.len() / 3..];
        let x: Vec<f64> = tail.iter().map(|p| p.0).collect();
        let y: Vec<f64> = tail.iter().map(|p| p.1).collect();
        Some(-crate::fit::linear_regression(&x, &y).0)
    }
}

fn contraction_rate(mode: i32, subspace: Subspace) -> f64 {
    match subspace {
        Subspace::Z0 => 1.0,
        Subspace::Full => mode.unsigned_abs() as f64 / 2.0,
    }
}

/// Fit `c₄`, `c₅` to a sampled decay curve.
///
/// `c₅` is the minimax slope of `log ‖e^{-τH}‖` over [`ENVELOPE_WINDOW`];
/// `c₄` is then the smallest constant for which the envelope holds at
/// every sample. Errors if the contraction bound fails.
pub fn envelope_from_norms(
    mode: i32,
    beta: f64,
    subspace: Subspace,
    tau_samples: Vec<f64>,
    norms: Vec<f64>,
) -> Result<DecayEnvelope> {
    if tau_samples.len() != norms.len() || tau_samples.is_empty() {
        return Err(OseenError::InvalidArgument("tau and norm samples must match and be non-empty".into()));
    }
    let rate = contraction_rate(mode, subspace);
    let excess = tau_samples
        .iter()
        .zip(&norms)
        .map(|(&t, &v)| v * (rate * t).exp() - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if excess > CONTRACTION_TOL {
        return Err(OseenError::FitRejected(format!(
            "norm exceeds the contraction bound e^(-{rate} tau) by {excess:.3e}"
        )));
    }
    let mut env = DecayEnvelope {
        mode,
        beta,
        subspace,
        tau_samples,
        norms,
        contraction_rate: rate,
        c4_hat: None,
        c5_hat: None,
        fit_window: None,
        max_contraction_excess: excess,
        envelope_holds: true,
    };
    if beta == 0.0 {
        return Ok(env);
    }
    let (lo, hi) = ENVELOPE_WINDOW;
    let (x, y): (Vec<f64>, Vec<f64>) = env
        .tau_samples
        .iter()
        .zip(&env.norms)
        .filter(|(_, &v)| v >= lo && v <= hi)
        .map(|(&t, &v)| (t, v.ln()))
        .unzip();
    if x.len() < 4 {
        return Err(OseenError::FitRejected(format!(
            "only {} samples inside the norm window [{lo:e}, {hi:.4}]",
            x.len()
        )));
    }
    let b = beta.abs();
    let (slope, _, _) = chebyshev_line(&x, &y);
    let c5 = -slope / b.cbrt();
    if !(c5 > 0.0) {
        return Err(OseenError::FitRejected(format!("non-decaying envelope slope {slope}")));
    }
    let c4 = env
        .tau_samples
        .iter()
        .zip(&env.norms)
        .map(|(&t, &v)| v * (c5 * b.cbrt() * t).exp() / b.powf(2.0 / 3.0))
        .fold(0.0, f64::max);
    env.c4_hat = Some(c4);
    env.c5_hat = Some(c5);
    env.fit_window = Some((x[0], *x.last().expect("non-empty")));
    env.envelope_holds = env.tau_samples.iter().zip(&env.norms).all(|(&t, &v)| v <= env.bound(t) * (1.0 + 1e-9));
    Ok(env)
}

/// Sample the decay curve on `tau_grid` and fit the envelope.
pub fn fit_decay_envelope(op: &ModeOperator, tau_grid: &[f64], subspace: Subspace) -> Result<DecayEnvelope> {
    let a = restricted_matrix(op, subspace)?;
    let norms = propagator_norms(&a, tau_grid)?;
    envelope_from_norms(op.mode, op.beta.unwrap_or(0.0), subspace, tau_grid.to_vec(), norms)
}

/// Sample with a uniform step until the norm drops below `floor` or
/// `tau_max` is reached, then fit the envelope.
pub fn decay_envelope(op: &ModeOperator, subspace: Subspace, step: f64, floor: f64, tau_max: f64) -> Result<DecayEnvelope> {
    if !(step > 0.0) || !(tau_max > step) || !(floor > 0.0) {
        return Err(OseenError::InvalidArgument("need step > 0, tau_max > step, floor > 0".into()));
    }
    let a = restricted_matrix(op, subspace)?;
    let e = propagator_matrix(&a, step)?;
    let mut p = e.clone();
    let mut taus = Vec::new();
    let mut norms = Vec::new();
    let mut k = 1usize;
    loop {
        let tau = k as f64 * step;
        let v = linalg::norm2_lanczos(&p)?;
        taus.push(tau);
        norms.push(v);
        if v < floor || tau + step > tau_max {
            break;
        }
        p = &e * &p;
        k += 1;
    }
    envelope_from_norms(op.mode, op.beta.unwrap_or(0.0), subspace, taus, norms)
}

/// Integration path `Γ₁ ∪ Γ₂ ∪ Γ₃` for the inverse Laplace transform:
/// the segment `x₀ + iy`, `|y| ≤ y₀`, and the rays
/// `x₀ ± iy₀ + (1 ± i)s`, `s ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub x0: f64,
    pub y0: f64,
    /// Gauss nodes per panel.
    pub nodes_per_panel: usize,
    /// Rays are truncated where `e^{-Re(z)τ}` falls below this value.
    pub tail_cutoff: f64,
}

impl ContourSpec {
    pub fn new(x0: f64, y0: f64) -> Result<Self> {
        if !(x0 > 0.0) || !(y0 >= 0.0) || !x0.is_finite() || !y0.is_finite() {
            return Err(OseenError::InvalidArgument(format!("contour needs x0 > 0 and y0 >= 0, got ({x0}, {y0})")));
        }
        Ok(Self { x0, y0, nodes_per_panel: 16, tail_cutoff: 1e-16 })
    }

    /// `x₀ = |β|^{1/3}/(2c₂)` and `y₀ = 2c₆|β|`; `x₀ = 1/2` at `β = 0`.
    pub fn from_constants(beta: f64, c2: f64, c6: f64) -> Result<Self> {
        let b = beta.abs();
        if b == 0.0 {
            return Self::new(0.5, 0.0);
        }
        Self::new(b.cbrt() / (2.0 * c2), 2.0 * c6 * b)
    }

    /// Length of the parameter `s` along each ray.
    pub fn ray_length(&self, tau: f64) -> f64 {
        (-self.tail_cutoff.ln() / tau - self.x0).max(0.0)
    }
}

/// Result of the contour quadrature.
#[derive(Debug, Clone)]
pub struct ContourPropagator {
    pub matrix: Mat<C64>,
    /// `‖P_m - P_{3m/4}‖/‖P_m‖` between the two panel rules.
    pub error_estimate: f64,
    pub node_count: usize,
    pub min_spectrum_re: f64,
}

/// `e^{-τH}` by `(2πi)⁻¹ ∫_Γ (H - z)⁻¹ e^{-zτ} dz` on `contour`.
pub fn laplace_contour_propagator(op: &ModeOperator, tau: f64, contour: &ContourSpec) -> Result<ContourPropagator> {
    contour_propagator_matrix(&op.matrix, tau, contour)
}

struct Node {
    z: C64,
    dz: C64,
}

/// Contour quadrature for an arbitrary Euclidean matrix.
pub fn contour_propagator_matrix(a: &Mat<C64>, tau: f64, contour: &ContourSpec) -> Result<ContourPropagator> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(OseenError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let eig = linalg::eigenvalues(a)?;
    let min_re = eig.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if !(min_re > contour.x0) {
        return Err(OseenError::ContourInvariant { x0: contour.x0, re: min_re });
    }
    let dist = |z: C64| eig.iter().map(|l| (l - z).norm()).fold(f64::INFINITY, f64::min);
    let max_len = (2.0 / tau).min(4.0);
    let panel_len = |z: C64| (0.5 * dist(z)).clamp(0.02, max_len);

    let (x0, y0) = (contour.x0, contour.y0);
    // Parameterized pieces z(t), z'(t) on [t0, t1], traversed upward.
    let mut breaks: Vec<(Box<dyn Fn(f64) -> C64>, C64, f64, f64)> = Vec::new();
    let s_max = contour.ray_length(tau);
    let d1 = C64::new(1.0, -1.0);
    let d3 = C64::new(1.0, 1.0);
    // Γ₁ as σ ∈ [-s_max, 0] with z = x₀ - iy₀ - (1 - i)σ.
    breaks.push((Box::new(move |s: f64| C64::new(x0, -y0) - d1 * s), -d1, -s_max, 0.0));
    if y0 > 0.0 {
        breaks.push((Box::new(move |y: f64| C64::new(x0, y)), C64::new(0.0, 1.0), -y0, y0));
    }
    breaks.push((Box::new(move |s: f64| C64::new(x0, y0) + d3 * s), d3, 0.0, s_max));

    let rules = [contour.nodes_per_panel, (3 * contour.nodes_per_panel / 4).max(4)];
    let gl: Vec<Vec<(f64, f64)>> = rules
        .iter()
        .map(|&m| {
            GaussLegendre::new(NonZeroUsize::new(m).expect("nonzero")).iter().map(|(x, w)| (*x, *w)).collect()
        })
        .collect();
    let mut node_sets: [Vec<Node>; 2] = [Vec::new(), Vec::new()];
    for (z_of, dz, t0, t1) in &breaks {
        let mut t = *t0;
        while t < *t1 {
            let h = panel_len(z_of(t)).min(*t1 - t);
            let h = if *t1 - (t + h) < 0.25 * h { *t1 - t } else { h };
            for (set, rule) in node_sets.iter_mut().zip(&gl) {
                for &(x, w) in rule {
                    let s = t + 0.5 * h * (x + 1.0);
                    set.push(Node { z: z_of(s), dz: *dz * (0.5 * h * w) });
                }
            }
            t += h;
        }
    }
    let n = a.nrows();
    let mut sums = [Mat::<C64>::zeros(n, n), Mat::<C64>::zeros(n, n)];
    let id = Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { ZERO });
    let scale = C64::new(0.0, -1.0 / (2.0 * PI));
    for (set, sum) in node_sets.iter().zip(sums.iter_mut()) {
        for node in set {
            let mut shifted = a.clone();
            for i in 0..n {
                shifted[(i, i)] -= node.z;
            }
            let r = shifted.partial_piv_lu().solve(&id);
            let c = scale * node.dz * (-node.z * tau).exp();
            for j in 0..n {
                for i in 0..n {
                    sum[(i, j)] += r[(i, j)] * c;
                }
            }
        }
    }
    let [hi, lo] = sums;
    let diff = Mat::from_fn(n, n, |i, j| hi[(i, j)] - lo[(i, j)]);
    let denom = linalg::norm2(&hi)?;
    let error_estimate = linalg::norm2(&diff)? / denom.max(f64::MIN_POSITIVE);
    let node_count = node_sets[0].len();
    Ok(ContourPropagator { matrix: hi, error_estimate, node_count, min_spectrum_re: min_re })
}

/// Relative operator-norm distance between two matrices.
pub fn relative_difference(a: &Mat<C64>, b: &Mat<C64>) -> Result<f64> {
    let diff = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)]);
    Ok(linalg::norm2(&diff)? / linalg::norm2(b)?.max(f64::MIN_POSITIVE))
}

/// Smallest τ accepted by [`mehler_apply`].
pub const MEHLER_TAU_MIN: f64 = 1e-3;

/// `a(τ) = 1 - e^{-τ}`.
pub fn a_of_tau(tau: f64) -> f64 {
    -(-tau).exp_m1()
}

/// Apply `e^{τ𝓛}` to one mode through the Mehler kernel, integrated on
/// the tensor polar grid (radial quadrature times a trapezoidal angular
/// rule sized to the kernel width).
pub fn mehler_apply(w: &WeightedRadialFunction, tau: f64) -> Result<WeightedRadialFunction> {
    if !(tau >= MEHLER_TAU_MIN) || !tau.is_finite() {
        return Err(OseenError::InvalidArgument(format!(
            "Mehler quadrature needs tau >= {MEHLER_TAU_MIN}, got {tau}"
        )));
    }
    let g = &w.grid;
    let len = g.len();
    let a = a_of_tau(tau);
    let c = (-0.5 * tau).exp();
    let n = w.mode.unsigned_abs() as f64;
    let pref = 1.0 / (4.0 * PI * a);
    let src: Vec<C64> = (0..len).map(|j| w.values[j] * (g.quad_weights[j] * g.nodes[j])).collect();
    let mut out = vec![ZERO; len];
    for i in 0..len {
        let r = g.nodes[i];
        for j in i..len {
            let rho = g.nodes[j];
            let base = -(1.0 + c * c) * (r * r + rho * rho) / (8.0 * a);
            let z = c * r * rho / (2.0 * a);
            if base + z < -745.0 {
                continue;
            }
            // Even integrand: trapezoid on [0, π] with an even node count.
            let half = ((n + 8.0 * z.sqrt() + 24.0).max(2.0 * n + 8.0) / 2.0).ceil() as usize;
            let dpsi = PI / half as f64;
            let mut k_sum = 0.5 * ((base + z).exp() + (base - z).exp() * (n * PI).cos());
            for k in 1..half {
                let psi = k as f64 * dpsi;
                k_sum += (base + z * psi.cos()).exp() * (n * psi).cos();
            }
            let kern = pref * 2.0 * k_sum * dpsi;
            out[i] += src[j] * kern;
            if j != i {
                out[j] += src[i] * kern;
            }
        }
    }
    Ok(WeightedRadialFunction::new(g.clone(), w.mode, out))
}

/// `e^{τ𝓛ₙ}` applied by the matrix exponential.
pub fn heat_propagate(w: &WeightedRadialFunction, tau: f64) -> Result<WeightedRadialFunction> {
    let blocks = ModeBlocks::new(w.grid.clone(), w.mode)?;
    let a = to_c(&blocks.neg_l);
    let p = propagator_matrix(&a, tau)?;
    let y = matvec(&p, &w.to_euclidean());
    Ok(WeightedRadialFunction::from_euclidean(w.grid.clone(), w.mode, &y))
}

fn to_c(a: &Mat<f64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

/// `‖G^{-1/2} w‖_{L^p(ℝ²)}` of a single-mode field `w(r)e^{inθ}`.
///
/// `G^{-1/2}w` is exactly the stored scaled profile `u`.
pub fn weighted_lp_norm(grid: &RadialGrid, u: &[C64], p: f64) -> f64 {
    lp_of_modulus(grid, &u.iter().map(|v| v.norm()).collect::<Vec<_>>(), p)
}

fn lp_of_modulus(grid: &RadialGrid, m: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return m.iter().cloned().fold(0.0, f64::max);
    }
    let s: f64 = (0..grid.len()).map(|j| grid.quad_weights[j] * grid.nodes[j] * m[j].powf(p)).sum();
    (2.0 * PI * s).powf(1.0 / p)
}

/// `‖G^{-1/2} ∇w‖_{L^p(ℝ²)}` of a single-mode field, from
/// `|G^{-1/2}∇w|² = |u' - (r/4)u|² + n²|u|²/r²`.
pub fn weighted_gradient_lp_norm(grid: &RadialGrid, mode: i32, u: &[C64], p: f64) -> f64 {
    let d = grid.basis_derivative(kappa(mode), Closure::Dirichlet);
    let nn = (mode as f64).powi(2);
    let m: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = grid.nodes[i];
            let du: C64 = (0..grid.len()).map(|j| u[j] * d[(i, j)]).sum();
            ((du - u[i] * (0.25 * r)).norm_sqr() + nn * u[i].norm_sqr() / (r * r)).sqrt()
        })
        .collect();
    lp_of_modulus(grid, &m, p)
}

/// One evaluation of the `L^p → L^q` smoothing estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub tau: f64,
    pub a: f64,
    pub p: f64,
    pub q: f64,
    pub gradient: bool,
    /// `‖G^{-1/2}(∇)e^{τ𝓛}w‖_{L^q}`.
    pub lhs: f64,
    /// `‖G^{-1/2}w‖_{L^p}`.
    pub rhs: f64,
    pub ratio: f64,
    /// `1/p - 1/q`, plus `1/2` for the gradient form.
    pub predicted_exponent: f64,
    /// `ratio · a(τ)^{exponent}`, the empirical constant.
    pub scaled_ratio: f64,
}

fn check_pq(p: f64, q: f64, tau: f64) -> Result<()> {
    if !(p >= 1.0) || !(q >= p) {
        return Err(OseenError::InvalidArgument(format!("need 1 <= p <= q, got p = {p}, q = {q}")));
    }
    if !(tau > 0.0) || tau > 5.0 {
        return Err(OseenError::InvalidArgument(format!("tau must lie in (0, 5], got {tau}")));
    }
    Ok(())
}

fn exponent(p: f64, q: f64, gradient: bool) -> f64 {
    1.0 / p - 1.0 / q + if gradient { 0.5 } else { 0.0 }
}

fn smoothing_report(
    w: &WeightedRadialFunction,
    evolved: &[C64],
    tau: f64,
    p: f64,
    q: f64,
    gradient: bool,
) -> SmoothingReport {
    let a = a_of_tau(tau);
    let lhs = if gradient {
        weighted_gradient_lp_norm(&w.grid, w.mode, evolved, q)
    } else {
        weighted_lp_norm(&w.grid, evolved, q)
    };
    let rhs = weighted_lp_norm(&w.grid, &w.values, p);
    let ratio = lhs / rhs;
    let e = exponent(p, q, gradient);
    SmoothingReport { tau, a, p, q, gradient, lhs, rhs, ratio, predicted_exponent: e, scaled_ratio: ratio * a.powf(e) }
}

/// Both sides of `‖G^{-1/2}e^{τ𝓛}w‖_{L^q} ≤ C a(τ)^{-(1/p-1/q)} ‖G^{-1/2}w‖_{L^p}`.
pub fn smoothing_check(w: &WeightedRadialFunction, tau: f64, p: f64, q: f64) -> Result<SmoothingReport> {
    check_pq(p, q, tau)?;
    let e = heat_propagate(w, tau)?;
    Ok(smoothing_report(w, &e.values, tau, p, q, false))
}

/// Gradient form with the extra `a(τ)^{-1/2}`.
pub fn smoothing_check_gradient(w: &WeightedRadialFunction, tau: f64, p: f64, q: f64) -> Result<SmoothingReport> {
    check_pq(p, q, tau)?;
    let e = heat_propagate(w, tau)?;
    Ok(smoothing_report(w, &e.values, tau, p, q, true))
}

/// Small-τ sweep of the smoothing ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingSweep {
    pub p: f64,
    pub q: f64,
    pub gradient: bool,
    pub a_values: Vec<f64>,
    /// Largest ratio over the Gaussian family at each `a`.
    pub ratios: Vec<f64>,
    pub fit: ScalingFit,
    /// Fitted blow-up exponent, `-slope` of `log ratio` against `log a`.
    pub exponent: f64,
    pub predicted_exponent: f64,
}

/// Range of `a(τ)` swept by [`smoothing_exponent_sweep`].
pub const SMOOTHING_A_RANGE: (f64, f64) = (2e-3, 2e-2);

/// Fit the blow-up exponent of the smoothing ratio as `τ → 0`.
///
/// For each `a(τ)` in [`SMOOTHING_A_RANGE`] the ratio is maximized over centred
/// Gaussians `u = e^{-r²/4s}`, `s ∈ [a/8, 8a]`, on a grid refined near the
/// origin.
pub fn smoothing_exponent_sweep(p: f64, q: f64, gradient: bool) -> Result<SmoothingSweep> {
    check_pq(p, q, 1.0)?;
    let grid = Arc::new(build_grid(400, 15.0, MapKind::default())?);
    let blocks = ModeBlocks::new(grid.clone(), 0)?;
    let a_mat = to_c(&blocks.neg_l);
    let a_values: Vec<f64> = (0..8).map(|k| SMOOTHING_A_RANGE.0 * (SMOOTHING_A_RANGE.1 / SMOOTHING_A_RANGE.0).powf(k as f64 / 7.0)).collect();
    let mut ratios = Vec::with_capacity(a_values.len());
    for &a in &a_values {
        let tau = -(-a).ln_1p();
        let prop = propagator_matrix(&a_mat, tau)?;
        let mut best: f64 = 0.0;
        for k in 0..13 {
            let s = a / 8.0 * 64f64.powf(k as f64 / 12.0);
            let w = WeightedRadialFunction::from_scaled_fn(grid.clone(), 0, |r| C64::new((-r * r / (4.0 * s)).exp(), 0.0));
            let y = matvec(&prop, &w.to_euclidean());
            let e = WeightedRadialFunction::from_euclidean(grid.clone(), 0, &y);
            best = best.max(smoothing_report(&w, &e.values, tau, p, q, gradient).ratio);
        }
        ratios.push(best);
    }
    let pts: Vec<(f64, f64)> = a_values.iter().cloned().zip(ratios.iter().cloned()).collect();
    let fit = fit_scaling(&pts)?;
    Ok(SmoothingSweep {
        p,
        q,
        gradient,
        a_values,
        ratios,
        exponent: -fit.slope,
        fit,
        predicted_exponent: exponent(p, q, gradient),
    })
}

/// Scaled components `G^{-1/2}f_r`, `G^{-1/2}f_θ` of one azimuthal mode of
/// a vector field, sampled in time (`[time][node]`).
#[derive(Debug, Clone)]
pub struct ModeForcing {
    pub mode: i32,
    pub f_r: Vec<Vec<C64>>,
    pub f_theta: Vec<Vec<C64>>,
}

/// Time-dependent vector field on a uniform time grid starting at 0.
#[derive(Debug, Clone)]
pub struct ForcingField {
    pub grid: Arc<RadialGrid>,
    pub times: Vec<f64>,
    pub modes: Vec<ModeForcing>,
}

impl ForcingField {
    /// `‖f(t_k)‖²_X` as `Σₙ (‖f_r‖²_Z + ‖f_θ‖²_Z)` over the stored modes.
    pub fn x_norm_sq(&self, k: usize) -> f64 {
        self.modes
            .iter()
            .map(|m| z_norm_scaled(&self.grid, &m.f_r[k]).powi(2) + z_norm_scaled(&self.grid, &m.f_theta[k]).powi(2))
            .sum()
    }

    fn validate(&self) -> Result<f64> {
        let nt = self.times.len();
        if nt < 2 || self.times[0] != 0.0 {
            return Err(OseenError::InvalidArgument("forcing needs at least two times starting at 0".into()));
        }
        let h = self.times[1];
        if !(h > 0.0) || self.times.iter().enumerate().any(|(k, &t)| (t - k as f64 * h).abs() > 1e-10 * t.max(1.0)) {
            return Err(OseenError::InvalidArgument("forcing times must be uniform".into()));
        }
        for m in &self.modes {
            if m.f_r.len() != nt || m.f_theta.len() != nt {
                return Err(OseenError::InvalidArgument(format!("mode {} has the wrong number of time samples", m.mode)));
            }
            if m.f_r.iter().chain(&m.f_theta).any(|v| v.len() != self.grid.len()) {
                return Err(OseenError::InvalidArgument(format!("mode {} has the wrong number of nodes", m.mode)));
            }
        }
        Ok(h)
    }
}

/// `G^{-1/2} div f` for one mode, in weak form:
/// `(1/r)(r F_r)' - (r/4)F_r + (in/r)F_θ` with the derivative moved onto
/// the trial functions.
pub fn weak_divergence(grid: &RadialGrid, mode: i32, f_r: &[C64], f_theta: &[C64]) -> Vec<C64> {
    let d = grid.basis_derivative(kappa(mode), Closure::Dirichlet);
    weak_divergence_with(grid, &d, mode, f_r, f_theta)
}

pub(crate) fn weak_divergence_with(grid: &RadialGrid, d: &Mat<f64>, mode: i32, f_r: &[C64], f_theta: &[C64]) -> Vec<C64> {
    let len = grid.len();
    let wq: Vec<f64> = (0..len).map(|k| grid.quad_weights[k] * grid.nodes[k]).collect();
    let n = mode as f64;
    (0..len)
        .map(|i| {
            let r = grid.nodes[i];
            let flux: C64 = (0..len).map(|k| f_r[k] * (wq[k] * d[(k, i)])).sum();
            -flux / wq[i] - f_r[i] * (0.25 * r) + C64::new(0.0, n / r) * f_theta[i]
        })
        .collect()
}

/// Exponential integrator data for `y' = -Hy + b(t)` with `b` linear on
/// each step of length `h`.
struct PhiStep {
    e: Mat<C64>,
    phi1: Mat<C64>,
    phi2: Mat<C64>,
}

fn phi_step(h_mat: &Mat<C64>, h: f64) -> Result<PhiStep> {
    let n = h_mat.nrows();
    let big = Mat::from_fn(3 * n, 3 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        match (bi, bj) {
            (0, 0) => -h_mat[(ii, jj)] * h,
            (0, 1) if ii == jj => C64::new(h, 0.0),
            (1, 2) if ii == jj => C64::new(1.0, 0.0),
            _ => ZERO,
        }
    });
    let e = linalg::expm(&big)?;
    Ok(PhiStep {
        e: Mat::from_fn(n, n, |i, j| e[(i, j)]),
        phi1: Mat::from_fn(n, n, |i, j| e[(i, n + j)]),
        phi2: Mat::from_fn(n, n, |i, j| e[(i, 2 * n + j)]),
    })
}

/// Empirical constant of the Duhamel divergence bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DuhamelReport {
    pub alpha: f64,
    pub t_final: f64,
    /// `max_τ ‖∫₀^τ e^{(τ-s)(𝓛-αΛ)} div f ds‖²_X / ∫₀^τ ‖f‖²_X ds` per sample.
    pub per_sample: Vec<f64>,
    pub c0_hat: f64,
}

/// Mode-wise Duhamel integral of `div f` against the bound
/// `C₀ ∫₀^τ ‖f‖²_X ds`, maximized over `τ ≤ T` and the samples.
///
/// The source is taken piecewise linear in time and integrated exactly by
/// exponential integrators.
pub fn duhamel_div_bound_check(alpha: f64, f_samples: &[ForcingField], t_final: f64) -> Result<DuhamelReport> {
    if !alpha.is_finite() || !(t_final > 0.0) {
        return Err(OseenError::InvalidArgument(format!("need finite alpha and T > 0, got {alpha}, {t_final}")));
    }
    let mut cache: BTreeMap<(usize, i32, u64), (PhiStep, Mat<f64>, Vec<f64>)> = BTreeMap::new();
    let mut per_sample = Vec::with_capacity(f_samples.len());
    for f in f_samples {
        let h = f.validate()?;
        let steps = f.times.iter().take_while(|&&t| t <= t_final * (1.0 + 1e-12)).count();
        let key_grid = Arc::as_ptr(&f.grid) as usize;
        let s_metric = metric(&f.grid);
        let mut states: Vec<Vec<Vec<C64>>> = Vec::new();
        for m in &f.modes {
            let key = (key_grid, m.mode, h.to_bits());
            if !cache.contains_key(&key) {
                let blocks = ModeBlocks::new(f.grid.clone(), m.mode)?;
                let hm = blocks.h(m.mode as f64 * alpha);
                let d = f.grid.basis_derivative(kappa(m.mode), Closure::Dirichlet);
                cache.insert(key, (phi_step(&hm, h)?, d, s_metric.clone()));
            }
            let (step, d, s) = &cache[&key];
            let src: Vec<Vec<C64>> = (0..steps)
                .map(|k| {
                    weak_divergence_with(&f.grid, d, m.mode, &m.f_r[k], &m.f_theta[k])
                        .iter()
                        .zip(s)
                        .map(|(v, sj)| v * sj)
                        .collect()
                })
                .collect();
            let mut y = vec![ZERO; f.grid.len()];
            let mut traj = vec![y.clone()];
            for k in 0..steps.saturating_sub(1) {
                let e = matvec(&step.e, &y);
                let p1 = matvec(&step.phi1, &src[k]);
                let db: Vec<C64> = src[k + 1].iter().zip(&src[k]).map(|(a, b)| a - b).collect();
                let p2 = matvec(&step.phi2, &db);
                y = (0..y.len()).map(|i| e[i] + p1[i] + p2[i]).collect();
                traj.push(y.clone());
            }
            states.push(traj);
        }
        let mut integral = 0.0;
        let mut worst: f64 = 0.0;
        let mut prev = f.x_norm_sq(0);
        for k in 1..steps {
            let cur = f.x_norm_sq(k);
            integral += 0.5 * h * (prev + cur);
            prev = cur;
            let lhs: f64 = states.iter().map(|traj| traj[k].iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
            if integral > 0.0 {
                worst = worst.max(lhs / integral);
            }
        }
        per_sample.push(worst);
    }
    let c0_hat = per_sample.iter().cloned().fold(0.0, f64::max);
    Ok(DuhamelReport { alpha, t_final, per_sample, c0_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::assemble_h;

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(build_grid(n, 30.0, MapKind::default()).unwrap())
    }

    #[test]
    fn selfadjoint_norm_is_exponential_of_gap() {
        let op = assemble_h(grid(120), 2, 0.0).unwrap();
        let v = propagator_norm(&op, 1.0, Subspace::Full).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-9, "{v}");
    }

    #[test]
    fn marched_norms_match_direct() {
        let op = assemble_h(grid(80), 2, 50.0).unwrap();
        let taus: Vec<f64> = (1..=6).map(|k| 0.1 * k as f64).collect();
        let marched = propagator_norms(&op.matrix, &taus).unwrap();
        for (t, m) in taus.iter().zip(&marched) {
            let d = propagator_norm(&op, *t, Subspace::Full).unwrap();
            assert!((d - m).abs() < 1e-10, "{d} vs {m}");
        }
    }

    #[test]
    fn rejects_bad_tau() {
        let op = assemble_h(grid(32), 2, 0.0).unwrap();
        assert!(propagator_norm(&op, 0.0, Subspace::Full).is_err());
        let w = WeightedRadialFunction::zeros(grid(32), 1);
        assert!(mehler_apply(&w, 1e-4).is_err());
        assert!(ContourSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn zero_beta_envelope_is_degenerate() {
        let env = envelope_from_norms(2, 0.0, Subspace::Full, vec![0.5, 1.0], vec![(-0.5f64).exp(), (-1.0f64).exp()]).unwrap();
        assert!(env.c4_hat.is_none() && env.envelope_holds);
        assert!(envelope_from_norms(2, 0.0, Subspace::Full, vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn gaussian_is_heat_fixed_point() {
        let g = grid(160);
        let w = WeightedRadialFunction::from_physical_fn(g, 0, |r| C64::new(crate::profiles::g(r), 0.0));
        let out = mehler_apply(&w, 0.7).unwrap();
        let diff = out.add(&w.scale(C64::new(-1.0, 0.0)));
        assert!(diff.z_norm() < 1e-8 * w.z_norm(), "{}", diff.z_norm());
    }
}
