//! Velocity reconstruction `u = K_BS * ω` mode by mode, and numerical
//! checks of the velocity inequalities.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};
use crate::field::{default_n_theta, polar_lp_norm, synthesize, ModalField};
use crate::grid::RadialGrid;
use crate::radial::{OmegaSolver, WeightedRadialFunction, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Polar velocity components of one mode at the grid nodes (physical values).
#[derive(Debug, Clone)]
pub struct ModeVelocity {
    pub mode: i32,
    pub u_r: Vec<C64>,
    pub u_theta: Vec<C64>,
}

impl ModeVelocity {
    /// `max |(1/r)(r u_r)' + (in/r)u_θ|` relative to `max |u|`, with the
    /// radial derivative taken by Lagrange differentiation in `t`.
    pub fn divergence_residual(&self, grid: &RadialGrid) -> f64 {
        let len = grid.len();
        let d = grid.dt_matrix();
        let ru: Vec<C64> = (0..len).map(|j| self.u_r[j] * grid.nodes[j]).collect();
        let n = self.mode as f64;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..len {
            let r = grid.nodes[i];
            let dru: C64 = (0..len).map(|j| ru[j] * d[(i, j)]).sum::<C64>() / grid.drdt[i];
            let div = dru / r + I * (n / r) * self.u_theta[i];
            worst = worst.max(div.norm());
            scale = scale.max(self.u_r[i].norm().max(self.u_theta[i].norm()));
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Reusable per-mode solvers for velocity reconstruction on one grid.
#[derive(Debug)]
pub struct VelocitySolver {
    pub grid: Arc<RadialGrid>,
    solvers: Vec<Option<OmegaSolver>>,
    cumulative: Mat<f64>,
}

impl VelocitySolver {
    pub fn new(grid: Arc<RadialGrid>, n_max: usize) -> Result<Self> {
        let mut solvers = vec![None];
        for n in 1..=n_max {
            solvers.push(Some(OmegaSolver::new(grid.clone(), n as i32)?));
        }
        let cumulative = grid.cumulative_integration_matrix();
        Ok(Self { grid, solvers, cumulative })
    }

    pub fn n_max(&self) -> usize {
        self.solvers.len() - 1
    }

    /// Velocity of one mode from physical nodal vorticity.
    pub fn velocity_physical(&self, n: i32, w_phys: &[C64]) -> Result<ModeVelocity> {
        let g = &self.grid;
        let len = g.len();
        if n == 0 {
            let h: Vec<C64> = (0..len).map(|j| w_phys[j] * (g.nodes[j] * g.drdt[j])).collect();
            let u_theta = (0..len)
                .map(|i| (0..len).map(|j| h[j] * self.cumulative[(i, j)]).sum::<C64>() / g.nodes[i])
                .collect();
            return Ok(ModeVelocity { mode: 0, u_r: vec![C64::new(0.0, 0.0); len], u_theta });
        }
        let solver = self
            .solvers
            .get(n.unsigned_abs() as usize)
            .and_then(|s| s.as_ref())
            .ok_or(OseenError::InvalidMode(n))?;
        let psi: Vec<C64> = solver.apply(w_phys).iter().map(|v| v * 2.0).collect();
        let dpsi = solver.differentiate(&psi);
        let nn = n as f64;
        let u_r = (0..len).map(|j| I * (nn / g.nodes[j]) * psi[j]).collect();
        let u_theta = dpsi.iter().map(|v| -v).collect();
        Ok(ModeVelocity { mode: n, u_r, u_theta })
    }

    /// Velocity of every mode of a real field.
    pub fn velocity_field(&self, field: &ModalField) -> Result<Vec<ModeVelocity>> {
        if field.n_max() > self.n_max() {
            return Err(OseenError::InvalidArgument(format!(
                "field has modes up to {}, solver up to {}",
                field.n_max(),
                self.n_max()
            )));
        }
        field.modes.iter().map(|w| self.velocity_physical(w.mode, &w.physical_values())).collect()
    }
}

/// Mode-wise Biot–Savart law: `u_r = (in/r)ψ`, `u_θ = -ψ'` with stream
/// function `ψ = 2Ωₙ[w]`; `u_θ = (1/r)∫₀^r s w ds` for `n = 0`.
pub fn velocity_from_mode(w: &WeightedRadialFunction, n: i32) -> Result<ModeVelocity> {
    if n != w.mode {
        return Err(OseenError::InvalidArgument(format!("profile has mode {}, requested {n}", w.mode)));
    }
    let solver = VelocitySolver::new(w.grid.clone(), n.unsigned_abs() as usize)?;
    solver.velocity_physical(n, &w.physical_values())
}

/// `|u|` on the tensor polar grid.
pub fn speed_on_polar(velocity: &[ModeVelocity], n_theta: usize) -> Vec<f64> {
    let ur: Vec<Vec<C64>> = velocity.iter().map(|v| v.u_r.clone()).collect();
    let ut: Vec<Vec<C64>> = velocity.iter().map(|v| v.u_theta.clone()).collect();
    let a = synthesize(&ur, n_theta);
    let b = synthesize(&ut, n_theta);
    a.iter().zip(&b).map(|(x, y)| x.hypot(*y)).collect()
}

/// `L^p` norms of a field and its velocity on a shared angular grid.
#[derive(Debug, Clone)]
pub struct FieldNorms {
    grid: Arc<RadialGrid>,
    n_theta: usize,
    omega_abs: Vec<f64>,
    speed: Vec<f64>,
}

impl FieldNorms {
    pub fn new(field: &ModalField) -> Result<Self> {
        let solver = VelocitySolver::new(field.grid.clone(), field.n_max())?;
        let vel = solver.velocity_field(field)?;
        let n_theta = default_n_theta(field.n_max());
        let omega_abs = field.physical_on_polar(n_theta).iter().map(|v| v.abs()).collect();
        let speed = speed_on_polar(&vel, n_theta);
        Ok(Self { grid: field.grid.clone(), n_theta, omega_abs, speed })
    }

    pub fn omega(&self, p: f64) -> f64 {
        polar_lp_norm(&self.grid, self.n_theta, &self.omega_abs, p)
    }

    pub fn velocity(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return refined_max(&self.grid, self.n_theta, &self.speed);
        }
        polar_lp_norm(&self.grid, self.n_theta, &self.speed, p)
    }

    /// `max(‖ω‖_{L¹}, ‖ω‖_{L²})`.
    pub fn omega_l1_cap_l2(&self) -> f64 {
        self.omega(1.0).max(self.omega(2.0))
    }
}

/// Grid maximum of tensor samples, refined by a parabola through the
/// maximal node and its radial neighbours.
fn refined_max(grid: &RadialGrid, n_theta: usize, values: &[f64]) -> f64 {
    let (idx, best) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let (j, k) = (idx / n_theta, idx % n_theta);
    if j == 0 || j + 1 >= grid.len() {
        return best;
    }
    let (x0, x1, x2) = (grid.nodes[j - 1], grid.nodes[j], grid.nodes[j + 1]);
    let (y0, y1, y2) = (values[(j - 1) * n_theta + k], best, values[(j + 1) * n_theta + k]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if curv >= 0.0 {
        return best;
    }
    let slope = d01 - curv * (x1 - x0);
    let xs = x1 - slope / (2.0 * curv);
    if xs <= x0 || xs >= x2 {
        return best;
    }
    let peak = y1 + slope * (xs - x1) + curv * (xs - x1) * (xs - x1);
    peak.max(best)
}

/// Which statement of the Hardy–Littlewood–Sobolev lemma was checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HlsPart {
    /// `‖u‖_{L^q} ≤ C_q‖ω‖_{L^p}`, `1/q = 1/p - 1/2`.
    Sobolev,
    /// `‖u‖_{L^∞} ≤ C_{p,q}‖ω‖_p^θ ‖ω‖_q^{1-θ}` with the explicit Hölder constant.
    Interpolation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HlsReport {
    pub part: HlsPart,
    pub p: f64,
    pub q: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// True when `rhs` contains the explicit constant, so `ratio ≤ 1` is required.
    pub explicit_constant: bool,
}

/// Explicit `L^∞` bound from splitting the kernel at radius `R` and
/// applying Hölder on both pieces, minimized over `R`.
pub fn explicit_linf_bound(norm_p: f64, norm_q: f64, p: f64, q: f64) -> f64 {
    let near = |r: f64| {
        if q.is_infinite() {
            r * norm_q
        } else {
            let qc = q / (q - 1.0);
            (2.0 * PI * r.powf(2.0 - qc) / (2.0 - qc)).powf(1.0 / qc) * norm_q / (2.0 * PI)
        }
    };
    let far = |r: f64| {
        if p == 1.0 {
            norm_p / (2.0 * PI * r)
        } else {
            let pc = p / (p - 1.0);
            (2.0 * PI * r.powf(2.0 - pc) / (pc - 2.0)).powf(1.0 / pc) * norm_p / (2.0 * PI)
        }
    };
    let f = |lr: f64| near(lr.exp()) + far(lr.exp());
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..300 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    f(0.5 * (lo + hi))
}

fn interpolation_theta(p: f64, q: f64) -> f64 {
    // θ/p + (1-θ)/q = 1/2.
    let iq = if q.is_infinite() { 0.0 } else { 1.0 / q };
    (0.5 - iq) / (1.0 / p - iq)
}

/// Check the Hardy–Littlewood–Sobolev bounds for `u = K_BS * ω`.
pub fn check_hls_bound(omega: &ModalField, p: f64, q: f64) -> Result<HlsReport> {
    let norms = FieldNorms::new(omega)?;
    check_hls_with(&norms, p, q)
}

pub fn check_hls_with(norms: &FieldNorms, p: f64, q: f64) -> Result<HlsReport> {
    let sobolev = p > 1.0 && p < 2.0 && q > 2.0 && q.is_finite() && (1.0 / q - (1.0 / p - 0.5)).abs() < 1e-12;
    if sobolev {
        let lhs = norms.velocity(q);
        let rhs = norms.omega(p);
        return Ok(HlsReport { part: HlsPart::Sobolev, p, q, lhs, rhs, ratio: lhs / rhs, explicit_constant: false });
    }
    if !(p >= 1.0 && p < 2.0 && q > 2.0) {
        return Err(OseenError::InvalidArgument(format!("invalid exponent pair p = {p}, q = {q}")));
    }
    let lhs = norms.velocity(f64::INFINITY);
    let rhs = explicit_linf_bound(norms.omega(p), norms.omega(q), p, q);
    Ok(HlsReport { part: HlsPart::Interpolation, p, q, lhs, rhs, ratio: lhs / rhs, explicit_constant: true })
}

/// `‖u‖_∞` against a logarithmically corrected `L²` bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogBoundReport {
    pub lhs: f64,
    /// Right side without the unknown constant.
    pub rhs: f64,
    pub ratio: f64,
    /// Argument of the logarithm.
    pub log_argument: f64,
}

/// `‖u‖_∞ ≤ C‖ω‖₂(1 + log(‖ω‖_p^θ‖ω‖_q^{1-θ}/‖ω‖₂))^{1/2}`.
pub fn check_log_bound(omega: &ModalField, p: f64, q: f64) -> Result<LogBoundReport> {
    if !(p >= 1.0 && p < 2.0 && q > 2.0) {
        return Err(OseenError::InvalidArgument(format!("invalid exponent pair p = {p}, q = {q}")));
    }
    let norms = FieldNorms::new(omega)?;
    let th = interpolation_theta(p, q);
    let l2 = norms.omega(2.0);
    let arg = norms.omega(p).powf(th) * norms.omega(q).powf(1.0 - th) / l2;
    let lhs = norms.velocity(f64::INFINITY);
    let rhs = l2 * (1.0 + arg.ln().max(0.0)).sqrt();
    Ok(LogBoundReport { lhs, rhs, ratio: lhs / rhs, log_argument: arg })
}

/// `‖u‖_∞ ≤ C‖ω‖_{L¹∩L²}(1 + log₊(‖ω‖₃/‖ω‖_{L¹∩L²}))^{1/2}`.
pub fn check_l1l3_bound(omega: &ModalField) -> Result<LogBoundReport> {
    let norms = FieldNorms::new(omega)?;
    Ok(l1l3_with(&norms))
}

pub fn l1l3_with(norms: &FieldNorms) -> LogBoundReport {
    let cap = norms.omega_l1_cap_l2();
    let arg = norms.omega(3.0) / cap;
    let lhs = norms.velocity(f64::INFINITY);
    let rhs = cap * (1.0 + arg.ln().max(0.0)).sqrt();
    LogBoundReport { lhs, rhs, ratio: lhs / rhs, log_argument: arg }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductBoundReport {
    /// `‖ω₁u₂‖₂ / (‖ω₁‖₂‖ω₂‖_{L¹∩L²}(1 + log₊(‖ω₁‖₃/‖ω₁‖₂))^{1/2})`.
    pub product_ratio: f64,
    /// The `L¹ ∩ L³` bound evaluated on `ω₂`.
    pub l1l3_ratio: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Product estimate `‖ω₁u₂‖₂` with `u₂ = K_BS * ω₂`.
pub fn check_product_bounds(omega1: &ModalField, omega2: &ModalField) -> Result<ProductBoundReport> {
    if omega1.grid.nodes != omega2.grid.nodes {
        return Err(OseenError::InvalidArgument("fields live on different grids".into()));
    }
    let n1 = FieldNorms::new(omega1)?;
    let n2 = FieldNorms::new(omega2)?;
    let n_theta = default_n_theta(omega1.n_max().max(omega2.n_max()));
    let w1 = omega1.physical_on_polar(n_theta);
    let solver = VelocitySolver::new(omega2.grid.clone(), omega2.n_max())?;
    let speed = speed_on_polar(&solver.velocity_field(omega2)?, n_theta);
    let prod: Vec<f64> = w1.iter().zip(&speed).map(|(a, b)| (a * b).abs()).collect();
    let lhs = polar_lp_norm(&omega1.grid, n_theta, &prod, 2.0);
    let l2 = n1.omega(2.0);
    let rhs = l2 * n2.omega_l1_cap_l2() * (1.0 + (n1.omega(3.0) / l2).ln().max(0.0)).sqrt();
    Ok(ProductBoundReport { product_ratio: lhs / rhs, l1l3_ratio: l1l3_with(&n2).ratio, lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MapKind};
    use crate::profiles::{g, oseen_azimuthal_speed};

    fn grid() -> Arc<RadialGrid> {
        Arc::new(build_grid(200, 30.0, MapKind::default()).unwrap())
    }

    #[test]
    fn oseen_velocity() {
        let grid = grid();
        let w = WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(g(r), 0.0));
        let v = velocity_from_mode(&w, 0).unwrap();
        for (j, &r) in grid.nodes.iter().enumerate() {
            assert!((v.u_theta[j].re - oseen_azimuthal_speed(r)).abs() < 1e-9);
            assert_eq!(v.u_r[j], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn mode_two_divergence_free() {
        let grid = grid();
        let w = WeightedRadialFunction::from_physical_fn(grid.clone(), 2, |r| C64::new(r * r * (-r * r / 4.0).exp(), 0.0));
        let v = velocity_from_mode(&w, 2).unwrap();
        assert!(v.divergence_residual(&grid) < 1e-8, "{}", v.divergence_residual(&grid));
    }

    #[test]
    fn explicit_bound_closed_form() {
        // p = 1, q = ∞: min_R R b + a/(2πR) = 2 sqrt(a b / 2π).
        let (a, b) = (1.3, 0.7);
        let v = explicit_linf_bound(a, b, 1.0, f64::INFINITY);
        assert!((v - 2.0 * (a * b / (2.0 * PI)).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn invalid_pairs() {
        let grid = grid();
        let w = WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(g(r), 0.0));
        let f = ModalField::from_modes(grid, vec![w]).unwrap();
        assert!(check_hls_bound(&f, 2.0, 2.0).is_err());
        assert!(check_hls_bound(&f, 3.0, 4.0).is_err());
    }
}
