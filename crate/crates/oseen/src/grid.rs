//! Radial grid on `(0, R_max]`.
//!
//! Nodes are Gauss-Legendre points in a computational coordinate
//! `t ∈ (0, 1)`, pushed through an algebraic map `r = r(t)`. Quadrature
//! weights `q_j = w_j·r'(t_j)` integrate `∫₀^{R_max} f(r) dr`.

use std::num::NonZeroUsize;
use std::sync::Arc;

use faer::Mat;
use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};

/// Smallest admissible outer radius.
pub const MIN_R_MAX: f64 = 15.0;
/// Smallest admissible number of nodes.
pub const MIN_POINTS: usize = 16;

/// Algebraic map from `t ∈ (0,1)` to `r ∈ (0, R_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// `r = R·sinh(b·A)/sinh(b)` with `A = asin(γ√t)/asin(γ)`.
    /// Clusters nodes at the origin and in the vortex core.
    Clustered { gamma: f64, stretch: f64 },
    /// `r = R·√t`.
    Sqrt,
}

impl Default for MapKind {
    fn default() -> Self {
        MapKind::Clustered { gamma: 0.95, stretch: 1.5 }
    }
}

impl MapKind {
    /// `(r, dr/dt)` at `t`.
    pub fn eval(&self, t: f64, r_max: f64) -> (f64, f64) {
        match *self {
            MapKind::Clustered { gamma, stretch } => {
                let s = t.sqrt();
                let asg = gamma.asin();
                let a = (gamma * s).asin() / asg;
                let da = gamma / (2.0 * s * (1.0 - gamma * gamma * t).sqrt() * asg);
                let sh = stretch.sinh();
                let r = r_max * (stretch * a).sinh() / sh;
                let dr = r_max * stretch * (stretch * a).cosh() * da / sh;
                (r, dr)
            }
            MapKind::Sqrt => {
                let s = t.sqrt();
                (r_max * s, 0.5 * r_max / s)
            }
        }
    }

    /// Inverse map `t(r)`.
    pub fn inverse(&self, r: f64, r_max: f64) -> f64 {
        match *self {
            MapKind::Clustered { gamma, stretch } => {
                let a = (r * stretch.sinh() / r_max).asinh() / stretch;
                let s = (a * gamma.asin()).sin() / gamma;
                s * s
            }
            MapKind::Sqrt => (r / r_max).powi(2),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MapKind::Clustered { gamma, stretch } => {
                if !(gamma > 0.0 && gamma < 1.0) || !(stretch > 0.0) || !stretch.is_finite() {
                    return Err(OseenError::InvalidArgument(format!(
                        "clustered map needs 0 < gamma < 1 and stretch > 0, got {gamma}, {stretch}"
                    )));
                }
                Ok(())
            }
            MapKind::Sqrt => Ok(()),
        }
    }
}

/// Radial nodes, quadrature weights and the interpolation data of the
/// underlying Gauss-Legendre rule.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    /// Radii, strictly increasing in `(0, R_max)`.
    pub nodes: Vec<f64>,
    /// Weights for `∫₀^{R_max} f(r) dr`.
    pub quad_weights: Vec<f64>,
    pub r_max: f64,
    pub map_kind: MapKind,
    /// Computational coordinates of the nodes.
    pub t: Vec<f64>,
    /// `dr/dt` at the nodes.
    pub drdt: Vec<f64>,
    bary: Vec<f64>,
    dt: Mat<f64>,
}

/// Build a radial grid.
///
/// Rejects `n_points < 16` and `R_max < 15`.
pub fn build_grid(n_points: usize, r_max: f64, map_kind: MapKind) -> Result<RadialGrid> {
    if n_points < MIN_POINTS {
        return Err(OseenError::InvalidArgument(format!(
            "n_points must be at least {MIN_POINTS}, got {n_points}"
        )));
    }
    if !(r_max >= MIN_R_MAX) || !r_max.is_finite() {
        return Err(OseenError::DomainTooSmall(r_max));
    }
    map_kind.validate()?;

    let rule = GaussLegendre::new(NonZeroUsize::new(n_points).expect("nonzero"));
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = n_points;
    let mut t = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    let mut quad_weights = Vec::with_capacity(n);
    let mut drdt = Vec::with_capacity(n);
    let mut bary = Vec::with_capacity(n);
    for (j, &(x, w)) in pairs.iter().enumerate() {
        let tj = 0.5 * (x + 1.0);
        let (r, dr) = map_kind.eval(tj, r_max);
        t.push(tj);
        nodes.push(r);
        drdt.push(dr);
        quad_weights.push(0.5 * w * dr);
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        bary.push(sign * ((1.0 - x * x) * w).sqrt());
    }

    let mut dt = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (bary[j] / bary[i]) / (t[i] - t[j]);
                dt[(i, j)] = v;
                diag -= v;
            }
        }
        dt[(i, i)] = diag;
    }

    Ok(RadialGrid { nodes, quad_weights, r_max, map_kind, t, drdt, bary, dt })
}

impl RadialGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫₀^{R_max} f(r) dr` by the grid quadrature.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.quad_weights).map(|(&r, &q)| q * f(r)).sum()
    }

    /// Lagrange derivative matrix in `t`: `D[i][j] = ℓ_j'(t_i)`.
    pub fn dt_matrix(&self) -> &Mat<f64> {
        &self.dt
    }

    /// Lagrange cardinal functions `ℓ_j(t)` at an arbitrary `t`.
    pub fn lagrange_row(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        let mut row = vec![0.0; n];
        for j in 0..n {
            if t == self.t[j] {
                row[j] = 1.0;
                return row;
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            let c = self.bary[j] / (t - self.t[j]);
            row[j] = c;
            denom += c;
        }
        for v in &mut row {
            *v /= denom;
        }
        row
    }

    /// Matrix `C[i][j] = ∫₀^{t_i} ℓ_j(t) dt` for spectral integration in `t`.
    pub fn cumulative_integration_matrix(&self) -> Mat<f64> {
        let n = self.len();
        let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("nonzero"));
        let pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
        let mut c = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            let ti = self.t[i];
            for &(x, w) in &pairs {
                let s = 0.5 * ti * (x + 1.0);
                let row = self.lagrange_row(s);
                let wt = 0.5 * ti * w;
                for j in 0..n {
                    c[(i, j)] += wt * row[j];
                }
            }
        }
        c
    }

    /// Computational coordinate of an arbitrary radius.
    pub fn t_of_r(&self, r: f64) -> f64 {
        self.map_kind.inverse(r, self.r_max)
    }
}

/// Outer radius used for resolvent and spectral sweeps at rotation strength `β`:
/// `max(30, 6|β|^{1/6} + 20)`.
pub fn auto_r_max(beta: f64) -> f64 {
    (6.0 * beta.abs().powf(1.0 / 6.0) + 20.0).max(30.0)
}

/// Grid parameters, with an optional fixed outer radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    /// `None` selects [`auto_r_max`].
    pub r_max: Option<f64>,
    #[serde(default)]
    pub map_kind: MapKind,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_points: 200, r_max: Some(30.0), map_kind: MapKind::default() }
    }
}

impl GridSpec {
    pub fn new(n_points: usize, r_max: Option<f64>) -> Self {
        Self { n_points, r_max, map_kind: MapKind::default() }
    }

    pub fn r_for(&self, beta: f64) -> f64 {
        self.r_max.unwrap_or_else(|| auto_r_max(beta))
    }

    pub fn build(&self, beta: f64) -> Result<Arc<RadialGrid>> {
        Ok(Arc::new(build_grid(self.n_points, self.r_for(beta), self.map_kind)?))
    }

    /// Same spec with twice the nodes.
    pub fn doubled(&self) -> Self {
        Self { n_points: 2 * self.n_points, ..*self }
    }
}

/// Regularity exponent of the trial basis for mode `n`: `r^{κ}` at the origin.
///
/// Smooth mode-`n` profiles are `r^{|n|}` times a function of `r²`, and the
/// maps keep `r²` analytic in `t`, so the parity of `κ` must match `n`.
pub fn kappa(n: i32) -> i32 {
    match n.unsigned_abs() {
        0 => 0,
        m if m % 2 == 1 => 1,
        _ => 2,
    }
}

/// Which outer-boundary behaviour the trial basis carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Basis vanishes at `R_max`.
    Dirichlet,
    /// No constraint at `R_max`.
    Free,
}

impl Closure {
    fn factor(self, t: f64) -> (f64, f64) {
        match self {
            Closure::Dirichlet => (1.0 - t, -1.0),
            Closure::Free => (1.0, 0.0),
        }
    }
}

impl RadialGrid {
    /// Radial derivative matrix of the nodal basis
    /// `χ_j(r) = (r/r_j)^κ·f(t)/f(t_j)·ℓ_j(t)`: `D[i][j] = χ_j'(r_i)`.
    pub fn basis_derivative(&self, kappa: i32, closure: Closure) -> Mat<f64> {
        let n = self.len();
        let k = kappa as f64;
        let mut d = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            let ri = self.nodes[i];
            let (fi, dfi) = closure.factor(self.t[i]);
            let tr = 1.0 / self.drdt[i];
            for j in 0..n {
                let rj = self.nodes[j];
                let (fj, _) = closure.factor(self.t[j]);
                let scale = (ri / rj).powi(kappa) / fj;
                let mut v = fi * self.dt[(i, j)] * tr;
                if i == j {
                    v += k / ri * fi + dfi * tr;
                }
                d[(i, j)] = scale * v;
            }
        }
        d
    }

    /// Values of the nodal basis functions at an arbitrary radius.
    pub fn basis_row(&self, r: f64, kappa: i32, closure: Closure) -> Vec<f64> {
        let t = self.t_of_r(r);
        let (f, _) = closure.factor(t);
        let mut row = self.lagrange_row(t);
        for (j, v) in row.iter_mut().enumerate() {
            let (fj, _) = closure.factor(self.t[j]);
            *v *= (r / self.nodes[j]).powi(kappa) * f / fj;
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::g;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_moment() {
        let grid = build_grid(200, 30.0, MapKind::default()).unwrap();
        let v = grid.integrate(|r| g(r) * r);
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn preconditions() {
        assert!(build_grid(16, 15.0, MapKind::default()).is_ok());
        assert!(matches!(build_grid(200, 10.0, MapKind::default()), Err(OseenError::DomainTooSmall(_))));
        assert!(build_grid(8, 30.0, MapKind::default()).is_err());
    }

    #[test]
    fn nodes_increasing_and_positive() {
        for map in [MapKind::default(), MapKind::Sqrt] {
            let grid = build_grid(64, 20.0, map).unwrap();
            assert!(grid.nodes[0] > 0.0);
            assert!(grid.nodes.windows(2).all(|w| w[1] > w[0]));
            assert!(*grid.nodes.last().unwrap() < grid.r_max);
            for &r in &grid.nodes {
                assert!((map.eval(grid.t_of_r(r), 20.0).0 - r).abs() < 1e-12 * r.max(1.0));
            }
        }
    }

    #[test]
    fn derivative_of_smooth_function() {
        let grid = build_grid(120, 30.0, MapKind::default()).unwrap();
        let d = grid.basis_derivative(2, Closure::Free);
        let f: Vec<f64> = grid.nodes.iter().map(|&r| r * r * (-r * r / 8.0).exp()).collect();
        for i in 0..grid.len() {
            let r = grid.nodes[i];
            let exact = (2.0 * r - r * r * r / 4.0) * (-r * r / 8.0).exp();
            let approx: f64 = (0..grid.len()).map(|j| d[(i, j)] * f[j]).sum();
            assert!((approx - exact).abs() < 1e-9, "r = {r}: {approx} vs {exact}");
        }
    }

    #[test]
    fn cumulative_integral() {
        let grid = build_grid(80, 20.0, MapKind::default()).unwrap();
        let c = grid.cumulative_integration_matrix();
        let h: Vec<f64> = grid.t.iter().map(|&t| (3.0 * t).cos()).collect();
        for i in 0..grid.len() {
            let v: f64 = (0..grid.len()).map(|j| c[(i, j)] * h[j]).sum();
            assert!((v - (3.0 * grid.t[i]).sin() / 3.0).abs() < 1e-13);
        }
    }
}
