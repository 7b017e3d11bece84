//! Real scalar fields on the plane stored as families of azimuthal modes.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{OseenError, Result};
use crate::grid::RadialGrid;
use crate::radial::{WeightedRadialFunction, C64};

/// `w(r, θ) = Σ_{n ∈ ℤ} w_n(r) e^{inθ}` with `w_{-n} = conj(w_n)`, stored
/// for `0 ≤ n ≤ n_max`.
#[derive(Debug, Clone)]
pub struct ModalField {
    pub grid: Arc<RadialGrid>,
    /// `modes[n]` holds `w_n`.
    pub modes: Vec<WeightedRadialFunction>,
}

impl ModalField {
    pub fn zeros(grid: Arc<RadialGrid>, n_max: usize) -> Self {
        let modes = (0..=n_max).map(|n| WeightedRadialFunction::zeros(grid.clone(), n as i32)).collect();
        Self { grid, modes }
    }

    /// Assemble from per-mode profiles; missing modes up to the largest are zero.
    pub fn from_modes(grid: Arc<RadialGrid>, parts: Vec<WeightedRadialFunction>) -> Result<Self> {
        let n_max = parts.iter().map(|w| w.mode).max().unwrap_or(0);
        let mut field = Self::zeros(grid.clone(), n_max.max(0) as usize);
        for w in parts {
            if w.mode < 0 {
                return Err(OseenError::InvalidMode(w.mode));
            }
            if !Arc::ptr_eq(&w.grid, &grid) && w.grid.nodes != grid.nodes {
                return Err(OseenError::InvalidArgument("mode profiles live on different grids".into()));
            }
            let slot = &mut field.modes[w.mode as usize];
            *slot = slot.add(&WeightedRadialFunction::new(grid.clone(), w.mode, w.values));
        }
        if let Some(m0) = field.modes.first_mut() {
            for v in &mut m0.values {
                v.im = 0.0;
            }
        }
        Ok(field)
    }

    pub fn n_max(&self) -> usize {
        self.modes.len() - 1
    }

    /// `Re⟨w, v⟩_X = Re Σ_{n ∈ ℤ} ⟨w_n, v_n⟩_Z`.
    pub fn x_inner(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for (n, (a, b)) in self.modes.iter().zip(&other.modes).enumerate() {
            let v = a.z_inner(b).re;
            s += if n == 0 { v } else { 2.0 * v };
        }
        s
    }

    pub fn x_norm_sq(&self) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(n, w)| if n == 0 { 1.0 } else { 2.0 } * w.z_norm().powi(2))
            .sum()
    }

    pub fn x_norm(&self) -> f64 {
        self.x_norm_sq().sqrt()
    }

    /// `∫ w dξ`.
    pub fn mean(&self) -> f64 {
        self.modes[0].circulation().re
    }

    /// `(∫ ξ₁ w dξ, ∫ ξ₂ w dξ)`.
    pub fn first_moment(&self) -> (f64, f64) {
        match self.modes.get(1) {
            Some(w1) => {
                let m = w1.first_moment();
                (2.0 * PI * m.re, -2.0 * PI * m.im)
            }
            None => (0.0, 0.0),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let modes = self.modes.iter().map(|w| w.scale(C64::new(c, 0.0))).collect();
        Self { grid: self.grid.clone(), modes }
    }

    /// Sum of two fields; the result carries the larger mode range.
    pub fn add(&self, other: &Self) -> Self {
        let n_max = self.n_max().max(other.n_max());
        let mut out = Self::zeros(self.grid.clone(), n_max);
        for (n, slot) in out.modes.iter_mut().enumerate() {
            if let Some(a) = self.modes.get(n) {
                *slot = slot.add(a);
            }
            if let Some(b) = other.modes.get(n) {
                *slot = slot.add(b);
            }
        }
        out
    }

    /// Largest mode index kept, dropping or padding higher modes.
    pub fn truncated(&self, n_max: usize) -> Self {
        let mut out = Self::zeros(self.grid.clone(), n_max);
        for (n, slot) in out.modes.iter_mut().enumerate() {
            if let Some(a) = self.modes.get(n) {
                *slot = a.clone();
            }
        }
        out
    }

    /// Physical value at `(r, θ)` by interpolation of every mode.
    pub fn eval(&self, r: f64, theta: f64) -> f64 {
        let mut s = self.modes[0].eval(r).re;
        for (n, w) in self.modes.iter().enumerate().skip(1) {
            s += 2.0 * (w.eval(r) * C64::from_polar(1.0, n as f64 * theta)).re;
        }
        s
    }

    /// Physical values on the tensor grid `(r_j, θ_k = 2πk/M)`, row-major in `j`.
    pub fn physical_on_polar(&self, n_theta: usize) -> Vec<f64> {
        let phys: Vec<Vec<C64>> = self.modes.iter().map(|w| w.physical_values()).collect();
        synthesize(&phys, n_theta)
    }
}

/// Real values `Σ_{n∈ℤ} f_n(r_j) e^{inθ_k}` from nonnegative modes given at the nodes.
pub fn synthesize(modes: &[Vec<C64>], n_theta: usize) -> Vec<f64> {
    let len = modes.first().map_or(0, |m| m.len());
    let mut out = vec![0.0; len * n_theta];
    for k in 0..n_theta {
        let th = 2.0 * PI * k as f64 / n_theta as f64;
        let phases: Vec<C64> = (0..modes.len()).map(|n| C64::from_polar(1.0, n as f64 * th)).collect();
        for j in 0..len {
            let mut s = modes[0][j].re;
            for n in 1..modes.len() {
                s += 2.0 * (modes[n][j] * phases[n]).re;
            }
            out[j * n_theta + k] = s;
        }
    }
    out
}

/// `L^p(ℝ²)` norm of nonnegative tensor-grid samples (`p = ∞` allowed).
pub fn polar_lp_norm(grid: &RadialGrid, n_theta: usize, modulus: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return modulus.iter().cloned().fold(0.0, f64::max);
    }
    let dth = 2.0 * PI / n_theta as f64;
    let mut s = 0.0;
    for j in 0..grid.len() {
        let row: f64 = modulus[j * n_theta..(j + 1) * n_theta].iter().map(|v| v.powf(p)).sum();
        s += grid.quad_weights[j] * grid.nodes[j] * dth * row;
    }
    s.powf(1.0 / p)
}

/// Number of angular samples that resolves products of modes up to `n_max`.
pub fn default_n_theta(n_max: usize) -> usize {
    (4 * n_max + 8).next_power_of_two().max(32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MapKind};
    use crate::profiles::g;

    #[test]
    fn gaussian_norms() {
        let grid = Arc::new(build_grid(160, 30.0, MapKind::default()).unwrap());
        let w = WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(g(r), 0.0));
        let f = ModalField::from_modes(grid.clone(), vec![w]).unwrap();
        assert!((f.mean() - 1.0).abs() < 1e-12);
        // ‖G‖²_X = ∫ G dξ = 1.
        assert!((f.x_norm_sq() - 1.0).abs() < 1e-12);
        let m = 32;
        let vals = f.physical_on_polar(m);
        let l1 = polar_lp_norm(&grid, m, &vals.iter().map(|v| v.abs()).collect::<Vec<_>>(), 1.0);
        assert!((l1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dipole_moment() {
        let grid = Arc::new(build_grid(160, 30.0, MapKind::default()).unwrap());
        // w = ξ₁ g, so w₁ = r g / 2 and ∫ ξ₁ w dξ = π ∫ r³ g dr.
        let w1 = WeightedRadialFunction::from_physical_fn(grid.clone(), 1, |r| C64::new(0.5 * r * g(r), 0.0));
        let f = ModalField::from_modes(grid.clone(), vec![w1]).unwrap();
        let (mx, my) = f.first_moment();
        let direct = grid.integrate(|r| r * r * r * g(r)) * PI;
        assert!((mx - direct).abs() < 1e-12 && my.abs() < 1e-14);
        assert!((f.eval(1.3, 0.4) - 1.3 * 0.4f64.cos() * g(1.3)).abs() < 1e-10);
    }
}
