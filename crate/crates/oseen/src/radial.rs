//! Gaussian-weighted radial space `Z` and the discretized mode operators
//! `𝓛ₙ`, `Mₙ`, `Ωₙ` and `H_{n,β} = -𝓛ₙ + iβMₙ`.
//!
//! Radial profiles are stored in the scaled variable `u = g^{-1/2} w`.
//! In that variable the Z inner product is the plain `L²(r dr)` product
//! (times 2π) and `-𝓛ₙ` is conjugate to the harmonic-oscillator operator
//! `-∂² - r⁻¹∂ + n²/r² + r²/16 - 1/2`.
//!
//! Operators are assembled by a quadrature-Galerkin method on the nodal
//! basis of [`RadialGrid::basis_derivative`], which makes the Z-symmetric
//! form `S A S⁻¹` exactly symmetric.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use num_complex::Complex64;

use crate::error::{OseenError, Result};
use crate::grid::{kappa, Closure, RadialGrid};
use crate::profiles::{phi, phi_complex, sqrt_g, sqrt_g_complex};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Radial profile of one azimuthal mode, with Z-norm
/// `‖w‖²_Z = 2π ∫ |w|² g⁻¹ r dr`.
#[derive(Debug, Clone)]
pub struct WeightedRadialFunction {
    pub mode: i32,
    /// Scaled nodal values `u_j = w(r_j)/g(r_j)^{1/2}`.
    pub values: Vec<C64>,
    pub grid: Arc<RadialGrid>,
}

impl WeightedRadialFunction {
    pub fn new(grid: Arc<RadialGrid>, mode: i32, values: Vec<C64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count must match grid");
        Self { mode, values, grid }
    }

    pub fn zeros(grid: Arc<RadialGrid>, mode: i32) -> Self {
        let n = grid.len();
        Self::new(grid, mode, vec![C64::new(0.0, 0.0); n])
    }

    /// Build from the scaled profile `u(r) = w(r) g(r)^{-1/2}`.
    pub fn from_scaled_fn(grid: Arc<RadialGrid>, mode: i32, u: impl Fn(f64) -> C64) -> Self {
        let values = grid.nodes.iter().map(|&r| u(r)).collect();
        Self::new(grid, mode, values)
    }

    /// Build from the physical profile `w(r)`.
    pub fn from_physical_fn(grid: Arc<RadialGrid>, mode: i32, w: impl Fn(f64) -> C64) -> Self {
        let values = grid.nodes.iter().map(|&r| w(r) / sqrt_g(r)).collect();
        Self::new(grid, mode, values)
    }

    /// Physical nodal values `w(r_j)`.
    pub fn physical_values(&self) -> Vec<C64> {
        self.grid.nodes.iter().zip(&self.values).map(|(&r, &u)| u * sqrt_g(r)).collect()
    }

    pub fn z_inner(&self, other: &Self) -> C64 {
        let g = &self.grid;
        let mut s = C64::new(0.0, 0.0);
        for j in 0..g.len() {
            s += self.values[j].conj() * other.values[j] * (g.quad_weights[j] * g.nodes[j]);
        }
        s * (2.0 * PI)
    }

    pub fn z_norm(&self) -> f64 {
        z_norm_scaled(&self.grid, &self.values)
    }

    /// Euclidean coordinates `S u`.
    pub fn to_euclidean(&self) -> Vec<C64> {
        let s = metric(&self.grid);
        self.values.iter().zip(&s).map(|(&u, &m)| u * m).collect()
    }

    pub fn from_euclidean(grid: Arc<RadialGrid>, mode: i32, y: &[C64]) -> Self {
        let s = metric(&grid);
        let values = y.iter().zip(&s).map(|(&v, &m)| v / m).collect();
        Self::new(grid, mode, values)
    }

    /// `2π ∫ w r dr`.
    pub fn circulation(&self) -> C64 {
        let g = &self.grid;
        let mut s = C64::new(0.0, 0.0);
        for j in 0..g.len() {
            let r = g.nodes[j];
            s += self.values[j] * (g.quad_weights[j] * r * sqrt_g(r));
        }
        s * (2.0 * PI)
    }

    /// `∫ r² w dr`.
    pub fn first_moment(&self) -> C64 {
        let g = &self.grid;
        let mut s = C64::new(0.0, 0.0);
        for j in 0..g.len() {
            let r = g.nodes[j];
            s += self.values[j] * (g.quad_weights[j] * r * r * sqrt_g(r));
        }
        s
    }

    /// Scaled value `u(r)` by interpolation in the mode's trial basis.
    pub fn eval_scaled(&self, r: f64) -> C64 {
        let row = self.grid.basis_row(r, kappa(self.mode), Closure::Dirichlet);
        row.iter().zip(&self.values).map(|(&b, &u)| u * b).sum()
    }

    /// Physical value `w(r)` by interpolation.
    pub fn eval(&self, r: f64) -> C64 {
        self.eval_scaled(r) * sqrt_g(r)
    }

    /// Interpolated value at the origin; zero by construction for `n ≠ 0`.
    pub fn origin_value(&self) -> C64 {
        self.eval(self.grid.nodes[0] * 1e-6)
    }

    pub fn scale(&self, c: C64) -> Self {
        let values = self.values.iter().map(|&u| u * c).collect();
        Self::new(self.grid.clone(), self.mode, values)
    }

    pub fn add(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        Self::new(self.grid.clone(), self.mode, values)
    }
}

/// Z-norm of a scaled nodal vector.
pub fn z_norm_scaled(grid: &RadialGrid, u: &[C64]) -> f64 {
    let mut s = 0.0;
    for j in 0..grid.len() {
        s += u[j].norm_sqr() * grid.quad_weights[j] * grid.nodes[j];
    }
    (2.0 * PI * s).sqrt()
}

/// Metric map `S = diag(sqrt(2π q r))` acting on scaled values.
///
/// On physical values the same map reads `sqrt(2π q g⁻¹ r)`.
pub fn metric(grid: &RadialGrid) -> Vec<f64> {
    grid.nodes
        .iter()
        .zip(&grid.quad_weights)
        .map(|(&r, &q)| (2.0 * PI * q * r).sqrt())
        .collect()
}

/// Dense operator for one mode, stored in Euclidean form `S A S⁻¹`.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub mode: i32,
    /// `β = nα` for `H_{n,β}`, `None` for `𝓛ₙ` and `Mₙ`.
    pub beta: Option<f64>,
    /// `S A S⁻¹`; Z-operator norms equal Euclidean norms of this matrix.
    pub matrix: Mat<C64>,
    /// Diagonal of `S` on scaled nodal values.
    pub metric_map: Vec<f64>,
    pub grid: Arc<RadialGrid>,
}

impl ModeOperator {
    /// The operator acting on scaled nodal values, `S⁻¹ (matrix) S`.
    pub fn nodal_matrix(&self) -> Mat<C64> {
        let s = &self.metric_map;
        Mat::from_fn(s.len(), s.len(), |i, j| self.matrix[(i, j)] * (s[j] / s[i]))
    }

    pub fn apply(&self, w: &WeightedRadialFunction) -> WeightedRadialFunction {
        let y = w.to_euclidean();
        let out = matvec(&self.matrix, &y);
        WeightedRadialFunction::from_euclidean(self.grid.clone(), w.mode, &out)
    }

    /// `‖A - Aᵀ‖_F / ‖A‖_F` of the Euclidean matrix.
    pub fn symmetry_defect(&self) -> f64 {
        let a = &self.matrix;
        let n = a.nrows();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += (a[(i, j)] - a[(j, i)]).norm_sqr();
                den += a[(i, j)].norm_sqr();
            }
        }
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }

    /// Write the nodal matrix row-major as `re im` pairs, one row per line.
    pub fn dump(&self, path: &Path) -> std::io::Result<()> {
        let a = self.nodal_matrix();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# mode {} beta {:?} n {}", self.mode, self.beta, a.nrows())?;
        for i in 0..a.nrows() {
            let row: Vec<String> =
                (0..a.ncols()).map(|j| format!("{:.17e} {:.17e}", a[(i, j)].re, a[(i, j)].im)).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        f.flush()
    }
}

pub(crate) fn matvec(a: &Mat<C64>, x: &[C64]) -> Vec<C64> {
    let n = a.nrows();
    let mut y = vec![C64::new(0.0, 0.0); n];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = a.col(j);
        for i in 0..n {
            y[i] += col[i] * xj;
        }
    }
    y
}

pub(crate) fn to_complex(a: &Mat<f64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

/// Solver for the far-field closed streamfunction problem of mode `n ≠ 0`.
///
/// Returns `Ωₙ[w] = ½(-Δₙ)⁻¹ w`, the normalization for which
/// `Ω₁[rg] = rφ` and `M₁(rg) = 0`. The velocity stream function is `2Ωₙ`.
#[derive(Debug)]
pub struct OmegaSolver {
    pub mode: i32,
    grid: Arc<RadialGrid>,
    lu: PartialPivLu<f64>,
    /// Radial derivative matrix of the free basis with regularity `r^κ`.
    pub derivative: Mat<f64>,
}

impl OmegaSolver {
    pub fn new(grid: Arc<RadialGrid>, n: i32) -> Result<Self> {
        if n == 0 {
            return Err(OseenError::InvalidMode(0));
        }
        let k = kappa(n);
        let d = grid.basis_derivative(k, Closure::Free);
        let len = grid.len();
        let w: Vec<f64> = (0..len).map(|j| grid.quad_weights[j] * grid.nodes[j]).collect();
        let mut p = stiffness(&d, &w);
        let nn = (n * n) as f64;
        for j in 0..len {
            p[(j, j)] += w[j] * nn / (grid.nodes[j] * grid.nodes[j]);
        }
        let e = grid.basis_row(grid.r_max, k, Closure::Free);
        let an = n.unsigned_abs() as f64;
        for i in 0..len {
            for j in 0..len {
                p[(i, j)] += an * e[i] * e[j];
            }
        }
        let lu = p.partial_piv_lu();
        Ok(Self { mode: n, grid, lu, derivative: d })
    }

    /// `Ωₙ` at the nodes for physical nodal vorticity values.
    pub fn apply(&self, w_phys: &[C64]) -> Vec<C64> {
        let g = &self.grid;
        let rhs = Mat::from_fn(g.len(), 1, |j, _| {
            C64::new(0.5 * g.quad_weights[j] * g.nodes[j], 0.0) * w_phys[j]
        });
        let re = Mat::from_fn(g.len(), 1, |j, _| rhs[(j, 0)].re);
        let im = Mat::from_fn(g.len(), 1, |j, _| rhs[(j, 0)].im);
        let xr = self.lu.solve(&re);
        let xi = self.lu.solve(&im);
        (0..g.len()).map(|j| C64::new(xr[(j, 0)], xi[(j, 0)])).collect()
    }

    /// `Ωₙ[w]` for a profile.
    pub fn omega(&self, w: &WeightedRadialFunction) -> Vec<C64> {
        self.apply(&w.physical_values())
    }

    /// Radial derivative of a nodal function in the free basis.
    pub fn differentiate(&self, f: &[C64]) -> Vec<C64> {
        let d = &self.derivative;
        (0..f.len())
            .map(|i| (0..f.len()).map(|j| f[j] * d[(i, j)]).sum())
            .collect()
    }

    /// `P⁻¹ B` for a real right-hand side matrix.
    fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        self.lu.solve(b)
    }
}

fn stiffness(d: &Mat<f64>, w: &[f64]) -> Mat<f64> {
    let n = d.nrows();
    let wd = Mat::from_fn(n, n, |i, j| w[i] * d[(i, j)]);
    d.transpose() * &wd
}

/// Real symmetric building blocks of one mode: Euclidean `-𝓛ₙ` and `Mₙ`.
#[derive(Debug)]
pub struct ModeBlocks {
    pub mode: i32,
    pub grid: Arc<RadialGrid>,
    /// Euclidean `-𝓛ₙ`.
    pub neg_l: Mat<f64>,
    /// Euclidean `Mₙ`, absent for `n = 0`.
    pub m: Option<Mat<f64>>,
    /// Euclidean stiffness part of `-𝓛ₙ` (no potential), used by complex scaling.
    pub(crate) kinetic: Mat<f64>,
    pub omega: Option<OmegaSolver>,
}

impl ModeBlocks {
    pub fn new(grid: Arc<RadialGrid>, n: i32) -> Result<Self> {
        let len = grid.len();
        let w: Vec<f64> = (0..len).map(|j| grid.quad_weights[j] * grid.nodes[j]).collect();
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let d = grid.basis_derivative(kappa(n), Closure::Dirichlet);
        let k = stiffness(&d, &w);
        let kinetic = Mat::from_fn(len, len, |i, j| k[(i, j)] / (sw[i] * sw[j]));
        let nn = (n * n) as f64;
        let mut neg_l = kinetic.clone();
        for j in 0..len {
            let r = grid.nodes[j];
            neg_l[(j, j)] += nn / (r * r) + r * r / 16.0 - 0.5;
        }
        symmetrize(&mut neg_l);
        let (m, omega) = if n == 0 {
            (None, None)
        } else {
            let solver = OmegaSolver::new(grid.clone(), n)?;
            let c: Vec<f64> = (0..len).map(|j| sw[j] * sqrt_g(grid.nodes[j])).collect();
            let rhs = Mat::from_fn(len, len, |i, j| if i == j { c[j] } else { 0.0 });
            let x = solver.solve_mat(&rhs);
            let mut m = Mat::from_fn(len, len, |i, j| -0.5 * c[i] * x[(i, j)]);
            for j in 0..len {
                m[(j, j)] += phi(grid.nodes[j]);
            }
            symmetrize(&mut m);
            (Some(m), Some(solver))
        };
        Ok(Self { mode: n, grid, neg_l, m, kinetic, omega })
    }

    /// Euclidean `H_{n,β} = -𝓛ₙ + iβMₙ`.
    pub fn h(&self, beta: f64) -> Mat<C64> {
        let n = self.neg_l.nrows();
        match &self.m {
            Some(m) => Mat::from_fn(n, n, |i, j| C64::new(self.neg_l[(i, j)], beta * m[(i, j)])),
            None => to_complex(&self.neg_l),
        }
    }

    fn operator(&self, matrix: Mat<C64>, beta: Option<f64>) -> ModeOperator {
        ModeOperator { mode: self.mode, beta, matrix, metric_map: metric(&self.grid), grid: self.grid.clone() }
    }

    pub fn l_operator(&self) -> ModeOperator {
        let n = self.neg_l.nrows();
        self.operator(Mat::from_fn(n, n, |i, j| C64::new(-self.neg_l[(i, j)], 0.0)), None)
    }

    pub fn h_operator(&self, beta: f64) -> ModeOperator {
        self.operator(self.h(beta), Some(beta))
    }

    /// Complex-scaled Euclidean `H_{n,β}` on the ray `r = s·e^{iθ}`.
    ///
    /// Complex symmetric, with the same discrete spectrum as `H_{n,β}`
    /// in the limit of resolution. Only eigenvalues are meaningful.
    pub fn h_complex_scaled(&self, beta: f64, theta: f64) -> Result<Mat<C64>> {
        let g = &self.grid;
        let len = g.len();
        let rot = C64::from_polar(1.0, theta);
        let e2m = C64::from_polar(1.0, -2.0 * theta);
        let e2p = C64::from_polar(1.0, 2.0 * theta);
        let nn = (self.mode * self.mode) as f64;
        let mut h = Mat::from_fn(len, len, |i, j| self.kinetic[(i, j)] * e2m);
        for j in 0..len {
            let s = g.nodes[j];
            h[(j, j)] += e2m * (nn / (s * s)) + e2p * (s * s / 16.0) - 0.5;
        }
        if let Some(solver) = &self.omega {
            let sw: Vec<f64> = (0..len).map(|j| (g.quad_weights[j] * g.nodes[j]).sqrt()).collect();
            let rhs = Mat::from_fn(len, len, |i, j| if i == j { sw[j] } else { 0.0 });
            let x = solver.solve_mat(&rhs);
            let gh: Vec<C64> = g.nodes.iter().map(|&s| sqrt_g_complex(rot * s)).collect();
            let ib = I * beta;
            for i in 0..len {
                for j in 0..len {
                    let omega_ij = e2p * (0.5 * sw[i] * x[(i, j)]);
                    h[(i, j)] -= ib * gh[i] * omega_ij * gh[j];
                }
                h[(i, i)] += ib * phi_complex(rot * g.nodes[i]);
            }
        } else if beta != 0.0 {
            return Err(OseenError::InvalidMode(0));
        }
        Ok(h)
    }

    /// Euclidean kernel direction `r·g` of mode ±1 on the complex ray.
    pub fn kernel_vector_scaled(&self, theta: f64) -> Vec<C64> {
        let g = &self.grid;
        let rot = C64::from_polar(1.0, theta);
        (0..g.len())
            .map(|j| {
                let z = rot * g.nodes[j];
                z * (-0.125 * z * z).exp() * (g.quad_weights[j] * g.nodes[j]).sqrt()
            })
            .collect()
    }
}

fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Assemble `𝓛ₙ`.
pub fn assemble_l_n(grid: Arc<RadialGrid>, n: i32) -> Result<ModeOperator> {
    Ok(ModeBlocks::new(grid, n)?.l_operator())
}

/// Assemble `Mₙ = φ - gΩₙ[·]`.
pub fn assemble_m_n(grid: Arc<RadialGrid>, n: i32) -> Result<ModeOperator> {
    if n == 0 {
        return Err(OseenError::InvalidMode(0));
    }
    let blocks = ModeBlocks::new(grid, n)?;
    let m = to_complex(blocks.m.as_ref().expect("n != 0"));
    Ok(blocks.operator(m, None))
}

/// Assemble `H_{n,β} = -𝓛ₙ + iβMₙ`.
pub fn assemble_h(grid: Arc<RadialGrid>, n: i32, beta: f64) -> Result<ModeOperator> {
    if n == 0 {
        return Err(OseenError::InvalidMode(0));
    }
    Ok(ModeBlocks::new(grid, n)?.h_operator(beta))
}

/// `Ωₙ[w]` at the nodes.
pub fn compute_omega_n(w: &WeightedRadialFunction, n: i32) -> Result<Vec<C64>> {
    let solver = OmegaSolver::new(w.grid.clone(), n)?;
    Ok(solver.omega(w))
}

/// Euclidean vector of the kernel direction `r·g` (real axis).
pub fn kernel_vector(grid: &RadialGrid) -> Vec<C64> {
    let s = metric(grid);
    grid.nodes.iter().zip(&s).map(|(&r, &m)| C64::new(r * sqrt_g(r) * m, 0.0)).collect()
}

/// Z-orthogonal projection of a mode ±1 profile onto `Z₀`.
pub fn project_z0(w: &WeightedRadialFunction) -> Result<WeightedRadialFunction> {
    if w.mode.abs() != 1 {
        return Err(OseenError::InvalidMode(w.mode));
    }
    let v = WeightedRadialFunction::from_scaled_fn(w.grid.clone(), w.mode, |r| C64::new(r * sqrt_g(r), 0.0));
    let c = v.z_inner(w) / v.z_inner(&v);
    Ok(w.add(&v.scale(-c)))
}

/// Orthonormal complement of one vector, realized by a Householder reflector.
///
/// For a Hermitian-orthogonal complement pass `x`; for the complex-symmetric
/// complement `{y : xᵀy = 0}` pass `conj(x)`.
#[derive(Debug, Clone)]
pub struct Deflation {
    h: Vec<C64>,
}

impl Deflation {
    pub fn new(x: &[C64]) -> Self {
        let nrm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let mut h: Vec<C64> = x.iter().map(|&v| v / nrm).collect();
        let phase = if h[0].norm() > 0.0 { h[0] / h[0].norm() } else { C64::new(1.0, 0.0) };
        h[0] += phase;
        let hn = h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in &mut h {
            *v /= hn;
        }
        Self { h }
    }

    /// `Qᴴ A Q` where the columns of `Q` span the complement.
    pub fn compress(&self, a: &Mat<C64>) -> Mat<C64> {
        let n = a.nrows();
        let h = &self.h;
        // P A P with P = I - 2hhᴴ.
        let mut ah = vec![C64::new(0.0, 0.0); n];
        let mut ha = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                ah[i] += a[(i, j)] * h[j];
                ha[j] += h[i].conj() * a[(i, j)];
            }
        }
        let hah: C64 = (0..n).map(|i| h[i].conj() * ah[i]).sum();
        Mat::from_fn(n - 1, n - 1, |i, j| {
            let (i, j) = (i + 1, j + 1);
            a[(i, j)] - 2.0 * ah[i] * h[j].conj() - 2.0 * h[i] * ha[j] + 4.0 * h[i] * hah * h[j].conj()
        })
    }

    /// `Q y` for `y` in complement coordinates.
    pub fn lift(&self, y: &[C64]) -> Vec<C64> {
        let n = self.h.len();
        let mut x = vec![C64::new(0.0, 0.0); n];
        x[1..].copy_from_slice(y);
        let hx: C64 = (0..n).map(|i| self.h[i].conj() * x[i]).sum();
        for i in 0..n {
            x[i] -= 2.0 * self.h[i] * hx;
        }
        x
    }

    /// `Qᴴ x`.
    pub fn restrict(&self, x: &[C64]) -> Vec<C64> {
        let hx: C64 = (0..x.len()).map(|i| self.h[i].conj() * x[i]).sum();
        (1..x.len()).map(|i| x[i] - 2.0 * self.h[i] * hx).collect()
    }
}

/// Subspace on which an operator is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    #[default]
    Full,
    Z0,
}

/// Euclidean matrix of `op` restricted to `subspace`.
pub fn restricted_matrix(op: &ModeOperator, subspace: Subspace) -> Result<Mat<C64>> {
    match subspace {
        Subspace::Full => Ok(op.matrix.clone()),
        Subspace::Z0 => {
            if op.mode.abs() != 1 {
                return Err(OseenError::InvalidMode(op.mode));
            }
            Ok(Deflation::new(&kernel_vector(&op.grid)).compress(&op.matrix))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MapKind};

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(build_grid(n, 30.0, MapKind::default()).unwrap())
    }

    #[test]
    fn l1_on_rg() {
        let g = grid(160);
        let l = assemble_l_n(g.clone(), 1).unwrap();
        let w = WeightedRadialFunction::from_scaled_fn(g, 1, |r| C64::new(r * sqrt_g(r), 0.0));
        let lw = l.apply(&w);
        let res = lw.add(&w.scale(C64::new(0.5, 0.0)));
        assert!(res.z_norm() < 1e-8 * w.z_norm(), "{}", res.z_norm());
    }

    #[test]
    fn symmetric_forms() {
        let g = grid(120);
        for n in [1, 2, 5] {
            let b = ModeBlocks::new(g.clone(), n).unwrap();
            assert!(b.l_operator().symmetry_defect() < 1e-12);
            let m = assemble_m_n(g.clone(), n).unwrap();
            assert!(m.symmetry_defect() < 1e-10);
        }
    }

    #[test]
    fn h_at_zero_beta_is_minus_l() {
        let g = grid(64);
        let b = ModeBlocks::new(g, 2).unwrap();
        let h = b.h(0.0);
        let l = b.l_operator();
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(h[(i, j)], -l.matrix[(i, j)]);
            }
        }
    }

    #[test]
    fn rejects_mode_zero() {
        let g = grid(32);
        assert!(assemble_m_n(g.clone(), 0).is_err());
        assert!(assemble_h(g.clone(), 0, 1.0).is_err());
        let w = WeightedRadialFunction::zeros(g, 0);
        assert!(compute_omega_n(&w, 0).is_err());
        assert!(project_z0(&w).is_err());
    }

    #[test]
    fn deflation_roundtrip() {
        let x: Vec<C64> = (0..6).map(|k| C64::new(k as f64 + 1.0, 0.3 * k as f64)).collect();
        let d = Deflation::new(&x);
        let y: Vec<C64> = (0..5).map(|k| C64::new(0.1 * k as f64, 1.0)).collect();
        let z = d.lift(&y);
        let dot: C64 = x.iter().zip(&z).map(|(a, b)| a.conj() * b).sum();
        assert!(dot.norm() < 1e-12);
        let back = d.restrict(&z);
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
