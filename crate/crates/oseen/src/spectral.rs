//! Eigenvalues, resolvent norms, pseudospectral suprema, numerical ranges
//! and the spectral lower bound `Σ(α)`.

use std::f64::consts::PI;

use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};
use crate::grid::{auto_r_max, GridSpec};
use crate::linalg;
use crate::radial::{restricted_matrix, Deflation, ModeBlocks, ModeOperator, Subspace, C64};

/// Spectrum of one mode operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub mode: i32,
    pub beta: f64,
    pub subspace: Subspace,
    /// Sorted by ascending real part.
    pub eigenvalues: Vec<C64>,
    pub residuals: Vec<f64>,
    pub trusted: Vec<bool>,
    pub n_points: usize,
    pub r_max: f64,
}

impl SpectrumResult {
    pub fn trusted_values(&self) -> Vec<C64> {
        self.eigenvalues.iter().zip(&self.trusted).filter(|(_, &t)| t).map(|(&v, _)| v).collect()
    }

    /// Smallest real part among trusted eigenvalues.
    pub fn min_trusted_re(&self) -> Option<f64> {
        self.trusted_values().iter().map(|z| z.re).reduce(f64::min)
    }
}

/// Residual threshold of the trust filter.
pub const RESIDUAL_TOL: f64 = 1e-6;

fn spectrum_from_matrix(
    a: &Mat<C64>,
    mode: i32,
    beta: f64,
    subspace: Subspace,
    n_points: usize,
    r_max: f64,
) -> Result<SpectrumResult> {
    let pairs = linalg::eigen_pairs(a)?;
    if pairs.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(OseenError::LinearAlgebra(format!("non-finite eigenvalue for mode {mode}, beta {beta}")));
    }
    let mut idx: Vec<usize> = (0..pairs.values.len()).collect();
    idx.sort_by(|&i, &j| pairs.values[i].re.total_cmp(&pairs.values[j].re));
    let eigenvalues: Vec<C64> = idx.iter().map(|&i| pairs.values[i]).collect();
    let residuals: Vec<f64> = idx.iter().map(|&i| pairs.residuals[i]).collect();
    let trusted = residuals.iter().map(|&r| r <= RESIDUAL_TOL).collect();
    Ok(SpectrumResult { mode, beta, subspace, eigenvalues, residuals, trusted, n_points, r_max })
}

/// Dense eigenvalues of `S H S⁻¹`, optionally deflated onto `Z₀`.
///
/// Eigenvalues whose residual exceeds [`RESIDUAL_TOL`] are marked untrusted.
pub fn eigenvalues(op: &ModeOperator, subspace: Subspace) -> Result<SpectrumResult> {
    let a = restricted_matrix(op, subspace)?;
    spectrum_from_matrix(&a, op.mode, op.beta.unwrap_or(0.0), subspace, op.grid.len(), op.grid.r_max)
}

/// Eigenvalues of `H_{n,β}` computed on the complex ray `r = s·e^{iθ}`.
///
/// The discrete spectrum is unchanged by the rotation while the
/// exponential far-field ill-conditioning of the unrotated problem at
/// large `β` disappears.
pub fn eigenvalues_complex_scaled(blocks: &ModeBlocks, beta: f64, subspace: Subspace, theta: f64) -> Result<SpectrumResult> {
    let h = blocks.h_complex_scaled(beta, theta)?;
    let a = match subspace {
        Subspace::Full => h,
        Subspace::Z0 => {
            if blocks.mode.abs() != 1 {
                return Err(OseenError::InvalidMode(blocks.mode));
            }
            let v: Vec<C64> = blocks.kernel_vector_scaled(theta).iter().map(|z| z.conj()).collect();
            Deflation::new(&v).compress(&h)
        }
    };
    spectrum_from_matrix(&a, blocks.mode, beta, subspace, blocks.grid.len(), blocks.grid.r_max)
}

/// Settings for resolution-checked eigenvalue computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenSettings {
    pub grid: GridSpec,
    /// Rotation angle of the complex-scaled ray; `0` disables scaling.
    pub theta: f64,
    /// Multiplier on the automatic outer radius when `grid.r_max` is `None`.
    pub radius_factor: f64,
    /// Relative agreement required between the grid and its doubling.
    pub trust_tol: f64,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self { grid: GridSpec::new(300, None), theta: PI / 8.0, radius_factor: 1.2, trust_tol: 1e-6 }
    }
}

impl EigenSettings {
    fn spec_for(&self, beta: f64) -> GridSpec {
        let r = self.grid.r_max.unwrap_or_else(|| self.radius_factor * auto_r_max(beta));
        GridSpec { r_max: Some(r), ..self.grid }
    }
}

/// Spectrum of `H_{n,β}` with the doubling trust filter applied: an
/// eigenvalue is trusted only if its residual is small and the doubled
/// grid reproduces it to `trust_tol` relative accuracy.
pub fn trusted_spectrum(n: i32, beta: f64, subspace: Subspace, settings: &EigenSettings) -> Result<SpectrumResult> {
    let spec = settings.spec_for(beta);
    let theta = if beta == 0.0 || n == 0 { 0.0 } else { settings.theta };
    let coarse = scaled_spectrum(&spec, n, beta, subspace, theta)?;
    let fine = scaled_spectrum(&spec.doubled(), n, beta, subspace, theta)?;
    let mut out = coarse.clone();
    for (k, z) in coarse.eigenvalues.iter().enumerate() {
        if !out.trusted[k] {
            continue;
        }
        let tol = settings.trust_tol * z.norm().max(1.0);
        let hit = fine
            .eigenvalues
            .iter()
            .zip(&fine.trusted)
            .filter(|(_, &t)| t)
            .map(|(w, _)| (*w - *z).norm())
            .fold(f64::INFINITY, f64::min);
        out.trusted[k] = hit <= tol;
    }
    Ok(out)
}

fn scaled_spectrum(spec: &GridSpec, n: i32, beta: f64, subspace: Subspace, theta: f64) -> Result<SpectrumResult> {
    let grid = spec.build(beta)?;
    let blocks = ModeBlocks::new(grid, n)?;
    if theta == 0.0 {
        eigenvalues(&blocks.h_operator(beta), subspace)
    } else {
        eigenvalues_complex_scaled(&blocks, beta, subspace, theta)
    }
}

/// Contribution of one mode to `Σ(α)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeGap {
    pub mode: i32,
    pub beta: f64,
    pub min_re: f64,
    pub eigenvalue: C64,
    pub trusted_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaResult {
    pub alpha: f64,
    pub sigma: f64,
    pub per_mode: Vec<ModeGap>,
}

/// `Σ(α)`: smallest real part of the trusted spectrum of `H_{n,nα}` over
/// `1 ≤ n ≤ n_max`, with `Z₀` deflation at `n = 1`.
pub fn spectral_bound_sigma(alpha: f64, n_max: i32, settings: &EigenSettings) -> Result<SigmaResult> {
    if n_max < 2 {
        return Err(OseenError::InvalidArgument(format!("n_max must be at least 2, got {n_max}")));
    }
    let mut per_mode = Vec::new();
    for n in 1..=n_max {
        let beta = n as f64 * alpha;
        let sub = if n == 1 { Subspace::Z0 } else { Subspace::Full };
        let spec = trusted_spectrum(n, beta, sub, settings)?;
        let (k, z) = spec
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(k, _)| spec.trusted[*k])
            .min_by(|a, b| a.1.re.total_cmp(&b.1.re))
            .ok_or_else(|| OseenError::Resolution(format!("no trusted eigenvalue for n = {n}, beta = {beta}")))?;
        let _ = k;
        per_mode.push(ModeGap {
            mode: n,
            beta,
            min_re: z.re,
            eigenvalue: *z,
            trusted_count: spec.trusted.iter().filter(|&&t| t).count(),
        });
    }
    let sigma = per_mode.iter().map(|m| m.min_re).fold(f64::INFINITY, f64::min);
    Ok(SigmaResult { alpha, sigma, per_mode })
}

/// `‖(H - iλ)⁻¹‖` in the Z metric for a full-space operator.
pub fn resolvent_norm(op: &ModeOperator, lambda: f64) -> Result<f64> {
    resolvent_norm_matrix(&op.matrix, lambda)
}

/// `1/σ_min(A - iλ)` for a Euclidean matrix.
pub fn resolvent_norm_matrix(a: &Mat<C64>, lambda: f64) -> Result<f64> {
    let shifted = shift(a, C64::new(0.0, lambda));
    Ok(1.0 / linalg::sigma_min(&shifted)?)
}

/// Dense-SVD route for `‖(A - iλ)⁻¹‖`.
pub fn resolvent_norm_svd(a: &Mat<C64>, lambda: f64) -> Result<f64> {
    let shifted = shift(a, C64::new(0.0, lambda));
    Ok(1.0 / linalg::sigma_min_svd(&shifted)?)
}

fn shift(a: &Mat<C64>, z: C64) -> Mat<C64> {
    let mut s = a.clone();
    for i in 0..a.nrows() {
        s[(i, i)] -= z;
    }
    s
}

/// `‖skew part‖₂ = |β|·‖Mₙ‖` of `A = -𝓛 + iβM` in Euclidean form.
pub fn skew_norm(a: &Mat<C64>) -> Result<f64> {
    let n = a.nrows();
    let s = Mat::from_fn(n, n, |i, j| (a[(i, j)] - a[(j, i)].conj()) * C64::new(0.0, -0.5));
    linalg::norm2(&s)
}

/// Resolvent sweep along the imaginary axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolventSweep {
    pub mode: i32,
    pub beta: f64,
    pub subspace: Subspace,
    pub lambda_samples: Vec<f64>,
    pub norms: Vec<f64>,
    pub sup_norm: f64,
    pub argmax_lambda: f64,
    /// Half-width of the final search window.
    pub window: f64,
    /// Set when the maximizer touched the window edge and the window was doubled.
    pub edge_warning: bool,
}

/// Number of logarithmically spaced grid points per sign.
pub const SWEEP_POINTS: usize = 129;

/// `sup_λ ‖(H - iλ)⁻¹‖` over `λ ∈ ℝ`.
///
/// Coarse signed logarithmic grid on `|λ| ≤ 2c₆|β|` with `c₆|β|` measured
/// from the skew part, then golden-section refinement of every competitive
/// local maximum.
pub fn pseudospectral_sup(op: &ModeOperator, subspace: Subspace) -> Result<ResolventSweep> {
    let a = restricted_matrix(op, subspace)?;
    let beta = op.beta.unwrap_or(0.0);
    let mut window = (2.0 * skew_norm(&a)?).max(1.0);
    let mut edge_warning = false;
    for _ in 0..4 {
        let sweep = sweep_window(&a, window)?;
        let (lam, val, samples, norms) = sweep;
        let at_edge = (lam.abs() - window).abs() <= 1e-9 * window;
        if at_edge {
            edge_warning = true;
            window *= 2.0;
            continue;
        }
        return Ok(ResolventSweep {
            mode: op.mode,
            beta,
            subspace,
            lambda_samples: samples,
            norms,
            sup_norm: val,
            argmax_lambda: lam,
            window,
            edge_warning,
        });
    }
    Err(OseenError::Resolution(format!("resolvent maximizer escapes every window up to {window}")))
}

type SweepOut = (f64, f64, Vec<f64>, Vec<f64>);

fn sweep_window(a: &Mat<C64>, window: f64) -> Result<SweepOut> {
    let lo = window * 1e-5;
    let mut lambdas = Vec::with_capacity(2 * SWEEP_POINTS + 1);
    for k in (0..SWEEP_POINTS).rev() {
        lambdas.push(-log_point(lo, window, k));
    }
    lambdas.push(0.0);
    for k in 0..SWEEP_POINTS {
        lambdas.push(log_point(lo, window, k));
    }
    let norms: Vec<f64> = lambdas.iter().map(|&l| resolvent_norm_matrix(a, l)).collect::<Result<_>>()?;
    let best = norms.iter().cloned().fold(0.0, f64::max);
    let mut peaks: Vec<usize> = (0..lambdas.len())
        .filter(|&k| {
            let left = if k == 0 { f64::NEG_INFINITY } else { norms[k - 1] };
            let right = if k + 1 == norms.len() { f64::NEG_INFINITY } else { norms[k + 1] };
            norms[k] >= left && norms[k] >= right && norms[k] >= 0.5 * best
        })
        .collect();
    peaks.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    peaks.truncate(6);
    let mut arg = 0.0;
    let mut sup = 0.0;
    for &k in &peaks {
        let l = if k == 0 { lambdas[0] } else { lambdas[k - 1] };
        let r = if k + 1 == lambdas.len() { lambdas[k] } else { lambdas[k + 1] };
        let (x, v) = golden_max(a, l, r, lambdas[k], norms[k])?;
        if v > sup {
            sup = v;
            arg = x;
        }
    }
    Ok((arg, sup, lambdas, norms))
}

fn log_point(lo: f64, hi: f64, k: usize) -> f64 {
    lo * (hi / lo).powf(k as f64 / (SWEEP_POINTS - 1) as f64)
}

fn golden_max(a: &Mat<C64>, mut lo: f64, mut hi: f64, x0: f64, f0: f64) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| resolvent_norm_matrix(a, x);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let (mut bx, mut bf) = (x0, f0);
    for _ in 0..80 {
        if (hi - lo) <= 1e-3 * 0.5 * (hi.abs() + lo.abs()).max(1e-8) {
            break;
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d)?;
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v > bf {
                bf = v;
                bx = x;
            }
        }
    }
    Ok((bx, bf))
}

/// Rayleigh-quotient sampling of the numerical range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NumericalRangeReport {
    pub mode: i32,
    pub beta: f64,
    pub samples: Vec<C64>,
    pub min_re: f64,
    pub max_abs_im: f64,
    /// Measured `‖Mₙ‖_{Z→Z}`.
    pub c6: f64,
    pub contained: bool,
    /// Smallest `(c₈, c₉)` with `|Im z| ≤ |β|(c₈ Re(z)^{1/2} + c₉)` on the samples.
    pub c8: f64,
    pub c9: f64,
}

/// Draw unit vectors in the Z metric and check the containment
/// `Re z ≥ |n|/2`, `|Im z| ≤ c₆|β|`.
///
/// Half of the samples are random combinations of a random number of
/// low-lying eigenvectors of the Hermitian part, so that the quotients
/// cover a wide range of real parts; the rest are unstructured.
pub fn numerical_range_check(op: &ModeOperator, sample_count: usize, seed: u64) -> Result<NumericalRangeReport> {
    if sample_count < 100 {
        return Err(OseenError::InvalidArgument(format!("sample_count must be at least 100, got {sample_count}")));
    }
    let a = &op.matrix;
    let n = a.nrows();
    let beta = op.beta.unwrap_or(0.0);
    let herm = Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    let eig = herm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| OseenError::LinearAlgebra(format!("hermitian eigen: {e:?}")))?;
    let u = eig.U();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kdist = Uniform::new_inclusive(1usize, 40.min(n)).expect("valid range");
    let mut samples = Vec::with_capacity(sample_count);
    for s in 0..sample_count {
        let y: Vec<C64> = if s % 2 == 0 {
            let k = kdist.sample(&mut rng);
            let coef: Vec<C64> = (0..k).map(|_| gauss(&mut rng)).collect();
            (0..n).map(|i| (0..k).map(|j| u[(i, j)] * coef[j]).sum()).collect()
        } else {
            (0..n).map(|_| gauss(&mut rng)).collect()
        };
        let hy = crate::radial::matvec(a, &y);
        let num: C64 = y.iter().zip(&hy).map(|(p, q)| p.conj() * q).sum();
        let den: f64 = y.iter().map(|p| p.norm_sqr()).sum();
        samples.push(num / den);
    }
    let skew = skew_norm(a)?;
    let c6 = if beta != 0.0 { skew / beta.abs() } else { 0.0 };
    let min_re = samples.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max_abs_im = samples.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let floor = op.mode.unsigned_abs() as f64 / 2.0;
    let tol = 1e-8 * (1.0 + skew);
    let contained = min_re >= floor - 1e-8 && max_abs_im <= skew + tol;
    let (c8, c9) = if beta == 0.0 { (0.0, 0.0) } else { fit_c8_c9(&samples, beta.abs()) };
    Ok(NumericalRangeReport { mode: op.mode, beta, samples, min_re, max_abs_im, c6, contained, c8, c9 })
}

fn gauss(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

/// Minimize `c₈ + c₉` subject to `c₈ x_k + c₉ ≥ y_k`, `c₈, c₉ ≥ 0`, with
/// `x = Re(z)^{1/2}`, `y = |Im z|/|β|`. The objective is convex
/// piecewise-linear in `c₈`.
fn fit_c8_c9(samples: &[C64], beta: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = samples.iter().map(|z| (z.re.max(0.0).sqrt(), z.im.abs() / beta)).collect();
    let c9_for = |c8: f64| pts.iter().map(|&(x, y)| y - c8 * x).fold(0.0, f64::max);
    let hi = pts.iter().filter(|p| p.0 > 0.0).map(|&(x, y)| y / x).fold(0.0, f64::max);
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..200 {
        let m1 = lo + (up - lo) / 3.0;
        let m2 = up - (up - lo) / 3.0;
        if m1 + c9_for(m1) <= m2 + c9_for(m2) {
            up = m2;
        } else {
            lo = m1;
        }
    }
    let c8 = 0.5 * (lo + up);
    (c8, c9_for(c8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::assemble_h;
    use std::sync::Arc;

    #[test]
    fn selfadjoint_spectrum_is_real() {
        let grid = Arc::new(crate::grid::build_grid(120, 30.0, Default::default()).unwrap());
        let op = assemble_h(grid, 2, 0.0).unwrap();
        let s = eigenvalues(&op, Subspace::Full).unwrap();
        assert!(s.eigenvalues.iter().all(|z| z.im.abs() < 1e-9));
        assert!((s.eigenvalues[0].re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn c8_c9_fit_is_feasible() {
        let s = vec![C64::new(1.0, 2.0), C64::new(4.0, 3.0), C64::new(9.0, 3.5)];
        let (c8, c9) = fit_c8_c9(&s, 1.0);
        for z in &s {
            assert!(z.im.abs() <= c8 * z.re.sqrt() + c9 + 1e-9);
        }
    }
}
