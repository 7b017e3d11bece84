//! Nonlinear perturbation system `∂_τ w̃ = (𝓛 - αΛ)w̃ - ṽ·∇w̃` around the
//! Oseen vortex `αG`, its normalization transforms and diagnostics.
//!
//! Mode profiles are advanced in Euclidean coordinates `y = S u`. The
//! quadratic term is written as `div(ṽ w̃)` and evaluated pseudospectrally
//! in `θ`; time stepping is the IMEX ARS(3,4,3) scheme with `-𝓛ₙ` (and
//! optionally the rotation `αΛₙ`) implicit.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::biot_savart::VelocitySolver;
use crate::error::{OseenError, Result};
use crate::field::{polar_lp_norm, ModalField};
use crate::fit::{fit_scaling, linear_regression, ScalingFit};
use crate::grid::{kappa, Closure, RadialGrid};
use crate::profiles::{g, phi, sqrt_g};
use crate::radial::{matvec, metric, ModeBlocks, WeightedRadialFunction, C64};
use crate::radial::Subspace;
use crate::semigroup::{decay_envelope, weak_divergence_with};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Default number of retained azimuthal modes.
pub const DEFAULT_MODES: usize = 16;
/// Largest admissible final time.
pub const MAX_FINAL_TIME: f64 = 20.0;
/// Energy fraction in the highest retained mode that triggers the resolution alarm.
pub const RESOLUTION_TOL: f64 = 1e-6;
/// Smallest `r²` accepted by the decay-rate fits.
pub const MIN_FIT_R2: f64 = 0.95;

/// Perturbation `w̃` of `αG`, stored as nonnegative modes.
#[derive(Debug, Clone)]
pub struct VortexState {
    pub alpha: f64,
    pub tau: f64,
    pub field: ModalField,
}

impl VortexState {
    pub fn new(alpha: f64, field: ModalField) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(OseenError::InvalidArgument(format!("alpha must be finite, got {alpha}")));
        }
        Ok(Self { alpha, tau: 0.0, field })
    }

    pub fn n_modes(&self) -> usize {
        self.field.n_max()
    }
}

/// Oseen profile as a mode-0 function on `grid`.
pub fn gaussian_mode(grid: &Arc<RadialGrid>) -> WeightedRadialFunction {
    WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(g(r), 0.0))
}

fn remove_mean(field: &mut ModalField) -> f64 {
    let m = field.mean();
    let gm = gaussian_mode(&field.grid);
    field.modes[0] = field.modes[0].add(&gm.scale(C64::new(-m, 0.0)));
    m
}

/// Angular grid size used for products of modes up to `n_modes`.
pub fn product_n_theta(n_modes: usize) -> usize {
    (3 * n_modes + 1).next_power_of_two().max(16)
}

/// Forward/inverse real transforms between `M` angle samples and modes `0..=K`.
struct AngularTransform {
    n_modes: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AngularTransform {
    fn new(n_modes: usize, m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n_modes, m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    /// `Σ_{|n|≤K} c_n e^{inθ_k}` for coefficients of nonnegative modes.
    fn synthesize(&self, coeffs: impl Fn(usize) -> C64, buf: &mut [C64]) {
        buf.fill(ZERO);
        buf[0] = C64::new(coeffs(0).re, 0.0);
        for n in 1..=self.n_modes {
            let c = coeffs(n);
            buf[n] = c;
            buf[self.m - n] = c.conj();
        }
        self.inv.process(buf);
    }

    /// Coefficients of modes `0..=K` of real samples held in `buf`.
    fn analyze(&self, buf: &mut [C64]) -> Vec<C64> {
        self.fwd.process(buf);
        let s = 1.0 / self.m as f64;
        let mut out: Vec<C64> = buf[..=self.n_modes].iter().map(|c| c * s).collect();
        out[0].im = 0.0;
        out
    }
}

/// Sample a field at shifted points `(r_j, θ_k) + η` and re-expand it in modes.
fn resample_shifted(field: &ModalField, eta: (f64, f64), extra: impl Fn(f64, f64) -> f64) -> ModalField {
    let grid = &field.grid;
    let k = field.n_max();
    let m = product_n_theta(k);
    let transform = AngularTransform::new(k, m);
    let mut out = ModalField::zeros(grid.clone(), k);
    let mut buf = vec![ZERO; m];
    for (j, &r) in grid.nodes.iter().enumerate() {
        for (kk, slot) in buf.iter_mut().enumerate() {
            let th = 2.0 * PI * kk as f64 / m as f64;
            let x = r * th.cos() + eta.0;
            let y = r * th.sin() + eta.1;
            let rr = x.hypot(y);
            let tt = y.atan2(x);
            let base = if rr < grid.r_max { field.eval(rr, tt) } else { 0.0 };
            *slot = C64::new(base + extra(rr, r), 0.0);
        }
        let coeffs = transform.analyze(&mut buf);
        let s = sqrt_g(r);
        for n in 0..=k {
            out.modes[n].values[j] = coeffs[n] / s;
        }
    }
    out
}

/// Remove the mean by reassigning circulation to `αG`, then the first
/// moment by the shift `η = (1/α)∫ξ w̃ dξ` of the full vorticity.
pub fn normalize_perturbation(w0: &ModalField, alpha: f64) -> Result<VortexState> {
    let mut w = w0.clone();
    let given = alpha;
    let alpha = alpha + remove_mean(&mut w);
    let scale = w.x_norm().max(1e-300);
    let moment = |w: &ModalField| {
        let (a, b) = w.first_moment();
        a.hypot(b)
    };
    if moment(&w) > 1e-14 * scale {
        if given == 0.0 || alpha == 0.0 {
            return Err(OseenError::InvalidArgument(
                "first-moment removal needs nonzero circulation".into(),
            ));
        }
        for _ in 0..4 {
            let (px, py) = w.first_moment();
            if px.hypot(py) <= 1e-13 * scale {
                break;
            }
            let eta = (px / alpha, py / alpha);
            w = resample_shifted(&w, eta, |shifted, r| alpha * (g(shifted) - g(r)));
            remove_mean(&mut w);
        }
    }
    VortexState::new(alpha, w)
}

/// `(P_r w̃, P_⊥ w̃)`: the mode-0 part and the rest.
pub fn split_radial(state: &VortexState) -> (ModalField, ModalField) {
    let mut radial = ModalField::zeros(state.field.grid.clone(), state.field.n_max());
    radial.modes[0] = state.field.modes[0].clone();
    let mut perp = state.field.clone();
    perp.modes[0] = WeightedRadialFunction::zeros(state.field.grid.clone(), 0);
    (radial, perp)
}

/// Discretized right-hand side on a fixed grid and mode range.
pub struct NonlinearSystem {
    pub grid: Arc<RadialGrid>,
    pub alpha: f64,
    n_modes: usize,
    blocks: Vec<ModeBlocks>,
    derivs: Vec<Mat<f64>>,
    metric: Vec<f64>,
    sqrt_g: Vec<f64>,
    spacing: Vec<f64>,
    velocity: VelocitySolver,
    transform: AngularTransform,
}

impl std::fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("alpha", &self.alpha)
            .field("n_modes", &self.n_modes)
            .field("n_points", &self.grid.len())
            .finish()
    }
}

impl NonlinearSystem {
    pub fn new(grid: Arc<RadialGrid>, n_modes: usize, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(OseenError::InvalidArgument(format!("alpha must be finite, got {alpha}")));
        }
        let blocks = (0..=n_modes).map(|n| ModeBlocks::new(grid.clone(), n as i32)).collect::<Result<Vec<_>>>()?;
        let derivs = (0..=n_modes).map(|n| grid.basis_derivative(kappa(n as i32), Closure::Dirichlet)).collect();
        let len = grid.len();
        let spacing = (0..len)
            .map(|j| {
                let lo = if j == 0 { 0.0 } else { grid.nodes[j - 1] };
                let hi = if j + 1 == len { grid.r_max } else { grid.nodes[j + 1] };
                0.5 * (hi - lo)
            })
            .collect();
        Ok(Self {
            metric: metric(&grid),
            sqrt_g: grid.nodes.iter().map(|&r| sqrt_g(r)).collect(),
            velocity: VelocitySolver::new(grid.clone(), n_modes)?,
            transform: AngularTransform::new(n_modes, product_n_theta(n_modes)),
            grid,
            alpha,
            n_modes,
            blocks,
            derivs,
            spacing,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_theta(&self) -> usize {
        self.transform.m
    }

    pub fn to_euclidean(&self, field: &ModalField) -> Result<Vec<Vec<C64>>> {
        if field.n_max() != self.n_modes || field.grid.nodes != self.grid.nodes {
            return Err(OseenError::InvalidArgument("field does not match the system grid or mode range".into()));
        }
        Ok(field.modes.iter().map(|w| w.to_euclidean()).collect())
    }

    pub fn from_euclidean(&self, y: &[Vec<C64>]) -> ModalField {
        let modes = y
            .iter()
            .enumerate()
            .map(|(n, v)| WeightedRadialFunction::from_euclidean(self.grid.clone(), n as i32, v))
            .collect();
        ModalField { grid: self.grid.clone(), modes }
    }

    /// `𝓛ₙ yₙ` for every mode.
    pub fn diffusion(&self, y: &[Vec<C64>]) -> Vec<Vec<C64>> {
        y.iter()
            .zip(&self.blocks)
            .map(|(v, b)| real_matvec(&b.neg_l, v).into_iter().map(|x| -x).collect())
            .collect()
    }

    /// `-αΛₙ yₙ = -inα Mₙ yₙ` for every mode.
    pub fn rotation(&self, y: &[Vec<C64>]) -> Vec<Vec<C64>> {
        y.iter()
            .zip(&self.blocks)
            .enumerate()
            .map(|(n, (v, b))| match &b.m {
                Some(m) => {
                    let c = C64::new(0.0, -(n as f64) * self.alpha);
                    real_matvec(m, v).into_iter().map(|x| x * c).collect()
                }
                None => vec![ZERO; v.len()],
            })
            .collect()
    }

    /// `-div(ṽ w̃)` with the advective rate `max(|ṽ_r|/Δr + K|ṽ_θ|/r)`;
    /// `with_base` adds the base rotation `α|v^G|` to the rate.
    pub fn advection(&self, y: &[Vec<C64>], with_base: bool) -> Result<(Vec<Vec<C64>>, f64)> {
        let len = self.grid.len();
        let k = self.n_modes;
        let m = self.transform.m;
        let u: Vec<Vec<C64>> = y.iter().map(|v| v.iter().zip(&self.metric).map(|(a, s)| a / s).collect()).collect();
        let mut vel = Vec::with_capacity(k + 1);
        for (n, un) in u.iter().enumerate() {
            let phys: Vec<C64> = un.iter().zip(&self.sqrt_g).map(|(a, s)| a * s).collect();
            vel.push(self.velocity.velocity_physical(n as i32, &phys)?);
        }
        let mut fr = vec![vec![ZERO; len]; k + 1];
        let mut ft = vec![vec![ZERO; len]; k + 1];
        let (mut b_ur, mut b_ut, mut b_u) = (vec![ZERO; m], vec![ZERO; m], vec![ZERO; m]);
        let mut rate: f64 = 0.0;
        for j in 0..len {
            let r = self.grid.nodes[j];
            self.transform.synthesize(|n| vel[n].u_r[j], &mut b_ur);
            self.transform.synthesize(|n| vel[n].u_theta[j], &mut b_ut);
            self.transform.synthesize(|n| u[n][j], &mut b_u);
            let base = if with_base { self.alpha.abs() * phi(r) } else { 0.0 };
            for q in 0..m {
                let (vr, vt, w) = (b_ur[q].re, b_ut[q].re, b_u[q].re);
                rate = rate.max(vr.abs() / self.spacing[j] + (vt.abs() / r + base) * k as f64);
                b_ur[q] = C64::new(vr * w, 0.0);
                b_ut[q] = C64::new(vt * w, 0.0);
            }
            let cr = self.transform.analyze(&mut b_ur);
            let ct = self.transform.analyze(&mut b_ut);
            for n in 0..=k {
                fr[n][j] = cr[n];
                ft[n][j] = ct[n];
            }
        }
        let out = (0..=k)
            .map(|n| {
                let mut s: Vec<C64> = weak_divergence_with(&self.grid, &self.derivs[n], n as i32, &fr[n], &ft[n])
                    .iter()
                    .zip(&self.metric)
                    .map(|(v, sj)| -v * sj)
                    .collect();
                if n == 0 {
                    s.iter_mut().for_each(|v| v.im = 0.0);
                }
                s
            })
            .collect();
        Ok((out, rate))
    }

    /// Full right-hand side `(𝓛 - αΛ)w̃ - div(ṽ w̃)`.
    pub fn rhs(&self, y: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let (a, _) = self.advection(y, false)?;
        let d = self.diffusion(y);
        let rot = self.rotation(y);
        Ok(a.iter().zip(&d).zip(&rot).map(|((a, d), r)| (0..a.len()).map(|i| a[i] + d[i] + r[i]).collect()).collect())
    }

    /// `E[w] = -⟨w, 𝓛w⟩_X`.
    pub fn energy(&self, y: &[Vec<C64>]) -> f64 {
        y.iter()
            .zip(&self.blocks)
            .enumerate()
            .map(|(n, (v, b))| {
                let lv = real_matvec(&b.neg_l, v);
                let e: f64 = v.iter().zip(&lv).map(|(a, c)| (a.conj() * c).re).sum();
                if n == 0 {
                    e
                } else {
                    2.0 * e
                }
            })
            .sum()
    }
}

fn real_matvec(a: &Mat<f64>, x: &[C64]) -> Vec<C64> {
    let n = a.nrows();
    (0..n).map(|i| (0..x.len()).map(|j| x[j] * a[(i, j)]).sum()).collect()
}

fn x_norm_sq_euclid(y: &[Vec<C64>]) -> (f64, f64) {
    let mut radial = 0.0;
    let mut perp = 0.0;
    for (n, v) in y.iter().enumerate() {
        let s: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        if n == 0 {
            radial += s;
        } else {
            perp += 2.0 * s;
        }
    }
    (radial, perp)
}

/// Time derivative of every mode of the perturbation.
pub fn nonlinear_rhs(state: &VortexState) -> Result<ModalField> {
    let system = NonlinearSystem::new(state.field.grid.clone(), state.n_modes(), state.alpha)?;
    let y = system.to_euclidean(&state.field)?;
    Ok(system.from_euclidean(&system.rhs(&y)?))
}

/// How the rotation `αΛₙ` enters the IMEX splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationTreatment {
    Explicit,
    Implicit,
    /// Explicit for `|α| ≤ 10³`, implicit above.
    Auto,
}

impl RotationTreatment {
    fn implicit(self, alpha: f64) -> bool {
        match self {
            RotationTreatment::Explicit => false,
            RotationTreatment::Implicit => true,
            RotationTreatment::Auto => alpha.abs() > 1e3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Largest time step.
    pub dt_max: f64,
    /// Advective stability number `dt · rate`.
    pub cfl: f64,
    /// Spacing of recorded samples; steps land exactly on sample times.
    pub sample_interval: f64,
    pub rotation: RotationTreatment,
    /// Weight `e^{τ/τ₀}` on `‖w̃_⊥‖` inside `𝓜`; `None` uses weight 1.
    pub tau0: Option<f64>,
    /// Exponent `β ∈ (1/2, 1)` of the Carlen–Loss bound.
    pub carlen_loss_beta: f64,
    /// Raise the resolution alarm from the highest mode's energy share.
    pub check_resolution: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt_max: 0.01,
            cfl: 0.5,
            sample_interval: 0.05,
            rotation: RotationTreatment::Auto,
            tau0: None,
            carlen_loss_beta: 0.75,
            check_resolution: true,
        }
    }
}

/// Sampled diagnostics of one trajectory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub alpha: f64,
    pub tau: Vec<f64>,
    pub norm_r: Vec<f64>,
    pub norm_perp: Vec<f64>,
    /// Running `𝓜(τ) = sup_{s≤τ}(‖w̃_r‖ + e^{s/τ₀}‖w̃_⊥‖)`.
    pub m_value: Vec<f64>,
    pub energy: Vec<f64>,
    /// `‖w(τ)‖_X` over the Carlen–Loss bound for the full vorticity.
    pub carlen_loss_ratio: Vec<f64>,
    /// `∫ w̃ dξ`.
    pub mean: Vec<f64>,
    /// `|∫ ξ w̃ dξ|`.
    pub moment: Vec<f64>,
    pub steps: usize,
    pub final_dt: f64,
}

impl TrajectoryRecord {
    /// CSV with columns `tau,norm_r,norm_perp,M,E,carlen_loss_ratio`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,norm_r,norm_perp,M,E,carlen_loss_ratio\n");
        for i in 0..self.tau.len() {
            s.push_str(&format!(
                "{:.6},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                self.tau[i], self.norm_r[i], self.norm_perp[i], self.m_value[i], self.energy[i], self.carlen_loss_ratio[i]
            ));
        }
        s
    }
}

/// Trajectory diagnostics together with the final state.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub record: TrajectoryRecord,
    pub state: VortexState,
}

const ARS_GAMMA: f64 = 0.435_866_521_5;

struct Ars343 {
    ae: [[f64; 3]; 3],
    ai: [[f64; 3]; 3],
    b: [f64; 3],
}

impl Ars343 {
    fn new() -> Self {
        let g = ARS_GAMMA;
        let b1 = -1.5 * g * g + 4.0 * g - 0.25;
        let b2 = 1.5 * g * g - 5.0 * g + 1.25;
        Self {
            // Explicit rows for stages 1..3 against E_0..E_2.
            ae: [
                [g, 0.0, 0.0],
                [0.321_278_886_0, 0.396_654_374_7, 0.0],
                [-0.105_858_296, 0.552_929_147_9, 0.552_929_147_9],
            ],
            // Implicit rows for stages 1..3 against I_1..I_3 (diagonal γ).
            ai: [[g, 0.0, 0.0], [(1.0 - g) / 2.0, g, 0.0], [b1, b2, g]],
            b: [b1, b2, g],
        }
    }
}

/// Stiff linear part `-Hₙ` with factorizations of `I + γ dt Hₙ`.
struct ImplicitPart {
    h: Vec<Mat<C64>>,
    lu: Vec<PartialPivLu<C64>>,
    dt: f64,
}

impl ImplicitPart {
    fn new(system: &NonlinearSystem, implicit_rotation: bool, dt: f64) -> Self {
        let h: Vec<Mat<C64>> = system
            .blocks
            .iter()
            .enumerate()
            .map(|(n, b)| b.h(if implicit_rotation { n as f64 * system.alpha } else { 0.0 }))
            .collect();
        let mut part = Self { h, lu: Vec::new(), dt: 0.0 };
        part.refactor(dt);
        part
    }

    fn refactor(&mut self, dt: f64) {
        let c = ARS_GAMMA * dt;
        self.lu = self
            .h
            .iter()
            .map(|h| {
                let n = h.nrows();
                let a = Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) + h[(i, j)] * c } else { h[(i, j)] * c });
                a.partial_piv_lu()
            })
            .collect();
        self.dt = dt;
    }

    fn solve(&self, n: usize, rhs: &[C64]) -> Vec<C64> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu[n].solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    fn apply(&self, y: &[Vec<C64>]) -> Vec<Vec<C64>> {
        y.iter().zip(&self.h).map(|(v, h)| matvec(h, v).into_iter().map(|x| -x).collect()).collect()
    }
}

fn axpy(acc: &mut [Vec<C64>], c: f64, x: &[Vec<C64>]) {
    if c == 0.0 {
        return;
    }
    for (a, b) in acc.iter_mut().zip(x) {
        for (p, q) in a.iter_mut().zip(b) {
            *p += q * c;
        }
    }
}

/// Explicit part of one stage and its advective rate.
fn explicit_part(system: &NonlinearSystem, y: &[Vec<C64>], implicit_rotation: bool) -> Result<(Vec<Vec<C64>>, f64)> {
    let (mut e, rate) = system.advection(y, !implicit_rotation)?;
    if !implicit_rotation {
        let rot = system.rotation(y);
        for (a, b) in e.iter_mut().zip(&rot) {
            for (p, q) in a.iter_mut().zip(b) {
                *p += q;
            }
        }
    }
    Ok((e, rate))
}

struct Stepper<'a> {
    system: &'a NonlinearSystem,
    tableau: Ars343,
    implicit: ImplicitPart,
    implicit_rotation: bool,
}

impl Stepper<'_> {
    /// One step from `y` whose explicit part `e0` is already known.
    fn step(&self, y: &[Vec<C64>], e0: Vec<Vec<C64>>) -> Result<Vec<Vec<C64>>> {
        let dt = self.implicit.dt;
        let t = &self.tableau;
        let mut es = vec![e0];
        let mut is: Vec<Vec<Vec<C64>>> = Vec::with_capacity(3);
        for i in 0..3 {
            let mut rhs = y.to_vec();
            for (j, e) in es.iter().enumerate() {
                axpy(&mut rhs, dt * t.ae[i][j], e);
            }
            for (j, iv) in is.iter().enumerate() {
                axpy(&mut rhs, dt * t.ai[i][j], iv);
            }
            let stage: Vec<Vec<C64>> = rhs.iter().enumerate().map(|(n, r)| self.implicit.solve(n, r)).collect();
            is.push(self.implicit.apply(&stage));
            let (e, _) = explicit_part(self.system, &stage, self.implicit_rotation)?;
            es.push(e);
        }
        let mut out = y.to_vec();
        for j in 0..3 {
            axpy(&mut out, dt * t.b[j], &es[j + 1]);
            axpy(&mut out, dt * t.b[j], &is[j]);
        }
        out[0].iter_mut().for_each(|v| v.im = 0.0);
        Ok(out)
    }
}

/// Integrate `y' = rhs(y)` of `system` from `y0` to `t_final`, calling
/// `observe(τ, y)` at every sample time including `τ = 0`.
fn integrate(
    system: &NonlinearSystem,
    y0: Vec<Vec<C64>>,
    t_final: f64,
    opts: &EvolveOptions,
    mut observe: impl FnMut(f64, &[Vec<C64>]) -> Result<()>,
) -> Result<(Vec<Vec<C64>>, usize, f64)> {
    if !(opts.dt_max > 0.0) || !(opts.cfl > 0.0) || !(opts.sample_interval > 0.0) {
        return Err(OseenError::InvalidArgument("dt_max, cfl and sample_interval must be positive".into()));
    }
    let implicit_rotation = opts.rotation.implicit(system.alpha);
    let n_samples = (t_final / opts.sample_interval - 1e-9).ceil().max(1.0) as usize;
    let interval = t_final / n_samples as f64;
    let mut y = y0;
    observe(0.0, &y)?;
    let (mut e0, rate) = explicit_part(system, &y, implicit_rotation)?;
    let target = opts.dt_max.min(if rate > 0.0 { opts.cfl / rate } else { f64::INFINITY });
    let mut substeps = (interval / target).ceil().max(1.0) as usize;
    let mut stepper = Stepper {
        system,
        tableau: Ars343::new(),
        implicit: ImplicitPart::new(system, implicit_rotation, interval / substeps as f64),
        implicit_rotation,
    };
    let mut steps = 0usize;
    let mut current_rate = rate;
    for s in 1..=n_samples {
        let mut left = substeps;
        while left > 0 {
            if current_rate * stepper.implicit.dt > opts.cfl {
                while current_rate * interval / substeps as f64 > opts.cfl {
                    substeps *= 2;
                    left *= 2;
                }
                stepper.implicit.refactor(interval / substeps as f64);
            }
            y = stepper.step(&y, e0)?;
            steps += 1;
            left -= 1;
            let (e, rate) = explicit_part(system, &y, implicit_rotation)?;
            e0 = e;
            current_rate = rate;
        }
        observe(s as f64 * interval, &y)?;
    }
    Ok((y, steps, stepper.implicit.dt))
}

/// Advance the perturbation to `τ = t_final` and record diagnostics.
pub fn evolve(state: &VortexState, t_final: f64, opts: &EvolveOptions) -> Result<TrajectoryRecord> {
    Ok(evolve_state(state, t_final, opts)?.record)
}

pub fn evolve_state(state: &VortexState, t_final: f64, opts: &EvolveOptions) -> Result<Evolution> {
    if !(t_final > 0.0) || t_final > MAX_FINAL_TIME {
        return Err(OseenError::InvalidArgument(format!("final time must lie in (0, {MAX_FINAL_TIME}], got {t_final}")));
    }
    if !(opts.carlen_loss_beta > 0.5 && opts.carlen_loss_beta < 1.0) {
        return Err(OseenError::InvalidArgument("Carlen–Loss exponent must lie in (1/2, 1)".into()));
    }
    let field = &state.field;
    let scale = field.x_norm();
    let (mx, my) = field.first_moment();
    if field.mean().abs() > 1e-8 * scale.max(1e-300) || mx.hypot(my) > 1e-6 * scale.max(1e-300) {
        return Err(OseenError::InvalidArgument(
            "initial perturbation must have zero mean and zero first moment".into(),
        ));
    }
    let system = NonlinearSystem::new(field.grid.clone(), state.n_modes(), state.alpha)?;
    let alpha = state.alpha;
    let n_theta_l1 = crate::field::default_n_theta(state.n_modes());
    let full0 = {
        let mut f = field.clone();
        f.modes[0] = f.modes[0].add(&gaussian_mode(&field.grid).scale(C64::new(alpha, 0.0)));
        f
    };
    let l1: f64 = {
        let vals: Vec<f64> = full0.physical_on_polar(n_theta_l1).iter().map(|v| v.abs()).collect();
        polar_lp_norm(&field.grid, n_theta_l1, &vals, 1.0)
    };
    let beta = opts.carlen_loss_beta;
    let full_norm = |pert_sq: f64, mean: f64| (alpha * alpha + 2.0 * alpha * mean + pert_sq).max(0.0).sqrt();
    let ln_bound = 2f64.ln() - 0.5 * (2.0 * beta - 1.0).ln()
        + beta / (1.0 - beta) * l1 * l1 / (2.0 * PI * PI)
        + full_norm(scale * scale, field.mean()).max(1e-300).ln();
    let mut rec = TrajectoryRecord { alpha, ..Default::default() };
    let mut m_run: f64 = 0.0;
    let y0 = system.to_euclidean(field)?;
    let (y, steps, dt) = integrate(&system, y0, t_final, opts, |tau, y| {
        let (r2, p2) = x_norm_sq_euclid(y);
        if !(r2 + p2).is_finite() {
            return Err(OseenError::BlowUp { tau, norm: f64::INFINITY, limit: ln_bound.exp() * 10.0 });
        }
        let f = system.from_euclidean(y);
        let mean = f.mean();
        let (ax, ay) = f.first_moment();
        let norm = full_norm(r2 + p2, mean);
        let ln_ratio = norm.max(1e-300).ln() - ln_bound;
        if ln_ratio > 10f64.ln() {
            return Err(OseenError::BlowUp { tau, norm, limit: 10.0 * ln_bound.exp() });
        }
        if opts.check_resolution && r2 + p2 > 0.0 {
            let top = 2.0 * y[system.n_modes].iter().map(|c| c.norm_sqr()).sum::<f64>();
            if top > RESOLUTION_TOL * (r2 + p2) {
                return Err(OseenError::Resolution(format!(
                    "mode {} carries {:.2e} of the perturbation energy at tau = {tau:.3}",
                    system.n_modes,
                    top / (r2 + p2)
                )));
            }
        }
        let weight = opts.tau0.map_or(1.0, |t0| (tau / t0).exp());
        m_run = m_run.max(r2.sqrt() + weight * p2.sqrt());
        rec.tau.push(tau);
        rec.norm_r.push(r2.sqrt());
        rec.norm_perp.push(p2.sqrt());
        rec.m_value.push(m_run);
        rec.energy.push(system.energy(y));
        rec.carlen_loss_ratio.push(ln_ratio.exp());
        rec.mean.push(mean);
        rec.moment.push(ax.hypot(ay));
        Ok(())
    })?;
    rec.steps = steps;
    rec.final_dt = dt;
    let final_state = VortexState { alpha, tau: state.tau + t_final, field: system.from_euclidean(&y) };
    Ok(Evolution { record: rec, state: final_state })
}

/// Residuals of the full equation at `w = αG`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub alpha: f64,
    /// `‖𝓛w - v·∇w‖_X` at `w = αG`.
    pub rhs_residual: f64,
    /// `‖w(τ) - w(0)‖_X / τ` after integrating the full equation.
    pub drift_per_unit_time: f64,
    pub tau: f64,
}

/// Integrate the full vorticity equation from `αG` with the same
/// discretization and report how far it moves.
pub fn stationarity_check(grid: Arc<RadialGrid>, n_modes: usize, alpha: f64, tau: f64, opts: &EvolveOptions) -> Result<StationarityReport> {
    let system = NonlinearSystem::new(grid.clone(), n_modes, 0.0)?;
    let mut field = ModalField::zeros(grid.clone(), n_modes);
    field.modes[0] = gaussian_mode(&grid).scale(C64::new(alpha, 0.0));
    let y0 = system.to_euclidean(&field)?;
    let r = system.rhs(&y0)?;
    let (a, b) = x_norm_sq_euclid(&r);
    let (y, _, _) = integrate(&system, y0.clone(), tau, opts, |_, _| Ok(()))?;
    let diff: Vec<Vec<C64>> = y.iter().zip(&y0).map(|(p, q)| p.iter().zip(q).map(|(u, v)| u - v).collect()).collect();
    let (c, d) = x_norm_sq_euclid(&diff);
    Ok(StationarityReport { alpha, rhs_residual: (a + b).sqrt(), drift_per_unit_time: (c + d).sqrt() / tau, tau })
}

/// `Λw = v^G·∇w + v·∇G` mode by mode: `inφ wₙ - (r/2) G u_r[w]ₙ`.
pub fn lambda_apply(field: &ModalField) -> Result<ModalField> {
    let grid = &field.grid;
    let solver = VelocitySolver::new(grid.clone(), field.n_max())?;
    let mut out = ModalField::zeros(grid.clone(), field.n_max());
    for (n, w) in field.modes.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let vel = solver.velocity_physical(n as i32, &w.physical_values())?;
        for j in 0..grid.len() {
            let r = grid.nodes[j];
            out.modes[n].values[j] =
                C64::new(0.0, n as f64 * phi(r)) * w.values[j] - vel.u_r[j] * (0.5 * r * sqrt_g(r));
        }
    }
    Ok(out)
}

/// `|⟨Λw₁, w₂⟩_X + ⟨w₁, Λw₂⟩_X|` relative to `‖Λw₁‖‖w₂‖ + ‖w₁‖‖Λw₂‖`.
pub fn lambda_skew_defect(w1: &ModalField, w2: &ModalField) -> Result<f64> {
    let l1 = lambda_apply(w1)?;
    let l2 = lambda_apply(w2)?;
    let s = l1.x_inner(w2) + w1.x_inner(&l2);
    let scale = l1.x_norm() * w2.x_norm() + w1.x_norm() * l2.x_norm();
    Ok(if scale == 0.0 { 0.0 } else { s.abs() / scale })
}

/// Subspace in which an energy inequality is asserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySpace {
    X0,
    X1,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub space: EnergySpace,
    pub energy: f64,
    pub grad_sq: f64,
    /// `‖ξw‖²_X`.
    pub moment_sq: f64,
    pub norm_sq: f64,
    /// Lower bound `a‖∇w‖² + b‖ξw‖² + c‖w‖²`.
    pub lower_bound: f64,
    /// `E / ‖w‖²`.
    pub coercivity: f64,
    pub holds: bool,
}

/// Relative tolerance of the energy inequalities.
pub const ENERGY_TOL: f64 = 1e-8;

/// Evaluate `E[w]` against the coercivity bounds on `X₀` or `X₁`.
pub fn energy_inequality_check(w: &ModalField, space: EnergySpace) -> Result<EnergyReport> {
    let grid = &w.grid;
    let len = grid.len();
    let mut energy = 0.0;
    let mut grad = 0.0;
    let mut mom = 0.0;
    let mut norm = 0.0;
    for (n, f) in w.modes.iter().enumerate() {
        let c = if n == 0 { 1.0 } else { 2.0 };
        let blocks = ModeBlocks::new(grid.clone(), n as i32)?;
        let y = f.to_euclidean();
        let ly = real_matvec(&blocks.neg_l, &y);
        energy += c * y.iter().zip(&ly).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        let d = grid.basis_derivative(kappa(n as i32), Closure::Dirichlet);
        let du = real_matvec(&d, &f.values);
        let nn = (n * n) as f64;
        for j in 0..len {
            let r = grid.nodes[j];
            let wq = 2.0 * PI * grid.quad_weights[j] * r;
            let u = f.values[j];
            grad += c * wq * ((du[j] - u * (0.25 * r)).norm_sqr() + nn * u.norm_sqr() / (r * r));
            mom += c * wq * r * r * u.norm_sqr();
            norm += c * wq * u.norm_sqr();
        }
    }
    let (a, b, cc) = match space {
        EnergySpace::X0 => (1.0 / 6.0, 1.0 / 96.0, 1.0 / 12.0),
        EnergySpace::X1 => (1.0 / 4.0, 1.0 / 64.0, 1.0 / 8.0),
    };
    let lower = a * grad + b * mom + cc * norm;
    let coercivity = if norm > 0.0 { energy / norm } else { 0.0 };
    let holds = energy >= lower - ENERGY_TOL * energy.abs().max(lower.abs());
    Ok(EnergyReport { space, energy, grad_sq: grad, moment_sq: mom, norm_sq: norm, lower_bound: lower, coercivity, holds })
}

/// Exponential decay rate fitted on a window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares rate `ρ` of `v(τ) ≈ C e^{-ρτ}` over `window`.
pub fn fit_decay_rate(tau: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = tau
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(OseenError::FitRejected(format!("only {} samples in window {window:?}", xs.len())));
    }
    let (slope, _, r2) = linear_regression(&xs, &ys);
    if r2 < MIN_FIT_R2 {
        return Err(OseenError::FitRejected(format!("r² = {r2:.4} below {MIN_FIT_R2}")));
    }
    Ok(RateFit { rate: -slope, r_squared: r2, window, samples: xs.len() })
}

/// One α of a relaxation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationRun {
    pub alpha: f64,
    /// Envelope time scale `τ₀` at `n = 2`, `β = 2α`.
    pub tau0: f64,
    pub record: TrajectoryRecord,
    /// Window for the rate of `‖w̃_⊥‖`.
    pub window: (f64, f64),
    /// Window for the rate of `‖w̃_r‖`.
    pub radial_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationReport {
    pub alphas: Vec<f64>,
    pub rates: Vec<RateFit>,
    /// `log ρ` against `log α`.
    pub scaling: ScalingFit,
    /// `ρ(α) log α / α^{1/3}`.
    pub normalized: Vec<f64>,
    /// `max/min - 1` of `normalized`.
    pub normalized_spread: f64,
    pub radial_rates: Vec<Option<RateFit>>,
}

/// Fit `ρ(α)` per run and regress `log ρ` on `log α`.
pub fn measure_relaxation(runs: &[RelaxationRun]) -> Result<RelaxationReport> {
    if runs.len() < 4 {
        return Err(OseenError::InvalidArgument(format!("need at least 4 alpha values, got {}", runs.len())));
    }
    let alphas: Vec<f64> = runs.iter().map(|r| r.alpha.abs()).collect();
    let (lo, hi) = alphas.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    if !(lo > 0.0) || hi / lo < 10.0 * (1.0 - 1e-12) {
        return Err(OseenError::InvalidArgument("alpha values must span at least one decade".into()));
    }
    let mut rates = Vec::with_capacity(runs.len());
    let mut radial_rates = Vec::with_capacity(runs.len());
    for run in runs {
        rates.push(fit_decay_rate(&run.record.tau, &run.record.norm_perp, run.window)?);
        radial_rates.push(match run.radial_window {
            Some(w) => Some(fit_decay_rate(&run.record.tau, &run.record.norm_r, w)?),
            None => None,
        });
    }
    let mut pts: Vec<(f64, f64)> = alphas.iter().zip(&rates).map(|(a, r)| (*a, r.rate)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scaling = fit_scaling(&pts)?;
    let normalized: Vec<f64> = alphas.iter().zip(&rates).map(|(a, r)| r.rate * a.ln() / a.cbrt()).collect();
    let (nmin, nmax) = normalized.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(RelaxationReport { alphas, rates, scaling, normalized, normalized_spread: nmax / nmin - 1.0, radial_rates })
}

/// One sweep task: fit the `n = 2` semigroup envelope at `β = 2α` for
/// `τ₀`, evolve the mode-2 family at amplitude [`sweep_amplitude`] up to
/// `min(6τ₀ + 10, 20)` and fit `‖w̃_⊥‖` on `[2τ₀, 6τ₀]`, `‖w̃_r‖` on
/// `[max(6τ₀, 4), end]`.
pub fn relaxation_run(grid: &Arc<RadialGrid>, n_modes: usize, alpha: f64, opts: &EvolveOptions) -> Result<RelaxationRun> {
    if !(alpha.abs() > std::f64::consts::E) {
        return Err(OseenError::InvalidArgument(format!("relaxation sweeps need |alpha| > e, got {alpha}")));
    }
    let beta = 2.0 * alpha;
    let op = ModeBlocks::new(grid.clone(), 2)?.h_operator(beta);
    let env = decay_envelope(&op, Subspace::Full, 0.01, 1e-12, 40.0)?;
    let (c4, c5) = match (env.c4_hat, env.c5_hat) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(OseenError::FitRejected(format!("no envelope constants at beta = {beta}"))),
    };
    let tau0 = envelope_tau0(beta, c4, c5);
    if !(tau0 > 0.0) {
        return Err(OseenError::FitRejected(format!("non-positive envelope time {tau0} at beta = {beta}")));
    }
    let state = VortexState::new(alpha, mode2_initial(grid, n_modes, sweep_amplitude(alpha)))?;
    let t_end = (6.0 * tau0 + 10.0).min(MAX_FINAL_TIME);
    let opts = EvolveOptions { tau0: Some(tau0), ..opts.clone() };
    let record = evolve(&state, t_end, &opts)?;
    Ok(RelaxationRun {
        alpha,
        tau0,
        record,
        window: (2.0 * tau0, 6.0 * tau0),
        radial_window: Some(((6.0 * tau0).max(4.0), t_end)),
    })
}

/// Mode-2 initial family `r² e^{-r²/4} e^{2iθ} + c.c.` scaled to `‖w̃₀‖_X = amplitude`.
pub fn mode2_initial(grid: &Arc<RadialGrid>, n_modes: usize, amplitude: f64) -> ModalField {
    let mut field = ModalField::zeros(grid.clone(), n_modes.max(2));
    field.modes[2] = WeightedRadialFunction::from_physical_fn(grid.clone(), 2, |r| C64::new(r * r * (-r * r / 4.0).exp(), 0.0));
    let norm = field.x_norm();
    field.scale(amplitude / norm)
}

/// Amplitude `0.1 α^{1/6} / log α` of the sweep initial data.
pub fn sweep_amplitude(alpha: f64) -> f64 {
    0.1 * alpha.abs().powf(1.0 / 6.0) / alpha.abs().ln()
}

/// `τ₀ = log(c₄β^{2/3}) / (c₅β^{1/3})` of the semigroup envelope.
pub fn envelope_tau0(beta: f64, c4: f64, c5: f64) -> f64 {
    let b = beta.abs();
    (c4 * b.powf(2.0 / 3.0)).ln() / (c5 * b.cbrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::hermite_function;
    use crate::grid::{build_grid, MapKind};

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(build_grid(n, 30.0, MapKind::default()).unwrap())
    }

    #[test]
    fn ars_tableau_is_consistent() {
        let t = Ars343::new();
        let g = ARS_GAMMA;
        let c = [g, (1.0 + g) / 2.0, 1.0];
        for i in 0..3 {
            let se: f64 = t.ae[i].iter().sum();
            let si: f64 = t.ai[i].iter().sum();
            assert!((se - c[i]).abs() < 1e-9, "explicit row {i}: {se}");
            assert!((si - c[i]).abs() < 1e-9, "implicit row {i}: {si}");
        }
        assert!((t.b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_has_zero_rhs() {
        let g = grid(64);
        let state = VortexState::new(100.0, ModalField::zeros(g, 4)).unwrap();
        let r = nonlinear_rhs(&state).unwrap();
        assert_eq!(r.x_norm(), 0.0);
    }

    #[test]
    fn split_is_orthogonal() {
        let g = grid(64);
        let mut f = ModalField::zeros(g.clone(), 3);
        f.modes[0] = hermite_function(g.clone(), 0, 2);
        f.modes[3] = hermite_function(g.clone(), 3, 1).scale(C64::new(0.3, -0.2));
        let s = VortexState::new(1.0, f.clone()).unwrap();
        let (a, b) = split_radial(&s);
        assert!((a.x_norm_sq() + b.x_norm_sq() - f.x_norm_sq()).abs() < 1e-12);
        assert_eq!(a.x_inner(&b), 0.0);
    }

    #[test]
    fn energy_equality_on_eigenfunctions() {
        let g = grid(120);
        let mut f = ModalField::zeros(g.clone(), 2);
        f.modes[2] = hermite_function(g.clone(), 2, 0);
        let rep = energy_inequality_check(&f, EnergySpace::X1).unwrap();
        assert!((rep.coercivity - 1.0).abs() < 1e-9 && rep.holds, "{rep:?}");
        let mut f = ModalField::zeros(g.clone(), 1);
        f.modes[1] = hermite_function(g.clone(), 1, 0);
        let rep = energy_inequality_check(&f, EnergySpace::X0).unwrap();
        assert!((rep.coercivity - 0.5).abs() < 1e-9 && rep.holds, "{rep:?}");
    }

    #[test]
    fn lambda_matches_matrix_and_is_skew() {
        let g = grid(96);
        let mut f = ModalField::zeros(g.clone(), 3);
        for n in 1..=3 {
            f.modes[n] = hermite_function(g.clone(), n as i32, 1).add(&hermite_function(g.clone(), n as i32, 0).scale(C64::new(0.0, 0.5)));
        }
        let lam = lambda_apply(&f).unwrap();
        let sys = NonlinearSystem::new(g.clone(), 3, 1.0).unwrap();
        let y = sys.to_euclidean(&f).unwrap();
        let rot = sys.from_euclidean(&sys.rotation(&y));
        let diff = lam.add(&rot);
        assert!(diff.x_norm() < 1e-10 * lam.x_norm(), "{}", diff.x_norm());
        let mut h = ModalField::zeros(g.clone(), 3);
        h.modes[2] = hermite_function(g.clone(), 2, 3);
        h.modes[1] = hermite_function(g, 1, 2).scale(C64::new(0.1, 0.7));
        assert!(lambda_skew_defect(&f, &h).unwrap() < 1e-12);
    }

    #[test]
    fn decay_rate_fit() {
        let tau: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
        let v: Vec<f64> = tau.iter().map(|t| 3.0 * (-2.5 * t).exp()).collect();
        let f = fit_decay_rate(&tau, &v, (1.0, 4.0)).unwrap();
        assert!((f.rate - 2.5).abs() < 1e-12);
        let noisy: Vec<f64> = tau.iter().enumerate().map(|(k, _)| if k % 2 == 0 { 1.0 } else { 0.1 }).collect();
        assert!(matches!(fit_decay_rate(&tau, &noisy, (0.0, 5.0)), Err(OseenError::FitRejected(_))));
    }
}
