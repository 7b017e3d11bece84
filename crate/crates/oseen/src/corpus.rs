//! Weighted Hermite functions and the fixed-seed random field corpus.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::field::ModalField;
use crate::grid::RadialGrid;
use crate::radial::{WeightedRadialFunction, C64};
use crate::semigroup::{ForcingField, ModeForcing};

/// Seed of the standard corpus.
pub const CORPUS_SEED: u64 = 20_240_517;
/// Number of fields in the standard corpus.
pub const CORPUS_SIZE: usize = 50;
/// Largest azimuthal mode of corpus fields.
pub const CORPUS_MODES: usize = 4;
/// Radial Hermite functions per mode.
pub const CORPUS_RADIAL: usize = 12;

/// Generalized Laguerre polynomial `L_j^{(a)}(x)` by the three-term recursion.
pub fn laguerre(j: usize, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if j == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..j {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Z-normalized eigenfunction of `-𝓛ₙ` with eigenvalue `(|n| + 2j)/2`:
/// `w = r^{|n|} L_j^{(|n|)}(r²/4) e^{-r²/4}` up to normalization.
pub fn hermite_function(grid: Arc<RadialGrid>, n: i32, j: usize) -> WeightedRadialFunction {
    let a = n.unsigned_abs() as i32;
    let w = WeightedRadialFunction::from_scaled_fn(grid, n, |r| {
        C64::new(r.powi(a) * laguerre(j, a as f64, r * r / 4.0) * (-r * r / 8.0).exp(), 0.0)
    });
    let norm = w.z_norm();
    w.scale(C64::new(1.0 / norm, 0.0))
}

/// Subspace a corpus field is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusSpace {
    /// Whole weighted space.
    X,
    /// Zero mean: the Gaussian direction is dropped.
    X0,
    /// Zero mean and zero first moment: the gradient directions are dropped too.
    X1,
}

impl CorpusSpace {
    fn excludes(self, n: usize, j: usize) -> bool {
        match self {
            CorpusSpace::X => false,
            CorpusSpace::X0 => n == 0 && j == 0,
            CorpusSpace::X1 => j == 0 && n <= 1,
        }
    }
}

/// One random field: normal coefficients on `hermite_function(n, j)`,
/// real for `n = 0`, normalized to unit X-norm.
pub fn random_field(grid: &Arc<RadialGrid>, rng: &mut impl Rng, space: CorpusSpace, n_max: usize, radial: usize) -> ModalField {
    let mut field = ModalField::zeros(grid.clone(), n_max);
    for n in 0..=n_max {
        for j in 0..radial {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            if space.excludes(n, j) {
                continue;
            }
            let c = if n == 0 { C64::new(re, 0.0) } else { C64::new(re, im) };
            let h = hermite_function(grid.clone(), n as i32, j);
            field.modes[n] = field.modes[n].add(&h.scale(c));
        }
    }
    let norm = field.x_norm();
    field.scale(1.0 / norm)
}

/// The standard fixed-seed corpus on `grid`.
pub fn field_corpus(grid: &Arc<RadialGrid>, space: CorpusSpace) -> Vec<ModalField> {
    field_corpus_with(grid, space, CORPUS_SEED, CORPUS_SIZE)
}

pub fn field_corpus_with(grid: &Arc<RadialGrid>, space: CorpusSpace, seed: u64, count: usize) -> Vec<ModalField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_field(grid, &mut rng, space, CORPUS_MODES, CORPUS_RADIAL)).collect()
}

/// Random vector fields `f(τ)` for the Duhamel bound: each component of
/// each mode is a Hermite combination modulated by `cos(ω τ + φ)`.
pub fn forcing_corpus(grid: &Arc<RadialGrid>, seed: u64, count: usize, modes: &[i32], times: &[f64]) -> Vec<ForcingField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radial = 6;
    (0..count)
        .map(|_| {
            let mode_list = modes
                .iter()
                .map(|&n| {
                    let mut comp = || {
                        let mut prof = WeightedRadialFunction::zeros(grid.clone(), n);
                        for j in 0..radial {
                            let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                            prof = prof.add(&hermite_function(grid.clone(), n, j).scale(c));
                        }
                        let omega: f64 = rng.random_range(0.0..6.0);
                        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        times
                            .iter()
                            .map(|&t| prof.values.iter().map(|v| v * (omega * t + phase).cos()).collect())
                            .collect::<Vec<Vec<C64>>>()
                    };
                    let f_r = comp();
                    let f_theta = comp();
                    ModeForcing { mode: n, f_r, f_theta }
                })
                .collect();
            ForcingField { grid: grid.clone(), times: times.to_vec(), modes: mode_list }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, MapKind};

    #[test]
    fn laguerre_closed_forms() {
        let (a, x) = (1.5, 0.7);
        assert!((laguerre(1, a, x) - (1.0 + a - x)).abs() < 1e-15);
        let l2 = 0.5 * (x * x - 2.0 * (a + 2.0) * x + (a + 1.0) * (a + 2.0));
        assert!((laguerre(2, a, x) - l2).abs() < 1e-14);
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let grid = Arc::new(build_grid(160, 30.0, MapKind::default()).unwrap());
        for n in 0..3 {
            let hs: Vec<_> = (0..6).map(|j| hermite_function(grid.clone(), n, j)).collect();
            for (i, a) in hs.iter().enumerate() {
                for (j, b) in hs.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((a.z_inner(b).re - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn corpus_subspaces() {
        let grid = Arc::new(build_grid(120, 30.0, MapKind::default()).unwrap());
        let x1 = field_corpus_with(&grid, CorpusSpace::X1, 7, 3);
        for f in &x1 {
            assert!((f.x_norm() - 1.0).abs() < 1e-12);
            assert!(f.mean().abs() < 1e-12);
            let (a, b) = f.first_moment();
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        }
        let again = field_corpus_with(&grid, CorpusSpace::X1, 7, 3);
        assert_eq!(x1[2].modes[3].values, again[2].modes[3].values);
    }
}
