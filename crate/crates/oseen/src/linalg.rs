//! Dense linear-algebra helpers on top of `faer`: extreme singular values,
//! eigendecompositions with residuals and the matrix exponential.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{OseenError, Result};
use crate::radial::C64;

/// Run every dense kernel on the calling thread, so that results do not
/// depend on the size of any thread pool.
pub fn pin_sequential() {
    faer::set_global_parallelism(faer::Par::Seq);
}

/// Largest singular value (spectral norm).
pub fn norm2(a: &Mat<C64>) -> Result<f64> {
    let s = a.singular_values().map_err(|e| OseenError::LinearAlgebra(format!("svd: {e:?}")))?;
    Ok(s.first().copied().unwrap_or(0.0))
}

/// Largest singular value by Lanczos on `AᴴA`, for repeated norm
/// evaluations where a full SVD per call is too costly.
pub fn norm2_lanczos(a: &Mat<C64>) -> Result<f64> {
    let n = a.ncols();
    if n <= 24 {
        return norm2(a);
    }
    let steps = n.min(40);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(steps + 1);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + 0.29 * (i as f64).cos(), 0.17 * (0.7 * i as f64).sin())).collect();
    normalize(&mut v);
    basis.push(v);
    let mut last = 0.0;
    for k in 0..steps {
        let x = Mat::from_fn(n, 1, |i, _| basis[k][i]);
        let y = a * &x;
        let z = a.adjoint() * &y;
        let mut w: Vec<C64> = (0..n).map(|i| z[(i, 0)]).collect();
        alpha.push(dot(&basis[k], &w).re);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for i in 0..n {
                    w[i] -= c * b[i];
                }
            }
        }
        let bk = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let top = tridiagonal_max(&alpha, &beta)?;
        if top == 0.0 {
            return Ok(0.0);
        }
        if (k >= 3 && (top - last).abs() <= 1e-14 * top) || bk <= 1e-14 * top {
            return Ok(top.sqrt());
        }
        last = top;
        beta.push(bk);
        for x in &mut w {
            *x /= bk;
        }
        basis.push(w);
    }
    norm2(a)
}

/// Smallest singular value by a full dense SVD.
pub fn sigma_min_svd(a: &Mat<C64>) -> Result<f64> {
    let s = a.singular_values().map_err(|e| OseenError::LinearAlgebra(format!("svd: {e:?}")))?;
    Ok(s.last().copied().unwrap_or(0.0))
}

/// Smallest singular value via Lanczos on `(AᴴA)⁻¹` with one LU factorization.
///
/// Falls back to a dense SVD when the Krylov iteration stalls.
pub fn sigma_min(a: &Mat<C64>) -> Result<f64> {
    let n = a.nrows();
    if n <= 24 {
        return sigma_min_svd(a);
    }
    let lu = a.partial_piv_lu();
    let steps = n.min(40);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(steps + 1);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + 0.37 * (i as f64).sin(), 0.11 * (i as f64).cos())).collect();
    normalize(&mut v);
    basis.push(v);
    let mut last = 0.0;
    for k in 0..steps {
        let rhs = Mat::from_fn(n, 1, |i, _| basis[k][i]);
        let y = lu.solve_adjoint(&rhs);
        let z = lu.solve(&y);
        let mut w: Vec<C64> = (0..n).map(|i| z[(i, 0)]).collect();
        let ak: f64 = dot(&basis[k], &w).re;
        alpha.push(ak);
        for b in &basis {
            let c = dot(b, &w);
            for i in 0..n {
                w[i] -= c * b[i];
            }
        }
        for b in &basis {
            let c = dot(b, &w);
            for i in 0..n {
                w[i] -= c * b[i];
            }
        }
        let bk = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let top = tridiagonal_max(&alpha, &beta)?;
        if k >= 3 && (top - last).abs() <= 1e-13 * top {
            return Ok(1.0 / top.sqrt());
        }
        last = top;
        if bk <= 1e-14 * top {
            return Ok(1.0 / top.sqrt());
        }
        beta.push(bk);
        for x in &mut w {
            *x /= bk;
        }
        basis.push(w);
    }
    sigma_min_svd(a)
}

fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let m = alpha.len();
    let t = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let ev = t
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| OseenError::LinearAlgebra(format!("tridiagonal eigen: {e:?}")))?;
    Ok(ev.last().copied().unwrap_or(0.0))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn normalize(v: &mut [C64]) {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Eigenvalues with eigenvectors and residuals `‖(A-λ)v‖/‖v‖`.
pub struct EigenPairs {
    pub values: Vec<C64>,
    pub vectors: Mat<C64>,
    pub residuals: Vec<f64>,
}

pub fn eigen_pairs(a: &Mat<C64>) -> Result<EigenPairs> {
    let e = a.eigen().map_err(|e| OseenError::LinearAlgebra(format!("eigen: {e:?}")))?;
    let n = a.nrows();
    let s = e.S();
    let u = e.U();
    let values: Vec<C64> = (0..n).map(|i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, j)]);
    let av = a * &vectors;
    let residuals = (0..n)
        .map(|j| {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                num += (av[(i, j)] - values[j] * vectors[(i, j)]).norm_sqr();
                den += vectors[(i, j)].norm_sqr();
            }
            (num / den).sqrt()
        })
        .collect();
    Ok(EigenPairs { values, vectors, residuals })
}

pub fn eigenvalues(a: &Mat<C64>) -> Result<Vec<C64>> {
    a.eigenvalues().map_err(|e| OseenError::LinearAlgebra(format!("eigen: {e:?}")))
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| OseenError::LinearAlgebra(format!("symmetric eigen: {e:?}")))
}

fn one_norm(a: &Mat<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn identity(n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

fn lin(terms: &[(f64, &Mat<C64>)], n: usize) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(n, n);
    for &(c, m) in terms {
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] += m[(i, j)] * c;
            }
        }
    }
    out
}

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
    }
}

/// Matrix exponential by scaling and squaring with diagonal Padé
/// approximants of degree 3 to 13, selected by the 1-norm so that the
/// backward error stays below unit roundoff.
pub fn expm(a: &Mat<C64>) -> Result<Mat<C64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(OseenError::LinearAlgebra("expm of a non-finite matrix".into()));
    }
    let id = identity(n);
    for &(m, theta) in &THETA {
        if norm <= theta {
            return pade_low(a, m, &id);
        }
    }
    let s = if norm > THETA_13 { (norm / THETA_13).log2().ceil().max(0.0) as i32 } else { 0 };
    if s > 1000 {
        return Err(OseenError::LinearAlgebra(format!("expm: norm {norm} out of range")));
    }
    let scale = 0.5f64.powi(s);
    let a_s = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let b = pade_coefficients(13);
    let a2 = &a_s * &a_s;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], n);
    let u_poly = &a6 * &inner_u + lin(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)], n);
    let u = &a_s * &u_poly;
    let inner_v = lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], n);
    let v = &a6 * &inner_v + lin(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)], n);
    let mut r = pade_solve(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: &Mat<C64>, m: usize, id: &Mat<C64>) -> Result<Mat<C64>> {
    let n = a.nrows();
    let b = pade_coefficients(m);
    let a2 = a * a;
    let mut powers = vec![id.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut odd = Mat::<C64>::zeros(n, n);
    let mut even = Mat::<C64>::zeros(n, n);
    for k in 0..=(m / 2) {
        let p = &powers[k];
        for j in 0..n {
            for i in 0..n {
                odd[(i, j)] += p[(i, j)] * b[2 * k + 1];
                even[(i, j)] += p[(i, j)] * b[2 * k];
            }
        }
    }
    let u = a * &odd;
    pade_solve(&u, &even)
}

fn pade_solve(u: &Mat<C64>, v: &Mat<C64>) -> Result<Mat<C64>> {
    let n = u.nrows();
    let p = Mat::from_fn(n, n, |i, j| v[(i, j)] - u[(i, j)]);
    let q = Mat::from_fn(n, n, |i, j| v[(i, j)] + u[(i, j)]);
    let r = p.partial_piv_lu().solve(&q);
    if r.col_iter().any(|c| c.iter().any(|x| !x.re.is_finite() || !x.im.is_finite())) {
        return Err(OseenError::LinearAlgebra("expm: singular Padé denominator".into()));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(n: usize, seed: u64) -> Mat<C64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        Mat::from_fn(n, n, |_, _| C64::new(next(), next()))
    }

    #[test]
    fn sigma_min_agrees_with_svd() {
        for seed in 1..4 {
            let a = random(60, seed);
            let x = sigma_min(&a).unwrap();
            let y = sigma_min_svd(&a).unwrap();
            assert!((x - y).abs() < 1e-10 * y.max(1e-3), "{x} vs {y}");
        }
    }

    #[test]
    fn lanczos_norm_agrees_with_svd() {
        for seed in 1..4 {
            let a = random(70, seed + 10);
            let x = norm2_lanczos(&a).unwrap();
            let y = norm2(&a).unwrap();
            assert!((x - y).abs() < 1e-10 * y, "{x} vs {y}");
        }
    }

    #[test]
    fn expm_of_diagonal() {
        for &scale in &[1e-3, 0.3, 2.0, 40.0] {
            let d = [C64::new(-1.0, 2.0), C64::new(0.5, -0.2), C64::new(-3.0, 0.0)];
            let a = Mat::from_fn(3, 3, |i, j| if i == j { d[i] * scale } else { C64::new(0.0, 0.0) });
            let e = expm(&a).unwrap();
            for i in 0..3 {
                let exact = (d[i] * scale).exp();
                assert!((e[(i, i)] - exact).norm() < 1e-13 * exact.norm().max(1.0));
            }
        }
    }

    #[test]
    fn expm_nilpotent() {
        let a = Mat::from_fn(3, 3, |i, j| if j == i + 1 { C64::new(5.0, 0.0) } else { C64::new(0.0, 0.0) });
        let e = expm(&a).unwrap();
        assert!((e[(0, 1)] - C64::new(5.0, 0.0)).norm() < 1e-13);
        assert!((e[(0, 2)] - C64::new(12.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn expm_group_property() {
        let a = random(20, 7);
        let a2 = Mat::from_fn(20, 20, |i, j| a[(i, j)] * 2.0);
        let e1 = expm(&a).unwrap();
        let e2 = expm(&a2).unwrap();
        let prod = &e1 * &e1;
        let diff = Mat::from_fn(20, 20, |i, j| prod[(i, j)] - e2[(i, j)]);
        assert!(diff.norm_l2() < 1e-12 * e2.norm_l2());
    }
}
