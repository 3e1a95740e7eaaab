//! Small dense linear-algebra helpers shared by the predictors and solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative factor of the SVD rank threshold: singular values below
/// `max(rows, cols) * sigma_max * RANK_RTOL` count as zero.
pub const RANK_RTOL: f64 = 1e-10;

fn rank_threshold(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_RTOL
}

fn max_singular(values: &DVector<f64>) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// SVD whose factors reproduce `m` to near machine precision. The default
/// nalgebra stopping rule can stop early on rank-deficient wide matrices
/// (reconstruction errors around 1e-4 relative were seen on Hankel data), so
/// the tolerance is tightened until the factors check out.
pub fn svd(m: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let norm = m.norm();
    let mut fallback = None;
    for eps in [f64::EPSILON, 1e-17, 1e-19, 1e-22] {
        let Some(svd) = m.clone().try_svd(true, true, eps, 20_000) else {
            continue;
        };
        let (u, v_t) = (
            svd.u.as_ref().expect("u requested"),
            svd.v_t.as_ref().expect("v_t requested"),
        );
        let err = (u * DMatrix::from_diagonal(&svd.singular_values) * v_t - m).norm();
        if err
            <= 1e-13 * norm.max(f64::MIN_POSITIVE) * (1.0 + m.nrows().max(m.ncols()) as f64).sqrt()
        {
            return svd;
        }
        fallback.get_or_insert(svd);
    }
    fallback.unwrap_or_else(|| m.clone().svd(true, true))
}

/// Numerical rank under the crate-wide singular-value threshold.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = svd(m).singular_values;
    let tol = rank_threshold(m.nrows(), m.ncols(), max_singular(&sv));
    sv.iter().filter(|&&s| s > tol).count()
}

/// Moore-Penrose pseudoinverse with the same threshold as [`numerical_rank`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(cols, rows);
    }
    let svd = svd(m);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let tol = rank_threshold(rows, cols, max_singular(&svd.singular_values));
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            // out += v_i * u_i^T / s
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out.ger(1.0 / s, &vi, &ui, 1.0);
        }
    }
    out
}

/// Cholesky factorization that retries once with a diagonal jitter of
/// `1e-12 * trace / n` before giving up.
pub fn cholesky_with_jitter(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch);
    }
    let jitter = 1e-12 * a.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    let mut shifted = a;
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted).ok_or_else(|| {
        Error::Factorization(format!(
            "{what} is not positive definite (jitter {jitter:.3e} applied)"
        ))
    })
}

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Induced 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    max_singular(&m.singular_values())
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
