//! Dense linear-algebra helpers shared by the rest of the crate.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Norms are spectral
//! (largest singular value) unless stated otherwise.

use nalgebra::{DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

/// Numerical thresholds used when validating subspaces and inverses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// A matrix is rank deficient when `sigma_min <= rank_rel * sigma_max`.
    pub rank_rel: f64,
    /// Largest accepted condition number for matrices that get inverted.
    pub cond_limit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel: 1e-10,
            cond_limit: 1e12,
        }
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    SVD::new(m.clone(), false, false).singular_values
}

/// Largest singular value, `0` for an empty matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Ratio of the largest to the smallest singular value.
///
/// Returns `f64::INFINITY` for matrices that are exactly singular and `1`
/// for an empty matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    if s.is_empty() {
        return 1.0;
    }
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Top singular triple `(sigma, u, v)` of `m`.
///
/// The sign is fixed so that the first component of `u` whose magnitude
/// exceeds `1e-14` is positive, which makes subgradients `u v^T`
/// reproducible across runs.
pub fn top_singular_pair(m: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let svd = SVD::new(m.clone(), true, true);
    let u_all = svd.u.expect("left singular vectors requested");
    let vt_all = svd.v_t.expect("right singular vectors requested");
    let idx = svd.singular_values.imax();
    let sigma = svd.singular_values[idx];
    let mut u = u_all.column(idx).into_owned();
    let mut v = vt_all.row(idx).transpose();
    if let Some(first) = u.iter().copied().find(|x| x.abs() > 1e-14) {
        if first < 0.0 {
            u.neg_mut();
            v.neg_mut();
        }
    }
    (sigma, u, v)
}

/// Eigenvalue moduli of a square matrix, unsorted.
pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    assert!(m.is_square(), "eigenvalues need a square matrix");
    if m.is_empty() {
        return Vec::new();
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() <= 1e-14 * scale {
        let sym = (m + m.transpose()) * 0.5;
        return sym.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    }
    // The QR iteration occasionally stalls at machine precision on matrices
    // with clustered eigenvalues; a slightly looser threshold gets through.
    let schur = [f64::EPSILON, 1e-14, 1e-12, 1e-10]
        .iter()
        .find_map(|&eps| Schur::try_new(m.clone(), eps * scale.max(1.0), 100_000))
        .expect("real Schur decomposition did not converge");
    schur.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalue_moduli(m).into_iter().fold(0.0, f64::max)
}

/// Solves `a * x = b` with a partially pivoted LU factorization.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: cannot solve {}x{} system against {}x{} right-hand side",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Fails with `IllConditioned` when `cond(m)` exceeds the configured limit.
pub(crate) fn ensure_conditioned(m: &DMatrix<f64>, what: &'static str, tol: &Tolerances) -> Result<()> {
    let cond = condition_number(m);
    if !(cond <= tol.cond_limit) {
        return Err(Error::IllConditioned {
            what,
            cond,
            limit: tol.cond_limit,
        });
    }
    Ok(())
}

/// Kronecker product `b ⊗ I_m`.
pub fn kron_identity(b: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    b.kronecker(&DMatrix::identity(m, m))
}

/// Orthogonal projector `Q Q^T` for a matrix with orthonormal columns.
pub(crate) fn orthogonal_projector(q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if q.ncols() == 0 {
        DMatrix::zeros(n, n)
    } else {
        q * q.transpose()
    }
}
