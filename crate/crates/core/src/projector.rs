//! Orthogonal and oblique projectors for a signal/interference subspace pair.
//!
//! A [`SubspaceModel`] holds orthonormal bases `W` (signal, `n x P`) and `Z`
//! (interference, `n x L`) whose ranges intersect only at the origin. From it,
//! [`oblique_projector`] builds `E_WZ`, the projector onto `range(W)` along
//! `range(Z)`, together with its companions:
//!
//! | operator | meaning |
//! |----------|---------|
//! | `P_W`, `P_Z` | orthogonal projectors onto `range(W)`, `range(Z)` |
//! | `P_D` | orthogonal projector onto `range([W Z])` |
//! | `E_WZ` | onto `range(W)` along `range(Z) ⊕ range([W Z])^⊥` |
//! | `E_ZW` | onto `range(Z)` along `range(W) ⊕ range([W Z])^⊥` |
//!
//! with `P_D = E_WZ + E_ZW`, so every vector splits as
//! `y = E_WZ y + E_ZW y + (I - P_D) y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_conditioned, orthogonal_projector, Tolerances};

/// Returns a matrix with orthonormal columns spanning `range(b)`.
///
/// Uses a Householder QR factorization with the sign of each column chosen so
/// that the triangular factor has a positive diagonal. A matrix that already
/// has orthonormal columns therefore comes back unchanged up to rounding.
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    orthonormalize_with(b, &Tolerances::default())
}

pub fn orthonormalize_with(b: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let (n, r) = b.shape();
    if r == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if r > n {
        return Err(Error::RankDeficient {
            sigma_min: 0.0,
            tol: tol.rank_rel,
        });
    }
    check_rank(b, tol)?;
    let qr = b.clone().qr();
    let mut q = qr.q();
    let r_factor = qr.r();
    for j in 0..r {
        if r_factor[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

fn check_rank(b: &DMatrix<f64>, tol: &Tolerances) -> Result<()> {
    let s = linalg::singular_values(b);
    let max = s.max();
    let min = s.min();
    let threshold = tol.rank_rel * max;
    if !(min > threshold) {
        return Err(Error::RankDeficient {
            sigma_min: min,
            tol: threshold,
        });
    }
    Ok(())
}

fn has_orthonormal_columns(b: &DMatrix<f64>) -> bool {
    let gram = b.transpose() * b;
    (gram - DMatrix::identity(b.ncols(), b.ncols())).amax() <= 1e-12
}

/// Orthonormal signal and interference bases.
#[derive(Debug, Clone)]
pub struct SubspaceModel {
    w: DMatrix<f64>,
    z: DMatrix<f64>,
    tol: Tolerances,
}

impl SubspaceModel {
    /// Builds a model from arbitrary full-rank bases.
    ///
    /// Bases that are not already orthonormal are replaced by
    /// [`orthonormalize`]d ones with the same range. Fails when `[W Z]` is
    /// rank deficient, which includes `P + L > n` and intersecting ranges.
    pub fn new(w: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerances(w, z, Tolerances::default())
    }

    pub fn with_tolerances(w: DMatrix<f64>, z: DMatrix<f64>, tol: Tolerances) -> Result<Self> {
        let n = w.nrows();
        if z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "W has {n} rows but Z has {}",
                z.nrows()
            )));
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidParam("signal basis W needs at least one column".into()));
        }
        let w = if has_orthonormal_columns(&w) { w } else { orthonormalize_with(&w, &tol)? };
        let z = if has_orthonormal_columns(&z) { z } else { orthonormalize_with(&z, &tol)? };
        if w.ncols() + z.ncols() > n {
            return Err(Error::RankDeficient {
                sigma_min: 0.0,
                tol: tol.rank_rel,
            });
        }
        let model = Self { w, z, tol };
        check_rank(&model.composite(), &tol)?;
        Ok(model)
    }

    /// Model without interference (`L = 0`).
    pub fn signal_only(w: DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        Self::new(w, DMatrix::zeros(n, 0))
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `P`, the number of signal directions.
    pub fn signal_rank(&self) -> usize {
        self.w.ncols()
    }

    /// `L`, the number of interference directions.
    pub fn interference_rank(&self) -> usize {
        self.z.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// `D = [W Z]`.
    pub fn composite(&self) -> DMatrix<f64> {
        let n = self.dim();
        let (p, l) = (self.signal_rank(), self.interference_rank());
        let mut d = DMatrix::zeros(n, p + l);
        d.columns_mut(0, p).copy_from(&self.w);
        d.columns_mut(p, l).copy_from(&self.z);
        d
    }

    /// Block model `(W ⊗ I_m, Z ⊗ I_m)`.
    pub fn kron(&self, m: usize) -> Result<Self> {
        Self::with_tolerances(
            linalg::kron_identity(&self.w, m),
            linalg::kron_identity(&self.z, m),
            self.tol,
        )
    }
}

/// The oblique projector `E_WZ` and its companion operators.
#[derive(Debug, Clone)]
pub struct ObliqueProjector {
    e_wz: DMatrix<f64>,
    e_zw: DMatrix<f64>,
    p_w: DMatrix<f64>,
    p_z: DMatrix<f64>,
    p_d: DMatrix<f64>,
    x: DMatrix<f64>,
    construction_gap: f64,
}

/// Builds `E_WZ = P_W (I - Z X^{-1} Z^T P_W^⊥)` with `X = Z^T P_W^⊥ Z`.
///
/// The operator is also formed the second way,
/// `W (W^T P_Z^⊥ W)^{-1} W^T P_Z^⊥`; the spectral norm of the difference is
/// kept as [`ObliqueProjector::construction_gap`]. Both inverses go through
/// LU solves, and both Gram matrices must pass the condition-number limit.
pub fn oblique_projector(model: &SubspaceModel) -> Result<ObliqueProjector> {
    let n = model.dim();
    let tol = model.tolerances();
    let w = model.w();
    let z = model.z();
    let eye = DMatrix::<f64>::identity(n, n);

    // Nearly overlapping ranges show up here first; X alone is 1x1 when L = 1.
    let d = model.composite();
    let dtd = d.transpose() * &d;
    ensure_conditioned(&dtd, "D^T D", tol)?;

    let p_w = orthogonal_projector(w, n);
    let p_z = orthogonal_projector(z, n);
    let p_w_perp = &eye - &p_w;
    let p_z_perp = &eye - &p_z;

    let (e_wz, e_zw, x) = if model.interference_rank() == 0 {
        (p_w.clone(), DMatrix::zeros(n, n), DMatrix::zeros(0, 0))
    } else {
        let x = z.transpose() * &p_w_perp * z;
        ensure_conditioned(&x, "Z^T P_W^perp Z", tol)?;
        // X^{-1} Z^T P_W^⊥, shared by E_WZ and E_ZW.
        let t = linalg::solve(&x, &(z.transpose() * &p_w_perp), "Z^T P_W^perp Z")?;
        let zt = z * t;
        (&p_w * (&eye - &zt), zt, x)
    };

    let g = w.transpose() * &p_z_perp * w;
    ensure_conditioned(&g, "W^T P_Z^perp W", tol)?;
    let alt = w * linalg::solve(&g, &(w.transpose() * &p_z_perp), "W^T P_Z^perp W")?;
    let construction_gap = linalg::spectral_norm(&(&e_wz - &alt));

    let p_d = &d * linalg::solve(&dtd, &d.transpose(), "D^T D")?;

    Ok(ObliqueProjector {
        e_wz,
        e_zw,
        p_w,
        p_z,
        p_d,
        x,
        construction_gap,
    })
}

impl ObliqueProjector {
    pub fn dim(&self) -> usize {
        self.e_wz.nrows()
    }

    /// `E_WZ`: projects onto `range(W)` along `range(Z)`.
    pub fn e_wz(&self) -> &DMatrix<f64> {
        &self.e_wz
    }

    /// `E_ZW`: projects onto `range(Z)` along `range(W)`.
    pub fn e_zw(&self) -> &DMatrix<f64> {
        &self.e_zw
    }

    pub fn p_w(&self) -> &DMatrix<f64> {
        &self.p_w
    }

    pub fn p_z(&self) -> &DMatrix<f64> {
        &self.p_z
    }

    pub fn p_z_perp(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.p_z
    }

    /// Orthogonal projector onto `range([W Z])`.
    pub fn p_d(&self) -> &DMatrix<f64> {
        &self.p_d
    }

    /// Orthogonal projector onto the complement of `range([W Z])`.
    pub fn p_u(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.p_d
    }

    /// `X = Z^T P_W^⊥ Z` (empty when `L = 0`).
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `‖E_WZ - W (W^T P_Z^⊥ W)^{-1} W^T P_Z^⊥‖₂`.
    pub fn construction_gap(&self) -> f64 {
        self.construction_gap
    }

    pub fn decompose(&self, y: &DVector<f64>) -> Decomposition {
        decompose(y, self)
    }
}

/// `y = signal + interference + residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub signal: DVector<f64>,
    pub interference: DVector<f64>,
    pub residual: DVector<f64>,
}

pub fn decompose(y: &DVector<f64>, proj: &ObliqueProjector) -> Decomposition {
    Decomposition {
        signal: proj.e_wz() * y,
        interference: proj.e_zw() * y,
        residual: proj.p_u() * y,
    }
}

/// Coefficients of the least-squares fit `y ≈ W x_w + Z x_z`.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub x_w: DVector<f64>,
    pub x_z: DVector<f64>,
    /// `W x_w`, the estimated signal.
    pub w_o: DVector<f64>,
}

impl LeastSquaresFit {
    /// Expresses the estimated signal in a caller-supplied basis of `range(W)`.
    pub fn coefficients_in(&self, basis: &DMatrix<f64>) -> Result<DVector<f64>> {
        if basis.nrows() != self.w_o.len() {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} rows, signal has {}",
                basis.nrows(),
                self.w_o.len()
            )));
        }
        let gram = basis.transpose() * basis;
        let rhs = basis.transpose() * &self.w_o;
        let c = linalg::solve(&gram, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), "B^T B")?;
        Ok(c.column(0).into_owned())
    }
}

/// Solves `min ‖y - D x‖` with `D = [W Z]` through the normal equations.
pub fn least_squares_oracle(y: &DVector<f64>, model: &SubspaceModel) -> Result<LeastSquaresFit> {
    if y.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, model dimension is {}",
            y.len(),
            model.dim()
        )));
    }
    let d = model.composite();
    let dtd = d.transpose() * &d;
    ensure_conditioned(&dtd, "D^T D", model.tolerances())?;
    let rhs = d.transpose() * y;
    let x = linalg::solve(&dtd, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), "D^T D")?;
    let p = model.signal_rank();
    let x_w = x.rows(0, p).column(0).into_owned();
    let x_z = x.rows(p, model.interference_rank()).column(0).into_owned();
    let w_o = model.w() * &x_w;
    Ok(LeastSquaresFit { x_w, x_z, w_o })
}
