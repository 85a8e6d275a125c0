//! Graph-sparse combination matrices whose powers converge to a projector.
//!
//! For an idempotent target `E` (the oblique projector `E_WZ`, or the
//! orthogonal projector `P_D`) and a sparsity mask, we look for `A` with
//!
//! * `A E = E` and `E A = E`,
//! * `A[k, l] = 0` wherever the mask forbids it,
//! * `ρ(A - E) < 1`,
//!
//! so that `A^i → E`. The design minimizes the per-step convergence factor
//! `‖A - E‖₂` over the affine set cut out by the first two conditions and
//! rejects the result unless `‖A - E‖₂ ≤ 1 - eps`, which bounds the spectral
//! radius below one.

use std::fmt::Write as _;

use nalgebra::{linalg::ColPivQR, DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::graph::SupportMask;
use crate::linalg::{self, spectral_norm, spectral_radius, top_singular_pair};

/// Per-step convergence factor `‖A - E‖₂`.
pub fn per_step_factor(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != e.shape() {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, E is {}x{}",
            a.nrows(),
            a.ncols(),
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(spectral_norm(&(a - e)))
}

/// Diagnostics for a candidate combination matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    /// `‖A - E‖₂`.
    pub objective: f64,
    /// `‖A E - E‖₂`.
    pub r1: f64,
    /// `‖E A - E‖₂`.
    pub r2: f64,
    /// `ρ(A - E)`.
    pub rho: f64,
    pub mask_violations: usize,
    /// `‖A W - W‖₂` when a signal basis was supplied.
    pub right_eigen_residual: Option<f64>,
    /// `‖(W^T E) A - W^T E‖₂` when a signal basis was supplied.
    pub left_eigen_residual: Option<f64>,
    /// Tolerance the residuals were judged against.
    pub tol: f64,
    /// Solver iterations spent (zero for a plain check).
    pub iterations: usize,
    pub converged: bool,
}

impl DesignReport {
    pub fn spectral_margin(&self) -> f64 {
        1.0 - self.rho
    }

    /// The convergence conditions hold and no forbidden entry is nonzero.
    pub fn passes(&self) -> bool {
        let eig_ok = |r: Option<f64>| r.is_none_or(|r| r <= self.tol);
        self.r1 <= self.tol
            && self.r2 <= self.tol
            && self.rho < 1.0
            && self.mask_violations == 0
            && eig_ok(self.right_eigen_residual)
            && eig_ok(self.left_eigen_residual)
    }

    /// Human-readable reason for a failing report.
    pub fn failure_reason(&self) -> Option<String> {
        if self.passes() {
            return None;
        }
        let mut why = Vec::new();
        if !(self.r1 <= self.tol) {
            why.push(format!("‖AE - E‖ = {:e} > {:e}", self.r1, self.tol));
        }
        if !(self.r2 <= self.tol) {
            why.push(format!("‖EA - E‖ = {:e} > {:e}", self.r2, self.tol));
        }
        if !(self.rho < 1.0) {
            why.push(format!("ρ(A - E) = {} >= 1", self.rho));
        }
        if self.mask_violations > 0 {
            why.push(format!("{} entries outside the support", self.mask_violations));
        }
        Some(why.join("; "))
    }

    /// `key = value` lines, as written next to designed matrices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "objective = {}", self.objective).unwrap();
        writeln!(out, "residual_ae = {}", self.r1).unwrap();
        writeln!(out, "residual_ea = {}", self.r2).unwrap();
        writeln!(out, "rho = {}", self.rho).unwrap();
        writeln!(out, "spectral_margin = {}", self.spectral_margin()).unwrap();
        writeln!(out, "mask_violations = {}", self.mask_violations).unwrap();
        if let Some(r) = self.right_eigen_residual {
            writeln!(out, "residual_aw = {r}").unwrap();
        }
        if let Some(r) = self.left_eigen_residual {
            writeln!(out, "residual_wtea = {r}").unwrap();
        }
        writeln!(out, "iterations = {}", self.iterations).unwrap();
        writeln!(out, "converged = {}", self.converged).unwrap();
        out
    }
}

/// Checks the convergence conditions for `A` against target `E`.
///
/// Never fails: mismatched shapes produce a report with infinite residuals.
pub fn check_conditions(
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    mask: &SupportMask,
    tol: f64,
    w: Option<&DMatrix<f64>>,
) -> DesignReport {
    let shapes_ok = a.is_square() && a.shape() == e.shape() && mask.dim() == a.nrows();
    if !shapes_ok {
        return DesignReport {
            objective: f64::INFINITY,
            r1: f64::INFINITY,
            r2: f64::INFINITY,
            rho: f64::INFINITY,
            mask_violations: usize::MAX,
            right_eigen_residual: None,
            left_eigen_residual: None,
            tol,
            iterations: 0,
            converged: false,
        };
    }
    let diff = a - e;
    let (right, left) = match w {
        Some(w) if w.nrows() == a.nrows() => {
            let wte = w.transpose() * e;
            (
                Some(spectral_norm(&(a * w - w))),
                Some(spectral_norm(&(&wte * a - &wte))),
            )
        }
        Some(_) => (Some(f64::INFINITY), Some(f64::INFINITY)),
        None => (None, None),
    };
    DesignReport {
        objective: spectral_norm(&diff),
        r1: spectral_norm(&(a * e - e)),
        r2: spectral_norm(&(e * a - e)),
        rho: spectral_radius(&diff),
        mask_violations: mask.violations(a),
        right_eigen_residual: right,
        left_eigen_residual: left,
        tol,
        iterations: 0,
        converged: true,
    }
}

/// A combination matrix that has passed [`check_conditions`] for its target.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    matrix: DMatrix<f64>,
    target: DMatrix<f64>,
    mask: SupportMask,
    report: DesignReport,
}

impl CombinationMatrix {
    /// Wraps `matrix` after verifying it against `target` and `mask`.
    pub fn certify(matrix: DMatrix<f64>, target: DMatrix<f64>, mask: SupportMask, tol: f64) -> Result<Self> {
        let report = check_conditions(&matrix, &target, &mask, tol, None);
        Self::from_report(matrix, target, mask, report)
    }

    fn from_report(matrix: DMatrix<f64>, target: DMatrix<f64>, mask: SupportMask, report: DesignReport) -> Result<Self> {
        if let Some(reason) = report.failure_reason() {
            return Err(Error::NotCertified(reason));
        }
        Ok(Self {
            matrix,
            target,
            mask,
            report,
        })
    }

    /// The target projector itself, which trivially satisfies every condition
    /// on a mask that allows all its nonzeros (e.g. a complete graph).
    pub fn exact(target: DMatrix<f64>, mask: SupportMask, tol: f64) -> Result<Self> {
        Self::certify(target.clone(), target, mask, tol)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }

    pub fn report(&self) -> &DesignReport {
        &self.report
    }

    /// `‖A - E‖₂`.
    pub fn per_step_factor(&self) -> f64 {
        self.report.objective
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Knobs for [`design_combiner`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Initial step of the diminishing schedule `step0 / sqrt(t)`.
    pub step0: f64,
    pub max_iters: usize,
    /// Stop once the best objective improved by less than `stall_tol` over
    /// this many iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    /// Residual tolerance for the affine constraints and certification.
    pub feas_tol: f64,
    /// Design the node-level matrix and expand it when the target and mask
    /// have `X ⊗ I_m` structure.
    pub kron_shortcut: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step0: 1.0,
            max_iters: 5000,
            stall_window: 1000,
            stall_tol: 1e-6,
            feas_tol: 1e-6,
            kron_shortcut: true,
        }
    }
}

/// Default spectral margin `eps`.
pub const DEFAULT_EPS: f64 = 0.001;

/// The affine set `{A : mask(A), A E = E, E A = E}` in the coordinates of
/// the allowed entries.
///
/// `E` is factored as `E = U G` with `U` orthonormal (`n x P`) and `G`
/// full row rank, so the constraints reduce to `A U = U` and `G A = G`.
/// Projection uses the pseudo-inverse of the stacked constraint matrix.
#[derive(Debug, Clone)]
pub struct AffineSet {
    n: usize,
    free: Vec<(usize, usize)>,
    constraints: DMatrix<f64>,
    rhs: DVector<f64>,
    // K^+ = basis * diag(inv_sigma) * rows^T
    basis: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    rows: DMatrix<f64>,
}

impl AffineSet {
    pub fn new(e: &DMatrix<f64>, mask: &SupportMask, tol: f64) -> Result<Self> {
        let n = e.nrows();
        if !e.is_square() || mask.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "target is {}x{}, mask is {}x{}",
                e.nrows(),
                e.ncols(),
                mask.dim(),
                mask.dim()
            )));
        }
        let (u, g) = rank_factor(e);
        let p = u.ncols();
        let free = mask.allowed_entries();
        let nf = free.len();
        let mut k = DMatrix::zeros(2 * n * p, nf);
        let mut rhs = DVector::zeros(2 * n * p);
        // Row (i, c) of A U = U and row (r, j) of G A = G.
        for (col, &(i, l)) in free.iter().enumerate() {
            for c in 0..p {
                k[(i * p + c, col)] = u[(l, c)];
            }
            for r in 0..p {
                k[(n * p + r * n + l, col)] = g[(r, i)];
            }
        }
        for i in 0..n {
            for c in 0..p {
                rhs[i * p + c] = u[(i, c)];
            }
        }
        for r in 0..p {
            for j in 0..n {
                rhs[n * p + r * n + j] = g[(r, j)];
            }
        }

        let kt = k.transpose();
        let svd = SVD::new(kt, true, true);
        let smax = svd.singular_values.max();
        let cut = 1e-10 * smax.max(1.0);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cut)
            .collect();
        let u_all = svd.u.expect("left singular vectors requested");
        let vt_all = svd.v_t.expect("right singular vectors requested");
        let basis = u_all.select_columns(keep.iter());
        let rows = vt_all.select_rows(keep.iter()).transpose();
        let inv_sigma = DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / svd.singular_values[i]));

        let set = Self {
            n,
            free,
            constraints: k,
            rhs,
            basis,
            inv_sigma,
            rows,
        };
        let x0 = set.project_free(&DVector::zeros(nf));
        let residual = (&set.constraints * &x0 - &set.rhs).amax();
        if residual > tol {
            return Err(Error::Infeasible(format!(
                "affine constraints inconsistent with the support (least-squares residual {residual:e})"
            )));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of allowed entries.
    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Dimension of the affine set.
    pub fn degrees_of_freedom(&self) -> usize {
        self.free.len() - self.inv_sigma.len()
    }

    fn project_free(&self, x: &DVector<f64>) -> DVector<f64> {
        // One refinement pass recovers the accuracy lost to the pseudo-inverse
        // when the constraint matrix is poorly conditioned.
        let once = self.correct(x);
        self.correct(&once)
    }

    fn correct(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.constraints * x - &self.rhs;
        let coef = self.rows.transpose() * r;
        let scaled = coef.component_mul(&self.inv_sigma);
        x - &self.basis * scaled
    }

    /// Removes the component of a direction that leaves the affine set.
    fn project_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let coef = self.basis.transpose() * d;
        d - &self.basis * coef
    }

    fn gather(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&(i, j)| m[(i, j)]))
    }

    fn scatter(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in self.free.iter().zip(x.iter()) {
            m[(i, j)] = v;
        }
        m
    }

    /// Frobenius-nearest point of the affine set to `a0`.
    ///
    /// Forbidden entries of the result are exactly zero.
    pub fn project(&self, a0: &DMatrix<f64>) -> DMatrix<f64> {
        self.scatter(&self.project_free(&self.gather(a0)))
    }
}

/// `E = U G` with orthonormal `U` spanning `range(E)` and `G = U^T E`.
///
/// The rank of a projector is its trace. `U` comes from a column-pivoted QR
/// of `E`; the SVD route loses up to ~1e-6 of accuracy in `E - U G` on some
/// oblique projectors, which then leaks into `A E - E`.
fn rank_factor(e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let rank = (e.trace().round().max(0.0) as usize).min(e.nrows());
    let qr = ColPivQR::new(e.clone());
    let u = qr.q().columns(0, rank).into_owned();
    let g = u.transpose() * e;
    (u, g)
}

/// Frobenius projection of `a0` onto `{A : mask(A), A E = E, E A = E}`.
pub fn project_affine(a0: &DMatrix<f64>, e: &DMatrix<f64>, mask: &SupportMask) -> Result<DMatrix<f64>> {
    if a0.shape() != e.shape() {
        return Err(Error::DimensionMismatch(format!(
            "A0 is {}x{}, E is {}x{}",
            a0.nrows(),
            a0.ncols(),
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(AffineSet::new(e, mask, 1e-8)?.project(a0))
}

/// Minimizes `‖A - E‖₂` over graph-sparse `A` with `A E = E = E A`.
///
/// Runs a projected subgradient method: the subgradient of the spectral norm
/// at `A - E` is `u v^T` for the top singular pair, it is projected onto the
/// affine set, normalized, and scaled by `step0 / sqrt(t)`. The best iterate
/// seen is returned. Fails with [`Error::Infeasible`] when the best objective
/// exceeds `1 - eps`.
pub fn design_combiner(e: &DMatrix<f64>, mask: &SupportMask, eps: f64, opts: &SolverOptions) -> Result<CombinationMatrix> {
    validate_target(e, mask, eps)?;

    if opts.kron_shortcut {
        if let Some((base, m)) = mask.uniform_blocks() {
            if m > 1 {
                if let Some(small) = kron_factor(e, m) {
                    let inner = design_combiner(&small, base, eps, opts)?;
                    let a = linalg::kron_identity(inner.matrix(), m);
                    let mut report = check_conditions(&a, e, mask, opts.feas_tol, None);
                    report.iterations = inner.report.iterations;
                    report.converged = inner.report.converged;
                    return CombinationMatrix::from_report(a, e.clone(), mask.clone(), report);
                }
            }
        }
    }

    let set = AffineSet::new(e, mask, opts.feas_tol)?;
    let (a, iterations, converged) = subgradient(&set, e, opts);
    let mut report = check_conditions(&a, e, mask, opts.feas_tol, None);
    report.iterations = iterations;
    report.converged = converged;
    if report.objective > 1.0 - eps {
        return Err(Error::Infeasible(format!(
            "best per-step factor {:.6} exceeds 1 - eps = {:.6}",
            report.objective,
            1.0 - eps
        )));
    }
    CombinationMatrix::from_report(a, e.clone(), mask.clone(), report)
}

fn validate_target(e: &DMatrix<f64>, mask: &SupportMask, eps: f64) -> Result<()> {
    if !e.is_square() || mask.dim() != e.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "target is {}x{}, mask is {}x{}",
            e.nrows(),
            e.ncols(),
            mask.dim(),
            mask.dim()
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParam(format!("eps = {eps} not in (0, 1)")));
    }
    let idem = spectral_norm(&(e * e - e));
    if idem > 1e-8 * spectral_norm(e).max(1.0) {
        return Err(Error::InvalidParam(format!("target is not idempotent (‖E² - E‖ = {idem:e})")));
    }
    Ok(())
}

/// Returns `S` when `e == S ⊗ I_m` up to rounding.
fn kron_factor(e: &DMatrix<f64>, m: usize) -> Option<DMatrix<f64>> {
    let n = e.nrows();
    if !n.is_multiple_of(m) {
        return None;
    }
    let nb = n / m;
    let small = DMatrix::from_fn(nb, nb, |k, l| e[(k * m, l * m)]);
    let scale = e.amax().max(1.0);
    let expanded = linalg::kron_identity(&small, m);
    ((e - expanded).amax() <= 1e-12 * scale).then_some(small)
}

fn subgradient(set: &AffineSet, e: &DMatrix<f64>, opts: &SolverOptions) -> (DMatrix<f64>, usize, bool) {
    let mut x = set.project_free(&set.gather(e));
    let mut best_x = x.clone();
    let mut best = f64::INFINITY;
    let mut history = Vec::with_capacity(opts.max_iters + 1);
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=opts.max_iters {
        iterations = t;
        let a = set.scatter(&x);
        let (sigma, u, v) = top_singular_pair(&(&a - e));
        if sigma < best {
            best = sigma;
            best_x.copy_from(&x);
        }
        history.push(best);
        if t > opts.stall_window && history[t - 1 - opts.stall_window] - best < opts.stall_tol {
            converged = true;
            break;
        }
        let g = set.project_direction(&set.gather(&(&u * v.transpose())));
        let gnorm = g.norm();
        if gnorm < 1e-14 {
            converged = true;
            break;
        }
        let step = opts.step0 / (t as f64).sqrt();
        x -= g * (step / gnorm);
        x = set.project_free(&x);
    }
    (set.scatter(&best_x), iterations, converged)
}
