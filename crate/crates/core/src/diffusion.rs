//! Adaptive inference over networks: stochastic-gradient adaptation followed
//! by projection onto `range([W Z])` and extraction of the signal part.
//!
//! Every strategy shares the adaptation step
//! `ψ_k = y_k - μ ∇̂J_k(y_k)` and differs in how `y` and `w` are formed:
//!
//! * centralized: `y = P_D ψ`, `w = E_WZ y`;
//! * oblique diffusion: `y_k = Σ C_kl ψ_l`, `w_k = Σ A_kl ((1-ν) w_l + ν y_l)`;
//! * multi-hop: `y_k = Σ C_kl ψ_l`, `w = A^S y`;
//! * orthogonal only: `y_k = Σ C_kl ψ_l`, `w = y`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::combiner::CombinationMatrix;
use crate::denoise::require_certified;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{condition_number, solve};
use crate::network::{BlockLayout, LocalCombiner};
use crate::projector::ObliqueProjector;

/// Target vectors, stacked over agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub w_o: DVector<f64>,
    pub z_o: DVector<f64>,
    /// `w_o + z_o`.
    pub y_o: DVector<f64>,
}

impl Optimum {
    pub fn new(w_o: DVector<f64>, z_o: DVector<f64>) -> Result<Self> {
        if w_o.len() != z_o.len() {
            return Err(Error::DimensionMismatch(format!(
                "w_o has length {}, z_o has length {}",
                w_o.len(),
                z_o.len()
            )));
        }
        let y_o = &w_o + &z_o;
        Ok(Self { w_o, z_o, y_o })
    }
}

/// Per-agent costs `J_k(y_k)` with sampled gradient approximations.
pub trait CostModel: Sync {
    type Sample;

    fn layout(&self) -> &BlockLayout;

    fn optimum(&self) -> &Optimum;

    /// Data observed by agent `k` at iteration `i`.
    fn sample<R: Rng + ?Sized>(&self, k: usize, i: usize, rng: &mut R) -> Self::Sample;

    /// Writes `∇̂J_k(y_k)` for `sample` into `out`.
    fn stochastic_gradient(&self, k: usize, y_k: &[f64], sample: &Self::Sample, out: &mut [f64]);

    /// Writes `∇J_k(y_k)` into `out`.
    fn true_gradient(&self, k: usize, y_k: &[f64], out: &mut [f64]);
}

/// `J_k(y_k) = ½ E|d_k(i) - u_{k,i}^T y_k|²` with
/// `d_k(i) = u_{k,i}^T y_o_k + v_k(i)`, `u_{k,i} ~ N(0, σ²_{u,k} I)` and
/// `v_k(i) ~ N(0, σ²_{v,k})`.
#[derive(Debug, Clone)]
pub struct MseNetworkCost {
    layout: BlockLayout,
    sigma_u2: Vec<f64>,
    sigma_v2: Vec<f64>,
    optimum: Optimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseSample {
    pub u: Vec<f64>,
    pub d: f64,
}

impl MseNetworkCost {
    pub fn new(layout: BlockLayout, sigma_u2: Vec<f64>, sigma_v2: Vec<f64>, optimum: Optimum) -> Result<Self> {
        let n = layout.n_nodes();
        if sigma_u2.len() != n || sigma_v2.len() != n || optimum.y_o.len() != layout.total() {
            return Err(Error::DimensionMismatch(format!(
                "{} agents / length {}, got {} regressor and {} noise variances and a length-{} optimum",
                n,
                layout.total(),
                sigma_u2.len(),
                sigma_v2.len(),
                optimum.y_o.len()
            )));
        }
        if sigma_u2.iter().chain(&sigma_v2).any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParam("variances must be nonnegative".into()));
        }
        Ok(Self {
            layout,
            sigma_u2,
            sigma_v2,
            optimum,
        })
    }

    pub fn sigma_u2(&self) -> &[f64] {
        &self.sigma_u2
    }

    pub fn sigma_v2(&self) -> &[f64] {
        &self.sigma_v2
    }

    /// Stochastic and true gradient of agent `k` at `y_k`.
    pub fn gradients(&self, k: usize, y_k: &DVector<f64>, sample: &MseSample) -> Result<(DVector<f64>, DVector<f64>)> {
        let dim = self.layout.block_dim(k);
        if y_k.len() != dim || sample.u.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "agent {k} has dimension {dim}, got y_k of length {} and u of length {}",
                y_k.len(),
                sample.u.len()
            )));
        }
        let mut stoch = DVector::zeros(dim);
        let mut exact = DVector::zeros(dim);
        self.stochastic_gradient(k, y_k.as_slice(), sample, stoch.as_mut_slice());
        self.true_gradient(k, y_k.as_slice(), exact.as_mut_slice());
        Ok((stoch, exact))
    }
}

impl CostModel for MseNetworkCost {
    type Sample = MseSample;

    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn optimum(&self) -> &Optimum {
        &self.optimum
    }

    fn sample<R: Rng + ?Sized>(&self, k: usize, _i: usize, rng: &mut R) -> MseSample {
        let su = self.sigma_u2[k].sqrt();
        let sv = self.sigma_v2[k].sqrt();
        let y_o = &self.optimum.y_o.as_slice()[self.layout.range(k)];
        let u: Vec<f64> = (0..y_o.len()).map(|_| su * rng.sample::<f64, _>(StandardNormal)).collect();
        let v = sv * rng.sample::<f64, _>(StandardNormal);
        let d = u.iter().zip(y_o).map(|(a, b)| a * b).sum::<f64>() + v;
        MseSample { u, d }
    }

    fn stochastic_gradient(&self, _k: usize, y_k: &[f64], sample: &MseSample, out: &mut [f64]) {
        let err = sample.d - sample.u.iter().zip(y_k).map(|(a, b)| a * b).sum::<f64>();
        for (o, u) in out.iter_mut().zip(&sample.u) {
            *o = -u * err;
        }
    }

    fn true_gradient(&self, k: usize, y_k: &[f64], out: &mut [f64]) {
        let y_o = &self.optimum.y_o.as_slice()[self.layout.range(k)];
        let s = self.sigma_u2[k];
        for ((o, y), t) in out.iter_mut().zip(y_k).zip(y_o) {
            *o = s * (y - t);
        }
    }
}

/// Noise-free `J_k(y_k) = ½ h_k ‖y_k - y_o_k‖²`, whose sampled gradient is
/// exact. Useful for deterministic checks.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    layout: BlockLayout,
    curvature: Vec<f64>,
    optimum: Optimum,
}

impl QuadraticCost {
    pub fn new(layout: BlockLayout, curvature: Vec<f64>, optimum: Optimum) -> Result<Self> {
        if curvature.len() != layout.n_nodes() || optimum.y_o.len() != layout.total() {
            return Err(Error::DimensionMismatch("curvature or optimum does not match the layout".into()));
        }
        Ok(Self {
            layout,
            curvature,
            optimum,
        })
    }
}

impl CostModel for QuadraticCost {
    type Sample = ();

    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn optimum(&self) -> &Optimum {
        &self.optimum
    }

    fn sample<R: Rng + ?Sized>(&self, _k: usize, _i: usize, _rng: &mut R) {}

    fn stochastic_gradient(&self, k: usize, y_k: &[f64], _sample: &(), out: &mut [f64]) {
        self.true_gradient(k, y_k, out);
    }

    fn true_gradient(&self, k: usize, y_k: &[f64], out: &mut [f64]) {
        let y_o = &self.optimum.y_o.as_slice()[self.layout.range(k)];
        let h = self.curvature[k];
        for ((o, y), t) in out.iter_mut().zip(y_k).zip(y_o) {
            *o = h * (y - t);
        }
    }
}

/// Stacked `ψ`, `y`, `w` of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub psi: DVector<f64>,
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    /// Completed iterations.
    pub iteration: usize,
    scratch: DVector<f64>,
}

impl NetworkState {
    /// `y_{-1} = w_{-1} = 0`.
    pub fn zeros(layout: &BlockLayout) -> Self {
        let m = layout.total();
        Self {
            psi: DVector::zeros(m),
            y: DVector::zeros(m),
            w: DVector::zeros(m),
            iteration: 0,
            scratch: DVector::zeros(m),
        }
    }

    pub fn with_y(y: DVector<f64>) -> Self {
        let m = y.len();
        Self {
            psi: y.clone(),
            y,
            w: DVector::zeros(m),
            iteration: 0,
            scratch: DVector::zeros(m),
        }
    }
}

/// `ψ_k = y_k - μ ∇̂J_k(y_k)` for every agent, sampling agents in order.
pub fn adapt<C: CostModel, R: Rng + ?Sized>(state: &mut NetworkState, cost: &C, mu: f64, rng: &mut R) {
    let layout = cost.layout();
    let i = state.iteration;
    for k in 0..layout.n_nodes() {
        let r = layout.range(k);
        let sample = cost.sample(k, i, rng);
        let grad = &mut state.scratch.as_mut_slice()[r.clone()];
        cost.stochastic_gradient(k, &state.y.as_slice()[r.clone()], &sample, grad);
        for j in r {
            state.psi[j] = state.y[j] - mu * state.scratch[j];
        }
    }
}

fn check_projector<C: CostModel>(cost: &C, proj: &ObliqueProjector) -> Result<()> {
    if proj.dim() != cost.layout().total() {
        return Err(Error::DimensionMismatch(format!(
            "projector is {}x{}, network state has length {}",
            proj.dim(),
            proj.dim(),
            cost.layout().total()
        )));
    }
    Ok(())
}

/// One iteration of the centralized solution: adapt, `y = P_D ψ`, `w = E_WZ y`.
pub fn centralized_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    proj: &ObliqueProjector,
    mu: f64,
    rng: &mut R,
) -> Result<()> {
    check_projector(cost, proj)?;
    adapt(state, cost, mu, rng);
    state.y.gemv(1.0, proj.p_d(), &state.psi, 0.0);
    state.w.gemv(1.0, proj.e_wz(), &state.y, 0.0);
    state.iteration += 1;
    Ok(())
}

/// One plain gradient step on the penalized cost,
/// `y ← y - μ∇̂ - μη P_Z^⊥ (I - E_WZ) y`, followed by `w = E_WZ y`.
pub fn penalty_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    proj: &ObliqueProjector,
    mu: f64,
    eta: f64,
    rng: &mut R,
) -> Result<()> {
    check_projector(cost, proj)?;
    let q = penalty_operator(proj);
    let pen = &q * &state.y;
    adapt(state, cost, mu, rng);
    state.y = &state.psi - (mu * eta) * pen;
    state.w.gemv(1.0, proj.e_wz(), &state.y, 0.0);
    state.iteration += 1;
    Ok(())
}

/// The two-step split with `y_{i-1}` replaced by `ψ_i` in the penalty term:
/// `y ← ψ - μη P_Z^⊥ (I - E_WZ) ψ`. With `η = 1/μ` this is `y = P_D ψ`.
pub fn penalty_incremental_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    proj: &ObliqueProjector,
    mu: f64,
    eta: f64,
    rng: &mut R,
) -> Result<()> {
    check_projector(cost, proj)?;
    adapt(state, cost, mu, rng);
    let pen = penalty_operator(proj) * &state.psi;
    state.y = &state.psi - (mu * eta) * pen;
    state.w.gemv(1.0, proj.e_wz(), &state.y, 0.0);
    state.iteration += 1;
    Ok(())
}

/// `P_Z^⊥ (I - E_WZ)`.
pub fn penalty_operator(proj: &ObliqueProjector) -> DMatrix<f64> {
    let n = proj.dim();
    proj.p_z_perp() * (DMatrix::identity(n, n) - proj.e_wz())
}

/// Neighbor-local `C` (targeting `P_D`) and `A` (targeting `E_WZ`).
#[derive(Debug, Clone)]
pub struct DiffusionCombiners {
    pub c: LocalCombiner,
    pub a: LocalCombiner,
}

impl DiffusionCombiners {
    /// Fails with `NotCertified` unless `c` converges to `P_D` and `a` to
    /// `E_WZ` of `proj`, within the certificate tolerance.
    pub fn new(
        c: &CombinationMatrix,
        a: &CombinationMatrix,
        proj: &ObliqueProjector,
        graph: &Graph,
        layout: BlockLayout,
    ) -> Result<Self> {
        require_certified(c)?;
        require_certified(a)?;
        if c.dim() != proj.dim() || a.dim() != proj.dim() {
            return Err(Error::DimensionMismatch(format!(
                "combiners are {0}x{0} and {1}x{1}, projector is {2}x{2}",
                c.dim(),
                a.dim(),
                proj.dim()
            )));
        }
        let tol = crate::denoise::CERTIFICATE_TOL;
        if (c.target() - proj.p_d()).amax() > tol {
            return Err(Error::NotCertified("C was not designed for P_D of this model".into()));
        }
        if (a.target() - proj.e_wz()).amax() > tol {
            return Err(Error::NotCertified("A was not designed for E_WZ of this model".into()));
        }
        Ok(Self {
            c: LocalCombiner::new(c, graph, layout.clone())?,
            a: LocalCombiner::new(a, graph, layout)?,
        })
    }
}

/// `y_k = Σ C_kl ψ_l`.
pub fn combine_step(state: &mut NetworkState, c: &LocalCombiner, observer: &mut impl FnMut(usize, usize)) {
    c.apply_into(&state.psi, &mut state.y, observer);
}

/// `w_k = Σ A_kl ((1-ν) w_l + ν y_l)`.
pub fn smoothing_step(state: &mut NetworkState, a: &LocalCombiner, nu: f64, observer: &mut impl FnMut(usize, usize)) {
    for j in 0..state.w.len() {
        state.scratch[j] = (1.0 - nu) * state.w[j] + nu * state.y[j];
    }
    a.apply_into(&state.scratch, &mut state.w, observer);
}

/// One iteration of the oblique diffusion algorithm.
pub fn oblique_diffusion_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    comb: &DiffusionCombiners,
    mu: f64,
    nu: f64,
    rng: &mut R,
) {
    oblique_diffusion_step_observed(state, cost, comb, mu, nu, rng, &mut |_, _| {});
}

pub fn oblique_diffusion_step_observed<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    comb: &DiffusionCombiners,
    mu: f64,
    nu: f64,
    rng: &mut R,
    observer: &mut impl FnMut(usize, usize),
) {
    adapt(state, cost, mu, rng);
    combine_step(state, &comb.c, observer);
    smoothing_step(state, &comb.a, nu, observer);
    state.iteration += 1;
}

/// `w = A^S y`, one neighbor exchange per hop.
pub fn multi_hop_step(state: &mut NetworkState, a: &LocalCombiner, hops: usize) -> Result<()> {
    if hops == 0 {
        return Err(Error::InvalidParam("the number of hops must be at least 1".into()));
    }
    state.w.copy_from(&state.y);
    for _ in 0..hops {
        a.apply_into(&state.w, &mut state.scratch, &mut |_, _| {});
        std::mem::swap(&mut state.w, &mut state.scratch);
    }
    Ok(())
}

/// Adapt, combine with `C`, then `w = A^S y`.
pub fn multi_hop_diffusion_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    comb: &DiffusionCombiners,
    mu: f64,
    hops: usize,
    rng: &mut R,
) -> Result<()> {
    adapt(state, cost, mu, rng);
    combine_step(state, &comb.c, &mut |_, _| {});
    multi_hop_step(state, &comb.a, hops)?;
    state.iteration += 1;
    Ok(())
}

/// Adapt, combine with `C`, and report `w = y` without interference removal.
pub fn orthogonal_only_step<C: CostModel, R: Rng + ?Sized>(
    state: &mut NetworkState,
    cost: &C,
    comb: &DiffusionCombiners,
    mu: f64,
    rng: &mut R,
) {
    adapt(state, cost, mu, rng);
    combine_step(state, &comb.c, &mut |_, _| {});
    state.w.copy_from(&state.y);
    state.iteration += 1;
}

/// `ν A (I - (1-ν) A)^{-1}`, the steady-state map from `y` to `w` of the
/// smoothing recursion.
pub fn smoothing_operator(a: &DMatrix<f64>, nu: f64) -> Result<DMatrix<f64>> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidParam(format!("nu = {nu} not in (0, 1]")));
    }
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    let n = a.nrows();
    let m = DMatrix::identity(n, n) - (1.0 - nu) * a;
    let what = "I - (1 - nu) A";
    if !(condition_number(&m) < 1e14) {
        return Err(Error::Singular(what.into()));
    }
    // A commutes with (I - (1-ν)A)^{-1}.
    solve(&m, &(nu * a), what)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::{design_combiner, SolverOptions, DEFAULT_EPS};
    use crate::graph::{block_expand, support_mask};
    use crate::linalg::spectral_norm;
    use crate::projector::{oblique_projector, SubspaceModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Setup {
        graph: Graph,
        layout: BlockLayout,
        proj: ObliqueProjector,
        c: CombinationMatrix,
        a: CombinationMatrix,
        optimum: Optimum,
    }

    fn gauss(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    // Complete graph with exact projectors, or the first sparse random
    // instance from `seed` on that admits designs for both targets.
    fn setup(n: usize, m: usize, complete: bool, seed: u64) -> Setup {
        (seed..seed + 100)
            .find_map(|s| try_setup(n, m, complete, s))
            .expect("no feasible instance")
    }

    fn try_setup(n: usize, m: usize, complete: bool, seed: u64) -> Option<Setup> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let small = SubspaceModel::new(gauss(&mut rng, n, 1), gauss(&mut rng, n, 1)).unwrap();
        let model = small.kron(m).unwrap();
        let proj = oblique_projector(&model).unwrap();
        let graph = if complete {
            Graph::complete(n)
        } else {
            crate::graph::random_connected_graph(n, 0.6, seed).unwrap()
        };
        let mask = block_expand(&support_mask(&graph), &vec![m; n]).unwrap();
        let opts = SolverOptions::default();
        let (c, a) = if complete {
            (
                CombinationMatrix::exact(proj.p_d().clone(), mask.clone(), 1e-10).unwrap(),
                CombinationMatrix::exact(proj.e_wz().clone(), mask, 1e-10).unwrap(),
            )
        } else {
            (
                design_combiner(proj.p_d(), &mask, DEFAULT_EPS, &opts).ok()?,
                design_combiner(proj.e_wz(), &mask, DEFAULT_EPS, &opts).ok()?,
            )
        };
        let x_w = DVector::from_fn(model.signal_rank(), |_, _| 0.1 + rng.sample::<f64, _>(StandardNormal));
        let x_z = DVector::from_fn(model.interference_rank(), |_, _| 0.1 + rng.sample::<f64, _>(StandardNormal));
        let optimum = Optimum::new(model.w() * x_w, model.z() * x_z).unwrap();
        Some(Setup {
            graph,
            layout: BlockLayout::uniform(n, m),
            proj,
            c,
            a,
            optimum,
        })
    }

    fn mse_cost(s: &Setup) -> MseNetworkCost {
        let n = s.layout.n_nodes();
        MseNetworkCost::new(s.layout.clone(), vec![2.0; n], vec![0.2; n], s.optimum.clone()).unwrap()
    }

    fn combiners(s: &Setup) -> DiffusionCombiners {
        DiffusionCombiners::new(&s.c, &s.a, &s.proj, &s.graph, s.layout.clone()).unwrap()
    }

    #[test]
    fn gradient_vanishes_at_optimum_without_noise() {
        let s = setup(4, 2, true, 1);
        let n = 4;
        let cost = MseNetworkCost::new(s.layout.clone(), vec![1.5; n], vec![0.0; n], s.optimum.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for k in 0..n {
            let y_k = DVector::from_column_slice(&s.optimum.y_o.as_slice()[s.layout.range(k)]);
            let sample = cost.sample(k, 0, &mut rng);
            let (g, exact) = cost.gradients(k, &y_k, &sample).unwrap();
            assert!(g.amax() < 1e-12 && exact.amax() < 1e-12);
        }
    }

    #[test]
    fn true_gradient_at_zero_is_linear() {
        let s = setup(3, 2, true, 3);
        let cost = mse_cost(&s);
        let mut out = [0.0; 2];
        cost.true_gradient(1, &[0.0, 0.0], &mut out);
        let y_o = &s.optimum.y_o.as_slice()[2..4];
        assert!((out[0] + 2.0 * y_o[0]).abs() < 1e-14 && (out[1] + 2.0 * y_o[1]).abs() < 1e-14);
    }

    #[test]
    fn gradient_dimension_mismatch() {
        let s = setup(3, 2, true, 3);
        let cost = mse_cost(&s);
        let sample = MseSample { u: vec![1.0; 3], d: 0.0 };
        let err = cost.gradients(0, &DVector::zeros(2), &sample).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn stochastic_gradient_is_unbiased() {
        let s = setup(3, 3, true, 4);
        let cost = mse_cost(&s);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let k = 2;
        let y_k = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let trials = 10_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        let mut exact = DVector::zeros(3);
        for _ in 0..trials {
            let sample = cost.sample(k, 0, &mut rng);
            let (g, e) = cost.gradients(k, &y_k, &sample).unwrap();
            sum += &g;
            sq += g.component_mul(&g);
            exact = e;
        }
        let t = trials as f64;
        for j in 0..3 {
            let mean = sum[j] / t;
            let se = ((sq[j] / t - mean * mean) / t).sqrt();
            assert!((mean - exact[j]).abs() <= 3.0 * se, "component {j}: {mean} vs {}", exact[j]);
        }
    }

    #[test]
    fn centralized_fixed_point() {
        let s = setup(4, 2, true, 6);
        let cost = QuadraticCost::new(s.layout.clone(), vec![1.0; 4], s.optimum.clone()).unwrap();
        let mut state = NetworkState::with_y(s.optimum.y_o.clone());
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        centralized_step(&mut state, &cost, &s.proj, 0.1, &mut rng).unwrap();
        assert!((&state.y - &s.optimum.y_o).amax() < 1e-12);
        assert!((&state.w - &s.optimum.w_o).amax() < 1e-12);
    }

    #[test]
    fn first_centralized_step_from_zero() {
        let s = setup(4, 2, true, 7);
        let cost = mse_cost(&s);
        let mu = 0.01;
        let mut state = NetworkState::zeros(&s.layout);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        centralized_step(&mut state, &cost, &s.proj, mu, &mut rng).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut expected = DVector::zeros(8);
        for k in 0..4 {
            let sample = cost.sample(k, 0, &mut rng);
            let r = s.layout.range(k);
            cost.stochastic_gradient(k, &[0.0, 0.0], &sample, &mut expected.as_mut_slice()[r]);
        }
        assert!((&state.psi + mu * expected).amax() < 1e-15);
    }

    #[test]
    fn penalty_term_vanishes_on_the_subspace() {
        let s = setup(4, 2, true, 9);
        let cost = QuadraticCost::new(s.layout.clone(), vec![1.0; 4], s.optimum.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut state = NetworkState::with_y(s.optimum.y_o.clone());
        penalty_step(&mut state, &cost, &s.proj, 0.1, 100.0, &mut rng).unwrap();
        assert!((&state.y - &s.optimum.y_o).amax() < 1e-12);
    }

    #[test]
    fn penalty_without_weight_is_gradient_descent() {
        let s = setup(4, 2, true, 10);
        let cost = QuadraticCost::new(s.layout.clone(), vec![2.0; 4], s.optimum.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let y0 = DVector::from_fn(8, |i, _| i as f64 * 0.1);
        let mut state = NetworkState::with_y(y0.clone());
        penalty_step(&mut state, &cost, &s.proj, 0.1, 0.0, &mut rng).unwrap();
        let expected = &y0 - 0.1 * 2.0 * (&y0 - &s.optimum.y_o);
        assert!((&state.y - expected).amax() < 1e-14);
    }

    #[test]
    fn incremental_penalty_with_unit_weight_is_the_projection() {
        let s = setup(5, 2, true, 11);
        let cost = QuadraticCost::new(s.layout.clone(), vec![1.0, 2.0, 0.5, 3.0, 1.5], s.optimum.clone()).unwrap();
        let mu = 0.05;
        let y0 = DVector::from_fn(10, |i, _| (i as f64).cos());
        let mut split = NetworkState::with_y(y0.clone());
        let mut central = NetworkState::with_y(y0);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..5 {
            penalty_incremental_step(&mut split, &cost, &s.proj, mu, 1.0 / mu, &mut rng).unwrap();
            centralized_step(&mut central, &cost, &s.proj, mu, &mut rng).unwrap();
            assert!((&split.y - &central.y).amax() < 1e-10);
            assert!((&split.w - &central.w).amax() < 1e-10);
        }
    }

    #[test]
    fn exact_projectors_without_memory_match_centralized() {
        let s = setup(4, 3, true, 12);
        let cost = mse_cost(&s);
        let comb = combiners(&s);
        let mut diff = NetworkState::zeros(&s.layout);
        let mut central = NetworkState::zeros(&s.layout);
        let mut r1 = ChaCha20Rng::seed_from_u64(13);
        let mut r2 = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..20 {
            oblique_diffusion_step(&mut diff, &cost, &comb, 0.01, 1.0, &mut r1);
            centralized_step(&mut central, &cost, &s.proj, 0.01, &mut r2).unwrap();
        }
        assert!((&diff.w - &central.w).amax() < 1e-12);
        assert!((&diff.y - &central.y).amax() < 1e-12);
    }

    #[test]
    fn pure_smoothing_converges_to_signal() {
        let s = setup(6, 2, false, 14);
        let cost = mse_cost(&s);
        let comb = combiners(&s);
        let nu = 0.05;
        let mut state = NetworkState::with_y(s.optimum.y_o.clone());
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..3000 {
            // μ = 0: y stays at 𝒴^o since C fixes range(D).
            oblique_diffusion_step(&mut state, &cost, &comb, 0.0, nu, &mut rng);
        }
        assert!((&state.y - &s.optimum.y_o).amax() < 1e-9);
        let limit = smoothing_operator(s.a.matrix(), nu).unwrap() * &s.optimum.y_o;
        assert!((&state.w - &limit).amax() < 1e-8);
        // The signal part passes unchanged; only interference leaks, O(ν).
        let op = smoothing_operator(s.a.matrix(), nu).unwrap();
        assert!((&op * &s.optimum.w_o - &s.optimum.w_o).amax() < 1e-10);
    }

    #[test]
    fn psi_and_y_do_not_depend_on_the_w_branch() {
        let s = setup(6, 2, false, 15);
        let cost = mse_cost(&s);
        let comb = combiners(&s);
        let mut full = NetworkState::zeros(&s.layout);
        let mut partial = NetworkState::zeros(&s.layout);
        let mut r1 = ChaCha20Rng::seed_from_u64(16);
        let mut r2 = ChaCha20Rng::seed_from_u64(16);
        for _ in 0..200 {
            oblique_diffusion_step(&mut full, &cost, &comb, 0.01, 0.01, &mut r1);
            adapt(&mut partial, &cost, 0.01, &mut r2);
            combine_step(&mut partial, &comb.c, &mut |_, _| {});
            partial.iteration += 1;
        }
        assert_eq!(full.psi, partial.psi);
        assert_eq!(full.y, partial.y);
    }

    #[test]
    fn diffusion_reads_only_neighbors() {
        let s = setup(7, 2, false, 17);
        let cost = mse_cost(&s);
        let comb = combiners(&s);
        let mut state = NetworkState::zeros(&s.layout);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..3 {
            oblique_diffusion_step_observed(&mut state, &cost, &comb, 0.01, 0.01, &mut rng, &mut |k, l| {
                assert!(s.graph.is_neighbor(k, l), "node {k} read node {l}");
            });
        }
    }

    #[test]
    fn single_hop_applies_a_once() {
        let s = setup(6, 2, false, 18);
        let comb = combiners(&s);
        let y = DVector::from_fn(12, |i, _| (i as f64).sin());
        let mut state = NetworkState::with_y(y.clone());
        multi_hop_step(&mut state, &comb.a, 1).unwrap();
        assert!((&state.w - s.a.matrix() * &y).amax() < 1e-14);
        assert!(matches!(multi_hop_step(&mut state, &comb.a, 0), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn hops_with_exact_projector_are_idempotent() {
        let s = setup(4, 2, true, 19);
        let comb = combiners(&s);
        let y = DVector::from_fn(8, |i, _| i as f64);
        for hops in [1, 3, 7] {
            let mut state = NetworkState::with_y(y.clone());
            multi_hop_step(&mut state, &comb.a, hops).unwrap();
            assert!((&state.w - s.proj.e_wz() * &y).amax() < 1e-12);
        }
    }

    #[test]
    fn ten_hops_obey_power_bound() {
        let s = setup(6, 2, false, 20);
        let comb = combiners(&s);
        let y = DVector::from_fn(12, |i, _| (i as f64 * 0.7).cos());
        let mut state = NetworkState::with_y(y.clone());
        multi_hop_step(&mut state, &comb.a, 10).unwrap();
        let target = s.proj.e_wz() * &y;
        let bound = s.a.per_step_factor().powi(10) * (&y - &target).norm();
        assert!((&state.w - target).norm() <= bound + 1e-9);
    }

    #[test]
    fn uncertified_combiners_are_rejected() {
        let s = setup(4, 2, true, 21);
        // A designed for P_D is not a valid A.
        let err = DiffusionCombiners::new(&s.c, &s.c, &s.proj, &s.graph, s.layout.clone()).unwrap_err();
        assert!(matches!(err, Error::NotCertified(_)));
    }

    #[test]
    fn smoothing_operator_of_exact_projector() {
        let s = setup(4, 1, true, 22);
        let e = s.proj.e_wz();
        for nu in [1.0, 0.3, 0.01] {
            let op = smoothing_operator(e, nu).unwrap();
            assert!((op - e).amax() < 1e-10);
        }
    }

    #[test]
    fn smoothing_operator_without_memory_is_a() {
        let a = DMatrix::from_fn(4, 4, |i, j| 0.1 * (i + 2 * j) as f64);
        assert!((smoothing_operator(&a, 1.0).unwrap() - &a).amax() < 1e-15);
        assert!(matches!(smoothing_operator(&a, 0.0), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn smoothing_operator_error_scales_with_nu() {
        let s = setup(6, 1, false, 23);
        let e = s.proj.e_wz();
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&nu| spectral_norm(&(smoothing_operator(s.a.matrix(), nu).unwrap() - e)))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((5.0..=20.0).contains(&ratio), "ratio {ratio}, {errs:?}");
        }
    }

    #[test]
    fn singular_smoothing_operator() {
        let a = DMatrix::identity(3, 3) * 2.0;
        assert!(matches!(smoothing_operator(&a, 0.5), Err(Error::Singular(_))));
    }
}
