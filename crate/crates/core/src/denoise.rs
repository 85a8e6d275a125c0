//! Static de-noising: measurements `y = W x_w + Z x_z + v`, the centralized
//! estimate `E_WZ y`, and the distributed recursion `w_i = A w_{i-1}`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::combiner::CombinationMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::spectral_norm;
use crate::network::{BlockLayout, LocalCombiner};
use crate::projector::{oblique_projector, SubspaceModel};

/// Residual tolerance a combiner must meet before it is run.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Distributions for [`generate_static_from`].
///
/// Coefficients are i.i.d. `N(x_mean, x_std²)`, noise i.i.d. `N(0, sigma_v²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPrior {
    pub x_mean: f64,
    pub x_std: f64,
    pub sigma_v: f64,
}

impl StaticPrior {
    /// Standard normal coefficients.
    pub fn standard(sigma_v: f64) -> Self {
        Self {
            x_mean: 0.0,
            x_std: 1.0,
            sigma_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_w: DVector<f64>,
    pub x_z: DVector<f64>,
    pub w_true: DVector<f64>,
    pub z_true: DVector<f64>,
    pub v: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticObservation {
    pub y: DVector<f64>,
    pub truth: GroundTruth,
}

impl StaticObservation {
    /// Assembles `y = W x_w + Z x_z + v`.
    pub fn from_parts(model: &SubspaceModel, x_w: DVector<f64>, x_z: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if x_w.len() != model.signal_rank() || x_z.len() != model.interference_rank() || v.len() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected coefficient lengths {}/{} and noise length {}, got {}/{}/{}",
                model.signal_rank(),
                model.interference_rank(),
                model.dim(),
                x_w.len(),
                x_z.len(),
                v.len()
            )));
        }
        let w_true = model.w() * &x_w;
        let z_true = model.z() * &x_z;
        let y = &w_true + &z_true + &v;
        Ok(Self {
            y,
            truth: GroundTruth {
                x_w,
                x_z,
                w_true,
                z_true,
                v,
            },
        })
    }
}

pub fn generate_static(model: &SubspaceModel, sigma_v: f64, seed: u64) -> Result<StaticObservation> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    generate_static_from(model, &StaticPrior::standard(sigma_v), &mut rng)
}

pub fn generate_static_from<R: Rng + ?Sized>(
    model: &SubspaceModel,
    prior: &StaticPrior,
    rng: &mut R,
) -> Result<StaticObservation> {
    if !(prior.sigma_v >= 0.0) || !(prior.x_std >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "standard deviations must be nonnegative (x_std = {}, sigma_v = {})",
            prior.x_std, prior.sigma_v
        )));
    }
    let mut gauss = |len: usize, mean: f64, std: f64| {
        DVector::from_fn(len, |_, _| mean + std * rng.sample::<f64, _>(StandardNormal))
    };
    let x_w = gauss(model.signal_rank(), prior.x_mean, prior.x_std);
    let x_z = gauss(model.interference_rank(), prior.x_mean, prior.x_std);
    let v = gauss(model.dim(), 0.0, prior.sigma_v);
    StaticObservation::from_parts(model, x_w, x_z, v)
}

/// `w_o = E_WZ y`.
pub fn centralized_denoise(obs: &StaticObservation, model: &SubspaceModel) -> Result<DVector<f64>> {
    let proj = oblique_projector(model)?;
    if obs.y.len() != proj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, model dimension is {}",
            obs.y.len(),
            proj.dim()
        )));
    }
    Ok(proj.e_wz() * &obs.y)
}

/// States `w_{-1} = y, w_0, w_1, ...` of the distributed recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseTrajectory {
    /// `iterates[0]` is `w_{-1}`.
    pub iterates: Vec<DVector<f64>>,
    pub target: DVector<f64>,
}

impl DenoiseTrajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("trajectory always holds w_{-1}")
    }

    /// Number of combination rounds performed.
    pub fn rounds(&self) -> usize {
        self.iterates.len() - 1
    }

    /// `‖w_o - w_i‖` for every stored iterate.
    pub fn error_norms(&self) -> Vec<f64> {
        self.iterates.iter().map(|w| (&self.target - w).norm()).collect()
    }

    /// `factor^j ‖y - w_o‖` for `j = 0..=rounds`.
    pub fn bound(&self, factor: f64) -> Vec<f64> {
        let e0 = (&self.target - &self.iterates[0]).norm();
        (0..self.iterates.len()).map(|j| factor.powi(j as i32) * e0).collect()
    }

    /// Largest `‖w̃_i - (A - E) w̃_{i-1}‖` over consecutive rounds.
    pub fn max_recursion_residual(&self, a: &CombinationMatrix) -> f64 {
        let diff = a.matrix() - a.target();
        self.iterates
            .windows(2)
            .map(|pair| {
                let prev = &self.target - &pair[0];
                let next = &self.target - &pair[1];
                (next - &diff * prev).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Runs `iters` rounds of `w_i = A w_{i-1}` from `w_{-1} = y`, each node
/// combining only its neighbors' states. The target is `w_o = E y` with `E`
/// the projector `a` was certified against.
pub fn distributed_denoise(
    obs: &StaticObservation,
    a: &CombinationMatrix,
    graph: &Graph,
    iters: usize,
) -> Result<DenoiseTrajectory> {
    let local = LocalCombiner::new(a, graph, BlockLayout::uniform(graph.n_nodes(), 1))?;
    distributed_denoise_observed(obs, a, &local, iters, &mut |_, _| {})
}

/// Like [`distributed_denoise`] over a prepared [`LocalCombiner`], reporting
/// every neighbor read to `observer`.
pub fn distributed_denoise_observed(
    obs: &StaticObservation,
    a: &CombinationMatrix,
    local: &LocalCombiner,
    iters: usize,
    observer: &mut impl FnMut(usize, usize),
) -> Result<DenoiseTrajectory> {
    require_certified(a)?;
    if obs.y.len() != a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, combiner is {}x{}",
            obs.y.len(),
            a.dim(),
            a.dim()
        )));
    }
    let target = a.target() * &obs.y;
    let mut iterates = Vec::with_capacity(iters + 1);
    iterates.push(obs.y.clone());
    for _ in 0..iters {
        let next = local.apply_observed(iterates.last().unwrap(), observer);
        iterates.push(next);
    }
    Ok(DenoiseTrajectory { iterates, target })
}

pub(crate) fn require_certified(a: &CombinationMatrix) -> Result<()> {
    let r = a.report();
    if r.r1 > CERTIFICATE_TOL || r.r2 > CERTIFICATE_TOL || !(r.rho < 1.0) || r.mask_violations > 0 {
        return Err(Error::NotCertified(format!(
            "combiner residuals ‖AE - E‖ = {:e}, ‖EA - E‖ = {:e}, ρ = {} (tolerance {:e})",
            r.r1, r.r2, r.rho, CERTIFICATE_TOL
        )));
    }
    Ok(())
}

/// `‖A - E‖₂` as a convenience for bounds.
pub fn contraction(a: &CombinationMatrix) -> f64 {
    spectral_norm(&(a.matrix() - a.target()))
}
