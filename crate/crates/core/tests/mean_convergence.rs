//! Steady-state bias of the adaptive strategies on a small MSE network.
//!
//! With linear MSE gradients and regressors independent of the state, the
//! mean of every iterate follows the same recursion run with true gradients.
//! A deterministic [`QuadraticCost`] with curvature `σ_u²` is therefore an
//! exact oracle for the Monte Carlo means.

use nalgebra::DVector;
use oblique::diffusion::{centralized_step, oblique_diffusion_step, NetworkState, QuadraticCost};
use oblique::experiment::{build_scenario, stream_rng, ExperimentConfig, Scenario};
use rayon::prelude::*;

const RUNS: usize = 100;
const ITERS: usize = 3000;
const TAIL: usize = 1000;

fn scenario() -> Scenario {
    let cfg = ExperimentConfig {
        n_nodes: 8,
        block_size: 2,
        edge_prob: 0.6,
        p_small: 1,
        l_small: 1,
        seed: 2,
        ..ExperimentConfig::desk()
    };
    build_scenario(&cfg).unwrap()
}

fn oracle(sc: &Scenario) -> QuadraticCost {
    QuadraticCost::new(sc.layout().clone(), sc.cost.sigma_u2().to_vec(), sc.optimum().clone()).unwrap()
}

struct Means {
    y: DVector<f64>,
    w: DVector<f64>,
    /// `sqrt(Σ_j se_j²)` of the means, from the spread of per-run means.
    y_noise: f64,
    w_noise: f64,
}

/// Mean of `y_i` and `w_i` over the last `TAIL` iterations of `RUNS` runs.
fn empirical_means(sc: &Scenario, mu: f64, nu: f64) -> Means {
    let dim = sc.layout().total();
    let per_run: Vec<(DVector<f64>, DVector<f64>)> = (0..RUNS)
        .into_par_iter()
        .map(|r| {
            let mut st = NetworkState::zeros(sc.layout());
            let mut rng = stream_rng(11, r as u64 + 1);
            let mut acc = (DVector::zeros(dim), DVector::zeros(dim));
            for i in 0..ITERS {
                oblique_diffusion_step(&mut st, &sc.cost, &sc.combiners, mu, nu, &mut rng);
                if i >= ITERS - TAIL {
                    acc.0 += &st.y;
                    acc.1 += &st.w;
                }
            }
            (acc.0 / TAIL as f64, acc.1 / TAIL as f64)
        })
        .collect();
    let runs = RUNS as f64;
    let mut y = DVector::zeros(dim);
    let mut w = DVector::zeros(dim);
    for (ry, rw) in &per_run {
        y += ry;
        w += rw;
    }
    y /= runs;
    w /= runs;
    let noise = |spread: f64| (spread / (runs - 1.0) / runs).sqrt();
    let y_noise = noise(per_run.iter().map(|(ry, _)| (ry - &y).norm_squared()).sum());
    let w_noise = noise(per_run.iter().map(|(_, rw)| (rw - &w).norm_squared()).sum());
    Means {
        y_noise,
        w_noise,
        y,
        w,
    }
}

fn deterministic_limit(sc: &Scenario, mu: f64, nu: f64) -> NetworkState {
    let quad = oracle(sc);
    let mut st = NetworkState::zeros(sc.layout());
    let mut rng = stream_rng(0, 0);
    for _ in 0..20_000 {
        oblique_diffusion_step(&mut st, &quad, &sc.combiners, mu, nu, &mut rng);
    }
    st
}

#[test]
fn mean_of_y_is_unbiased_and_w_bias_halves_with_the_step_sizes() {
    let sc = scenario();
    let y_o = &sc.optimum().y_o;
    let w_o = &sc.optimum().w_o;
    let mut w_bias = Vec::new();
    for mu in [0.01, 0.005] {
        let limit = deterministic_limit(&sc, mu, mu);
        // y_o is a fixed point of the mean recursion for every μ.
        assert!((&limit.y - y_o).norm() < 1e-10);
        let oracle_bias = (&limit.w - w_o).norm();

        let means = empirical_means(&sc, mu, mu);
        let emp_bias = (&means.w - w_o).norm();
        let off = (&means.w - &limit.w).norm();
        assert!(
            off < 3.0 * means.w_noise,
            "mu {mu}: mean w is {off:e} from the oracle limit, noise {:e}",
            means.w_noise
        );
        let y_bias = (&means.y - y_o).norm();
        assert!(y_bias < 3.0 * means.y_noise, "mu {mu}: y bias {y_bias:e}, noise {:e}", means.y_noise);
        w_bias.push((oracle_bias, emp_bias));
    }
    let oracle_ratio = w_bias[0].0 / w_bias[1].0;
    let emp_ratio = w_bias[0].1 / w_bias[1].1;
    assert!((1.5..=3.0).contains(&oracle_ratio), "oracle bias ratio {oracle_ratio}");
    assert!((1.5..=3.0).contains(&emp_ratio), "empirical bias ratio {emp_ratio}");
}

#[test]
fn centralized_mean_converges_to_the_signal() {
    let sc = scenario();
    let quad = oracle(&sc);
    let mut st = NetworkState::zeros(sc.layout());
    let mut rng = stream_rng(0, 0);
    for _ in 0..20_000 {
        centralized_step(&mut st, &quad, &sc.proj, 0.005, &mut rng).unwrap();
    }
    assert!((&st.w - &sc.optimum().w_o).norm() < 1e-10);
}
