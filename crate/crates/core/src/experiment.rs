//! Monte Carlo learning curves for the adaptive strategies on a random
//! network.
//!
//! A scenario (graph, subspaces, true models, data statistics, combiners) is
//! drawn once from the master seed. Each Monte Carlo run then draws a fresh
//! data stream and feeds the same stream to every strategy, so differences
//! between curves are not sampling noise between strategies.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::combiner::{design_combiner, CombinationMatrix, SolverOptions};
use crate::diffusion::{
    centralized_step, multi_hop_diffusion_step, oblique_diffusion_step, orthogonal_only_step, CostModel,
    DiffusionCombiners, MseNetworkCost, NetworkState, Optimum,
};
use crate::error::{Error, Result};
use crate::graph::{block_expand, random_connected_graph_with, support_mask, Graph};
use crate::network::BlockLayout;
use crate::projector::{oblique_projector, ObliqueProjector, SubspaceModel};

/// Identity of the generator recorded next to every result.
pub const RNG_NAME: &str = "ChaCha20 (rand_chacha 0.9), stream 0 scenario, stream r+1 run r";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Fusion-center projections `P_D` and `E_WZ`.
    Centralized,
    /// Neighbor combination with smoothing.
    Diffusion,
    /// Neighbor combination followed by `S` hops of `A`.
    MultiHop(usize),
    /// Neighbor combination only, `w = y`.
    OrthogonalOnly,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Centralized => write!(f, "centralized"),
            Strategy::Diffusion => write!(f, "diffusion"),
            Strategy::MultiHop(s) => write!(f, "multihop:{s}"),
            Strategy::OrthogonalOnly => write!(f, "orthogonal-only"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "centralized" => Ok(Strategy::Centralized),
            "diffusion" => Ok(Strategy::Diffusion),
            "orthogonal-only" => Ok(Strategy::OrthogonalOnly),
            other => {
                let hops = other
                    .strip_prefix("multihop:")
                    .and_then(|h| h.parse::<usize>().ok())
                    .filter(|&h| h >= 1)
                    .ok_or_else(|| Error::InvalidParam(format!("unknown strategy '{other}'")))?;
                Ok(Strategy::MultiHop(hops))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_nodes: usize,
    /// Uniform per-agent dimension `M_k`.
    pub block_size: usize,
    pub edge_prob: f64,
    /// Columns of `W` before the Kronecker expansion.
    pub p_small: usize,
    /// Columns of `Z` before the Kronecker expansion.
    pub l_small: usize,
    pub mu: f64,
    pub nu: f64,
    /// Step size of the centralized runs.
    pub mu_centralized: f64,
    pub eps: f64,
    pub runs: usize,
    pub iterations: usize,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    /// Mean of every entry of the true coefficient vectors.
    pub x_mean: f64,
    pub sigma_u2_min: f64,
    pub sigma_u2_max: f64,
    pub sigma_v2_min: f64,
    pub sigma_v2_max: f64,
    pub solver_max_iters: usize,
}

impl ExperimentConfig {
    /// Small network that runs in well under a minute.
    pub fn desk() -> Self {
        Self {
            n_nodes: 20,
            block_size: 3,
            edge_prob: 0.5,
            p_small: 2,
            l_small: 1,
            mu: 0.005,
            nu: 0.005,
            mu_centralized: 0.0018,
            eps: 0.001,
            runs: 50,
            iterations: 3000,
            seed: 1,
            strategies: vec![
                Strategy::Centralized,
                Strategy::Diffusion,
                Strategy::MultiHop(1),
                Strategy::MultiHop(5),
                Strategy::MultiHop(10),
                Strategy::OrthogonalOnly,
            ],
            x_mean: 0.1,
            sigma_u2_min: 1.0,
            sigma_u2_max: 4.0,
            sigma_v2_min: 0.1,
            sigma_v2_max: 0.4,
            solver_max_iters: 5000,
        }
    }

    /// Fifty agents with five-dimensional blocks and 200 runs.
    pub fn paper() -> Self {
        Self {
            n_nodes: 50,
            block_size: 5,
            edge_prob: 0.3,
            runs: 200,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidParam(format!("unknown preset '{other}' (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if self.n_nodes < 2 || self.block_size == 0 || self.p_small == 0 {
            return bad("n_nodes >= 2, block_size >= 1 and p_small >= 1 are required".into());
        }
        if self.p_small + self.l_small > self.n_nodes {
            return bad(format!(
                "p_small + l_small = {} exceeds n_nodes = {}",
                self.p_small + self.l_small,
                self.n_nodes
            ));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return bad(format!("edge_prob = {} not in (0, 1]", self.edge_prob));
        }
        if !(self.mu > 0.0) || !(self.mu_centralized > 0.0) {
            return bad("step sizes must be positive".into());
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu = {} not in (0, 1]", self.nu));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps = {} not in (0, 1)", self.eps));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies requested".into());
        }
        if !(self.sigma_u2_min > 0.0 && self.sigma_u2_min <= self.sigma_u2_max) {
            return bad("need 0 < sigma_u2_min <= sigma_u2_max".into());
        }
        if !(self.sigma_v2_min >= 0.0 && self.sigma_v2_min <= self.sigma_v2_max) {
            return bad("need 0 <= sigma_v2_min <= sigma_v2_max".into());
        }
        if self.solver_max_iters == 0 {
            return bad("solver_max_iters must be at least 1".into());
        }
        Ok(())
    }

    /// `key = value` lines that [`parse`](Self::parse) reads back exactly.
    pub fn to_text(&self) -> String {
        let strategies: Vec<String> = self.strategies.iter().map(|s| s.to_string()).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("n_nodes", self.n_nodes.to_string());
        kv("block_size", self.block_size.to_string());
        kv("edge_prob", self.edge_prob.to_string());
        kv("p_small", self.p_small.to_string());
        kv("l_small", self.l_small.to_string());
        kv("mu", self.mu.to_string());
        kv("nu", self.nu.to_string());
        kv("mu_centralized", self.mu_centralized.to_string());
        kv("eps", self.eps.to_string());
        kv("runs", self.runs.to_string());
        kv("iterations", self.iterations.to_string());
        kv("seed", self.seed.to_string());
        kv("strategies", strategies.join(","));
        kv("x_mean", self.x_mean.to_string());
        kv("sigma_u2_min", self.sigma_u2_min.to_string());
        kv("sigma_u2_max", self.sigma_u2_max.to_string());
        kv("sigma_v2_min", self.sigma_v2_min.to_string());
        kv("sigma_v2_max", self.sigma_v2_max.to_string());
        kv("solver_max_iters", self.solver_max_iters.to_string());
        out
    }

    /// Reads `key = value` lines on top of the desk preset. A `preset` key
    /// switches the base; it must come before any other key.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        Self::parse_over(Self::desk(), text, source_name)
    }

    /// Like [`parse`](Self::parse) with `base` in place of the desk preset.
    pub fn parse_over(base: Self, text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = base;
        let mut seen_other = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(source_name, line_no, format!("expected 'key = value', got '{line}'")))?;
            let perr = |e: &dyn fmt::Display| Error::parse(source_name, line_no, format!("{key}: {e}"));
            macro_rules! set {
                ($field:ident) => {
                    cfg.$field = value.parse().map_err(|e| perr(&e))?
                };
            }
            match key {
                "preset" => {
                    if seen_other {
                        return Err(Error::parse(source_name, line_no, "preset must precede other keys"));
                    }
                    cfg = Self::preset(value).map_err(|e| perr(&e))?;
                }
                "rng" => {}
                "n_nodes" => set!(n_nodes),
                "block_size" => set!(block_size),
                "edge_prob" => set!(edge_prob),
                "p_small" => set!(p_small),
                "l_small" => set!(l_small),
                "mu" => set!(mu),
                "nu" => set!(nu),
                "mu_centralized" => set!(mu_centralized),
                "eps" => set!(eps),
                "runs" => set!(runs),
                "iterations" => set!(iterations),
                "seed" => set!(seed),
                "x_mean" => set!(x_mean),
                "sigma_u2_min" => set!(sigma_u2_min),
                "sigma_u2_max" => set!(sigma_u2_max),
                "sigma_v2_min" => set!(sigma_v2_min),
                "sigma_v2_max" => set!(sigma_v2_max),
                "solver_max_iters" => set!(solver_max_iters),
                "strategies" => {
                    cfg.strategies = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()
                        .map_err(|e| perr(&e))?
                }
                other => return Err(Error::parse(source_name, line_no, format!("unknown key '{other}'"))),
            }
            if key != "preset" {
                seen_other = true;
            }
        }
        cfg.validate().map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Full config plus generator identity, as written to `config.echo.txt`.
    pub fn echo(&self) -> String {
        format!("{}rng = {RNG_NAME}\n", self.to_text())
    }

    /// FNV-1a hash of [`to_text`](Self::to_text).
    pub fn fingerprint(&self) -> u64 {
        self.to_text().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// Generator for the scenario (`stream = 0`) or Monte Carlo run `r`
/// (`stream = r + 1`).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything fixed across Monte Carlo runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: Graph,
    /// Node-level model, `N x P_small` and `N x L_small`.
    pub small_model: SubspaceModel,
    /// Block model `W ⊗ I`, `Z ⊗ I`.
    pub model: SubspaceModel,
    pub proj: ObliqueProjector,
    pub cost: MseNetworkCost,
    /// Designed against `E_WZ`.
    pub a: CombinationMatrix,
    /// Designed against `P_D`.
    pub c: CombinationMatrix,
    pub combiners: DiffusionCombiners,
}

impl Scenario {
    pub fn layout(&self) -> &BlockLayout {
        self.cost.layout()
    }

    pub fn optimum(&self) -> &Optimum {
        self.cost.optimum()
    }

    /// `key = value` design diagnostics for both combiners.
    pub fn design_report(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes = {}", self.graph.n_nodes()).unwrap();
        writeln!(out, "edges = {}", self.graph.n_edges()).unwrap();
        writeln!(out, "block_dim = {}", self.layout().total()).unwrap();
        writeln!(out, "signal_dim = {}", self.model.signal_rank()).unwrap();
        writeln!(out, "interference_dim = {}", self.model.interference_rank()).unwrap();
        writeln!(out, "\n[A]").unwrap();
        out.push_str(&self.a.report().to_text());
        writeln!(out, "\n[C]").unwrap();
        out.push_str(&self.c.report().to_text());
        out
    }
}

/// Draws the graph, subspaces, true models and statistics, and designs `A`
/// and `C` on the node graph before expanding them by `⊗ I_{M_k}`.
pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let n = cfg.n_nodes;
    let m = cfg.block_size;
    let graph = random_connected_graph_with(n, cfg.edge_prob, &mut rng)?;
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = gauss(n, cfg.p_small);
    let z = gauss(n, cfg.l_small);
    let small_model = SubspaceModel::new(w, z)?;
    let model = small_model.kron(m)?;
    let proj = oblique_projector(&model)?;

    let x_w = DVector::from_fn(model.signal_rank(), |_, _| cfg.x_mean + rng.sample::<f64, _>(StandardNormal));
    let x_z = DVector::from_fn(model.interference_rank(), |_, _| {
        cfg.x_mean + rng.sample::<f64, _>(StandardNormal)
    });
    let sigma_u2: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.sigma_u2_min..=cfg.sigma_u2_max)).collect();
    let sigma_v2: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.sigma_v2_min..=cfg.sigma_v2_max)).collect();
    let optimum = Optimum::new(model.w() * x_w, model.z() * x_z)?;
    let layout = BlockLayout::uniform(n, m);
    let cost = MseNetworkCost::new(layout.clone(), sigma_u2, sigma_v2, optimum)?;

    let mask = block_expand(&support_mask(&graph), &vec![m; n])?;
    let opts = SolverOptions {
        max_iters: cfg.solver_max_iters,
        ..SolverOptions::default()
    };
    let a = design_combiner(proj.e_wz(), &mask, cfg.eps, &opts)?;
    let c = design_combiner(proj.p_d(), &mask, cfg.eps, &opts)?;
    let combiners = DiffusionCombiners::new(&c, &a, &proj, &graph, layout)?;
    Ok(Scenario {
        graph,
        small_model,
        model,
        proj,
        cost,
        a,
        c,
        combiners,
    })
}

/// Network MSD learning curve in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdCurve {
    pub label: String,
    /// `msd_db[0]` is the initial state `w_{-1} = 0`; `msd_db[i]` follows
    /// iteration `i`.
    pub msd_db: Vec<f64>,
    pub fingerprint: u64,
}

impl MsdCurve {
    pub fn initial_db(&self) -> f64 {
        self.msd_db[0]
    }

    /// `10 log10` of the mean linear MSD over the last `fraction` of points.
    pub fn steady_state_db(&self, fraction: f64) -> f64 {
        let len = self.msd_db.len();
        let count = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
        let mean = self.msd_db[len - count..].iter().map(|d| 10f64.powf(d / 10.0)).sum::<f64>() / count as f64;
        10.0 * mean.log10()
    }

    /// Mean linear MSD (in dB) over `range` of point indices.
    pub fn window_db(&self, range: std::ops::Range<usize>) -> f64 {
        let count = range.len() as f64;
        let mean = self.msd_db[range].iter().map(|d| 10f64.powf(d / 10.0)).sum::<f64>() / count;
        10.0 * mean.log10()
    }
}

fn step(
    strategy: Strategy,
    state: &mut NetworkState,
    scenario: &Scenario,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let cost = &scenario.cost;
    let comb = &scenario.combiners;
    match strategy {
        Strategy::Centralized => centralized_step(state, cost, &scenario.proj, cfg.mu_centralized, rng)?,
        Strategy::Diffusion => oblique_diffusion_step(state, cost, comb, cfg.mu, cfg.nu, rng),
        Strategy::MultiHop(s) => multi_hop_diffusion_step(state, cost, comb, cfg.mu, s, rng)?,
        Strategy::OrthogonalOnly => orthogonal_only_step(state, cost, comb, cfg.mu, rng),
    }
    Ok(())
}

/// Squared deviations `‖W^o - w_i‖²` of one run, per strategy.
fn single_run(scenario: &Scenario, cfg: &ExperimentConfig, run: usize) -> Result<Vec<Vec<f64>>> {
    let w_o = &scenario.optimum().w_o;
    cfg.strategies
        .iter()
        .map(|&strategy| {
            let mut rng = stream_rng(cfg.seed, run as u64 + 1);
            let mut state = NetworkState::zeros(scenario.layout());
            let mut sq = Vec::with_capacity(cfg.iterations + 1);
            sq.push((w_o - &state.w).norm_squared());
            for _ in 0..cfg.iterations {
                step(strategy, &mut state, scenario, cfg, &mut rng)?;
                sq.push((w_o - &state.w).norm_squared());
            }
            Ok(sq)
        })
        .collect()
}

/// Runs every strategy `cfg.runs` times on `scenario` and averages.
///
/// Runs execute in parallel; the sum over runs is taken in run order, so the
/// result does not depend on the thread count.
pub fn run_on(scenario: &Scenario, cfg: &ExperimentConfig) -> Result<Vec<MsdCurve>> {
    cfg.validate()?;
    let per_run: Vec<Vec<Vec<f64>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| single_run(scenario, cfg, r))
        .collect::<Result<_>>()?;
    let norm = (cfg.runs * cfg.n_nodes) as f64;
    let fingerprint = cfg.fingerprint();
    Ok(cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(s, strategy)| {
            let mut acc = vec![0.0; cfg.iterations + 1];
            for run in &per_run {
                for (a, v) in acc.iter_mut().zip(&run[s]) {
                    *a += v;
                }
            }
            MsdCurve {
                label: strategy.to_string(),
                msd_db: acc.iter().map(|a| 10.0 * (a / norm).log10()).collect(),
                fingerprint,
            }
        })
        .collect())
}

/// Builds the scenario from `cfg` and runs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MsdCurve>> {
    let scenario = build_scenario(cfg)?;
    run_on(&scenario, cfg)
}

/// `%g`-style rendering with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').unwrap();
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

/// CSV with header `iter,<label>...` and one row per point.
pub fn curves_to_csv(curves: &[MsdCurve]) -> Result<String> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidParam("no curves to write".into()))?;
    let len = first.msd_db.len();
    if curves.iter().any(|c| c.msd_db.len() != len) {
        return Err(Error::DimensionMismatch("curves have different lengths".into()));
    }
    let mut out = String::from("iter");
    for c in curves {
        out.push(',');
        out.push_str(&c.label);
    }
    out.push('\n');
    for i in 0..len {
        write!(out, "{i}").unwrap();
        for c in curves {
            write!(out, ",{}", format_sig6(c.msd_db[i])).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes `curves.csv` to `path` and the config echo next to it as
/// `config.echo.txt`.
pub fn write_curves(curves: &[MsdCurve], cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv = curves_to_csv(curves)?;
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    let sidecar = path.with_file_name("config.echo.txt");
    std::fs::write(&sidecar, cfg.echo()).map_err(|e| Error::io(&sidecar, e))
}

/// Reads a curves CSV back as `(label, values)` pairs.
pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(&name, 1, "empty file"))?;
    let mut cols: Vec<(String, Vec<f64>)> = header.split(',').skip(1).map(|l| (l.to_string(), Vec::new())).collect();
    for (idx, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() + 1 {
            return Err(Error::parse(&name, idx + 2, format!("expected {} fields", cols.len() + 1)));
        }
        for (col, f) in cols.iter_mut().zip(&fields[1..]) {
            let v = f
                .parse()
                .map_err(|e| Error::parse(&name, idx + 2, format!("bad number '{f}': {e}")))?;
            col.1.push(v);
        }
    }
    Ok(cols)
}

/// Files produced by [`execute`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub curves: Vec<MsdCurve>,
    pub design_report: String,
}

/// Builds, runs, and writes `curves.csv`, `config.echo.txt` and
/// `design_report.txt` into `out_dir`.
pub fn execute(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentOutput> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scenario = build_scenario(cfg)?;
    let report = scenario.design_report();
    let report_path = out_dir.join("design_report.txt");
    std::fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    let curves = run_on(&scenario, cfg)?;
    write_curves(&curves, cfg, out_dir.join("curves.csv"))?;
    Ok(ExperimentOutput {
        curves,
        design_report: report,
    })
}
