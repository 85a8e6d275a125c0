use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use oblique::combiner::{design_combiner, CombinationMatrix, SolverOptions, DEFAULT_EPS};
use oblique::denoise::{distributed_denoise, generate_static, CERTIFICATE_TOL};
use oblique::experiment::{curves_to_csv, execute, format_sig6, run_experiment, ExperimentConfig, Strategy};
use oblique::graph::{support_mask, Graph};
use oblique::matrix_io::{read_matrix, write_matrix};
use oblique::projector::{oblique_projector, ObliqueProjector, SubspaceModel};

#[derive(Parser)]
#[command(name = "oblique", version, about = "Distributed estimation under low-rank interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a graph-sparse combination matrix for a projector target.
    Design {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        basis_w: PathBuf,
        /// Interference basis; omit for a model without interference.
        #[arg(long)]
        basis_z: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = Target::Oblique)]
        target: Target,
        /// Matrix file; the report goes to `<out>.report`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the distributed de-noising recursion on generated data.
    Denoise {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        basis_w: PathBuf,
        #[arg(long)]
        basis_z: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        sigma_v: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// A matrix file, or `design` to design one on the spot.
        #[arg(long, default_value = "design")]
        combiner: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learning curve of a single strategy.
    Learn {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// centralized, diffusion, multihop:S or orthogonal-only.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full experiment: all configured strategies plus design report.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Oblique,
    Orthogonal,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Design {
            graph,
            basis_w,
            basis_z,
            eps,
            target,
            out,
        } => design(&graph, &basis_w, basis_z.as_deref(), eps, target, &out),
        Command::Denoise {
            graph,
            basis_w,
            basis_z,
            sigma_v,
            iters,
            seed,
            combiner,
            out,
        } => denoise(&graph, &basis_w, basis_z.as_deref(), sigma_v, iters, seed, &combiner, &out),
        Command::Learn {
            config,
            preset,
            strategy,
            out,
        } => learn(config.as_deref(), preset.as_deref(), strategy, &out),
        Command::Experiment { config, preset, out_dir } => {
            let cfg = load_config(config.as_deref(), preset.as_deref())?;
            let output = execute(&cfg, &out_dir)?;
            for c in &output.curves {
                println!(
                    "{:>16}  initial {:>9} dB  steady {:>9} dB",
                    c.label,
                    format_sig6(c.initial_db()),
                    format_sig6(c.steady_state_db(0.2))
                );
            }
            println!("wrote {}", out_dir.display());
            Ok(())
        }
    }
}

fn load_model(graph: &Path, basis_w: &Path, basis_z: Option<&Path>) -> Result<(Graph, SubspaceModel, ObliqueProjector)> {
    let graph = Graph::read(graph)?;
    let w = read_matrix(basis_w)?;
    let z = match basis_z {
        Some(p) => read_matrix(p)?,
        None => DMatrix::zeros(w.nrows(), 0),
    };
    if w.nrows() != graph.n_nodes() {
        bail!("basis has {} rows but the graph has {} nodes", w.nrows(), graph.n_nodes());
    }
    let model = SubspaceModel::new(w, z)?;
    let proj = oblique_projector(&model)?;
    Ok((graph, model, proj))
}

fn design(
    graph: &Path,
    basis_w: &Path,
    basis_z: Option<&Path>,
    eps: f64,
    target: Target,
    out: &Path,
) -> Result<()> {
    let (graph, _, proj) = load_model(graph, basis_w, basis_z)?;
    let e = match target {
        Target::Oblique => proj.e_wz(),
        Target::Orthogonal => proj.p_d(),
    };
    let comb = design_combiner(e, &support_mask(&graph), eps, &SolverOptions::default())?;
    write_matrix(out, comb.matrix())?;
    let report_path = sidecar(out, "report");
    std::fs::write(&report_path, comb.report().to_text())
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!("per-step factor {}", comb.per_step_factor());
    println!("wrote {} and {}", out.display(), report_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn denoise(
    graph: &Path,
    basis_w: &Path,
    basis_z: Option<&Path>,
    sigma_v: f64,
    iters: usize,
    seed: u64,
    combiner: &str,
    out: &Path,
) -> Result<()> {
    let (graph, model, proj) = load_model(graph, basis_w, basis_z)?;
    let mask = support_mask(&graph);
    let comb = if combiner == "design" {
        design_combiner(proj.e_wz(), &mask, DEFAULT_EPS, &SolverOptions::default())?
    } else {
        let a = read_matrix(combiner)?;
        CombinationMatrix::certify(a, proj.e_wz().clone(), mask, CERTIFICATE_TOL)?
    };
    let obs = generate_static(&model, sigma_v, seed)?;
    let traj = distributed_denoise(&obs, &comb, &graph, iters)?;
    let errors = traj.error_norms();
    let bound = traj.bound(comb.per_step_factor());
    let mut csv = String::from("iter,err_norm,bound\n");
    for (j, (e, b)) in errors.iter().zip(&bound).enumerate() {
        // Row j holds w_{j-1}; the first row is the measurement itself.
        writeln!(csv, "{},{},{}", j as i64 - 1, format_sig6(*e), format_sig6(*b)).unwrap();
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "per-step factor {}, final error {}",
        format_sig6(comb.per_step_factor()),
        format_sig6(*errors.last().unwrap())
    );
    Ok(())
}

fn learn(config: Option<&Path>, preset: Option<&str>, strategy: Strategy, out: &Path) -> Result<()> {
    let mut cfg = load_config(config, preset)?;
    cfg.strategies = vec![strategy];
    let curves = run_experiment(&cfg)?;
    let csv = curves_to_csv(&curves)?;
    let mut lines = csv.lines();
    lines.next();
    let mut text = String::from("iter,msd_db\n");
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("{strategy}: steady state {} dB", format_sig6(curves[0].steady_state_db(0.2)));
    Ok(())
}

/// Config file on top of a preset (desk when neither names one).
fn load_config(config: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::preset(preset.unwrap_or("desk"))?;
    let Some(path) = config else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sets_preset = text
        .lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .any(|(k, _)| k.trim() == "preset");
    if preset.is_some() && sets_preset {
        bail!("{} sets its own preset; drop --preset", path.display());
    }
    Ok(ExperimentConfig::parse_over(base, &text, &path.display().to_string())?)
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}
