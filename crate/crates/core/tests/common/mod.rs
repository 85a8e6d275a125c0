//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::DMatrix;
use oblique::graph::Graph;
use oblique::projector::SubspaceModel;
use rand::Rng;
use rand_distr::StandardNormal;

/// A design instance solved offline by a convex solver.
pub struct Fixture {
    pub objective: f64,
    pub graph: Graph,
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

pub fn load_fixture(name: &str) -> Fixture {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let mut objective = f64::NAN;
    let mut nodes = 0;
    let mut edges = Vec::new();
    let mut mats = Vec::new();
    while let Some(line) = lines.next() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok[0] {
            "objective" => objective = tok[1].parse().unwrap(),
            "nodes" => nodes = tok[1].parse().unwrap(),
            "edge" => edges.push((tok[1].parse::<usize>().unwrap() - 1, tok[2].parse::<usize>().unwrap() - 1)),
            _ => {
                let rows: usize = tok[1].parse().unwrap();
                let cols: usize = tok[2].parse().unwrap();
                let data: Vec<f64> = (0..rows)
                    .flat_map(|_| {
                        lines
                            .next()
                            .unwrap()
                            .split_whitespace()
                            .map(|v| v.parse::<f64>().unwrap())
                            .collect::<Vec<_>>()
                    })
                    .collect();
                mats.push(DMatrix::from_row_slice(rows, cols, &data));
            }
        }
    }
    let a = mats.pop().unwrap();
    let z = mats.pop().unwrap();
    let w = mats.pop().unwrap();
    Fixture {
        objective,
        graph: Graph::from_edges(nodes, edges).unwrap(),
        w,
        z,
        a,
    }
}

pub fn gauss<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian bases of the given ranks. Gaussian pairs are in general position,
/// so construction fails only with negligible probability.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, p: usize, l: usize) -> SubspaceModel {
    SubspaceModel::new(gauss(rng, n, p), gauss(rng, n, l)).unwrap()
}

/// Spectral norm through the eigenvalues of `MᵀM`, independent of the
/// library's SVD path.
pub fn spectral_norm_oracle(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    gram.symmetric_eigenvalues().max().max(0.0).sqrt()
}
