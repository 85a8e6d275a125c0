//! Per-node storage and neighbor-local application of combination matrices.
//!
//! Network-wide vectors are stored flat, node after node. A [`LocalCombiner`]
//! keeps, for every node `k`, only the blocks `A_kl` with `l ∈ N_k ∪ {k}`,
//! and computes `out_k = Σ_l A_kl x_l` reading nothing else. Each node writes
//! only its own slot, so a round is order-independent.

use std::ops::Range;

use nalgebra::DVector;

use crate::combiner::CombinationMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Offsets of each node's sub-vector inside a flat network vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_dims(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for &d in dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        Self { offsets }
    }

    pub fn uniform(n_nodes: usize, block: usize) -> Self {
        Self::from_dims(&vec![block; n_nodes])
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total length `M = Σ M_k`.
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_dim(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.n_nodes()).map(|k| self.block_dim(k)).collect()
    }
}

#[derive(Debug, Clone)]
struct Link {
    from: usize,
    // Row-major block of size dim(k) x dim(from).
    block: Vec<f64>,
}

/// A certified combination matrix split into neighbor blocks.
#[derive(Debug, Clone)]
pub struct LocalCombiner {
    layout: BlockLayout,
    links: Vec<Vec<Link>>,
    per_step_factor: f64,
}

impl LocalCombiner {
    /// Splits `comb` along `graph` and `layout`.
    ///
    /// Fails with `NotCertified` if any entry outside the graph's blocks is
    /// nonzero.
    pub fn new(comb: &CombinationMatrix, graph: &Graph, layout: BlockLayout) -> Result<Self> {
        let a = comb.matrix();
        if layout.n_nodes() != graph.n_nodes() || layout.total() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "layout covers {} nodes / {} entries; graph has {} nodes, matrix is {}x{}",
                layout.n_nodes(),
                layout.total(),
                graph.n_nodes(),
                a.nrows(),
                a.ncols()
            )));
        }
        let n = graph.n_nodes();
        let mut links = Vec::with_capacity(n);
        for k in 0..n {
            let rows = layout.range(k);
            for l in 0..n {
                if graph.is_neighbor(k, l) {
                    continue;
                }
                let cols = layout.range(l);
                if rows.clone().any(|i| cols.clone().any(|j| a[(i, j)] != 0.0)) {
                    return Err(Error::NotCertified(format!(
                        "block ({k}, {l}) is nonzero but the nodes are not neighbors"
                    )));
                }
            }
            let node_links = graph
                .closed_neighborhood(k)
                .into_iter()
                .map(|l| {
                    let cols = layout.range(l);
                    let block = rows
                        .clone()
                        .flat_map(|i| cols.clone().map(move |j| (i, j)))
                        .map(|(i, j)| a[(i, j)])
                        .collect();
                    Link { from: l, block }
                })
                .collect();
            links.push(node_links);
        }
        Ok(Self {
            layout,
            links,
            per_step_factor: comb.per_step_factor(),
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// `‖A - E‖₂` of the underlying matrix.
    pub fn per_step_factor(&self) -> f64 {
        self.per_step_factor
    }

    /// One round of neighbor combination, `out = A x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_observed(x, &mut |_, _| {})
    }

    /// Like [`apply`](Self::apply), reporting every `(k, l)` read of node
    /// `l`'s state while computing node `k`'s output.
    pub fn apply_observed(&self, x: &DVector<f64>, observer: &mut impl FnMut(usize, usize)) -> DVector<f64> {
        let mut out = DVector::zeros(self.layout.total());
        self.apply_into(x, &mut out, observer);
        out
    }

    pub fn apply_into(&self, x: &DVector<f64>, out: &mut DVector<f64>, observer: &mut impl FnMut(usize, usize)) {
        assert_eq!(x.len(), self.layout.total(), "input length does not match the layout");
        assert_eq!(out.len(), self.layout.total(), "output length does not match the layout");
        for (k, node_links) in self.links.iter().enumerate() {
            let rows = self.layout.range(k);
            let out_k = &mut out.as_mut_slice()[rows];
            out_k.fill(0.0);
            for link in node_links {
                observer(k, link.from);
                let x_l = &x.as_slice()[self.layout.range(link.from)];
                let dl = x_l.len();
                if dl == 0 {
                    continue;
                }
                for (o, row) in out_k.iter_mut().zip(link.block.chunks_exact(dl)) {
                    *o += row.iter().zip(x_l).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
}
