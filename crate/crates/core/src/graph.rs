//! Undirected communication graphs and the sparsity supports they induce.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// A fixed undirected graph on nodes `0..n`.
///
/// Every node is implicitly its own neighbor; `neighbors(k)` lists only the
/// other nodes, sorted. Connectivity is computed once at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    connected: bool,
}

impl Graph {
    /// Builds a graph from 0-indexed edges. Self-loops and duplicates are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("a graph needs at least one node".into()));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for (k, l) in edges {
            if k >= n || l >= n {
                return Err(Error::InvalidParam(format!("edge ({k}, {l}) out of range for {n} nodes")));
            }
            if k != l {
                sets[k].insert(l);
                sets[l].insert(k);
            }
        }
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let connected = is_connected(&neighbors);
        Ok(Self { neighbors, connected })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|k| ((k + 1)..n).map(move |l| (k, l)));
        Self::from_edges(n, edges).expect("valid complete graph")
    }

    pub fn ring(n: usize) -> Self {
        Self::from_edges(n, (0..n).map(|k| (k, (k + 1) % n))).expect("valid ring")
    }

    pub fn path(n: usize) -> Self {
        Self::from_edges(n, (1..n).map(|k| (k - 1, k))).expect("valid path")
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors of `k`, excluding `k` itself.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// `N_k ∪ {k}` in increasing order.
    pub fn closed_neighborhood(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.neighbors[k].len() + 1);
        let mut inserted = false;
        for &l in &self.neighbors[k] {
            if !inserted && l > k {
                out.push(k);
                inserted = true;
            }
            out.push(l);
        }
        if !inserted {
            out.push(k);
        }
        out
    }

    pub fn is_neighbor(&self, k: usize, l: usize) -> bool {
        k == l || self.neighbors[k].binary_search(&l).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Edges `(k, l)` with `k < l`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(k, ls)| ls.iter().filter(move |&&l| l > k).map(move |&l| (k, l)))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Text form: a `nodes N` header, then one 1-indexed `k l` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes {}", self.n_nodes()).unwrap();
        for (k, l) in self.edges() {
            writeln!(out, "{} {}", k + 1, l + 1).unwrap();
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match (n, toks.as_slice()) {
                (None, ["nodes", count]) => {
                    let count: usize = count
                        .parse()
                        .map_err(|e| Error::parse(source_name, line_no, format!("bad node count: {e}")))?;
                    n = Some(count);
                }
                (None, _) => return Err(Error::parse(source_name, line_no, "expected `nodes N` header")),
                (Some(count), [k, l]) => {
                    let parse_id = |t: &str| -> Result<usize> {
                        let id: usize = t
                            .parse()
                            .map_err(|e| Error::parse(source_name, line_no, format!("bad node id `{t}`: {e}")))?;
                        if id == 0 || id > count {
                            return Err(Error::parse(
                                source_name,
                                line_no,
                                format!("node id {id} outside 1..={count}"),
                            ));
                        }
                        Ok(id - 1)
                    };
                    edges.push((parse_id(k)?, parse_id(l)?));
                }
                (Some(_), _) => return Err(Error::parse(source_name, line_no, "expected `k l` edge")),
            }
        }
        let n = n.ok_or_else(|| Error::parse(source_name, 1, "missing `nodes N` header"))?;
        Self::from_edges(n, edges)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(k) = queue.pop_front() {
        for &l in &neighbors[k] {
            if !seen[l] {
                seen[l] = true;
                count += 1;
                queue.push_back(l);
            }
        }
    }
    count == n
}

/// Erdős–Rényi graph made connected by overlaying a random spanning tree.
///
/// Each pair is linked independently with probability `edge_prob`. If the
/// result is disconnected, the edges of a uniformly random labelled tree
/// (decoded from a random Prüfer sequence) are added.
pub fn random_connected_graph(n: usize, edge_prob: f64, seed: u64) -> Result<Graph> {
    random_connected_graph_with(n, edge_prob, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn random_connected_graph_with<R: Rng + ?Sized>(n: usize, edge_prob: f64, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 nodes, got {n}")));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidParam(format!("edge probability {edge_prob} not in (0, 1]")));
    }
    let mut edges = Vec::new();
    for k in 0..n {
        for l in (k + 1)..n {
            if rng.random::<f64>() < edge_prob {
                edges.push((k, l));
            }
        }
    }
    let g = Graph::from_edges(n, edges.iter().copied())?;
    if g.is_connected() {
        return Ok(g);
    }
    edges.extend(random_tree(n, rng));
    Graph::from_edges(n, edges)
}

/// Uniform random labelled tree on `n >= 2` nodes.
fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n == 2 {
        return vec![(0, 1)];
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &v in &prufer {
        degree[v] += 1;
    }
    let mut leaves: BTreeSet<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &v in &prufer {
        let leaf = *leaves.iter().next().expect("a tree always has a leaf");
        leaves.remove(&leaf);
        edges.push((leaf, v));
        degree[v] -= 1;
        if degree[v] == 1 {
            leaves.insert(v);
        }
    }
    let rest: Vec<usize> = leaves.into_iter().collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Which entries of an `n x n` combination matrix may be nonzero.
///
/// Two masks are equal when they allow the same entries, whatever node
/// partition they were expanded from.
#[derive(Debug, Clone)]
pub struct SupportMask {
    n: usize,
    allowed: Vec<bool>,
    partition: Option<BlockPartition>,
}

impl PartialEq for SupportMask {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.allowed == other.allowed
    }
}

impl Eq for SupportMask {}

/// Node-level origin of a block-expanded mask.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockPartition {
    base: Box<SupportMask>,
    dims: Vec<usize>,
}

impl SupportMask {
    /// Mask with every entry allowed.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            allowed: vec![true; n * n],
            partition: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.n + col]
    }

    /// Allowed `(row, col)` pairs in row-major order.
    pub fn allowed_entries(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.allowed(i, j))
            .collect()
    }

    pub fn count_allowed_in_row(&self, row: usize) -> usize {
        (0..self.n).filter(|&j| self.allowed(row, j)).count()
    }

    /// Number of nonzero entries of `m` that the mask forbids.
    pub fn violations(&self, m: &DMatrix<f64>) -> usize {
        if m.shape() != (self.n, self.n) {
            return usize::MAX;
        }
        let mut count = 0;
        for i in 0..self.n {
            for j in 0..self.n {
                if !self.allowed(i, j) && m[(i, j)] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Sets every forbidden entry of `m` to exactly zero.
    pub fn apply(&self, m: &mut DMatrix<f64>) {
        for i in 0..self.n {
            for j in 0..self.n {
                if !self.allowed(i, j) {
                    m[(i, j)] = 0.0;
                }
            }
        }
    }

    /// Node-level mask and block size when every node carries the same
    /// number of entries.
    pub fn uniform_blocks(&self) -> Option<(&SupportMask, usize)> {
        let part = self.partition.as_ref()?;
        let m = *part.dims.first()?;
        part.dims.iter().all(|&d| d == m).then_some((part.base.as_ref(), m))
    }
}

/// Mask allowing exactly the graph edges and the diagonal.
pub fn support_mask(g: &Graph) -> SupportMask {
    let n = g.n_nodes();
    let mut allowed = vec![false; n * n];
    for k in 0..n {
        allowed[k * n + k] = true;
        for &l in g.neighbors(k) {
            allowed[k * n + l] = true;
        }
    }
    SupportMask {
        n,
        allowed,
        partition: None,
    }
}

/// Expands a node-level mask to blocks of sizes `dims[k] x dims[l]`.
pub fn block_expand(mask: &SupportMask, dims: &[usize]) -> Result<SupportMask> {
    if dims.len() != mask.n {
        return Err(Error::DimensionMismatch(format!(
            "{} block sizes for a {}-node mask",
            dims.len(),
            mask.n
        )));
    }
    if let Some(k) = dims.iter().position(|&d| d == 0) {
        return Err(Error::DimensionMismatch(format!("block size of node {k} is zero")));
    }
    let owner: Vec<usize> = dims.iter().enumerate().flat_map(|(k, &d)| std::iter::repeat_n(k, d)).collect();
    let total = owner.len();
    let mut allowed = vec![false; total * total];
    for i in 0..total {
        for j in 0..total {
            allowed[i * total + j] = mask.allowed(owner[i], owner[j]);
        }
    }
    Ok(SupportMask {
        n: total,
        allowed,
        partition: Some(BlockPartition {
            base: Box::new(mask.clone()),
            dims: dims.to_vec(),
        }),
    })
}

/// `B ⊗ I_m`.
pub fn kron_expand(b: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    linalg::kron_identity(b, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn union_find_connected(n: usize, edges: &[(usize, usize)]) -> bool {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        let mut components = n;
        for &(a, b) in edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
        components == 1
    }

    #[test]
    fn two_nodes_full_probability() {
        let g = random_connected_graph(2, 1.0, 7).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn generation_is_deterministic_and_connected() {
        for seed in 0..20 {
            let a = random_connected_graph(50, 0.05, seed).unwrap();
            let b = random_connected_graph(50, 0.05, seed).unwrap();
            assert_eq!(a, b);
            assert!(a.is_connected());
            for k in 0..50 {
                for &l in a.neighbors(k) {
                    assert!(a.neighbors(l).contains(&k));
                }
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(random_connected_graph(1, 0.5, 0).is_err());
        assert!(random_connected_graph(5, 0.0, 0).is_err());
        assert!(random_connected_graph(5, 1.5, 0).is_err());
    }

    #[test]
    fn random_trees_span() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in 2..40 {
            let t = random_tree(n, &mut rng);
            assert_eq!(t.len(), n - 1);
            assert!(union_find_connected(n, &t));
        }
    }

    #[test]
    fn connectivity_matches_union_find() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(1..=30);
            let p = rng.random_range(0.0..0.3);
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|k| ((k + 1)..n).map(move |l| (k, l)))
                .filter(|_| rng.random::<f64>() < p)
                .collect();
            let g = Graph::from_edges(n, edges.iter().copied()).unwrap();
            assert_eq!(g.is_connected(), union_find_connected(n, &edges));
        }
    }

    #[test]
    fn masks_of_small_graphs() {
        let full = support_mask(&Graph::complete(4));
        assert_eq!(full.allowed_entries().len(), 16);

        let path = support_mask(&Graph::path(3));
        assert!(!path.allowed(0, 2) && !path.allowed(2, 0));
        assert_eq!(path.allowed_entries().len(), 7);

        let ring = support_mask(&Graph::ring(5));
        assert!((0..5).all(|k| ring.count_allowed_in_row(k) == 3));
    }

    #[test]
    fn block_expansion() {
        let path = support_mask(&Graph::path(3));
        let ones = block_expand(&path, &[1, 1, 1]).unwrap();
        assert_eq!(ones.allowed, path.allowed);

        let twos = block_expand(&path, &[2, 2, 2]).unwrap();
        assert_eq!(twos.dim(), 6);
        for i in 0..2 {
            for j in 4..6 {
                assert!(!twos.allowed(i, j) && !twos.allowed(j, i));
            }
        }
        assert!(twos.allowed(1, 2));
        let (base, m) = twos.uniform_blocks().unwrap();
        assert_eq!((base, m), (&path, 2));

        assert!(block_expand(&path, &[1, 2]).is_err());
        assert!(block_expand(&path, &[1, 0, 1]).is_err());
        assert!(block_expand(&path, &[1, 2, 1]).unwrap().uniform_blocks().is_none());
    }

    #[test]
    fn kron_expand_small_cases() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let k = kron_expand(&b, 2);
        let expected = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(k, expected);
        assert_eq!(kron_expand(&b, 1), b);
    }

    #[test]
    fn graph_text_round_trip() {
        let g = random_connected_graph(12, 0.3, 5).unwrap();
        let back = Graph::parse(&g.to_text(), "mem").unwrap();
        assert_eq!(g, back);
        assert!(Graph::parse("nodes 3\n1 4\n", "mem").is_err());
        assert!(Graph::parse("1 2\n", "mem").is_err());
    }

    #[test]
    fn closed_neighborhood_is_sorted() {
        let g = Graph::from_edges(5, [(2, 0), (2, 4)]).unwrap();
        assert_eq!(g.closed_neighborhood(2), vec![0, 2, 4]);
        assert_eq!(g.closed_neighborhood(4), vec![2, 4]);
        assert_eq!(g.closed_neighborhood(0), vec![0, 2]);
    }
}
