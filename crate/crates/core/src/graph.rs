//! Undirected communication topologies, their Laplacians, and the spectral
//! split `L = U Γ Uᵀ` separating the consensus direction from disagreement.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    Ring,
    Path,
    Complete,
    Star,
    /// Erdős–Rényi with edge probability `p`, resampled until connected.
    Random { p: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    agents: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds a graph from unordered pairs; rejects self-loops, out-of-range
    /// indices and disconnected topologies.
    pub fn new(agents: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::arg("agents", "need at least one agent"));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a >= agents || b >= agents {
                return Err(Error::arg("edges", format!("edge ({a}, {b}) out of range for {agents} agents")));
            }
            if a == b {
                return Err(Error::arg("edges", format!("self-loop at agent {a}")));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); agents];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let g = Self {
            agents,
            edges,
            neighbors,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// Neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    fn is_connected(&self) -> bool {
        connected(self.agents, &self.neighbors)
    }
}

fn connected(agents: usize, neighbors: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; agents];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == agents
}

pub fn make_graph(kind: GraphKind, agents: usize) -> Result<CommGraph> {
    if agents < 2 {
        return Err(Error::arg("agents", format!("need at least 2 agents, got {agents}")));
    }
    let n = agents;
    match kind {
        GraphKind::Path => CommGraph::new(n, (0..n - 1).map(|i| (i, i + 1))),
        GraphKind::Ring => {
            if n == 2 {
                CommGraph::new(n, [(0, 1)])
            } else {
                CommGraph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
            }
        }
        GraphKind::Complete => CommGraph::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))),
        GraphKind::Star => CommGraph::new(n, (1..n).map(|i| (0, i))),
        GraphKind::Random { p, seed } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::arg("p", format!("edge probability must lie in (0, 1], got {p}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < p {
                            pairs.push((i, j));
                        }
                    }
                }
                match CommGraph::new(n, pairs) {
                    Ok(g) => return Ok(g),
                    Err(Error::Disconnected) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
    }
}

/// `L = D − Adj`, assembled in integers before conversion so row sums are
/// exactly zero.
pub fn laplacian(g: &CommGraph) -> Matrix {
    let n = g.agents();
    let mut ints = vec![0i64; n * n];
    for &(a, b) in g.edges() {
        ints[a + b * n] -= 1;
        ints[b + a * n] -= 1;
        ints[a + a * n] += 1;
        ints[b + b * n] += 1;
    }
    Matrix::from_iterator(n, n, ints.into_iter().map(|v| v as f64))
}

/// `L = U Γ Uᵀ` restricted to the positive part of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSplit {
    /// Positive Laplacian eigenvalues, ascending.
    pub gamma: Vec<f64>,
    /// `N × (N−1)` orthonormal basis of the disagreement subspace.
    pub u: Matrix,
}

impl SpectralSplit {
    pub fn gamma_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&Vector::from_column_slice(&self.gamma))
    }

    pub fn lambda_max(&self) -> f64 {
        self.gamma.last().copied().unwrap_or(0.0)
    }

    pub fn algebraic_connectivity(&self) -> f64 {
        self.gamma.first().copied().unwrap_or(0.0)
    }
}

const EIG_CLUSTER_TOL: f64 = 1e-9;

/// Spectral decomposition with a canonical basis: eigenvalues ascending, each
/// eigenspace orthonormalized by Gram–Schmidt on the projected canonical
/// vectors `e₁, e₂, …`, and every column's first nonzero entry positive.
pub fn spectral_split(l: &Matrix) -> Result<SpectralSplit> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::dim("spectral_split", "square Laplacian", format!("{}x{}", n, l.ncols())));
    }
    if n < 2 {
        return Err(Error::arg("laplacian", "need at least 2 agents"));
    }
    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let scale = values[n - 1].abs().max(1.0);
    if values[1] <= EIG_CLUSTER_TOL * scale {
        return Err(Error::Disconnected);
    }

    let mut gamma = Vec::with_capacity(n - 1);
    let mut u = Matrix::zeros(n, n - 1);
    let mut col = 0;
    let mut k = 1;
    while k < n {
        // Cluster (numerically) repeated eigenvalues.
        let mut end = k + 1;
        while end < n && (values[end] - values[k]).abs() <= EIG_CLUSTER_TOL * scale {
            end += 1;
        }
        let mult = end - k;
        let mean = values[k..end].iter().sum::<f64>() / mult as f64;
        let mut basis = Matrix::zeros(n, mult);
        for (c, &idx) in order[k..end].iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(idx));
        }
        let projector = &basis * basis.transpose();
        let canon = canonical_basis(&projector, mult);
        for c in 0..mult {
            u.set_column(col, &canon.column(c));
            gamma.push(mean);
            col += 1;
        }
        k = end;
    }
    Ok(SpectralSplit { gamma, u })
}

fn canonical_basis(projector: &Matrix, mult: usize) -> Matrix {
    let n = projector.nrows();
    let mut out: Vec<Vector> = Vec::with_capacity(mult);
    for seed in 0..n {
        if out.len() == mult {
            break;
        }
        let mut v: Vector = projector.column(seed).into_owned();
        for q in &out {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        // Second pass keeps orthogonality tight for nearly dependent seeds.
        for q in &out {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-6 {
            v /= norm;
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            out.push(v);
        }
    }
    Matrix::from_columns(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path3_laplacian() {
        let g = make_graph(GraphKind::Path, 3).unwrap();
        let l = laplacian(&g);
        let expected = Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, expected);
    }

    #[test]
    fn k2_laplacian_and_split() {
        let g = make_graph(GraphKind::Complete, 2).unwrap();
        let l = laplacian(&g);
        assert_eq!(l, Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let s = spectral_split(&l).unwrap();
        assert!((s.gamma[0] - 2.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.u[(0, 0)] - h).abs() < 1e-12);
        assert!((s.u[(1, 0)] + h).abs() < 1e-12);
    }

    #[test]
    fn edge_counts() {
        assert_eq!(make_graph(GraphKind::Ring, 4).unwrap().edges().len(), 4);
        assert_eq!(make_graph(GraphKind::Complete, 4).unwrap().edges().len(), 6);
        assert_eq!(make_graph(GraphKind::Star, 5).unwrap().edges().len(), 4);
        assert_eq!(make_graph(GraphKind::Path, 5).unwrap().edges().len(), 4);
    }

    #[test]
    fn too_few_agents_rejected() {
        assert!(make_graph(GraphKind::Ring, 1).is_err());
    }

    #[test]
    fn disconnected_rejected() {
        assert!(matches!(CommGraph::new(4, [(0, 1), (2, 3)]), Err(Error::Disconnected)));
        assert!(CommGraph::new(3, [(0, 0)]).is_err());
    }

    #[test]
    fn repeated_zero_eigenvalue_rejected() {
        let l = Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(spectral_split(&l), Err(Error::Disconnected)));
    }

    #[test]
    fn random_graph_is_seed_deterministic() {
        let a = make_graph(GraphKind::Random { p: 0.5, seed: 7 }, 8).unwrap();
        let b = make_graph(GraphKind::Random { p: 0.5, seed: 7 }, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.agents(), 8);
    }

    #[test]
    fn neighbors_sorted() {
        let g = make_graph(GraphKind::Ring, 5).unwrap();
        assert_eq!(g.neighbors(0), &[1, 4]);
        assert_eq!(g.neighbors(4), &[0, 3]);
    }
}
