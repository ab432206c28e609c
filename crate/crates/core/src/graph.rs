//! Weighted undirected communication graphs and their Laplacians.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Off-diagonal Frobenius tolerance for the Jacobi eigen-solver.
pub const JACOBI_TOL: f64 = 1e-12;

/// An undirected graph with strictly positive edge weights.
///
/// Nodes are stored zero-based; the scenario format uses one-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Build from zero-based edges `(i, j, a_ij)`.
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut seen = BTreeSet::new();
        for &(i, j, w) in &edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a node outside 1..={n_nodes}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", i + 1)));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has non-positive weight {w}",
                    i + 1,
                    j + 1
                )));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        let mut adj = vec![Vec::new(); n_nodes];
        for &(i, j, w) in &edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        Ok(Self {
            n_nodes,
            edges,
            adj,
        })
    }

    /// Build from one-based edges as written in scenario files.
    pub fn from_one_based(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut zero = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) uses index 0; node indices are 1-based"
                )));
            }
            zero.push((i - 1, j - 1, w));
        }
        Self::new(n_nodes, zero)
    }

    /// The five-node topology used by both bundled examples, unit weights.
    pub fn five_node() -> Self {
        let e = [(1, 2), (2, 3), (3, 5), (1, 4), (2, 4), (2, 5), (4, 5)];
        let edges: Vec<_> = e.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        Self::from_one_based(5, &edges).expect("static graph is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Neighbours of `i` with their weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[i].iter().copied()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(i, j, w) in &self.edges {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes;
        let mut l = DMatrix::zeros(n, n);
        for &(i, j, w) in &self.edges {
            l[(i, j)] -= w;
            l[(j, i)] -= w;
        }
        // diagonal as the negated off-diagonal row sum so L*1 vanishes exactly
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    s -= l[(i, j)];
                }
            }
            l[(i, i)] = s;
        }
        l
    }

    /// Connectivity by breadth-first traversal.
    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes;
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for (j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    /// Laplacian spectrum, ascending.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.laplacian(), JACOBI_TOL)
    }

    /// Second-smallest Laplacian eigenvalue (0 for a single node).
    pub fn algebraic_connectivity(&self) -> f64 {
        let spec = self.laplacian_spectrum();
        spec.get(1).copied().unwrap_or(0.0)
    }

    /// `R_N`: orthonormal basis of the complement of `1_N`.
    pub fn fiedler_complement(&self) -> DMatrix<f64> {
        fiedler_complement(self.n_nodes)
    }
}

/// N x (N-1) matrix with orthonormal columns orthogonal to `1_N`, from
/// Gram–Schmidt on `e_1..e_{N-1}` after projecting out `r_N`.
pub fn fiedler_complement(n: usize) -> DMatrix<f64> {
    let r = 1.0 / (n as f64).sqrt();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let mut v: Vec<f64> = (0..n)
            .map(|i| if i == k { 1.0 } else { 0.0 } - r * r)
            .collect();
        // modified Gram–Schmidt, run twice for orthogonality at roundoff level
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let d: f64 = v.iter().sum::<f64>() * r;
            v.iter_mut().for_each(|a| *a -= d * r);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        cols.push(v);
    }
    DMatrix::from_fn(n, n.saturating_sub(1), |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_laplacian() {
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(
            g.laplacian(),
            DMatrix::from_row_slice(2, 2, &[1., -1., -1., 1.])
        );
    }

    #[test]
    fn five_node_laplacian_is_degree_minus_adjacency() {
        let g = WeightedGraph::five_node();
        let mut expected = -g.adjacency();
        for (i, d) in [2.0, 4.0, 2.0, 3.0, 3.0].iter().enumerate() {
            expected[(i, i)] = *d;
        }
        assert_eq!(g.laplacian(), expected);
    }

    #[test]
    fn edgeless_graph() {
        let g = WeightedGraph::new(3, vec![]).unwrap();
        assert_eq!(g.laplacian(), DMatrix::zeros(3, 3));
        assert!(!g.is_connected());
        assert!(g.algebraic_connectivity().abs() < 1e-14);
    }

    #[test]
    fn connectivity_examples() {
        assert!(WeightedGraph::five_node().is_connected());
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(!g.is_connected());
        assert!(WeightedGraph::new(1, vec![]).unwrap().is_connected());
    }

    #[test]
    fn algebraic_connectivity_small_graphs() {
        let k2 = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        assert!((k2.algebraic_connectivity() - 2.0).abs() < 1e-12);
        let p3 = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!((p3.algebraic_connectivity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_edges() {
        assert!(WeightedGraph::new(2, vec![(0, 0, 1.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 1, 0.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(WeightedGraph::new(2, vec![(0, 2, 1.0)]).is_err());
        assert!(WeightedGraph::from_one_based(2, &[(0, 1, 1.0)]).is_err());
    }

    fn check_complement(n: usize) {
        let r = fiedler_complement(n);
        let id = DMatrix::<f64>::identity(n - 1, n - 1);
        assert!((r.transpose() * &r - id).amax() < 1e-12);
        let rn = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
        let proj = DMatrix::<f64>::identity(n, n) - &rn * rn.transpose();
        assert!((&r * r.transpose() - proj).amax() < 1e-12);
        assert!((r.transpose() * rn).amax() < 1e-12);
    }

    #[test]
    fn complement_two_nodes() {
        let r = fiedler_complement(2);
        let s = 1.0 / 2f64.sqrt();
        assert!((r[(0, 0)].abs() - s).abs() < 1e-15);
        assert!((r[(0, 0)] + r[(1, 0)]).abs() < 1e-15);
        check_complement(2);
    }

    #[test]
    fn complement_identities() {
        for n in [3, 5, 12] {
            check_complement(n);
        }
    }
}
