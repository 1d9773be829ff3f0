//! Weighted undirected graphs and their Laplacian-derived matrices.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative eigenvalue cutoff for the Laplacian pseudo-inverse.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Undirected graph on `n` nodes with strictly positive edge weights.
///
/// Edges are stored with `i < j`, sorted lexicographically, without
/// duplicates. The implied weight matrix is symmetric with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    /// Validates and normalizes an edge list. Endpoints given as `(j, i)` are
    /// reordered; self-loops, duplicates and non-positive weights are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("graph needs at least one node".into()));
        }
        let mut out: Vec<Edge> = Vec::new();
        for e in edges {
            let (i, j) = if e.i <= e.j { (e.i, e.j) } else { (e.j, e.i) };
            if j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) references node outside [0, {n})",
                    e.i, e.j
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            if !(e.w > 0.0) || !e.w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) has non-positive or non-finite weight {}",
                    e.w
                )));
            }
            out.push(Edge { i, j, w: e.w });
        }
        out.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        for pair in out.windows(2) {
            if pair[0].i == pair[1].i && pair[0].j == pair[1].j {
                return Err(Error::InvalidInput(format!(
                    "duplicate edge ({}, {})",
                    pair[0].i, pair[0].j
                )));
            }
        }
        Ok(Self { n, edges: out })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Returns a copy of the graph with every weight replaced by `f(edge)`.
    pub fn reweighted<F: FnMut(&Edge) -> f64>(&self, mut f: F) -> Result<Self> {
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge { i: e.i, j: e.j, w: f(e) })
            .collect();
        Self::new(self.n, edges)
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            w[(e.i, e.j)] = e.w;
            w[(e.j, e.i)] = e.w;
        }
        w
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for e in &self.edges {
            d[e.i] += 1;
            d[e.j] += 1;
        }
        d
    }

    /// `L = D - W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.i, e.j)] -= e.w;
            l[(e.j, e.i)] -= e.w;
            l[(e.i, e.i)] += e.w;
            l[(e.j, e.j)] += e.w;
        }
        l
    }

    /// Incidence matrix `M` (`|E| x n`) with `M'M = L`; row `k` holds
    /// `sqrt(w)` at `i` and `-sqrt(w)` at `j` for the `k`-th edge.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.edges.len(), self.n);
        for (k, e) in self.edges.iter().enumerate() {
            let s = e.w.sqrt();
            m[(k, e.i)] = s;
            m[(k, e.j)] = -s;
        }
        m
    }

    /// Component label for every node (labels are 0-based, in order of the
    /// lowest node index of each component).
    pub fn component_labels(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut labels = vec![usize::MAX; self.n];
        let mut next = 0;
        for v in 0..self.n {
            let root = find(&mut parent, v);
            if labels[root] == usize::MAX {
                labels[root] = next;
                next += 1;
            }
            labels[v] = labels[root];
        }
        labels
    }

    pub fn n_components(&self) -> usize {
        self.component_labels().into_iter().collect::<BTreeSet<_>>().len()
    }

    pub fn is_connected(&self) -> bool {
        self.n_components() == 1
    }

    pub fn require_connected(&self) -> Result<()> {
        match self.n_components() {
            1 => Ok(()),
            components => Err(Error::Disconnected { components }),
        }
    }
}

fn check_coords(coords: &[Vec<f64>]) -> Result<usize> {
    let d = coords.first().map(Vec::len).unwrap_or(0);
    for (k, c) in coords.iter().enumerate() {
        if c.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "point {k} has {} coordinates, expected {d}",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("point {k} has a non-finite coordinate")));
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized K-nearest-neighbour graph with unit weights.
///
/// `(i, j)` is an edge when `j` is among the `k` closest points to `i` or the
/// other way round. Equidistant candidates are taken in index order.
pub fn build_knn_graph(coords: &[Vec<f64>], k: usize) -> Result<WeightedGraph> {
    check_coords(coords)?;
    let n = coords.len();
    if k == 0 {
        return Err(Error::InvalidInput("K must be positive".into()));
    }
    if n < k + 1 {
        return Err(Error::InvalidInput(format!(
            "kNN graph with K = {k} needs at least {} points, got {n}",
            k + 1
        )));
    }
    let mut pairs = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&coords[i], &coords[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    WeightedGraph::new(n, pairs.into_iter().map(|(i, j)| Edge { i, j, w: 1.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
    Box,
}

/// Distance-kernel graph. The Gaussian kernel yields a complete graph; the box
/// kernel keeps pairs within distance `sigma`.
pub fn build_kernel_graph(coords: &[Vec<f64>], kernel: Kernel, sigma: f64) -> Result<WeightedGraph> {
    check_coords(coords)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let n = coords.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sq_dist(&coords[i], &coords[j]);
            let w = match kernel {
                Kernel::Gaussian => (-d2 / (2.0 * sigma * sigma)).exp(),
                Kernel::Box => {
                    if d2.sqrt() <= sigma {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if w > 0.0 {
                edges.push(Edge { i, j, w });
            }
        }
    }
    WeightedGraph::new(n, edges)
}

/// The Laplacian of a graph together with the derived matrices used by the
/// model: pseudo-inverse, both symmetric square roots and the incidence matrix.
#[derive(Debug, Clone)]
pub struct LaplacianBundle {
    pub laplacian: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub pinv_sqrt: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub rank: usize,
    pub incidence: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl LaplacianBundle {
    /// Eigenvalues at or below `tol * lambda_max` are treated as zero.
    pub fn new(g: &WeightedGraph, tol: f64) -> Self {
        let laplacian = g.laplacian();
        let (values, vectors) = linalg::sorted_eigen(&laplacian);
        let cut = tol * values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let keep = |v: f64| v > cut;
        let rank = values.iter().filter(|&&v| keep(v)).count();
        let pinv = linalg::spectral_map(&values, &vectors, |v| if keep(v) { 1.0 / v } else { 0.0 });
        let pinv_sqrt =
            linalg::spectral_map(&values, &vectors, |v| if keep(v) { 1.0 / v.sqrt() } else { 0.0 });
        let sqrt = linalg::spectral_map(&values, &vectors, |v| if keep(v) { v.sqrt() } else { 0.0 });
        Self {
            laplacian,
            pinv,
            pinv_sqrt,
            sqrt,
            rank,
            incidence: g.incidence(),
            eigenvalues: values,
        }
    }

    pub fn with_default_tol(g: &WeightedGraph) -> Self {
        Self::new(g, DEFAULT_PINV_TOL)
    }

    pub fn n_nodes(&self) -> usize {
        self.laplacian.nrows()
    }

    /// Laplacian spectrum, ascending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `w_ij (l+_ii + l+_jj - 2 l+_ij)`, the scale of the edge statistic.
    pub fn var_factor(&self, e: &Edge) -> f64 {
        let p = &self.pinv;
        e.w * (p[(e.i, e.i)] + p[(e.j, e.j)] - 2.0 * p[(e.i, e.j)])
    }

    /// `l+_ii + l+_jj - 2 l+_ij`, the effective resistance between two nodes.
    pub fn effective_resistance(&self, i: usize, j: usize) -> f64 {
        let p = &self.pinv;
        p[(i, i)] + p[(j, j)] - 2.0 * p[(i, j)]
    }
}

/// Evaluates both sides of `y'Ly = 1/2 sum_ij (y_i - y_j)^2 w_ij`: the
/// quadratic form through the assembled Laplacian, and the edge sum.
pub fn quadratic_form_identity_check(g: &WeightedGraph, y: &[f64]) -> Result<(f64, f64)> {
    if y.len() != g.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "vector has length {}, graph has {} nodes",
            y.len(),
            g.n_nodes()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("vector has non-finite entries".into()));
    }
    let form = linalg::quad_form(&g.laplacian(), y);
    let edge_sum = g
        .edges()
        .iter()
        .map(|e| (y[e.i] - y[e.j]).powi(2) * e.w)
        .sum();
    Ok((form, edge_sum))
}
