use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, Edge, LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::model::{sample_matrix_normal_rng, standard_normal_matrix, Dataset, ModelParams};

/// Attempts per graph before a replication is given up as disconnected.
pub const MAX_GRAPH_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphType {
    Knn,
    Erdos,
    Scalefree,
}

impl GraphType {
    pub const ALL: [GraphType; 3] = [GraphType::Knn, GraphType::Erdos, GraphType::Scalefree];

    pub fn name(self) -> &'static str {
        match self {
            GraphType::Knn => "knn",
            GraphType::Erdos => "erdos",
            GraphType::Scalefree => "scalefree",
        }
    }
}

impl std::str::FromStr for GraphType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(GraphType::Knn),
            "erdos" => Ok(GraphType::Erdos),
            "scalefree" => Ok(GraphType::Scalefree),
            _ => Err(Error::Parse(format!("unknown graph type '{s}' (knn, erdos, scalefree)"))),
        }
    }
}

/// `U diag(s) U'` with `U` the eigenvectors of `H'H` for a standard-normal
/// `H` and `s_k ~ U[1, 50]`.
pub fn gen_covariance<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let h = standard_normal_matrix(p, p, rng);
    let (_, u) = linalg::sorted_eigen(&(h.transpose() * &h));
    let s: Vec<f64> = (0..p).map(|_| rng.random_range(1.0..=50.0)).collect();
    linalg::spectral_map(&nalgebra::DVector::from_vec(s), &u, |v| v)
}

fn erdos_edges<R: Rng + ?Sized>(n: usize, prob: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < prob {
                out.push((i, j));
            }
        }
    }
    out
}

/// Preferential attachment grown from a single node: node 1 links to node
/// 0, every later node links to two distinct earlier nodes chosen with
/// probability proportional to degree. Gives `2 (n - 2) + 1` edges.
fn barabasi_albert_edges<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    // every edge endpoint once: sampling from it is degree-proportional
    let mut ends: Vec<usize> = vec![0, 1];
    out.push((0, 1));
    for v in 2..n {
        let first = *ends.choose(rng).expect("nonempty");
        let mut second = first;
        while second == first {
            second = *ends.choose(rng).expect("nonempty");
        }
        for t in [first, second] {
            out.push((t, v));
            ends.push(t);
            ends.push(v);
        }
    }
    out
}

fn unweighted<R: Rng + ?Sized>(kind: GraphType, n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    Ok(match kind {
        GraphType::Knn => {
            let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
            build_knn_graph(&pts, 5)?.edges().iter().map(|e| (e.i, e.j)).collect()
        }
        GraphType::Erdos => erdos_edges(n, 0.05, rng),
        GraphType::Scalefree => barabasi_albert_edges(n, rng),
    })
}

/// Random graph of the given type with weights from the open interval
/// `(0, 1)`, redrawn until connected.
pub fn gen_graph<R: Rng + ?Sized>(kind: GraphType, n: usize, rng: &mut R) -> Result<WeightedGraph> {
    if n < 2 {
        return Err(Error::InvalidInput("a graph needs at least two nodes".into()));
    }
    let mut components = 0;
    for _ in 0..MAX_GRAPH_ATTEMPTS {
        let pairs = unweighted(kind, n, rng)?;
        let g = WeightedGraph::new(
            n,
            pairs.into_iter().map(|(i, j)| Edge { i, j, w: rng.sample(Open01) }),
        )?;
        if g.is_connected() {
            return Ok(g);
        }
        components = g.n_components();
    }
    Err(Error::Disconnected { components })
}

/// Covariates `U[-1, 1]`, coefficients `N(0, 1)`, and a response drawn from
/// the model with the given `Sigma_V`.
pub fn gen_dataset<R: Rng + ?Sized>(
    bundle: &LaplacianBundle,
    sigma_v: &DMatrix<f64>,
    q: usize,
    rng: &mut R,
) -> Result<(Dataset, ModelParams)> {
    let n = bundle.n_nodes();
    let p = sigma_v.nrows();
    let z = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..=1.0));
    let theta = standard_normal_matrix(q, p, rng);
    let params = ModelParams::new(theta, sigma_v.clone())?;
    let data = sample_matrix_normal_rng(&params, bundle, &z, rng)?;
    Ok((data, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub data: Dataset,
    /// Nodes whose rows were swapped, ascending.
    pub nodes: Vec<usize>,
    /// Indices into the edge list of edges touching a corrupted node.
    pub edges: Vec<usize>,
    /// Number of swapped pairs.
    pub k: usize,
}

fn incident_edges(graph: &WeightedGraph, marked: &[bool]) -> Vec<usize> {
    graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| marked[e.i] || marked[e.j])
        .map(|(k, _)| k)
        .collect()
}

/// Swaps the `k` rows of `X` with the lowest projection on the leading
/// eigenvector of `Sigma_V` with the `k` highest (lowest with highest,
/// second lowest with second highest, ...), for the largest `k` that keeps
/// the edges touching a swapped node within `zeta |E|`. Covariate rows of
/// the swapped nodes are replaced by `U[-10, 10]` draws.
pub fn corrupt<R: Rng + ?Sized>(
    data: &Dataset,
    sigma_v: &DMatrix<f64>,
    graph: &WeightedGraph,
    zeta: f64,
    rng: &mut R,
) -> Result<Corruption> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::InvalidInput(format!("zeta must lie in [0, 1), got {zeta}")));
    }
    let n = data.n();
    let (_, vecs) = linalg::sorted_eigen(sigma_v);
    let r = vecs.column(vecs.ncols() - 1);
    let proj: Vec<f64> = (0..n).map(|i| data.x.row(i).dot(&r.transpose())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let budget = zeta * graph.n_edges() as f64;

    let mut marked = vec![false; n];
    let mut k = 0;
    while k < n / 2 {
        let (lo, hi) = (order[k], order[n - 1 - k]);
        marked[lo] = true;
        marked[hi] = true;
        if incident_edges(graph, &marked).len() as f64 > budget {
            marked[lo] = false;
            marked[hi] = false;
            break;
        }
        k += 1;
    }
    let mut x = data.x.clone();
    let mut z = data.z.clone();
    for t in 0..k {
        x.swap_rows(order[t], order[n - 1 - t]);
    }
    let nodes: Vec<usize> = (0..n).filter(|&i| marked[i]).collect();
    for &i in &nodes {
        for c in 0..z.ncols() {
            z[(i, c)] = rng.random_range(-10.0..=10.0);
        }
    }
    let edges = incident_edges(graph, &marked);
    assert!(edges.len() as f64 <= budget, "corruption exceeded its edge budget");
    Ok(Corruption { data: Dataset::new(x, z)?, nodes, edges, k })
}
