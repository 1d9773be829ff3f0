use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Edge, WeightedGraph};
use crate::model::Dataset;

/// Weighted edgewise differences: row `k` of `z_e` is `(z_i - z_j) sqrt(w)`
/// and row `k` of `x_e` is `(x_i - x_j) sqrt(w)` for the `k`-th edge `(i, j)`.
#[derive(Debug, Clone)]
pub struct EdgewiseDesign {
    pub z_e: DMatrix<f64>,
    pub x_e: DMatrix<f64>,
    pub edges: Vec<Edge>,
    pub n_nodes: usize,
}

impl EdgewiseDesign {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn p(&self) -> usize {
        self.x_e.ncols()
    }

    pub fn q(&self) -> usize {
        self.z_e.ncols()
    }

    /// Covariate columns that vary along at least one edge. Columns of `Z`
    /// that are constant on a connected graph vanish in every difference and
    /// their coefficients cannot be estimated.
    pub fn free_columns(&self) -> Vec<usize> {
        (0..self.q())
            .filter(|&c| self.z_e.column(c).iter().any(|v| *v != 0.0))
            .collect()
    }

    /// Copy with the rows reordered: row `k` of the result is row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let z_e = DMatrix::from_fn(perm.len(), self.q(), |r, c| self.z_e[(perm[r], c)]);
        let x_e = DMatrix::from_fn(perm.len(), self.p(), |r, c| self.x_e[(perm[r], c)]);
        Self {
            z_e,
            x_e,
            edges: perm.iter().map(|&k| self.edges[k]).collect(),
            n_nodes: self.n_nodes,
        }
    }
}

pub fn build_edgewise_design(data: &Dataset, graph: &WeightedGraph) -> Result<EdgewiseDesign> {
    if data.n() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} rows, graph has {} nodes",
            data.n(),
            graph.n_nodes()
        )));
    }
    let m = graph.n_edges();
    let mut z_e = DMatrix::zeros(m, data.q());
    let mut x_e = DMatrix::zeros(m, data.p());
    for (k, e) in graph.edges().iter().enumerate() {
        let s = e.w.sqrt();
        for c in 0..data.q() {
            z_e[(k, c)] = (data.z[(e.i, c)] - data.z[(e.j, c)]) * s;
        }
        for c in 0..data.p() {
            x_e[(k, c)] = (data.x[(e.i, c)] - data.x[(e.j, c)]) * s;
        }
    }
    Ok(EdgewiseDesign { z_e, x_e, edges: graph.edges().to_vec(), n_nodes: graph.n_nodes() })
}
