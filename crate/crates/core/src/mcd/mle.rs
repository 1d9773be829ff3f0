//! Closed-form maximum likelihood estimates.

use log::warn;
use nalgebra::DMatrix;

use super::design::EdgewiseDesign;
use crate::error::{Error, Result};
use crate::graph::{LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::model::{Dataset, ModelParams};

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Expands coefficients fitted on `free` columns to all `q` rows; rows of
/// unidentifiable covariates stay zero.
pub(crate) fn expand_theta(theta_free: &DMatrix<f64>, free: &[usize], q: usize) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(q, theta_free.ncols());
    for (k, &c) in free.iter().enumerate() {
        theta.set_row(c, &theta_free.row(k));
    }
    theta
}

pub(crate) fn warn_pinned(free: &[usize], q: usize) {
    if free.len() < q {
        let pinned: Vec<usize> = (0..q).filter(|c| !free.contains(c)).collect();
        warn!("covariate columns {pinned:?} are constant over the graph; coefficients pinned to zero");
    }
}

fn solve_normal(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, free: &[usize]) -> Result<DMatrix<f64>> {
    linalg::solve_spd(gram, rhs, "Z'LZ").map_err(|_| {
        Error::RankDeficient(format!(
            "Z'LZ is singular on covariate columns {free:?}; the covariates are collinear over the graph"
        ))
    })
}

/// `theta = (Z'LZ)^-1 Z'LX`, `Sigma_V = (X - Z theta)' L (X - Z theta) / n`,
/// through the assembled Laplacian. Covariates constant over the graph get
/// zero coefficients (`1'L = 0` leaves them undetermined).
pub fn mle_fit(data: &Dataset, graph: &WeightedGraph, bundle: &LaplacianBundle) -> Result<ModelParams> {
    graph.require_connected()?;
    if data.n() != graph.n_nodes() || bundle.n_nodes() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} rows, graph has {} nodes",
            data.n(),
            graph.n_nodes()
        )));
    }
    let l = &bundle.laplacian;
    let q = data.q();
    let free: Vec<usize> = (0..q)
        .filter(|&c| graph.edges().iter().any(|e| data.z[(e.i, c)] != data.z[(e.j, c)]))
        .collect();
    warn_pinned(&free, q);
    let theta = if free.is_empty() {
        DMatrix::zeros(q, data.p())
    } else {
        let zf = select_columns(&data.z, &free);
        let gram = zf.transpose() * l * &zf;
        let rhs = zf.transpose() * l * &data.x;
        expand_theta(&solve_normal(&gram, &rhs, &free)?, &free, q)
    };
    let r = data.residuals(&theta);
    let sigma = linalg::symmetrize(&(r.transpose() * l * &r)) / data.n() as f64;
    let params = ModelParams::new(theta, sigma)?;
    if is_degenerate(&params.sigma_v, &(data.x.transpose() * l * &data.x)) {
        warn!("maximum likelihood Sigma_V is singular (degenerate fit)");
    }
    Ok(params)
}

/// The same estimates from the edgewise design matrices:
/// `theta = (Z_E'Z_E)^-1 Z_E'X_E`, `Sigma_V = (X_E - Z_E theta)'(X_E - Z_E theta) / n`.
pub fn mle_fit_edgewise(design: &EdgewiseDesign) -> Result<ModelParams> {
    let free = design.free_columns();
    let q = design.q();
    warn_pinned(&free, q);
    let theta = if free.is_empty() {
        DMatrix::zeros(q, design.p())
    } else {
        let zf = select_columns(&design.z_e, &free);
        let gram = zf.transpose() * &zf;
        let rhs = zf.transpose() * &design.x_e;
        expand_theta(&solve_normal(&gram, &rhs, &free)?, &free, q)
    };
    let r = &design.x_e - &design.z_e * &theta;
    let sigma = linalg::symmetrize(&(r.transpose() * &r)) / design.n_nodes as f64;
    ModelParams::new(theta, sigma)
}

/// True when `sigma` is singular, or negligible next to `reference`, the
/// scatter of the raw responses.
pub fn is_degenerate(sigma: &DMatrix<f64>, reference: &DMatrix<f64>) -> bool {
    let scale = linalg::max_abs(reference) / sigma.nrows().max(1) as f64;
    linalg::inv_pd(sigma, "Sigma_V").is_err() || linalg::max_abs(sigma) <= 1e-12 * scale
}

pub(crate) fn free_design(design: &EdgewiseDesign, free: &[usize]) -> DMatrix<f64> {
    select_columns(&design.z_e, free)
}
