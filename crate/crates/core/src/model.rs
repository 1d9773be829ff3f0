//! Matrix-normal model with Laplacian dependence across nodes:
//! `vec(X) ~ N(vec(Z theta), Sigma_V kron L+)`.
//!
//! Edge statistic for `(i, j)` with residual rows `r = X - Z theta`:
//!
//! ```text
//! delta_ij = (r_i - r_j)' Sigma_V^-1 (r_i - r_j) w_ij
//!          ~ w_ij (l+_ii + l+_jj - 2 l+_ij) chi2(p)
//! ```
//!
//! and an edge is flagged when `delta_ij / var_factor_ij` exceeds a chi-square
//! quantile.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::robust::chi2_quantile;

/// Default level for the edge and node outlier rules.
pub const DEFAULT_LEVEL: f64 = 0.975;

/// Regression coefficients (`q x p`) and variable covariance (`p x p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(theta: DMatrix<f64>, sigma_v: DMatrix<f64>) -> Result<Self> {
        if !sigma_v.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Sigma_V is {}x{}",
                sigma_v.nrows(),
                sigma_v.ncols()
            )));
        }
        if theta.ncols() != sigma_v.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} columns, Sigma_V is {}x{}",
                theta.ncols(),
                sigma_v.nrows(),
                sigma_v.ncols()
            )));
        }
        Ok(Self { theta, sigma_v })
    }

    pub fn p(&self) -> usize {
        self.sigma_v.nrows()
    }

    pub fn q(&self) -> usize {
        self.theta.nrows()
    }

    /// Fails unless `Sigma_V` is symmetric positive definite.
    pub fn require_pd(&self) -> Result<()> {
        linalg::inv_pd(&self.sigma_v, "Sigma_V").map(|_| ())
    }
}

/// Responses `X` (`n x p`) and covariates `Z` (`n x q`), one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "X has a non-finite entry at row {}",
                k % x.nrows()
            )));
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Z has a non-finite entry at row {}",
                k % z.nrows()
            )));
        }
        Ok(Self { x, z })
    }

    /// Intercept-only design, `Z = 1_n`.
    pub fn intercept_only(x: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        Self::new(x, DMatrix::from_element(n, 1, 1.0))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// `X - Z theta`.
    pub fn residuals(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        &self.x - &self.z * theta
    }
}

/// Per-edge statistic and decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDiagnostics {
    pub edge: Edge,
    pub delta: f64,
    pub var_factor: f64,
    pub standardized: f64,
    pub is_outlier: bool,
}

/// Per-node statistic; `None` where `l+_ii` vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub node: usize,
    pub score: Option<f64>,
    pub is_outlier: Option<bool>,
}

pub(crate) fn check_dims(data: &Dataset, params: &ModelParams, n_nodes: usize) -> Result<()> {
    if data.n() != n_nodes {
        return Err(Error::DimensionMismatch(format!(
            "data has {} rows, graph has {n_nodes} nodes",
            data.n()
        )));
    }
    if data.p() != params.p() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns, Sigma_V is {}x{}",
            data.p(),
            params.p(),
            params.p()
        )));
    }
    if data.q() != params.q() {
        return Err(Error::DimensionMismatch(format!(
            "Z has {} columns, theta has {} rows",
            data.q(),
            params.q()
        )));
    }
    Ok(())
}

/// `X = Z theta + L^{+/2} Y Sigma_V^{1/2}` for a given standard-normal draw
/// `Y` (`n x p`).
pub fn compose_sample(
    params: &ModelParams,
    bundle: &LaplacianBundle,
    z: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<Dataset> {
    let n = bundle.n_nodes();
    if z.nrows() != n || z.ncols() != params.q() || y.nrows() != n || y.ncols() != params.p() {
        return Err(Error::DimensionMismatch(format!(
            "sampling needs Z {n}x{}, Y {n}x{}",
            params.q(),
            params.p()
        )));
    }
    let root = linalg::sqrt_pd(&params.sigma_v, "Sigma_V")?;
    let x = z * &params.theta + &bundle.pinv_sqrt * y * root;
    Dataset::new(x, z.clone())
}

/// Draws an `n x p` standard-normal matrix, row by row.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            y[(r, c)] = rng.sample(StandardNormal);
        }
    }
    y
}

/// Samples one dataset from the model using the supplied generator.
pub fn sample_matrix_normal_rng<R: Rng + ?Sized>(
    params: &ModelParams,
    bundle: &LaplacianBundle,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Dataset> {
    let y = standard_normal_matrix(bundle.n_nodes(), params.p(), rng);
    compose_sample(params, bundle, z, &y)
}

/// Samples one dataset; identical seeds give bit-identical output.
pub fn sample_matrix_normal(
    params: &ModelParams,
    bundle: &LaplacianBundle,
    z: &DMatrix<f64>,
    rng_seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_matrix_normal_rng(params, bundle, z, &mut rng)
}

/// `1/2 sum_ij (r_i - r_j)' Sigma_V^-1 (r_i - r_j) w_ij`, summed once per edge.
pub fn total_mahalanobis(data: &Dataset, params: &ModelParams, graph: &WeightedGraph) -> Result<f64> {
    check_dims(data, params, graph.n_nodes())?;
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let r = data.residuals(&params.theta);
    Ok(graph.edges().iter().map(|e| edge_delta(&r, &inv, e)).sum())
}

pub(crate) fn edge_delta(resid: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, e: &Edge) -> f64 {
    let diff: Vec<f64> = (0..resid.ncols())
        .map(|k| resid[(e.i, k)] - resid[(e.j, k)])
        .collect();
    linalg::quad_form(sigma_inv, &diff) * e.w
}

/// Edge statistics with the scale factor from `L+`; no flags set.
pub fn edge_deltas(
    data: &Dataset,
    params: &ModelParams,
    bundle: &LaplacianBundle,
    graph: &WeightedGraph,
) -> Result<Vec<EdgeDiagnostics>> {
    check_dims(data, params, graph.n_nodes())?;
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let r = data.residuals(&params.theta);
    Ok(deltas_from_residuals(&r, &inv, bundle, graph))
}

pub(crate) fn deltas_from_residuals(
    resid: &DMatrix<f64>,
    sigma_inv: &DMatrix<f64>,
    bundle: &LaplacianBundle,
    graph: &WeightedGraph,
) -> Vec<EdgeDiagnostics> {
    graph
        .edges()
        .iter()
        .map(|e| {
            let delta = edge_delta(resid, sigma_inv, e);
            let var_factor = bundle.var_factor(e);
            EdgeDiagnostics {
                edge: *e,
                delta,
                var_factor,
                standardized: delta / var_factor,
                is_outlier: false,
            }
        })
        .collect()
}

/// Flags edges whose standardized statistic strictly exceeds the
/// `level`-quantile of `chi2(p_dof)`.
pub fn flag_edge_outliers(
    diag: &[EdgeDiagnostics],
    p_dof: usize,
    level: f64,
) -> Result<Vec<EdgeDiagnostics>> {
    let cut = chi2_quantile(p_dof, level)?;
    Ok(diag
        .iter()
        .map(|d| EdgeDiagnostics { is_outlier: d.standardized > cut, ..*d })
        .collect())
}

/// Node statistic `r_i' Sigma_V^-1 r_i / l+_ii` with flags at `level`.
///
/// Residual columns are first centered: under the model every column of
/// `X - mu` sums to zero (`1'L+ = 0`), so a common offset, such as an
/// unidentified intercept, is removed before scoring.
pub fn node_diagnostics(
    data: &Dataset,
    params: &ModelParams,
    bundle: &LaplacianBundle,
    p_dof: usize,
    level: f64,
) -> Result<Vec<NodeDiagnostics>> {
    check_dims(data, params, bundle.n_nodes())?;
    let cut = chi2_quantile(p_dof, level)?;
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let mut r = data.residuals(&params.theta);
    for mut col in r.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let scale = linalg::max_abs(&bundle.pinv);
    Ok((0..data.n())
        .map(|i| {
            let lii = bundle.pinv[(i, i)];
            if !(lii > 1e-12 * scale) {
                warn!("node {i}: l+_ii = {lii:e}, node statistic undefined");
                return NodeDiagnostics { node: i, score: None, is_outlier: None };
            }
            let row: Vec<f64> = r.row(i).iter().cloned().collect();
            let score = linalg::quad_form(&inv, &row) / lii;
            NodeDiagnostics { node: i, score: Some(score), is_outlier: Some(score > cut) }
        })
        .collect())
}

pub fn flag_node_outliers(
    data: &Dataset,
    params: &ModelParams,
    bundle: &LaplacianBundle,
    p_dof: usize,
    level: f64,
) -> Result<Vec<Option<bool>>> {
    Ok(node_diagnostics(data, params, bundle, p_dof, level)?
        .into_iter()
        .map(|d| d.is_outlier)
        .collect())
}

/// `L^{1/2} (X - Z theta) Sigma_V^{-1/2}`.
pub fn standardized_residuals(
    data: &Dataset,
    params: &ModelParams,
    bundle: &LaplacianBundle,
) -> Result<DMatrix<f64>> {
    check_dims(data, params, bundle.n_nodes())?;
    let inv_root = linalg::inv_sqrt_pd(&params.sigma_v, "Sigma_V")?;
    Ok(&bundle.sqrt * data.residuals(&params.theta) * inv_root)
}
