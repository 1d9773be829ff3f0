use nalgebra::DMatrix;

use super::design::EdgewiseDesign;
use super::mle::{expand_theta, free_design};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelParams;

/// `delta_k = (x_e_k - z_e_k theta)' Sigma_V^-1 (x_e_k - z_e_k theta)` for
/// every edge row. The square root of the weight is already in the rows.
pub(crate) fn row_deltas(design: &EdgewiseDesign, theta: &DMatrix<f64>, sigma_inv: &DMatrix<f64>) -> Vec<f64> {
    let r = &design.x_e - &design.z_e * theta;
    let rs = &r * sigma_inv;
    (0..r.nrows()).map(|k| r.row(k).dot(&rs.row(k))).collect()
}

/// Row indices sorted by ascending statistic; ties keep the lower index first.
pub(crate) fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Sum of the `h` smallest entries plus the log-determinant penalty.
pub(crate) fn objective_from_deltas(deltas: &[f64], order: &[usize], h: usize, penalty: f64, log_det: f64) -> f64 {
    order[..h].iter().map(|&k| deltas[k]).sum::<f64>() + penalty * log_det
}

pub(crate) fn penalty_weight(n_nodes: usize, h: usize, n_edges: usize) -> f64 {
    n_nodes as f64 * h as f64 / n_edges as f64
}

/// Trimmed objective: the `h` smallest edge statistics plus
/// `(n h / |E|) log det Sigma_V`.
pub fn trimmed_objective(design: &EdgewiseDesign, params: &ModelParams, h: usize) -> Result<f64> {
    check_h_bounds(design, h)?;
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let log_det = linalg::log_det_pd(&params.sigma_v, "Sigma_V")?;
    let deltas = row_deltas(design, &params.theta, &inv);
    let order = ascending_order(&deltas);
    Ok(objective_from_deltas(
        &deltas,
        &order,
        h,
        penalty_weight(design.n_nodes, h, design.n_edges()),
        log_det,
    ))
}

fn check_h_bounds(design: &EdgewiseDesign, h: usize) -> Result<()> {
    if h == 0 || h > design.n_edges() {
        return Err(Error::InvalidInput(format!(
            "h = {h} outside [1, {}]",
            design.n_edges()
        )));
    }
    Ok(())
}

/// Refits on the edge rows in `subset`:
/// `theta = Gamma_ZZ^-1 Gamma_ZX` over the free covariate columns and
/// `Sigma_V = |E| / (n |subset|) sum r r'`.
pub(crate) fn fit_subset(design: &EdgewiseDesign, free: &[usize], subset: &[usize]) -> Result<ModelParams> {
    let q = design.q();
    let p = design.p();
    let theta = if free.is_empty() {
        DMatrix::zeros(q, p)
    } else {
        let zf = free_design(design, free);
        let zs = DMatrix::from_fn(subset.len(), free.len(), |r, c| zf[(subset[r], c)]);
        let xs = DMatrix::from_fn(subset.len(), p, |r, c| design.x_e[(subset[r], c)]);
        let gram = zs.transpose() * &zs;
        let rhs = zs.transpose() * &xs;
        let t = linalg::solve_spd(&gram, &rhs, "Gamma_ZZ").map_err(|_| {
            Error::Degenerate(format!(
                "Gamma_ZZ is singular on an active subset of {} edges",
                subset.len()
            ))
        })?;
        expand_theta(&t, free, q)
    };
    let mut scatter = DMatrix::zeros(p, p);
    for &k in subset {
        let r = design.x_e.row(k) - design.z_e.row(k) * &theta;
        scatter += r.transpose() * r;
    }
    let divisor = design.n_nodes as f64 * subset.len() as f64 / design.n_edges() as f64;
    ModelParams::new(theta, linalg::symmetrize(&scatter) / divisor)
}

/// One concentration step. Orders the edges by their statistic under
/// `params`, keeps the `h` smallest and refits on them. Returns the new
/// parameters and the full ordering used.
pub fn c_step(design: &EdgewiseDesign, params: &ModelParams, h: usize) -> Result<(ModelParams, Vec<usize>)> {
    check_h_bounds(design, h)?;
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let deltas = row_deltas(design, &params.theta, &inv);
    let order = ascending_order(&deltas);
    let next = fit_subset(design, &design.free_columns(), &order[..h])?;
    Ok((next, order))
}
