//! Comparison estimator that ignores the graph beyond the edge differences:
//! a least-trimmed-squares regression of `X_E` on `Z_E`, then a plain
//! deterministic-start MCD of the residual rows.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mcd::EdgewiseDesign;
use crate::model::ModelParams;
use crate::robust::{chi2_quantile, seed_covariance, SeedMethod};

const LTS_SUBSETS: usize = 500;
const LTS_KEEP: usize = 10;
const MAX_STEPS: usize = 100;

fn order_smallest(values: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

fn ls_on(z: &DMatrix<f64>, x: &DMatrix<f64>, idx: &[usize]) -> Option<DMatrix<f64>> {
    let zs = rows(z, idx);
    let xs = rows(x, idx);
    linalg::solve_spd(&(zs.transpose() * &zs), &(zs.transpose() * xs), "").ok()
}

fn squared_residual_norms(z: &DMatrix<f64>, x: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let r = x - z * b;
    r.row_iter().map(|row| row.norm_squared()).collect()
}

fn lts_refine(z: &DMatrix<f64>, x: &DMatrix<f64>, b0: DMatrix<f64>, h: usize, steps: usize) -> Option<(DMatrix<f64>, f64)> {
    let mut b = b0;
    let mut res = squared_residual_norms(z, x, &b);
    let mut set = order_smallest(&res, h);
    let mut obj: f64 = set.iter().map(|&k| res[k]).sum();
    for _ in 0..steps {
        b = ls_on(z, x, &set)?;
        res = squared_residual_norms(z, x, &b);
        let next = order_smallest(&res, h);
        obj = next.iter().map(|&k| res[k]).sum();
        if next == set {
            break;
        }
        set = next;
    }
    Some((b, obj))
}

/// Multivariate least trimmed squares: minimizes the sum of the `h`
/// smallest squared residual row norms. Random elemental starts, two
/// concentration steps each, then the best few are iterated to a fixed
/// point (FAST-LTS).
pub fn lts_fit<R: Rng + ?Sized>(z: &DMatrix<f64>, x: &DMatrix<f64>, h: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let (m, q) = (z.nrows(), z.ncols());
    if q == 0 {
        return Ok(DMatrix::zeros(0, x.ncols()));
    }
    if m <= q || h < q || h > m {
        return Err(Error::InvalidInput(format!("LTS with {m} rows, {q} covariates and h = {h}")));
    }
    let mut cands: Vec<(DMatrix<f64>, f64)> = Vec::new();
    if let Some(b) = ls_on(z, x, &(0..m).collect::<Vec<_>>()) {
        cands.extend(lts_refine(z, x, b, h, 2));
    }
    for _ in 0..LTS_SUBSETS {
        let idx = sample(rng, m, q).into_vec();
        if let Some(b) = ls_on(z, x, &idx) {
            cands.extend(lts_refine(z, x, b, h, 2));
        }
    }
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    cands.truncate(LTS_KEEP);
    cands
        .into_iter()
        .filter_map(|(b, _)| lts_refine(z, x, b, h, MAX_STEPS))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(b, _)| b)
        .ok_or_else(|| Error::Degenerate("every LTS subset was singular".into()))
}

/// Location and scatter of the rows in `idx`, scatter divided by the count.
fn mean_cov(e: &DMatrix<f64>, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let sub = rows(e, idx);
    let mean = DVector::from_iterator(e.ncols(), sub.column_iter().map(|c| c.mean()));
    let mut centered = sub;
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = linalg::symmetrize(&(centered.transpose() * &centered)) / idx.len() as f64;
    (mean, cov)
}

fn distances(e: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inv = linalg::inv_pd(cov, "").ok()?;
    Some(
        e.row_iter()
            .map(|r| {
                let d: Vec<f64> = r.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
                linalg::quad_form(&inv, &d)
            })
            .collect(),
    )
}

/// Robust location and scatter of the rows of `e`.
pub struct PlainMcd {
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

/// Deterministic-start MCD: four seed covariances of the median-centered
/// rows, half-sample start, concentration steps with `h` rows, consistency
/// correction by the median distance, and one reweighting at 0.975.
pub fn plain_mcd(e: &DMatrix<f64>, h: usize) -> Result<PlainMcd> {
    let (m, p) = (e.nrows(), e.ncols());
    if h <= p || h > m {
        return Err(Error::InvalidInput(format!("MCD with {m} rows, p = {p} and h = {h}")));
    }
    let med = DVector::from_iterator(p, e.column_iter().map(|c| linalg::median(c.as_slice())));
    let mut centered = e.clone();
    for mut r in centered.row_iter_mut() {
        r -= med.transpose();
    }
    let mut best: Option<(f64, DVector<f64>, DMatrix<f64>)> = None;
    for method in SeedMethod::ALL {
        let s0 = match seed_covariance(&centered, &centered, method) {
            Ok(s) => linalg::symmetrize(&s),
            Err(err) => {
                warn!("plain MCD: dropping {} start: {err}", method.name());
                continue;
            }
        };
        let Some(d0) = distances(e, &med, &s0) else { continue };
        let (mut mean, mut cov) = mean_cov(e, &order_smallest(&d0, m.div_ceil(2)));
        let mut set: Vec<usize> = Vec::new();
        for _ in 0..MAX_STEPS {
            let Some(d) = distances(e, &mean, &cov) else { break };
            let next = order_smallest(&d, h);
            if next == set {
                break;
            }
            (mean, cov) = mean_cov(e, &next);
            set = next;
        }
        let Ok(ld) = linalg::log_det_pd(&cov, "") else { continue };
        if best.as_ref().is_none_or(|b| ld < b.0) {
            best = Some((ld, mean, cov));
        }
    }
    let (_, mean, cov) = best.ok_or_else(|| Error::Degenerate("plain MCD: every start was degenerate".into()))?;
    let med_chi = chi2_quantile(p, 0.5)?;
    let consistent = |mean: &DVector<f64>, cov: DMatrix<f64>| -> Result<DMatrix<f64>> {
        let d = distances(e, mean, &cov).ok_or_else(|| Error::Degenerate("plain MCD scatter is singular".into()))?;
        Ok(cov * (linalg::median(&d) / med_chi))
    };
    let raw = consistent(&mean, cov)?;
    let d = distances(e, &mean, &raw).ok_or_else(|| Error::Degenerate("plain MCD scatter is singular".into()))?;
    let cut = chi2_quantile(p, 0.975)?;
    let keep: Vec<usize> = (0..m).filter(|&k| d[k] <= cut).collect();
    if keep.len() <= p {
        return Ok(PlainMcd { location: mean, scatter: raw });
    }
    let (rmean, rcov) = mean_cov(e, &keep);
    let scatter = consistent(&rmean, rcov)?;
    Ok(PlainMcd { location: rmean, scatter })
}

/// LTS coefficients on the free covariate columns, then
/// `Sigma_V = (|E| / n) * MCD scatter` of the residual rows.
pub fn mcd_baseline<R: Rng + ?Sized>(design: &EdgewiseDesign, h: usize, rng: &mut R) -> Result<ModelParams> {
    let free = design.free_columns();
    let zf = DMatrix::from_fn(design.n_edges(), free.len(), |r, c| design.z_e[(r, free[c])]);
    let bf = lts_fit(&zf, &design.x_e, h, rng)?;
    let mut theta = DMatrix::zeros(design.q(), design.p());
    for (k, &c) in free.iter().enumerate() {
        theta.set_row(c, &bf.row(k));
    }
    let resid = &design.x_e - &design.z_e * &theta;
    let mcd = plain_mcd(&resid, h)?;
    let sigma = mcd.scatter * (design.n_edges() as f64 / design.n_nodes as f64);
    let params = ModelParams::new(theta, sigma)?;
    params.require_pd()?;
    Ok(params)
}
