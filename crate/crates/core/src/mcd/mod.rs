//! Edgewise minimum covariance determinant estimation.
//!
//! Concentration steps on weighted edge differences, started from four
//! deterministic robust estimates, followed by an optional reweighting on
//! edges below a chi-square cut and a consistency rescaling of `Sigma_V`.

mod cstep;
mod design;
mod mle;
mod starts;

pub use cstep::{c_step, trimmed_objective};
pub use design::{build_edgewise_design, EdgewiseDesign};
pub use mle::{is_degenerate, mle_fit, mle_fit_edgewise};
pub use starts::{deterministic_starts, start_from_method, Start};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::model::{check_dims, Dataset, ModelParams};
use crate::robust::{chi2_quantile, SeedMethod};
use cstep::{ascending_order, fit_subset, objective_from_deltas, penalty_weight, row_deltas};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    /// Fraction of edges kept when `h` is not given.
    pub h_fraction: f64,
    pub h: Option<usize>,
    pub max_csteps: usize,
    pub objective_tol: f64,
    pub reweight: bool,
    pub reweight_level: f64,
    /// Degrees of freedom for the reweighting and rescaling quantiles;
    /// `None` means `p`.
    pub dof: Option<usize>,
    pub rescale: bool,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            h_fraction: 0.75,
            h: None,
            max_csteps: 100,
            objective_tol: 1e-10,
            reweight: true,
            reweight_level: 0.975,
            dof: None,
            rescale: true,
        }
    }
}

impl McdConfig {
    /// Smallest admissible `h`: `ceil((|E| + p + 1) / 2)`.
    pub fn h_lower_bound(n_edges: usize, p: usize) -> usize {
        (n_edges + p + 1).div_ceil(2)
    }

    /// Resolves `h` for a design with `n_edges` edges. An explicit `h` must
    /// lie in the admissible range; a fraction below the lower bound is
    /// raised to it.
    pub fn resolve_h(&self, n_edges: usize, p: usize) -> Result<usize> {
        let lo = Self::h_lower_bound(n_edges, p);
        if lo > n_edges {
            return Err(Error::InvalidInput(format!(
                "{n_edges} edges are too few for p = {p}: need h >= {lo}"
            )));
        }
        match self.h {
            Some(h) if h < lo || h > n_edges => Err(Error::InvalidInput(format!(
                "h = {h} outside the admissible range [{lo}, {n_edges}]"
            ))),
            Some(h) => Ok(h),
            None => {
                if !(self.h_fraction > 0.0 && self.h_fraction <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "h_fraction must lie in (0, 1], got {}",
                        self.h_fraction
                    )));
                }
                let h = (self.h_fraction * n_edges as f64).ceil() as usize;
                if h < lo {
                    warn!("h = {h} from fraction {} raised to the lower bound {lo}", self.h_fraction);
                }
                Ok(h.clamp(lo, n_edges))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_csteps == 0 {
            return Err(Error::InvalidInput("max_csteps must be positive".into()));
        }
        if !(self.objective_tol > 0.0) {
            return Err(Error::InvalidInput("objective_tol must be positive".into()));
        }
        if !(self.reweight_level > 0.0 && self.reweight_level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "reweight_level must lie in (0, 1), got {}",
                self.reweight_level
            )));
        }
        if self.dof == Some(0) {
            return Err(Error::InvalidInput("dof must be positive".into()));
        }
        Ok(())
    }
}

/// Concentration run from one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub method: SeedMethod,
    /// Objective after each ordering step, starting with the initial estimate.
    pub objectives: Vec<f64>,
    pub n_csteps: usize,
    pub converged: bool,
    /// Set when the start was dropped or aborted.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Final estimate after the optional reweighting and rescaling.
    pub params: ModelParams,
    /// Estimate at the end of the concentration steps.
    pub raw_params: ModelParams,
    /// Trimmed objective of `raw_params` on `active_set`.
    pub objective: f64,
    pub h: usize,
    /// Indices into the graph's edge list, ascending.
    pub active_set: Vec<usize>,
    pub n_csteps: usize,
    pub start_id: SeedMethod,
    pub converged: bool,
    pub reweighted: bool,
    /// Number of edges used in the reweighting step.
    pub reweight_size: Option<usize>,
    /// Factor applied to `Sigma_V` by the rescaling step.
    pub rescale_factor: Option<f64>,
    pub trace: Vec<StartTrace>,
}

struct Chain {
    params: ModelParams,
    objective: f64,
    active: Vec<usize>,
    n_csteps: usize,
    converged: bool,
}

fn sorted_prefix(order: &[usize], h: usize) -> Vec<usize> {
    let mut s = order[..h].to_vec();
    s.sort_unstable();
    s
}

fn evaluate(design: &EdgewiseDesign, params: &ModelParams, h: usize) -> Result<(f64, Vec<usize>)> {
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let log_det = linalg::log_det_pd(&params.sigma_v, "Sigma_V")?;
    let deltas = row_deltas(design, &params.theta, &inv);
    let order = ascending_order(&deltas);
    let pen = penalty_weight(design.n_nodes, h, design.n_edges());
    Ok((objective_from_deltas(&deltas, &order, h, pen, log_det), order))
}

fn run_chain(
    design: &EdgewiseDesign,
    free: &[usize],
    start: &ModelParams,
    h: usize,
    config: &McdConfig,
    objectives: &mut Vec<f64>,
) -> Result<Chain> {
    let (mut objective, order) = evaluate(design, start, h)?;
    objectives.push(objective);
    let mut active = sorted_prefix(&order, h);
    let mut params = start.clone();
    let mut n_csteps = 0;
    let mut converged = false;
    while n_csteps < config.max_csteps {
        let next = fit_subset(design, free, &active)?;
        n_csteps += 1;
        let (next_obj, next_order) = evaluate(design, &next, h).map_err(|_| {
            Error::Degenerate(format!("Sigma_V lost positive definiteness after C-step {n_csteps}"))
        })?;
        let slack = 1e-9 * objective.abs().max(1.0);
        assert!(
            next_obj <= objective + slack,
            "trimmed objective increased in C-step {n_csteps}: {objective} -> {next_obj}"
        );
        objectives.push(next_obj);
        let next_active = sorted_prefix(&next_order, h);
        let settled = next_active == active || objective - next_obj <= config.objective_tol * objective.abs().max(1.0);
        params = next;
        objective = next_obj;
        active = next_active;
        if settled {
            converged = true;
            break;
        }
    }
    Ok(Chain { params, objective, active, n_csteps, converged })
}

/// Refit on every edge whose standardized statistic is at most the cut.
fn reweight_step(
    design: &EdgewiseDesign,
    free: &[usize],
    params: &ModelParams,
    var_factor: &[f64],
    cut: f64,
) -> Result<(ModelParams, usize)> {
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let deltas = row_deltas(design, &params.theta, &inv);
    let keep: Vec<usize> = (0..deltas.len()).filter(|&k| deltas[k] / var_factor[k] <= cut).collect();
    if keep.len() <= free.len() {
        return Err(Error::Degenerate(format!("only {} edges pass the reweighting cut", keep.len())));
    }
    Ok((fit_subset(design, free, &keep)?, keep.len()))
}

/// Factor `c` such that the median standardized statistic under `c Sigma_V`
/// equals the chi-square median.
fn rescale_factor(design: &EdgewiseDesign, params: &ModelParams, var_factor: &[f64], dof: usize) -> Result<f64> {
    let inv = linalg::inv_pd(&params.sigma_v, "Sigma_V")?;
    let std: Vec<f64> = row_deltas(design, &params.theta, &inv)
        .iter()
        .zip(var_factor)
        .map(|(d, v)| d / v)
        .collect();
    let med = linalg::median(&std);
    if !(med > 0.0) {
        return Err(Error::Degenerate("median standardized edge statistic is zero".into()));
    }
    Ok(med / chi2_quantile(dof, 0.5)?)
}

/// Robust fit of `(theta, Sigma_V)`.
///
/// Runs concentration steps from every surviving deterministic start until
/// the active edge set repeats or `max_csteps` is reached, keeps the run
/// with the lowest trimmed objective, then optionally reweights and
/// rescales. A run that hits `max_csteps` is returned with
/// `converged = false`.
pub fn edgewise_mcd_fit(
    data: &Dataset,
    graph: &WeightedGraph,
    bundle: &LaplacianBundle,
    config: &McdConfig,
) -> Result<FitResult> {
    config.validate()?;
    graph.require_connected()?;
    if bundle.n_nodes() != graph.n_nodes() {
        return Err(Error::DimensionMismatch("Laplacian bundle does not match the graph".into()));
    }
    let design = build_edgewise_design(data, graph)?;
    let p = design.p();
    let h = config.resolve_h(design.n_edges(), p)?;
    let dof = config.dof.unwrap_or(p);
    let free = design.free_columns();
    if free.len() < design.q() {
        let pinned: Vec<usize> = (0..design.q()).filter(|c| !free.contains(c)).collect();
        warn!("covariate columns {pinned:?} are constant over the graph; coefficients pinned to zero");
    }

    let starts = deterministic_starts(&design)?;
    let mut traces: Vec<StartTrace> = SeedMethod::ALL
        .iter()
        .filter(|m| !starts.iter().any(|s| s.method == **m))
        .map(|&method| StartTrace {
            method,
            objectives: Vec::new(),
            n_csteps: 0,
            converged: false,
            failure: Some("degenerate start".into()),
        })
        .collect();

    let runs: Vec<(SeedMethod, Vec<f64>, Result<Chain>)> = starts
        .par_iter()
        .map(|s| {
            let mut objectives = Vec::new();
            let chain = run_chain(&design, &free, &s.params, h, config, &mut objectives);
            (s.method, objectives, chain)
        })
        .collect();

    let mut best: Option<(SeedMethod, Chain)> = None;
    for (method, objectives, chain) in runs {
        match chain {
            Ok(c) => {
                traces.push(StartTrace {
                    method,
                    objectives,
                    n_csteps: c.n_csteps,
                    converged: c.converged,
                    failure: None,
                });
                if best.as_ref().is_none_or(|(_, b)| c.objective < b.objective) {
                    best = Some((method, c));
                }
            }
            Err(e) => {
                warn!("{} start aborted: {e}", method.name());
                traces.push(StartTrace {
                    method,
                    objectives,
                    n_csteps: 0,
                    converged: false,
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    traces.sort_by_key(|t| SeedMethod::ALL.iter().position(|m| *m == t.method));
    let (start_id, chain) =
        best.ok_or_else(|| Error::Degenerate("every concentration run was degenerate".into()))?;
    if !chain.converged {
        warn!("no fixed point within {} C-steps; returning the best state reached", config.max_csteps);
    }

    let var_factor: Vec<f64> = design.edges.iter().map(|e| bundle.var_factor(e)).collect();
    let mut params = chain.params.clone();
    let mut reweight_size = None;
    if config.reweight {
        let cut = chi2_quantile(dof, config.reweight_level)?;
        let (rw, size) = reweight_step(&design, &free, &params, &var_factor, cut)?;
        rw.require_pd()
            .map_err(|_| Error::Degenerate("reweighted Sigma_V is not positive definite".into()))?;
        params = rw;
        reweight_size = Some(size);
    }
    let mut factor = None;
    if config.rescale {
        let c = rescale_factor(&design, &params, &var_factor, dof)?;
        params.sigma_v *= c;
        factor = Some(c);
    }
    check_dims(data, &params, graph.n_nodes())?;

    Ok(FitResult {
        params,
        raw_params: chain.params,
        objective: chain.objective,
        h,
        active_set: chain.active,
        n_csteps: chain.n_csteps,
        start_id,
        converged: chain.converged,
        reweighted: config.reweight,
        reweight_size,
        rescale_factor: factor,
        trace: traces,
    })
}
