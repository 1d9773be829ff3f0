use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use netoutlier::coda::{fit_compositional, CodaConfig, CodaSchema, Contrasts, CODA_LEVEL};
use netoutlier::graph::LaplacianBundle;
use netoutlier::io::{read_edges, read_table, write_edge_diagnostics, write_node_diagnostics, write_table};
use netoutlier::mcd::{edgewise_mcd_fit, FitResult, McdConfig};
use netoutlier::model::{edge_deltas, flag_edge_outliers, node_diagnostics, standardized_residuals, Dataset};
use netoutlier::Error;

use crate::output::{read_input, rows_of, Context, Outputs};
use crate::{resolve_seed, CliResult, OutArg};

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Responses: headed CSV, one row per node.
    #[arg(long)]
    data: PathBuf,
    /// Covariates: headed CSV, one row per node. Intercept-only if omitted.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Edge list with header i,j,w and 0-based node indices.
    #[arg(long)]
    edges: PathBuf,
    /// Compositional schema (JSON); switches to the clr/ilr workflow.
    #[arg(long)]
    coda: Option<PathBuf>,
    /// Seed for random contrast matrices; Helmert contrasts if omitted.
    #[arg(long, requires = "coda")]
    contrast_seed: Option<u64>,
    /// Flag level [default: 0.975, or 0.995 with --coda].
    #[arg(long)]
    level: Option<f64>,
    /// Fraction of edges kept by the trimmed fit.
    #[arg(long, default_value_t = 0.75)]
    h_fraction: f64,
    #[arg(long, default_value_t = 100)]
    max_csteps: usize,
    /// Skip the one-step reweighting after the concentration steps.
    #[arg(long)]
    no_reweight: bool,
    /// Skip the median consistency rescaling of Sigma_V.
    #[arg(long)]
    no_rescale: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Serialize)]
struct FitSummary {
    objective: f64,
    h: usize,
    start_id: &'static str,
    n_csteps: usize,
    converged: bool,
    reweighted: bool,
    reweight_size: Option<usize>,
    rescale_factor: Option<f64>,
    raw_theta: Vec<Vec<f64>>,
    raw_sigma_v: Vec<Vec<f64>>,
}

impl FitSummary {
    fn of(fit: &FitResult) -> Self {
        Self {
            objective: fit.objective,
            h: fit.h,
            start_id: fit.start_id.name(),
            n_csteps: fit.n_csteps,
            converged: fit.converged,
            reweighted: fit.reweighted,
            reweight_size: fit.reweight_size,
            rescale_factor: fit.rescale_factor,
            raw_theta: rows_of(&fit.raw_params.theta),
            raw_sigma_v: rows_of(&fit.raw_params.sigma_v),
        }
    }
}

pub fn run(a: &DetectArgs, ctx: &Context) -> CliResult<()> {
    let mut inputs = BTreeMap::new();
    let seed = resolve_seed(ctx.seed_flag, 0)?;
    let x = read_table(read_input(&a.data, &mut inputs)?.as_slice())?;
    let n = x.values.nrows();
    let z = match &a.covariates {
        Some(p) => Some(read_table(read_input(p, &mut inputs)?.as_slice())?),
        None => None,
    };
    if let Some(z) = &z {
        if z.values.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} rows, {} has {n}",
                a.covariates.as_ref().expect("given").display(),
                z.values.nrows(),
                a.data.display()
            ))
            .into());
        }
    }
    let graph = read_edges(read_input(&a.edges, &mut inputs)?.as_slice(), n)?;
    graph.require_connected()?;
    let bundle = LaplacianBundle::with_default_tol(&graph);
    let mcd = McdConfig {
        h_fraction: a.h_fraction,
        max_csteps: a.max_csteps,
        reweight: !a.no_reweight,
        rescale: !a.no_rescale,
        ..McdConfig::default()
    };
    let mut out = Outputs::create(&a.out.out)?;

    let schema = match &a.coda {
        Some(p) => {
            let text = read_input(p, &mut inputs)?;
            Some(CodaSchema::from_json(&String::from_utf8_lossy(&text))?)
        }
        None => None,
    };
    let level = a.level.unwrap_or(if schema.is_some() { CODA_LEVEL } else { 0.975 });
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("--level must lie in (0, 1), got {level}")).into());
    }

    let (edges, nodes, residuals, params) = if let Some(schema) = &schema {
        let zm = z.as_ref().map_or_else(|| nalgebra::DMatrix::zeros(n, 0), |t| t.values.clone());
        let contrasts = match a.contrast_seed {
            Some(s) => Contrasts::random(schema, x.values.ncols(), &mut ChaCha8Rng::seed_from_u64(s))?,
            None => Contrasts::helmert(schema, x.values.ncols())?,
        };
        let cfg = CodaConfig { mcd: mcd.clone(), level };
        let fit = fit_compositional(&x.values, &zm, schema, &contrasts, &graph, &bundle, &cfg)?;
        let params = json!({
            "coordinates": "clr",
            "theta": rows_of(&fit.theta_clr),
            "sigma_v": rows_of(&fit.sigma_clr),
            "ilr": {
                "theta": rows_of(&fit.ilr_fit.params.theta),
                "sigma_v": rows_of(&fit.ilr_fit.params.sigma_v),
                "v_x": rows_of(&contrasts.v_x(x.values.ncols())),
                "v_z": rows_of(&contrasts.v_z(schema, zm.ncols())),
                "fit": FitSummary::of(&fit.ilr_fit),
            },
            "dof": fit.dof,
            "level": level,
        });
        (fit.edges, fit.nodes, fit.residuals, params)
    } else {
        let data = match &z {
            Some(z) => Dataset::new(x.values.clone(), z.values.clone())?,
            None => Dataset::intercept_only(x.values.clone())?,
        };
        let fit = edgewise_mcd_fit(&data, &graph, &bundle, &mcd)?;
        let p = data.p();
        let edges = flag_edge_outliers(&edge_deltas(&data, &fit.params, &bundle, &graph)?, p, level)?;
        let nodes = node_diagnostics(&data, &fit.params, &bundle, p, level)?;
        let residuals = standardized_residuals(&data, &fit.params, &bundle)?;
        let params = json!({
            "coordinates": "original",
            "theta": rows_of(&fit.params.theta),
            "sigma_v": rows_of(&fit.params.sigma_v),
            "fit": FitSummary::of(&fit),
            "dof": p,
            "level": level,
        });
        (edges, nodes, residuals, params)
    };

    let mut params = params;
    params["responses"] = json!(x.header);
    params["covariates"] = json!(z.as_ref().map_or_else(|| vec!["(intercept)".to_string()], |t| t.header.clone()));
    params["n_flagged_edges"] = json!(edges.iter().filter(|e| e.is_outlier).count());
    params["n_flagged_nodes"] = json!(nodes.iter().filter(|d| d.is_outlier == Some(true)).count());

    out.write_with("edges.csv", |w| write_edge_diagnostics(&edges, w))?;
    out.write_with("nodes.csv", |w| write_node_diagnostics(&nodes, w))?;
    out.write_with("residuals.csv", |w| write_table(&x.header, &residuals, w))?;
    out.write_json("params.json", &params)?;
    let config = json!({
        "data": a.data.display().to_string(),
        "covariates": a.covariates.as_ref().map(|p| p.display().to_string()),
        "edges": a.edges.display().to_string(),
        "coda": a.coda.as_ref().map(|p| p.display().to_string()),
        "contrast_seed": a.contrast_seed,
        "level": level,
        "mcd": mcd,
    });
    out.finish("detect", &config, &inputs, seed, ctx.threads)
}
