use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use netoutlier::graph::LaplacianBundle;
use netoutlier::io::{read_edges, read_table, write_table};
use netoutlier::model::{sample_matrix_normal_rng, ModelParams};
use netoutlier::Error;

use crate::output::{column_names, matrix_from_rows, read_input, Context, Outputs};
use crate::{resolve_seed, CliResult, OutArg};

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON with `sigma_v` (p x p rows) and optionally `theta` (q x p rows).
    #[arg(long)]
    model: PathBuf,
    /// Edge list with header i,j,w.
    #[arg(long)]
    edges: PathBuf,
    /// Node count [default: largest index in the edge list + 1].
    #[arg(long)]
    nodes: Option<usize>,
    /// Covariates to use with `theta`; drawn from U(-1, 1) if omitted.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    theta: Option<Vec<Vec<f64>>>,
    sigma_v: Vec<Vec<f64>>,
}

pub fn run(a: &SampleArgs, ctx: &Context) -> CliResult<()> {
    let mut inputs = BTreeMap::new();
    let seed = resolve_seed(ctx.seed_flag, 0)?;
    let model: ModelFile = serde_json::from_slice(&read_input(&a.model, &mut inputs)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", a.model.display())))?;
    let edge_bytes = read_input(&a.edges, &mut inputs)?;
    let n = match a.nodes {
        Some(n) => n,
        None => {
            let t = read_table(edge_bytes.as_slice())?;
            let top = t.values.columns(0, 2.min(t.values.ncols())).max();
            if t.values.nrows() == 0 || !(top >= 0.0) {
                return Err(Error::Parse("empty edge list; pass --nodes".into()).into());
            }
            top as usize + 1
        }
    };
    let graph = read_edges(edge_bytes.as_slice(), n)?;
    graph.require_connected()?;
    let bundle = LaplacianBundle::with_default_tol(&graph);
    let sigma = matrix_from_rows(&model.sigma_v, "sigma_v")?;
    let p = sigma.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (theta, z, z_header) = match &model.theta {
        Some(rows) => {
            let theta = matrix_from_rows(rows, "theta")?;
            let q = theta.nrows();
            let (z, header) = match &a.covariates {
                Some(path) => {
                    let t = read_table(read_input(path, &mut inputs)?.as_slice())?;
                    (t.values, t.header)
                }
                None => (DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0)), column_names("z", q)),
            };
            if z.nrows() != n || z.ncols() != q {
                return Err(Error::DimensionMismatch(format!(
                    "covariates are {}x{}, expected {n}x{q}",
                    z.nrows(),
                    z.ncols()
                ))
                .into());
            }
            (theta, z, Some(header))
        }
        None => (DMatrix::zeros(1, p), DMatrix::from_element(n, 1, 1.0), None),
    };
    let params = ModelParams::new(theta, sigma)?;
    params.require_pd()?;
    let data = sample_matrix_normal_rng(&params, &bundle, &z, &mut rng)?;

    let mut out = Outputs::create(&a.out.out)?;
    out.write_with("x.csv", |w| write_table(&column_names("x", p), &data.x, w))?;
    if let Some(h) = &z_header {
        out.write_with("z.csv", |w| write_table(h, &data.z, w))?;
    }
    let config = json!({
        "model": a.model.display().to_string(),
        "edges": a.edges.display().to_string(),
        "covariates": a.covariates.as_ref().map(|p| p.display().to_string()),
        "nodes": n,
    });
    out.finish("sample", &config, &inputs, seed, ctx.threads)
}
