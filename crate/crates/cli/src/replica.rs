use std::collections::BTreeMap;

use clap::Args;
use nalgebra::DMatrix;
use serde_json::json;

use netoutlier::coda::{election_replica, plant_pair, REPLICA_SEED};
use netoutlier::io::{write_edges, write_table};

use crate::output::{column_names, rows_of, Context, Outputs};
use crate::{resolve_seed, CliResult, OutArg};

#[derive(Debug, Args)]
pub struct ReplicaArgs {
    /// Edge index whose endpoints are pushed apart.
    #[arg(long)]
    plant_edge: Option<usize>,
    /// Aitchison norm of the perturbation applied to each endpoint.
    #[arg(long, default_value_t = 1.0, requires = "plant_edge")]
    plant_shift: f64,
    #[command(flatten)]
    out: OutArg,
}

pub fn run(a: &ReplicaArgs, ctx: &Context) -> CliResult<()> {
    let seed = resolve_seed(ctx.seed_flag, REPLICA_SEED)?;
    let mut r = election_replica(seed)?;
    let planted = match a.plant_edge {
        Some(k) => Some(plant_pair(&mut r, k, a.plant_shift)?),
        None => None,
    };
    let mut out = Outputs::create(&a.out.out)?;
    out.write_with("x.csv", |w| write_table(&r.x_names, &r.x, w))?;
    out.write_with("z.csv", |w| write_table(&r.z_names, &r.z, w))?;
    out.write_with("edges.csv", |w| write_edges(&r.graph, w))?;
    let coords = DMatrix::from_fn(r.coords.len(), 2, |i, k| r.coords[i][k]);
    out.write_with("coords.csv", |w| write_table(&column_names("x", 2), &coords, w))?;
    out.write_json("schema.json", &r.schema)?;
    out.write_json(
        "truth.json",
        &json!({
            "coordinates": "helmert ilr",
            "theta": rows_of(&r.truth.theta),
            "sigma_v": rows_of(&r.truth.sigma_v),
            "planted_pair": planted,
        }),
    )?;
    let config = json!({ "plant_edge": a.plant_edge, "plant_shift": a.plant_shift });
    out.finish("replica", &config, &BTreeMap::new(), seed, ctx.threads)
}
