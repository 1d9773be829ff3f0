//! Synthetic data shaped like a regional election study: vote shares of
//! three party blocks per region, regressed on age, employment and
//! education compositions plus a few rates, over a neighbourhood network.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use super::simplex::{perturb, power, Composition, ContrastMatrix};
use super::{CodaSchema, ResponseKind};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, LaplacianBundle, WeightedGraph};
use crate::model::{sample_matrix_normal_rng, ModelParams};

pub const REPLICA_NODES: usize = 95;
pub const REPLICA_COVARIATES: usize = 19;
pub const REPLICA_SEED: u64 = 2015;

const NEIGHBOURS: usize = 4;
const GROUP_SIZES: [usize; 3] = [4, 5, 4];
const EUCLIDEAN_COVARIATES: usize = 6;
const RESPONSE_NAMES: [&str; 3] = ["left", "right", "other"];

#[derive(Debug, Clone)]
pub struct ElectionReplica {
    pub coords: Vec<Vec<f64>>,
    pub graph: WeightedGraph,
    /// Vote shares, `n x 3`, rows summing to one.
    pub x: DMatrix<f64>,
    /// Covariates, `n x 19`: three compositional groups then six rates.
    pub z: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub schema: CodaSchema,
    /// Generating parameters in Helmert ilr coordinates.
    pub truth: ModelParams,
}

fn covariate_names() -> Vec<String> {
    let mut out = Vec::new();
    for (prefix, &size) in ["age", "emp", "edu"].iter().zip(&GROUP_SIZES) {
        out.extend((0..size).map(|k| format!("{prefix}_{k}")));
    }
    out.extend((0..EUCLIDEAN_COVARIATES).map(|k| format!("rate_{k}")));
    out
}

fn replica_schema() -> CodaSchema {
    let mut start = 0;
    let covariate_groups = GROUP_SIZES
        .iter()
        .map(|&s| {
            let g = (start..start + s).collect();
            start += s;
            g
        })
        .collect();
    CodaSchema { response: ResponseKind::Compositional, covariate_groups }
}

fn neighbourhood_graph<R: Rng + ?Sized>(rng: &mut R) -> Result<(Vec<Vec<f64>>, WeightedGraph)> {
    let mut components = 0;
    for _ in 0..100 {
        let coords: Vec<Vec<f64>> = (0..REPLICA_NODES).map(|_| vec![rng.random(), rng.random()]).collect();
        let g = build_knn_graph(&coords, NEIGHBOURS)?;
        if g.is_connected() {
            return Ok((coords, g));
        }
        components = g.n_components();
    }
    Err(Error::Disconnected { components })
}

/// Clean replica drawn from the model in ilr coordinates, so no edge or
/// node is an outlier by construction.
pub fn election_replica(seed: u64) -> Result<ElectionReplica> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (coords, graph) = neighbourhood_graph(&mut rng)?;
    let bundle = LaplacianBundle::with_default_tol(&graph);
    let n = REPLICA_NODES;
    let schema = replica_schema();

    let spread = Normal::new(0.0, 0.5).expect("valid sd");
    let mut z = DMatrix::zeros(n, REPLICA_COVARIATES);
    let mut z_ilr = DMatrix::zeros(n, REPLICA_COVARIATES - GROUP_SIZES.len());
    let mut col = 0;
    for (g, cols) in schema.covariate_groups.iter().enumerate() {
        let v = ContrastMatrix::helmert(GROUP_SIZES[g])?;
        for i in 0..n {
            let u: Vec<f64> = (0..cols.len() - 1).map(|_| rng.sample(spread)).collect();
            for (k, &uk) in u.iter().enumerate() {
                z_ilr[(i, col + k)] = uk;
            }
            for (&c, part) in cols.iter().zip(v.ilr_inv(&u)?.parts()) {
                z[(i, c)] = *part;
            }
        }
        col += cols.len() - 1;
    }
    let first_rate = REPLICA_COVARIATES - EUCLIDEAN_COVARIATES;
    for i in 0..n {
        for k in 0..EUCLIDEAN_COVARIATES {
            let v: f64 = rng.sample(StandardNormal);
            z[(i, first_rate + k)] = v;
            z_ilr[(i, col + k)] = v;
        }
    }

    let coef = Normal::new(0.0, 0.3).expect("valid sd");
    let theta = DMatrix::from_fn(z_ilr.ncols(), 2, |_, _| rng.sample(coef));
    let sigma = DMatrix::from_row_slice(2, 2, &[0.05, 0.015, 0.015, 0.03]);
    let truth = ModelParams::new(theta, sigma)?;
    let sample = sample_matrix_normal_rng(&truth, &bundle, &z_ilr, &mut rng)?;

    let vx = ContrastMatrix::helmert(3)?;
    let centre = Composition::new(&[0.4, 0.35, 0.25])?;
    let mut x = DMatrix::zeros(n, 3);
    for i in 0..n {
        let u = [sample.x[(i, 0)], sample.x[(i, 1)]];
        let share = perturb(&vx.ilr_inv(&u)?, &centre)?;
        for (k, v) in share.parts().iter().enumerate() {
            x[(i, k)] = *v;
        }
    }
    Ok(ElectionReplica {
        coords,
        graph,
        x,
        z,
        x_names: RESPONSE_NAMES.iter().map(|s| s.to_string()).collect(),
        z_names: covariate_names(),
        schema,
        truth,
    })
}

/// Pushes the two endpoints of `edge` apart: node `i` is perturbed by a
/// composition at Aitchison norm `shift` from the centre, node `j` by its
/// inverse. Returns the endpoints.
pub fn plant_pair(replica: &mut ElectionReplica, edge: usize, shift: f64) -> Result<(usize, usize)> {
    let e = *replica
        .graph
        .edges()
        .get(edge)
        .ok_or_else(|| Error::InvalidInput(format!("edge {edge} out of range")))?;
    let d = std::f64::consts::FRAC_1_SQRT_2 * shift;
    let a = ContrastMatrix::helmert(3)?.ilr_inv(&[d, d])?;
    let a_inv = power(&a, -1.0)?;
    for (node, by) in [(e.i, &a), (e.j, &a_inv)] {
        let row: Vec<f64> = replica.x.row(node).iter().cloned().collect();
        let moved = perturb(&Composition::new(&row)?, by)?;
        for (k, v) in moved.parts().iter().enumerate() {
            replica.x[(node, k)] = *v;
        }
    }
    Ok((e.i, e.j))
}
