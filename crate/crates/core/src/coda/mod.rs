//! Compositional responses and covariates.
//!
//! Compositional blocks are mapped to ilr coordinates, the edgewise MCD is
//! run there, and estimates and edge statistics are reported in clr
//! coordinates, which do not depend on the contrast matrices.

mod replica;
mod simplex;

pub use replica::{election_replica, plant_pair, ElectionReplica, REPLICA_COVARIATES, REPLICA_NODES, REPLICA_SEED};
pub use simplex::{
    aitchison_distance, aitchison_inner, aitchison_ops, closure, clr, ilr, ilr_inv, perturb, power, Composition,
    ContrastMatrix,
};

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::mcd::{edgewise_mcd_fit, FitResult, McdConfig};
use crate::model::{deltas_from_residuals, flag_edge_outliers, node_diagnostics, Dataset, EdgeDiagnostics, NodeDiagnostics};

/// Default flag level in clr coordinates.
pub const CODA_LEVEL: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    #[default]
    Compositional,
    Euclidean,
}

/// Which columns are compositional. Groups list covariate column indices;
/// the remaining covariates pass through unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CodaSchema {
    #[serde(default)]
    pub response: ResponseKind,
    #[serde(default)]
    pub covariate_groups: Vec<Vec<usize>>,
}

impl CodaSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("coda schema: {e}")))
    }

    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if self.response == ResponseKind::Compositional && p < 2 {
            return Err(Error::InvalidInput(format!("compositional response with {p} parts")));
        }
        let mut seen = vec![false; q];
        for (g, cols) in self.covariate_groups.iter().enumerate() {
            if cols.len() < 2 {
                return Err(Error::InvalidInput(format!("covariate group {g} has {} columns", cols.len())));
            }
            for &c in cols {
                if c >= q {
                    return Err(Error::DimensionMismatch(format!("covariate group {g}: column {c} but q = {q}")));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::InvalidInput(format!("covariate column {c} is in two groups")));
                }
            }
        }
        Ok(())
    }

    /// Number of ilr covariate columns.
    pub fn q_ilr(&self, q: usize) -> usize {
        q - self.covariate_groups.len()
    }
}

/// One contrast matrix for the response (if compositional) and one per
/// covariate group.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrasts {
    pub response: Option<ContrastMatrix>,
    pub groups: Vec<ContrastMatrix>,
}

impl Contrasts {
    pub fn helmert(schema: &CodaSchema, p: usize) -> Result<Self> {
        Self::build(schema, p, ContrastMatrix::helmert)
    }

    pub fn random<R: Rng + ?Sized>(schema: &CodaSchema, p: usize, rng: &mut R) -> Result<Self> {
        Self::build(schema, p, |k| ContrastMatrix::random(k, rng))
    }

    fn build<F: FnMut(usize) -> Result<ContrastMatrix>>(schema: &CodaSchema, p: usize, mut f: F) -> Result<Self> {
        let response = match schema.response {
            ResponseKind::Compositional => Some(f(p)?),
            ResponseKind::Euclidean => None,
        };
        let groups = schema.covariate_groups.iter().map(|g| f(g.len())).collect::<Result<_>>()?;
        Ok(Self { response, groups })
    }

    /// `V_X`: the response contrast, or the identity for Euclidean responses.
    pub fn v_x(&self, p: usize) -> DMatrix<f64> {
        self.response.as_ref().map_or_else(|| DMatrix::identity(p, p), |v| v.matrix().clone())
    }

    /// `V_Z` (`q x q_ilr`) with `Z_ilr = Z_clr V_Z`: identity on pass-through
    /// columns, the group contrast on each group's rows. The ilr columns of a
    /// group sit at the position of its first column.
    pub fn v_z(&self, schema: &CodaSchema, q: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(q, schema.q_ilr(q));
        let group_of: Vec<Option<usize>> = (0..q)
            .map(|c| schema.covariate_groups.iter().position(|g| g.contains(&c)))
            .collect();
        let mut col = 0;
        for c in 0..q {
            match group_of[c] {
                None => {
                    out[(c, col)] = 1.0;
                    col += 1;
                }
                Some(g) if schema.covariate_groups[g].iter().min() == Some(&c) => {
                    let v = self.groups[g].matrix();
                    for (r, &src) in schema.covariate_groups[g].iter().enumerate() {
                        for k in 0..v.ncols() {
                            out[(src, col + k)] = v[(r, k)];
                        }
                    }
                    col += v.ncols();
                }
                Some(_) => {}
            }
        }
        out
    }
}

/// clr of each row of `m` restricted to `cols`, written back in place.
/// Rows are closed first; a row whose sum is off by more than `1e-6`
/// relative triggers a warning.
fn clr_block(m: &mut DMatrix<f64>, cols: &[usize], what: &str) -> Result<()> {
    let mut warned = false;
    for r in 0..m.nrows() {
        let parts: Vec<f64> = cols.iter().map(|&c| m[(r, c)]).collect();
        let comp = Composition::new(&parts).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("{what}, row {r}: {msg}")),
            other => other,
        })?;
        let s: f64 = parts.iter().sum();
        if !warned && (s - 1.0).abs() > 1e-6 {
            warn!("{what}: row {r} sums to {s}, closing rows to one");
            warned = true;
        }
        for (&c, v) in cols.iter().zip(clr(&comp)) {
            m[(r, c)] = v;
        }
    }
    Ok(())
}

/// Observed data in clr coordinates (Euclidean blocks untouched).
pub fn to_clr(x: &DMatrix<f64>, z: &DMatrix<f64>, schema: &CodaSchema) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    schema.validate(x.ncols(), z.ncols())?;
    let mut xc = x.clone();
    if schema.response == ResponseKind::Compositional {
        clr_block(&mut xc, &(0..x.ncols()).collect::<Vec<_>>(), "response")?;
    }
    let mut zc = z.clone();
    for (g, cols) in schema.covariate_groups.iter().enumerate() {
        clr_block(&mut zc, cols, &format!("covariate group {g}"))?;
    }
    Ok((xc, zc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodaConfig {
    pub mcd: McdConfig,
    /// Flag level for edges and nodes in clr coordinates.
    pub level: f64,
}

impl Default for CodaConfig {
    fn default() -> Self {
        Self { mcd: McdConfig::default(), level: CODA_LEVEL }
    }
}

/// Result of a compositional fit, reported in clr coordinates.
#[derive(Debug, Clone)]
pub struct CodaFit {
    /// The fit in ilr coordinates.
    pub ilr_fit: FitResult,
    pub x_clr: DMatrix<f64>,
    pub z_clr: DMatrix<f64>,
    /// `V_Z theta_ilr V_X'`.
    pub theta_clr: DMatrix<f64>,
    /// `V_X Sigma_ilr V_X'`, singular for a compositional response.
    pub sigma_clr: DMatrix<f64>,
    /// `V_X Sigma_ilr^-1 V_X'`, the generalized inverse of `sigma_clr`.
    pub sigma_clr_pinv: DMatrix<f64>,
    /// Edge statistics with `(Sigma_clr)^+`, flagged against `chi2(dof, level)`.
    pub edges: Vec<EdgeDiagnostics>,
    /// Node statistics; equal in ilr and clr coordinates.
    pub nodes: Vec<NodeDiagnostics>,
    /// `L^{1/2} (X_clr - Z_clr theta_clr) V_X Sigma_ilr^{-1/2} V_X'`.
    pub residuals: DMatrix<f64>,
    pub dof: usize,
    pub level: f64,
}

/// Edgewise MCD on ilr coordinates with results mapped to clr.
pub fn fit_compositional(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    schema: &CodaSchema,
    contrasts: &Contrasts,
    graph: &WeightedGraph,
    bundle: &LaplacianBundle,
    config: &CodaConfig,
) -> Result<CodaFit> {
    let level = config.level;
    let (p, q) = (x.ncols(), z.ncols());
    if z.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, Z has {}", x.nrows(), z.nrows())));
    }
    let (x_clr, z_clr) = to_clr(x, z, schema)?;
    if contrasts.groups.len() != schema.covariate_groups.len()
        || contrasts.response.is_some() != (schema.response == ResponseKind::Compositional)
    {
        return Err(Error::DimensionMismatch("contrast matrices do not match the schema".into()));
    }
    let v_x = contrasts.v_x(p);
    let v_z = contrasts.v_z(schema, q);
    let data = Dataset::new(&x_clr * &v_x, &z_clr * &v_z)?;
    let dof = data.p();
    let mcd = McdConfig { dof: config.mcd.dof.or(Some(dof)), ..config.mcd.clone() };
    let ilr_fit = edgewise_mcd_fit(&data, graph, bundle, &mcd)?;

    let ilr = &ilr_fit.params;
    let theta_clr = &v_z * &ilr.theta * v_x.transpose();
    let sigma_clr = linalg::symmetrize(&(&v_x * &ilr.sigma_v * v_x.transpose()));
    let inv = linalg::inv_pd(&ilr.sigma_v, "ilr Sigma_V")?;
    let sigma_clr_pinv = linalg::symmetrize(&(&v_x * inv * v_x.transpose()));
    let resid = &x_clr - &z_clr * &theta_clr;
    let edges = flag_edge_outliers(&deltas_from_residuals(&resid, &sigma_clr_pinv, bundle, graph), dof, level)?;
    let nodes = node_diagnostics(&data, ilr, bundle, dof, level)?;
    let inv_root = &v_x * linalg::inv_sqrt_pd(&ilr.sigma_v, "ilr Sigma_V")? * v_x.transpose();
    let residuals = &bundle.sqrt * &resid * inv_root;
    Ok(CodaFit {
        ilr_fit,
        x_clr,
        z_clr,
        theta_clr,
        sigma_clr,
        sigma_clr_pinv,
        edges,
        nodes,
        residuals,
        dof,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::edge_deltas;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_replica() -> ElectionReplica {
        election_replica(REPLICA_SEED).unwrap()
    }

    #[test]
    fn schema_json() {
        let s = CodaSchema::from_json(r#"{"response": "compositional", "covariate_groups": [[0, 2], [3, 4, 5]]}"#).unwrap();
        assert_eq!(s.covariate_groups.len(), 2);
        assert_eq!(s.q_ilr(7), 5);
        s.validate(3, 7).unwrap();
        assert!(s.validate(3, 5).is_err());
        let dup = CodaSchema { covariate_groups: vec![vec![0, 1], vec![1, 2]], ..Default::default() };
        assert!(dup.validate(3, 4).is_err());
        assert!(CodaSchema::from_json(r#"{"response": "simplex"}"#).is_err());
    }

    #[test]
    fn v_z_layout() {
        let schema = CodaSchema { covariate_groups: vec![vec![1, 3, 4]], ..Default::default() };
        let c = Contrasts::helmert(&schema, 3).unwrap();
        let vz = c.v_z(&schema, 6);
        assert_eq!(vz.shape(), (6, 5));
        // columns: z0, two ilr columns of (z1, z3, z4), z2, z5
        assert_eq!(vz[(0, 0)], 1.0);
        assert_eq!(vz[(2, 3)], 1.0);
        assert_eq!(vz[(5, 4)], 1.0);
        let g = ContrastMatrix::helmert(3).unwrap();
        assert_eq!(vz[(4, 2)], g.matrix()[(2, 1)]);
        assert_eq!(vz[(3, 1)], g.matrix()[(1, 0)]);
        assert!((vz.transpose() * &vz - DMatrix::identity(5, 5)).abs().max() < 1e-12);
    }

    #[test]
    fn nonpositive_part_names_row() {
        let r = small_replica();
        let mut x = r.x.clone();
        x[(7, 1)] = 0.0;
        let err = to_clr(&x, &r.z, &r.schema).unwrap_err();
        assert!(matches!(&err, Error::Domain(m) if m.contains("row 7")), "{err}");
    }

    #[test]
    fn contrast_invariance() {
        let r = small_replica();
        let b = LaplacianBundle::with_default_tol(&r.graph);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c1 = Contrasts::random(&r.schema, 3, &mut rng).unwrap();
        let c2 = Contrasts::random(&r.schema, 3, &mut rng).unwrap();
        let cfg = CodaConfig::default();
        let f1 = fit_compositional(&r.x, &r.z, &r.schema, &c1, &r.graph, &b, &cfg).unwrap();
        let f2 = fit_compositional(&r.x, &r.z, &r.schema, &c2, &r.graph, &b, &cfg).unwrap();
        for (a, e) in f1.edges.iter().zip(&f2.edges) {
            assert!((a.delta - e.delta).abs() < 1e-9 * (1.0 + a.delta), "{} {}", a.delta, e.delta);
            assert_eq!(a.is_outlier, e.is_outlier);
        }
        assert!((&f1.theta_clr - &f2.theta_clr).abs().max() < 1e-8);
        assert!((&f1.sigma_clr - &f2.sigma_clr).abs().max() < 1e-8);
    }

    #[test]
    fn clr_and_ilr_statistics_agree() {
        let r = small_replica();
        let b = LaplacianBundle::with_default_tol(&r.graph);
        let c = Contrasts::helmert(&r.schema, 3).unwrap();
        let f = fit_compositional(&r.x, &r.z, &r.schema, &c, &r.graph, &b, &CodaConfig::default()).unwrap();
        let ilr_data = Dataset::new(&f.x_clr * c.v_x(3), &f.z_clr * c.v_z(&r.schema, r.z.ncols())).unwrap();
        let direct = edge_deltas(&ilr_data, &f.ilr_fit.params, &b, &r.graph).unwrap();
        for (a, e) in f.edges.iter().zip(&direct) {
            assert!((a.delta - e.delta).abs() < 1e-9 * (1.0 + e.delta));
        }
    }

    #[test]
    fn clr_estimates_live_in_zero_sum_space() {
        let r = small_replica();
        let b = LaplacianBundle::with_default_tol(&r.graph);
        let c = Contrasts::helmert(&r.schema, 3).unwrap();
        let f = fit_compositional(&r.x, &r.z, &r.schema, &c, &r.graph, &b, &CodaConfig::default()).unwrap();
        for row in f.theta_clr.row_iter() {
            assert!(row.sum().abs() < 1e-10);
        }
        // rows of a compositional covariate group sum to zero within each response column
        for g in &r.schema.covariate_groups {
            for k in 0..3 {
                let s: f64 = g.iter().map(|&c| f.theta_clr[(c, k)]).sum();
                assert!(s.abs() < 1e-10);
            }
        }
        let ones = DMatrix::from_element(3, 1, 1.0);
        assert!((&f.sigma_clr * &ones).abs().max() < 1e-8);
        assert!((&f.sigma_clr - f.sigma_clr.transpose()).abs().max() < 1e-14);
        let (vals, _) = linalg::sorted_eigen(&f.sigma_clr);
        assert!(vals.iter().all(|v| *v > -1e-8));
        assert_eq!(f.dof, 2);
    }

    #[test]
    fn euclidean_response_is_untouched() {
        let r = small_replica();
        let schema = CodaSchema { response: ResponseKind::Euclidean, ..r.schema.clone() };
        let (xc, _) = to_clr(&r.x, &r.z, &schema).unwrap();
        assert_eq!(xc, r.x);
        assert_eq!(Contrasts::helmert(&schema, 3).unwrap().v_x(3), DMatrix::identity(3, 3));
    }
}
