//! Simulation benchmark: random graphs and parameters, row-swap corruption,
//! three competing estimators and their error scores.

mod baseline;
mod generate;
mod score;

pub use baseline::{lts_fit, mcd_baseline, plain_mcd, PlainMcd};
pub use generate::{corrupt, gen_covariance, gen_dataset, gen_graph, Corruption, GraphType, MAX_GRAPH_ATTEMPTS};
pub use score::{f_score, kl_divergence, outlier_edges, relative_distance, score, Scores, SCORE_LEVEL};

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LaplacianBundle;
use crate::io::fmt_f64;
use crate::linalg::median;
use crate::mcd::{build_edgewise_design, edgewise_mcd_fit, mle_fit, McdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Edgemcd,
    Mcd,
    Std,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Edgemcd, Method::Mcd, Method::Std];

    pub fn name(self) -> &'static str {
        match self {
            Method::Edgemcd => "edgemcd",
            Method::Mcd => "mcd",
            Method::Std => "std",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub graph_type: GraphType,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub zeta: f64,
    pub reps: usize,
    pub seed: u64,
    /// Trimming fraction shared by the edgewise MCD and the comparison arm.
    pub h_fraction: f64,
    /// Run replications on the rayon pool; results do not depend on it.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl SimConfig {
    pub fn new(graph_type: GraphType, n: usize, p: usize, zeta: f64, reps: usize, seed: u64) -> Self {
        Self { graph_type, n, p, q: 7, zeta, reps, seed, h_fraction: 0.75, parallel: true }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.q == 0 || self.reps == 0 {
            return Err(Error::InvalidInput("n >= 2 and positive p, q, reps are required".into()));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::InvalidInput(format!("zeta must lie in [0, 1), got {}", self.zeta)));
        }
        if !(self.h_fraction > 0.0 && self.h_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!("h_fraction must lie in (0, 1], got {}", self.h_fraction)));
        }
        Ok(())
    }
}

/// One line of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub graph_type: GraphType,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub zeta: f64,
    pub rep: usize,
    pub method: Method,
    pub fsc: f64,
    pub kl: f64,
    pub rd: f64,
    #[serde(skip)]
    pub fsc_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    /// `None` when the whole replication failed before fitting.
    pub method: Option<Method>,
    pub reason: String,
}

/// Concentration-step statistics of the edgewise MCD in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CstepStats {
    pub rep: usize,
    pub n_csteps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<ScoreRow>,
    pub failures: Vec<RepFailure>,
    pub csteps: Vec<CstepStats>,
    /// Edges touched by the corruption, per replication.
    pub corrupted_edges: Vec<usize>,
}

impl StudyResult {
    pub fn fsc_degenerate_count(&self) -> usize {
        self.rows.iter().filter(|r| r.fsc_degenerate).count()
    }

    pub fn fixed_point_rate(&self) -> f64 {
        if self.csteps.is_empty() {
            return f64::NAN;
        }
        self.csteps.iter().filter(|c| c.converged).count() as f64 / self.csteps.len() as f64
    }

    /// Values of one score for one method, in replication order.
    pub fn values(&self, method: Method, pick: impl Fn(&ScoreRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).map(pick).collect()
    }

    pub fn extend(&mut self, other: StudyResult) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
        self.csteps.extend(other.csteps);
        self.corrupted_edges.extend(other.corrupted_edges);
    }
}

/// Generator for replication `rep`: the master seed selects the key, the
/// replication index the stream, so runs do not depend on scheduling.
pub fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

struct RepOutcome {
    rows: Vec<ScoreRow>,
    failures: Vec<RepFailure>,
    csteps: Option<CstepStats>,
    corrupted_edges: Option<usize>,
}

fn failed(rep: usize, method: Option<Method>, e: impl std::fmt::Display) -> RepFailure {
    RepFailure { rep, method, reason: e.to_string() }
}

fn run_rep(cfg: &SimConfig, rep: usize) -> RepOutcome {
    let mut out = RepOutcome { rows: Vec::new(), failures: Vec::new(), csteps: None, corrupted_edges: None };
    let mut rng = rep_rng(cfg.seed, rep);
    let sigma = gen_covariance(cfg.p, &mut rng);
    let setup = (|| -> Result<_> {
        let graph = gen_graph(cfg.graph_type, cfg.n, &mut rng)?;
        let bundle = LaplacianBundle::with_default_tol(&graph);
        let (clean, truth) = gen_dataset(&bundle, &sigma, cfg.q, &mut rng)?;
        let corr = corrupt(&clean, &sigma, &graph, cfg.zeta, &mut rng)?;
        Ok((graph, bundle, truth, corr))
    })();
    let (graph, bundle, truth, corr) = match setup {
        Ok(s) => s,
        Err(e) => {
            out.failures.push(failed(rep, None, e));
            return out;
        }
    };
    out.corrupted_edges = Some(corr.edges.len());
    let data = &corr.data;
    let mcd_cfg = McdConfig { h_fraction: cfg.h_fraction, ..Default::default() };

    for method in Method::ALL {
        let est = match method {
            Method::Std => mle_fit(data, &graph, &bundle),
            Method::Edgemcd => edgewise_mcd_fit(data, &graph, &bundle, &mcd_cfg).map(|fit| {
                out.csteps = Some(CstepStats { rep, n_csteps: fit.n_csteps, converged: fit.converged });
                fit.params
            }),
            Method::Mcd => build_edgewise_design(data, &graph).and_then(|design| {
                let h = mcd_cfg.resolve_h(design.n_edges(), design.p())?;
                mcd_baseline(&design, h, &mut rng)
            }),
        };
        let scored = est.and_then(|est| score(&est, &truth, data, &graph, &bundle));
        match scored {
            Ok(s) if s.fsc.is_finite() && s.kl.is_finite() && s.rd.is_finite() => out.rows.push(ScoreRow {
                graph_type: cfg.graph_type,
                n: cfg.n,
                p: cfg.p,
                q: cfg.q,
                zeta: cfg.zeta,
                rep,
                method,
                fsc: s.fsc,
                kl: s.kl,
                rd: s.rd,
                fsc_degenerate: s.fsc_degenerate,
            }),
            Ok(s) => out.failures.push(failed(rep, Some(method), format!("non-finite scores {s:?}"))),
            Err(e) => out.failures.push(failed(rep, Some(method), e)),
        }
    }
    out
}

/// Runs every replication of one configuration. Failed replications are
/// recorded and skipped.
pub fn run_study(cfg: &SimConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let outcomes: Vec<RepOutcome> = if cfg.parallel {
        (0..cfg.reps).into_par_iter().map(|rep| run_rep(cfg, rep)).collect()
    } else {
        (0..cfg.reps).map(|rep| run_rep(cfg, rep)).collect()
    };
    let mut res = StudyResult::default();
    for o in outcomes {
        res.rows.extend(o.rows);
        res.failures.extend(o.failures);
        res.csteps.extend(o.csteps);
        res.corrupted_edges.extend(o.corrupted_edges);
    }
    Ok(res)
}

/// Cartesian grid of configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub graph_types: Vec<GraphType>,
    pub ns: Vec<usize>,
    pub ps: Vec<usize>,
    pub zetas: Vec<f64>,
    pub q: usize,
    pub reps: usize,
    pub seed: u64,
    pub h_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            graph_types: GraphType::ALL.to_vec(),
            ns: vec![50, 100, 200, 300],
            ps: vec![3, 10],
            zetas: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            q: 7,
            reps: 20,
            seed: 1,
            h_fraction: 0.75,
        }
    }
}

impl GridConfig {
    /// One configuration per cell; each cell gets its own seed derived from
    /// the master seed and the cell position.
    pub fn cells(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &g in &self.graph_types {
            for &n in &self.ns {
                for &p in &self.ps {
                    for &zeta in &self.zetas {
                        let idx = out.len() as u64;
                        out.push(SimConfig {
                            graph_type: g,
                            n,
                            p,
                            q: self.q,
                            zeta,
                            reps: self.reps,
                            seed: splitmix(self.seed.wrapping_add(idx)),
                            h_fraction: self.h_fraction,
                            parallel: true,
                        });
                    }
                }
            }
        }
        out
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_grid(grid: &GridConfig) -> Result<StudyResult> {
    let mut all = StudyResult::default();
    for cell in grid.cells() {
        all.extend(run_study(&cell)?);
    }
    Ok(all)
}

/// Writes `graph_type,n,p,q,zeta,rep,method,fsc,kl,rd`.
pub fn write_scores_csv<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["graph_type", "n", "p", "q", "zeta", "rep", "method", "fsc", "kl", "rd"])?;
    for r in rows {
        w.write_record([
            r.graph_type.name().to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.zeta.to_string(),
            r.rep.to_string(),
            r.method.name().to_string(),
            fmt_f64(r.fsc),
            fmt_f64(r.kl),
            fmt_f64(r.rd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median scores of one method in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMedian {
    pub graph_type: GraphType,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub zeta: f64,
    pub method: Method,
    pub fsc: f64,
    pub kl: f64,
    pub rd: f64,
    /// Replications that produced scores.
    pub reps: usize,
}

/// Medians per (configuration, method), in order of first appearance.
pub fn cell_medians(rows: &[ScoreRow]) -> Vec<CellMedian> {
    let key = |r: &ScoreRow| (r.graph_type, r.n, r.p, r.q, r.zeta.to_bits(), r.method);
    let mut keys = Vec::new();
    for r in rows {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    keys.into_iter()
        .map(|k| {
            let cell: Vec<&ScoreRow> = rows.iter().filter(|r| key(r) == k).collect();
            let med = |f: fn(&ScoreRow) -> f64| median(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellMedian {
                graph_type: k.0,
                n: k.1,
                p: k.2,
                q: k.3,
                zeta: f64::from_bits(k.4),
                method: k.5,
                fsc: med(|r| r.fsc),
                kl: med(|r| r.kl),
                rd: med(|r| r.rd),
                reps: cell.len(),
            }
        })
        .collect()
}

pub fn write_medians_csv<W: Write>(cells: &[CellMedian], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["graph_type", "n", "p", "q", "zeta", "method", "fsc", "kl", "rd", "reps"])?;
    for c in cells {
        w.write_record([
            c.graph_type.name().to_string(),
            c.n.to_string(),
            c.p.to_string(),
            c.q.to_string(),
            c.zeta.to_string(),
            c.method.name().to_string(),
            fmt_f64(c.fsc),
            fmt_f64(c.kl),
            fmt_f64(c.rd),
            c.reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_schedule_free() {
        let mut cfg = SimConfig::new(GraphType::Knn, 60, 3, 0.1, 4, 17);
        let a = run_study(&cfg).unwrap();
        cfg.parallel = false;
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 12);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.fsc) && r.kl >= 0.0 && r.rd >= 0.0));
    }

    #[test]
    fn untrimmed_methods_agree_on_clean_data() {
        use crate::model::sample_matrix_normal_rng;
        use nalgebra::DMatrix;

        let mut rng = rep_rng(5, 0);
        let sigma = gen_covariance(3, &mut rng);
        let graph = gen_graph(GraphType::Knn, 120, &mut rng).unwrap();
        let bundle = LaplacianBundle::with_default_tol(&graph);
        let (data, truth) = gen_dataset(&bundle, &sigma, 7, &mut rng).unwrap();

        // Monte Carlo standard error of the MLE coefficients
        let draws: Vec<DMatrix<f64>> = (0..200)
            .map(|_| {
                let d = sample_matrix_normal_rng(&truth, &bundle, &data.z, &mut rng).unwrap();
                mle_fit(&d, &graph, &bundle).unwrap().theta
            })
            .collect();
        let mean = draws.iter().fold(DMatrix::zeros(7, 3), |a, t| a + t) / draws.len() as f64;
        let se = draws
            .iter()
            .fold(DMatrix::zeros(7, 3), |a, t| a + (t - &mean).map(|v| v * v))
            .map(|v| (v / (draws.len() - 1) as f64).sqrt());

        let std = mle_fit(&data, &graph, &bundle).unwrap().theta;
        let cfg = McdConfig { h_fraction: 1.0, ..Default::default() };
        let edge = edgewise_mcd_fit(&data, &graph, &bundle, &cfg).unwrap().params.theta;
        let design = build_edgewise_design(&data, &graph).unwrap();
        let mcd = mcd_baseline(&design, design.n_edges(), &mut rng).unwrap().theta;
        for k in 0..std.len() {
            assert!((edge[k] - std[k]).abs() <= 3.0 * se[k], "edgemcd entry {k}");
            assert!((mcd[k] - std[k]).abs() <= 3.0 * se[k], "mcd entry {k}");
        }
    }

    #[test]
    fn csv_layout() {
        let cfg = SimConfig::new(GraphType::Scalefree, 40, 3, 0.05, 1, 3);
        let res = run_study(&cfg).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&res.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "graph_type,n,p,q,zeta,rep,method,fsc,kl,rd");
        assert!(lines.next().unwrap().starts_with("scalefree,40,3,7,0.05,0,edgemcd,"));
    }

    #[test]
    fn medians_per_cell() {
        let row = |method, rep, v: f64| ScoreRow {
            graph_type: GraphType::Knn,
            n: 50,
            p: 3,
            q: 7,
            zeta: 0.1,
            rep,
            method,
            fsc: v,
            kl: 2.0 * v,
            rd: 3.0 * v,
            fsc_degenerate: false,
        };
        let rows = vec![row(Method::Std, 0, 1.0), row(Method::Edgemcd, 0, 5.0), row(Method::Std, 1, 3.0), row(Method::Std, 2, 2.0)];
        let cells = cell_medians(&rows);
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].method, cells[0].reps, cells[0].fsc, cells[0].rd), (Method::Std, 3, 2.0, 6.0));
        assert_eq!((cells[1].method, cells[1].kl), (Method::Edgemcd, 10.0));
        let mut buf = Vec::new();
        write_medians_csv(&cells, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("graph_type,n,p,q,zeta,method,fsc,kl,rd,reps\nknn,50,3,7,0.1,std,"));
    }

    #[test]
    fn grid_config_json_defaults() {
        let g: GridConfig = serde_json::from_str(r#"{"ns": [50], "reps": 3}"#).unwrap();
        assert_eq!(g.ns, vec![50]);
        assert_eq!(g.ps, GridConfig::default().ps);
        assert!(serde_json::from_str::<GridConfig>(r#"{"nodes": 5}"#).is_err());
    }

    #[test]
    fn grid_cells_have_distinct_seeds() {
        let cells = GridConfig::default().cells();
        assert_eq!(cells.len(), 3 * 4 * 2 * 5);
        let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), cells.len());
    }

    #[test]
    fn small_robustness_smoke() {
        let cfg = SimConfig::new(GraphType::Knn, 100, 3, 0.2, 6, 2);
        let res = run_study(&cfg).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        let kl_e = median(&res.values(Method::Edgemcd, |r| r.kl));
        let kl_s = median(&res.values(Method::Std, |r| r.kl));
        assert!(kl_e < kl_s, "edgemcd {kl_e} std {kl_s}");
    }
}
