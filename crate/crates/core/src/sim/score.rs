use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{LaplacianBundle, WeightedGraph};
use crate::linalg;
use crate::model::{edge_deltas, flag_edge_outliers, Dataset, ModelParams};

/// Level of the chi-square cut that defines true and detected outlier edges.
pub const SCORE_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub fsc: f64,
    pub kl: f64,
    pub rd: f64,
    /// True when either outlier set was empty and `fsc` was set to 0.
    pub fsc_degenerate: bool,
}

/// F-score of two index sets. With `a` the reference set,
/// `pr = |a & b| / |a|` and `rec = |a & b| / |b|`; the harmonic mean is
/// symmetric in the two. Empty sets and an empty intersection give 0.
pub fn f_score(reference: &[usize], detected: &[usize]) -> (f64, bool) {
    if reference.is_empty() || detected.is_empty() {
        return (0.0, true);
    }
    let inter = reference.iter().filter(|k| detected.binary_search(k).is_ok()).count() as f64;
    if inter == 0.0 {
        return (0.0, false);
    }
    let pr = inter / reference.len() as f64;
    let rec = inter / detected.len() as f64;
    (2.0 * pr * rec / (pr + rec), false)
}

/// `1/2 (tr(S^-1 S_hat) - p + log(|S| / |S_hat|) + tr((Z d) S^-1 (Z d)') / q)`
/// with `d = theta - theta_hat`: the Gaussian divergence of the estimate
/// from the truth, with the mean term averaged over covariates. Never
/// negative.
pub fn kl_divergence(est: &ModelParams, truth: &ModelParams, z: &DMatrix<f64>) -> Result<f64> {
    let p = truth.p() as f64;
    let q = truth.q() as f64;
    let inv = linalg::inv_pd(&truth.sigma_v, "true Sigma_V")?;
    let tr = (&inv * &est.sigma_v).trace();
    let log_ratio = linalg::log_det_pd(&truth.sigma_v, "true Sigma_V")?
        - linalg::log_det_pd(&est.sigma_v, "estimated Sigma_V")?;
    let dm = z * (&truth.theta - &est.theta);
    let mean_term = (&dm * &inv * dm.transpose()).trace() / q;
    Ok(0.5 * (tr - p + log_ratio + mean_term))
}

pub fn relative_distance(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

/// Indices of edges whose standardized statistic exceeds the
/// `chi2(p, SCORE_LEVEL)` quantile under `params`.
pub fn outlier_edges(
    data: &Dataset,
    params: &ModelParams,
    bundle: &LaplacianBundle,
    graph: &WeightedGraph,
) -> Result<Vec<usize>> {
    let diag = flag_edge_outliers(&edge_deltas(data, params, bundle, graph)?, params.p(), SCORE_LEVEL)?;
    Ok(diag.iter().enumerate().filter(|(_, d)| d.is_outlier).map(|(k, _)| k).collect())
}

/// All three scores of an estimate against the truth, on the observed data.
pub fn score(
    est: &ModelParams,
    truth: &ModelParams,
    data: &Dataset,
    graph: &WeightedGraph,
    bundle: &LaplacianBundle,
) -> Result<Scores> {
    let reference = outlier_edges(data, truth, bundle, graph)?;
    let detected = outlier_edges(data, est, bundle, graph)?;
    let (fsc, fsc_degenerate) = f_score(&reference, &detected);
    Ok(Scores {
        fsc,
        kl: kl_divergence(est, truth, &data.z)?,
        rd: relative_distance(&est.theta, &truth.theta),
        fsc_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_covariance, gen_dataset, gen_graph, GraphType};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = gen_graph(GraphType::Knn, 100, &mut rng).unwrap();
        let b = LaplacianBundle::with_default_tol(&g);
        let s = gen_covariance(3, &mut rng);
        let (d, truth) = gen_dataset(&b, &s, 7, &mut rng).unwrap();
        let sc = score(&truth, &truth, &d, &g, &b).unwrap();
        assert!(sc.kl.abs() < 1e-12);
        assert_eq!(sc.rd, 0.0);
        assert!(!sc.fsc_degenerate, "no outliers at 0.95 among {} edges", g.n_edges());
        assert_eq!(sc.fsc, 1.0);
    }

    /// `E_est[log f_est(x) - log f_truth(x)]` by Monte Carlo, zero means.
    fn kl_monte_carlo(est: &DMatrix<f64>, truth: &DMatrix<f64>, draws: usize) -> f64 {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let root = linalg::sqrt_pd(est, "").unwrap();
        let (ie, it) = (linalg::inv_pd(est, "").unwrap(), linalg::inv_pd(truth, "").unwrap());
        let (le, lt) = (est.determinant().ln(), truth.determinant().ln());
        let mut acc = 0.0;
        for _ in 0..draws {
            let g = nalgebra::DVector::from_fn(est.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &root * g;
            let log_e = -0.5 * (le + (x.transpose() * &ie * &x)[(0, 0)]);
            let log_t = -0.5 * (lt + (x.transpose() * &it * &x)[(0, 0)]);
            acc += log_e - log_t;
        }
        acc / draws as f64
    }

    #[test]
    fn doubled_covariance_kl() {
        // direct substitution: 1/2 (tr(2 I) - 3 - log 2^3)
        let closed = 0.5 * (6.0 - 3.0 - 8.0_f64.ln());
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let mc = kl_monte_carlo(&(&s * 2.0), &s, 400_000);
        assert!((mc - closed).abs() < 0.01, "{mc} vs {closed}");
        let theta = DMatrix::from_fn(7, 3, |r, c| (r as f64 - c as f64) * 0.3);
        let truth = ModelParams::new(theta.clone(), s.clone()).unwrap();
        let est = ModelParams::new(theta, s * 2.0).unwrap();
        let z = DMatrix::from_fn(20, 7, |r, c| ((r * 7 + c) as f64).sin());
        let kl = kl_divergence(&est, &truth, &z).unwrap();
        assert!((kl - closed).abs() < 1e-12, "{kl}");
    }

    #[test]
    fn kl_is_non_negative_for_shrunken_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let theta = DMatrix::from_element(1, 2, 1.0);
        let truth = ModelParams::new(theta.clone(), s.clone()).unwrap();
        let z = DMatrix::from_element(5, 1, 1.0);
        for c in [0.01, 0.5, 0.9, 1.0, 1.1, 3.0] {
            let est = ModelParams::new(theta.clone(), &s * c).unwrap();
            assert!(kl_divergence(&est, &truth, &z).unwrap() > -1e-12);
        }
        let mc = kl_monte_carlo(&(&s * 0.5), &s, 400_000);
        let est = ModelParams::new(theta, &s * 0.5).unwrap();
        assert!((mc - kl_divergence(&est, &truth, &z).unwrap()).abs() < 0.01);
    }

    #[test]
    fn f_score_corners() {
        assert_eq!(f_score(&[1, 2, 3], &[4, 5]), (0.0, false));
        assert_eq!(f_score(&[], &[4, 5]), (0.0, true));
        assert_eq!(f_score(&[1, 2], &[]), (0.0, true));
        let (f, _) = f_score(&[1, 2, 3, 4], &[3, 4]);
        // pr = 2/4, rec = 2/2
        assert!((f - 2.0 * 0.5 / 1.5).abs() < 1e-15);
        assert_eq!(f_score(&[1, 2, 3, 4], &[3, 4]), f_score(&[3, 4], &[1, 2, 3, 4]));
    }
}
