use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::EdgewiseDesign;
use super::mle::{expand_theta, free_design};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelParams;
use crate::robust::{seed_covariance, SeedMethod};

/// Initial estimate produced by one seed method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Start {
    pub method: SeedMethod,
    pub params: ModelParams,
}

/// Orthogonal `k x k` frame from the rows of `m`: eigenvectors of the
/// spatial sign covariance, by decreasing eigenvalue, each signed so the
/// projected rows have positive third moment.
///
/// The seed transforms act column by column, so they are not rotation
/// equivariant; computing them in this frame makes the starts, and with
/// them the whole fit, equivariant under orthogonal changes of the
/// response or covariate coordinates.
pub(crate) fn canonical_frame(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let mut sscm = DMatrix::zeros(k, k);
    for row in m.row_iter() {
        let norm = row.norm();
        if norm > 0.0 {
            let u = row.transpose() / norm;
            sscm += &u * u.transpose();
        }
    }
    let (_, vectors) = linalg::sorted_eigen(&linalg::symmetrize(&sscm));
    let mut frame = DMatrix::zeros(k, k);
    for c in 0..k {
        // sorted_eigen is ascending
        let mut v = vectors.column(k - 1 - c).clone_owned();
        let skew: f64 = (m * &v).iter().map(|s| s * s * s).sum();
        if skew < 0.0 {
            v = -v;
        }
        frame.set_column(c, &v);
    }
    frame
}

/// Robust initial estimate from one seed method.
///
/// The covariance of the joined edge rows `[Z_E | X_E]` (free covariate
/// columns only) is estimated in one piece, so the `Z_E` and `X_E` blocks
/// share their singular directions; then `theta0 = C_ZZ^-1 C_ZX`. The
/// residual covariance uses the same method on `E = X_E - Z_E theta0`,
/// scaled like the likelihood estimate: `Sigma_V0 = (|E| / n) C_EE`.
/// Each block is transformed in its `canonical_frame`.
pub fn start_from_method(design: &EdgewiseDesign, method: SeedMethod) -> Result<ModelParams> {
    let free = design.free_columns();
    let q = design.q();
    let p = design.p();
    let m = design.n_edges() as f64;
    let theta = if free.is_empty() {
        DMatrix::zeros(q, p)
    } else {
        let zf = free_design(design, &free);
        let qf = zf.ncols();
        let (rz, rx) = (canonical_frame(&zf), canonical_frame(&design.x_e));
        let mut joined = DMatrix::zeros(design.n_edges(), qf + p);
        joined.columns_mut(0, qf).copy_from(&(&zf * &rz));
        joined.columns_mut(qf, p).copy_from(&(&design.x_e * &rx));
        let c = seed_covariance(&joined, &joined, method)?;
        let czz = linalg::symmetrize(&c.view((0, 0), (qf, qf)).clone_owned());
        let czx = c.view((0, qf), (qf, p)).clone_owned();
        let t = linalg::solve_spd(&czz, &czx, "C_ZZ").map_err(|_| {
            Error::Degenerate(format!("{} start: robust covariate covariance is singular", method.name()))
        })?;
        expand_theta(&(&rz * t * rx.transpose()), &free, q)
    };
    let e = &design.x_e - &design.z_e * &theta;
    let re = canonical_frame(&e);
    let er = &e * &re;
    let cee = linalg::symmetrize(&(&re * seed_covariance(&er, &er, method)? * re.transpose()));
    let sigma = cee * (m / design.n_nodes as f64);
    let params = ModelParams::new(theta, sigma)?;
    params.require_pd().map_err(|_| {
        Error::Degenerate(format!("{} start: residual covariance is not positive definite", method.name()))
    })?;
    Ok(params)
}

/// The four deterministic starts. A start whose transformed data are
/// degenerate is dropped with a warning; at least one has to survive.
pub fn deterministic_starts(design: &EdgewiseDesign) -> Result<Vec<Start>> {
    if design.n_edges() <= design.p() + design.q() {
        return Err(Error::InvalidInput(format!(
            "{} edges are too few for p = {} and q = {}",
            design.n_edges(),
            design.p(),
            design.q()
        )));
    }
    let starts: Vec<Start> = SeedMethod::ALL
        .iter()
        .filter_map(|&method| match start_from_method(design, method) {
            Ok(params) => Some(Start { method, params }),
            Err(e) => {
                warn!("dropping {} start: {e}", method.name());
                None
            }
        })
        .collect();
    if starts.is_empty() {
        return Err(Error::Degenerate("all four deterministic starts are degenerate".into()));
    }
    Ok(starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, LaplacianBundle};
    use crate::mcd::{build_edgewise_design, mle_fit_edgewise};
    use crate::model::sample_matrix_normal;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    // knn graph with roughly 2000 edges
    fn clean_design(seed: u64) -> EdgewiseDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 680;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let g = build_knn_graph(&pts, 5)
            .unwrap()
            .reweighted(|_| rng.random_range(0.05..1.0))
            .unwrap();
        let b = LaplacianBundle::with_default_tol(&g);
        let truth = ModelParams::new(
            DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0)),
            DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 2.0, -0.3, 0.5, -0.3, 1.0]),
        )
        .unwrap();
        let z = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let d = sample_matrix_normal(&truth, &b, &z, seed + 11).unwrap();
        build_edgewise_design(&d, &g).unwrap()
    }

    #[test]
    fn clean_starts_near_mle() {
        let des = clean_design(1);
        assert!(des.n_edges() >= 1900, "{}", des.n_edges());
        let mle = mle_fit_edgewise(&des).unwrap();
        let starts = deterministic_starts(&des).unwrap();
        assert_eq!(starts.len(), 4);
        for s in &starts {
            let err = rel_frob(&s.params.theta, &mle.theta);
            assert!(err < 0.10, "{:?}: {err}", s.method);
        }
    }

    #[test]
    fn row_permutation_invariant() {
        let des = clean_design(2);
        let mut perm: Vec<usize> = (0..des.n_edges()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let a = deterministic_starts(&des).unwrap();
        let b = deterministic_starts(&des.permuted(&perm)).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.method, sb.method);
            assert!(linalg::max_abs(&(&sa.params.theta - &sb.params.theta)) < 1e-9);
            assert!(linalg::max_abs(&(&sa.params.sigma_v - &sb.params.sigma_v)) < 1e-9);
        }
    }

    #[test]
    fn rank_start_resists_gross_rows() {
        let des = clean_design(3);
        let m = des.n_edges();
        let clean_mle = mle_fit_edgewise(&des).unwrap();
        let clean_rank = start_from_method(&des, SeedMethod::Rank).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rows: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        let mut bad = des.clone();
        for &k in &rows[..m / 5] {
            for c in 0..bad.q() {
                bad.z_e[(k, c)] += 100.0 * rng.random_range(-1.0..1.0);
            }
            for c in 0..bad.p() {
                bad.x_e[(k, c)] += 100.0 * rng.random_range(-1.0..1.0);
            }
        }
        let moved_rank = rel_frob(&start_from_method(&bad, SeedMethod::Rank).unwrap().theta, &clean_rank.theta);
        let moved_mle = rel_frob(&mle_fit_edgewise(&bad).unwrap().theta, &clean_mle.theta);
        assert!(moved_rank < 0.5, "rank start moved {moved_rank}");
        // independent noise drags the least-squares fit towards zero, a
        // relative move of about one
        assert!(moved_mle > 0.9, "mle moved {moved_mle}");
    }

    fn random_rotation(k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0)).qr().q()
    }

    #[test]
    fn starts_rotate_with_the_coordinates() {
        let des = clean_design(6);
        let (a, b) = (random_rotation(des.q(), 1), random_rotation(des.p(), 2));
        let mut rot = des.clone();
        rot.z_e = &des.z_e * &a;
        rot.x_e = &des.x_e * &b;
        for (s, r) in deterministic_starts(&des).unwrap().iter().zip(&deterministic_starts(&rot).unwrap()) {
            let theta = a.transpose() * &s.params.theta * &b;
            let sigma = b.transpose() * &s.params.sigma_v * &b;
            assert!(rel_frob(&r.params.theta, &theta) < 1e-9, "{:?}", s.method);
            assert!(rel_frob(&r.params.sigma_v, &sigma) < 1e-9, "{:?}", s.method);
        }
    }

    #[test]
    fn too_few_edges() {
        let des = clean_design(4);
        let tiny = des.permuted(&[0, 1, 2, 3, 4]);
        assert!(matches!(deterministic_starts(&tiny), Err(Error::InvalidInput(_))));
    }
}

