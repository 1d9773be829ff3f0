//! Robust association seeds and the SVD scale adjustment used to build
//! deterministic starting covariances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chi2::normal_cdf;
use super::qn::{qn_scale, ScaleVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMethod {
    Tanh,
    Rank,
    NormalScores,
    SpatialSign,
}

impl SeedMethod {
    pub const ALL: [SeedMethod; 4] = [
        SeedMethod::Tanh,
        SeedMethod::Rank,
        SeedMethod::NormalScores,
        SeedMethod::SpatialSign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeedMethod::Tanh => "tanh",
            SeedMethod::Rank => "rank",
            SeedMethod::NormalScores => "normal-scores",
            SeedMethod::SpatialSign => "spatial-sign",
        }
    }
}

/// Cross-association matrix between the columns of two scaled data matrices.
#[derive(Debug, Clone)]
pub struct SeedCorrelation {
    pub s: DMatrix<f64>,
    pub method: SeedMethod,
}

impl SeedCorrelation {
    /// Normalizes a square self-association matrix to unit diagonal.
    pub fn to_correlation(&self) -> Result<DMatrix<f64>> {
        if !self.s.is_square() {
            return Err(Error::DimensionMismatch("correlation needs a square seed".into()));
        }
        let d: Vec<f64> = self.s.diagonal().iter().map(|v| v.sqrt()).collect();
        Ok(DMatrix::from_fn(self.s.nrows(), self.s.ncols(), |r, c| {
            self.s[(r, c)] / (d[r] * d[c])
        }))
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(u: &[f64]) -> Vec<f64> {
    let m = u.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    let mut ranks = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && u[order[end]] == u[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn transform_columns(m: &DMatrix<f64>, method: SeedMethod) -> DMatrix<f64> {
    let rows = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        match method {
            SeedMethod::Tanh => col.apply(|v| *v = v.tanh()),
            SeedMethod::Rank | SeedMethod::NormalScores => {
                let ranks = average_ranks(col.as_slice());
                for (v, r) in col.iter_mut().zip(ranks) {
                    *v = if method == SeedMethod::Rank {
                        r
                    } else {
                        normal_cdf((r - 1.0 / 3.0) / (rows + 1.0 / 3.0))
                    };
                }
            }
            SeedMethod::SpatialSign => unreachable!("row-wise transform"),
        }
    }
    out
}

fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

fn centered_columns(m: &DMatrix<f64>, which: &str, offset: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut c = m.clone();
    let mut sd = Vec::with_capacity(m.ncols());
    for (k, mut col) in c.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let ss = col.norm_squared();
        if !(ss > 0.0) {
            return Err(Error::DegenerateColumn {
                column: offset + k,
                reason: format!("column {k} of {which} has zero variance after transformation"),
            });
        }
        sd.push(ss.sqrt());
    }
    Ok((c, sd))
}

/// Robust association between the columns of `r` (`m x a`) and `t` (`m x b`).
///
/// Columns are expected to be divided by their Qn scales already. The
/// column-wise methods return the Pearson correlation of the transformed
/// columns; the spatial-sign method returns `R~'T~ / m` with every row scaled
/// to unit length.
///
/// A degenerate column is reported by index, counting the columns of `r`
/// first and then those of `t`.
pub fn seed_correlation(r: &DMatrix<f64>, t: &DMatrix<f64>, method: SeedMethod) -> Result<SeedCorrelation> {
    if r.nrows() != t.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "seed inputs have {} and {} rows",
            r.nrows(),
            t.nrows()
        )));
    }
    let m = r.nrows();
    if m < 2 {
        return Err(Error::InvalidInput("seed correlation needs at least two rows".into()));
    }
    let s = match method {
        SeedMethod::SpatialSign => {
            let rt = normalize_rows(r);
            let tt = normalize_rows(t);
            for (k, col) in rt.column_iter().chain(tt.column_iter()).enumerate() {
                if col.iter().all(|v| *v == 0.0) {
                    return Err(Error::DegenerateColumn {
                        column: k,
                        reason: "spatial-sign column is identically zero".into(),
                    });
                }
            }
            rt.transpose() * tt / m as f64
        }
        _ => {
            let (rc, rsd) = centered_columns(&transform_columns(r, method), "R", 0)?;
            let (tc, tsd) = centered_columns(&transform_columns(t, method), "T", r.ncols())?;
            let mut s = rc.transpose() * tc;
            for a in 0..s.nrows() {
                for b in 0..s.ncols() {
                    s[(a, b)] = (s[(a, b)] / (rsd[a] * tsd[b])).clamp(-1.0, 1.0);
                }
            }
            s
        }
    };
    Ok(SeedCorrelation { s, method })
}

/// Replaces the singular values of `s` by products of Qn scales of the data
/// projected on the singular vectors: with `S = U D V'`, returns
/// `U diag(qn(R_s U) * qn(T_s V)) V'`.
///
/// Directions whose singular value is numerically zero get a zero product.
pub fn svd_adjust(s: &DMatrix<f64>, r_s: &DMatrix<f64>, t_s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != r_s.ncols() || s.ncols() != t_s.ncols() || r_s.nrows() != t_s.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "svd_adjust: S is {}x{}, R is {}x{}, T is {}x{}",
            s.nrows(),
            s.ncols(),
            r_s.nrows(),
            r_s.ncols(),
            t_s.nrows(),
            t_s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("svd_adjust: S has non-finite entries".into()));
    }
    let svd = s.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V'").transpose();
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cut = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let ru = r_s * &u;
    let tu = t_s * &v;
    let mut scaled_u = u.clone();
    for k in 0..svd.singular_values.len() {
        let product = if svd.singular_values[k] > cut {
            qn_scale(ru.column(k).as_slice())? * qn_scale(tu.column(k).as_slice())?
        } else {
            0.0
        };
        scaled_u.column_mut(k).scale_mut(product);
    }
    Ok(scaled_u * v.transpose())
}

/// Full robust covariance between `r` and `t`: Qn-scale the columns, compute
/// the seed, adjust its singular values, and multiply back the original
/// scales. Columns with zero Qn scale are an error.
pub fn seed_covariance(r: &DMatrix<f64>, t: &DMatrix<f64>, method: SeedMethod) -> Result<DMatrix<f64>> {
    let rs = ScaleVector::of_columns(r)?;
    let ts = ScaleVector::of_columns(t)?;
    if let Some(&k) = rs.degenerate().first() {
        return Err(Error::DegenerateColumn { column: k, reason: "zero Qn scale".into() });
    }
    if let Some(&k) = ts.degenerate().first() {
        return Err(Error::DegenerateColumn {
            column: r.ncols() + k,
            reason: "zero Qn scale".into(),
        });
    }
    let r_scaled = divide_columns(r, &rs.values);
    let t_scaled = divide_columns(t, &ts.values);
    let seed = seed_correlation(&r_scaled, &t_scaled, method)?;
    let adjusted = svd_adjust(&seed.s, &r_scaled, &t_scaled)?;
    Ok(DMatrix::from_fn(adjusted.nrows(), adjusted.ncols(), |a, b| {
        adjusted[(a, b)] * rs.values[a] * ts.values[b]
    }))
}

fn divide_columns(m: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, s) in out.column_iter_mut().zip(scales) {
        col /= *s;
    }
    out
}
