//! Qn scale estimator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Gaussian consistency constant for Qn.
pub const QN_CONSISTENCY: f64 = 2.2219;

/// Qn scale: `c * d_(k)` where `d_(k)` is the `k`-th smallest of the pairwise
/// absolute differences `|u_a - u_b|`, `a < b`, with `k = C(h, 2)` and
/// `h = floor(m / 2) + 1`.
///
/// The order statistic is found exactly without materializing all pairs: on
/// sorted data the number of differences `<= v` is counted with two pointers,
/// and `v` is bisected over the bit patterns of non-negative doubles. Each
/// count is `O(m)`, at most 64 counts are needed.
pub fn qn_scale(u: &[f64]) -> Result<f64> {
    let m = u.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("Qn needs at least 2 values, got {m}")));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Qn input has non-finite values".into()));
    }
    let mut x = u.to_vec();
    x.sort_by(f64::total_cmp);
    let h = m / 2 + 1;
    let k = (h * (h - 1) / 2) as u64;
    Ok(QN_CONSISTENCY * kth_pairwise_difference(&x, k))
}

fn count_at_most(x: &[f64], v: f64) -> u64 {
    let m = x.len();
    let mut j = 0usize;
    let mut count = 0u64;
    for i in 0..m {
        if j < i + 1 {
            j = i + 1;
        }
        while j < m && x[j] - x[i] <= v {
            j += 1;
        }
        count += (j - i - 1) as u64;
    }
    count
}

/// `k`-th smallest (1-based) of `x[b] - x[a]`, `a < b`, for sorted `x`.
fn kth_pairwise_difference(x: &[f64], k: u64) -> f64 {
    if count_at_most(x, 0.0) >= k {
        return 0.0;
    }
    let span = x[x.len() - 1] - x[0];
    let mut lo = 0.0_f64.to_bits();
    let mut hi = span.to_bits();
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_at_most(x, f64::from_bits(mid)) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    f64::from_bits(hi)
}

/// Per-column Qn scales of a data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector {
    pub values: Vec<f64>,
}

impl ScaleVector {
    pub fn of_columns(m: &DMatrix<f64>) -> Result<Self> {
        let values = m
            .column_iter()
            .map(|c| qn_scale(c.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values })
    }

    /// Indices of columns with zero scale.
    pub fn degenerate(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &s)| !(s > 0.0))
            .map(|(k, _)| k)
            .collect()
    }
}
