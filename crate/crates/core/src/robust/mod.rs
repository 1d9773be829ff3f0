//! Robust univariate and matrix primitives.

mod chi2;
mod qn;
mod seed;

pub use chi2::{chi2_cdf, chi2_pdf, chi2_quantile, normal_cdf};
pub use qn::{qn_scale, ScaleVector, QN_CONSISTENCY};
pub use seed::{average_ranks, seed_correlation, seed_covariance, svd_adjust, SeedCorrelation, SeedMethod};
