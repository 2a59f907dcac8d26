//! Empirical risk measures on wealth samples.
//!
//! Risk is "lower is better": `R[Z] = -∫ U(F⁻¹(s)) γ(s) ds`. Reports that quote
//! CVaR as a tail mean of wealth print `-R`.

mod distortion;
mod empirical;
mod kde;

pub use distortion::{AlphaBeta, Distortion, Utility};
pub use empirical::{
    cvar_empirical, rdeu_empirical, tail_expectations, wasserstein_p, EmpiricalDistribution, TailExpectations,
};
pub use kde::{kde_cdf, kde_pdf, silverman_half_bandwidth, Bandwidth, GaussianKde};
