use crate::error::{param_err, Result};
use crate::risk::EmpiricalDistribution;
use crate::scalar::{norm_cdf, norm_pdf, Scalar};

/// Kernel bandwidth, flagged when the sample has no spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth<T> {
    pub h: T,
    pub degenerate: bool,
}

/// Half of Silverman's rule: `h = 0.53 σ̂ N^{-1/5}`.
///
/// A zero-variance sample gets the floor `1e-8 (1 + |mean|)` and `degenerate = true`.
pub fn silverman_half_bandwidth<T: Scalar>(dist: &EmpiricalDistribution<T>) -> Bandwidth<T> {
    let sd = dist.std_dev();
    let n = T::from_usize_lossy(dist.len());
    let h = T::lit(0.53) * sd * n.powf(T::lit(-0.2));
    if h > T::zero() && h.is_finite() {
        Bandwidth { h, degenerate: false }
    } else {
        Bandwidth { h: T::lit(1e-8) * (T::one() + dist.mean().abs()), degenerate: true }
    }
}

/// Gaussian kernel estimate of a CDF and density from a sample.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKde<'a, T: Scalar> {
    samples: &'a [T],
    h: T,
}

impl<'a, T: Scalar> GaussianKde<'a, T> {
    pub fn new(samples: &'a [T], h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(param_err(format!("bandwidth {h} must be positive")));
        }
        if samples.is_empty() {
            return Err(param_err("kernel estimate needs at least one sample"));
        }
        Ok(Self { samples, h })
    }

    pub fn bandwidth(&self) -> T {
        self.h
    }

    /// `(1/N) Σ Φ((x - xᵢ)/h)`.
    pub fn cdf(&self, x: T) -> T {
        let inv_h = self.h.recip();
        let s: T = self.samples.iter().map(|&xi| norm_cdf((x - xi) * inv_h)).sum();
        s / T::from_usize_lossy(self.samples.len())
    }

    /// `(1/(N h)) Σ φ((x - xᵢ)/h)`.
    pub fn pdf(&self, x: T) -> T {
        let inv_h = self.h.recip();
        let s: T = self.samples.iter().map(|&xi| norm_pdf((x - xi) * inv_h)).sum();
        s * inv_h / T::from_usize_lossy(self.samples.len())
    }
}

pub fn kde_cdf<T: Scalar>(x: T, dist: &EmpiricalDistribution<T>, h: T) -> Result<T> {
    Ok(GaussianKde::new(dist.samples(), h)?.cdf(x))
}

pub fn kde_pdf<T: Scalar>(x: T, dist: &EmpiricalDistribution<T>, h: T) -> Result<T> {
    Ok(GaussianKde::new(dist.samples(), h)?.pdf(x))
}
