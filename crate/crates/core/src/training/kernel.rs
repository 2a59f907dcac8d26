//! Kernel-smoothed sensitivities of a wealth sample.
//!
//! For a sample `x` with Gaussian kernel weights `K_ij = exp(-((x_i - x_j)/h)^2 / 2)`
//! and row sums `S_i`, an integrand `a_i` is spread over the sample as
//! `c_j = -(1/N) Σ_i a_i K_ij / S_i`. Backpropagating `Σ_j c_j x_j` then gives the
//! estimator `-(1/N) Σ_i a_i Σ_j K_ij ∇x_j / S_i` in one reverse pass.

use rayon::prelude::*;

use crate::error::Result;
use crate::risk::{silverman_half_bandwidth, Distortion, EmpiricalDistribution, Utility};
use crate::scalar::{cmp, norm_cdf, Scalar};

/// Kernel weights below `exp(-CUTOFF²/2)` and normal tails beyond `CUTOFF` are dropped.
const CUTOFF: f64 = 9.0;

/// Kernel quantities of one wealth sample.
///
/// Samples are sorted once; only pairs within `CUTOFF` bandwidths of each other carry
/// weight, and each such pair is evaluated once.
#[derive(Debug, Clone)]
pub struct SampleKernel<T: Scalar> {
    samples: Vec<T>,
    h: T,
    degenerate: bool,
    /// Smoothed CDF at each sample point.
    cdf: Vec<T>,
    row_sum: Vec<T>,
    /// Sample indices in ascending order of value.
    order: Vec<usize>,
    /// For sorted position `r`, kernel weights to positions `r+1, r+2, ...` inside the band.
    band: Vec<Vec<T>>,
}

impl<T: Scalar> SampleKernel<T> {
    /// Uses the halved Silverman bandwidth of the sample.
    pub fn new(samples: &[T]) -> Result<Self> {
        let dist = EmpiricalDistribution::from_slice(samples)?;
        let bw = silverman_half_bandwidth(&dist);
        Ok(Self::with_bandwidth(samples, bw.h, bw.degenerate))
    }

    pub fn with_bandwidth(samples: &[T], h: T, degenerate: bool) -> Self {
        let n = samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cmp(&samples[a], &samples[b]).then(a.cmp(&b)));
        let sorted: Vec<T> = order.iter().map(|&i| samples[i]).collect();
        let inv_h = T::one() / h;
        let half = T::lit(0.5);
        let cutoff = T::lit(CUTOFF);

        // row r holds (kernel weight, lower normal tail) for every r < q inside the band
        let rows: Vec<(Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let mut k = Vec::new();
                let mut tail = Vec::new();
                for &xq in &sorted[r + 1..] {
                    let z = (xq - sorted[r]) * inv_h;
                    if z > cutoff {
                        break;
                    }
                    k.push((-half * z * z).exp());
                    tail.push(norm_cdf(-z));
                }
                (k, tail)
            })
            .collect();

        // cdf_r = (1/N)[0.5 + Σ_{q≠r} Φ((x_r − x_q)/h)]
        let mut cdf_sorted = vec![half; n];
        let mut row_sorted = vec![T::one(); n];
        let mut below = vec![0usize; n + 1];
        for (r, (k, tail)) in rows.iter().enumerate() {
            for (offset, (&w, &t)) in k.iter().zip(tail).enumerate() {
                let q = r + 1 + offset;
                row_sorted[r] += w;
                row_sorted[q] += w;
                cdf_sorted[r] += t;
                cdf_sorted[q] += T::one() - t;
            }
            // every position past the band sees x_r as fully below it
            below[r + 1 + k.len()] += 1;
        }
        let mut running = 0usize;
        let nf = T::from_usize_lossy(n);
        let mut cdf = vec![T::zero(); n];
        let mut row_sum = vec![T::zero(); n];
        for r in 0..n {
            running += below[r];
            cdf[order[r]] = (cdf_sorted[r] + T::from_usize_lossy(running)) / nf;
            row_sum[order[r]] = row_sorted[r];
        }
        let band = rows.into_iter().map(|(k, _)| k).collect();
        Self { samples: samples.to_vec(), h, degenerate, cdf, row_sum, order, band }
    }

    pub fn bandwidth(&self) -> T {
        self.h
    }

    /// All samples (nearly) equal: no density to differentiate through.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cdf(&self) -> &[T] {
        &self.cdf
    }

    /// `U'(x_i) γ(F̂(x_i))` for every sample.
    pub fn rdeu_integrand(&self, gamma: &Distortion<T>, utility: &Utility) -> Vec<T> {
        self.samples
            .iter()
            .zip(&self.cdf)
            .map(|(&x, &u)| utility.derivative(x) * gamma.weight(u))
            .collect()
    }

    /// `c_j = -(1/N) Σ_i a_i K_ij / S_i`; all zeros when the sample is degenerate.
    pub fn spread(&self, integrand: &[T]) -> Vec<T> {
        assert_eq!(integrand.len(), self.samples.len(), "one integrand value per sample");
        let n = self.samples.len();
        if self.degenerate {
            return vec![T::zero(); n];
        }
        let a: Vec<T> = self.order.iter().map(|&i| integrand[i] / self.row_sum[i]).collect();
        let mut acc = a.clone();
        for (r, k) in self.band.iter().enumerate() {
            for (offset, &w) in k.iter().enumerate() {
                let q = r + 1 + offset;
                acc[r] += a[q] * w;
                acc[q] += a[r] * w;
            }
        }
        let scale = -T::one() / T::from_usize_lossy(n);
        let mut out = vec![T::zero(); n];
        for (r, &i) in self.order.iter().enumerate() {
            out[i] = scale * acc[r];
        }
        out
    }
}
