use std::cmp::Ordering;

use crate::error::{domain_err, param_err, Result};
use crate::risk::{Distortion, Utility};
use crate::scalar::{mean, sample_std, Scalar};

/// Equal-weight sample with a cached ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution<T: Scalar> {
    samples: Vec<T>,
    order: Vec<usize>,
}

impl<T: Scalar> EmpiricalDistribution<T> {
    pub fn new(samples: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain_err("empirical distribution needs at least one sample"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(domain_err("samples must be finite"));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].partial_cmp(&samples[b]).unwrap_or(Ordering::Equal));
        Ok(Self { samples, order })
    }

    pub fn from_slice(samples: &[T]) -> Result<Self> {
        Self::new(samples.to_vec())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    /// Indices of `samples` in ascending order of value.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Rank of each sample in the ascending order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.len()];
        for (r, &i) in self.order.iter().enumerate() {
            ranks[i] = r;
        }
        ranks
    }

    pub fn sorted(&self) -> impl ExactSizeIterator<Item = T> + '_ {
        self.order.iter().map(move |&i| self.samples[i])
    }

    pub fn sorted_vec(&self) -> Vec<T> {
        self.sorted().collect()
    }

    pub fn mean(&self) -> T {
        mean(&self.samples)
    }

    pub fn std_dev(&self) -> T {
        sample_std(&self.samples)
    }
}

/// `-Σ U(x₍ᵢ₎) ∫_{(i-1)/N}^{i/N} γ`, the rank-dependent risk of the sample.
pub fn rdeu_empirical<T: Scalar>(dist: &EmpiricalDistribution<T>, gamma: &Distortion<T>, utility: &Utility) -> Result<T> {
    let n = T::from_usize_lossy(dist.len());
    let mut acc = T::zero();
    for (i, x) in dist.sorted().enumerate() {
        let lo = T::from_usize_lossy(i) / n;
        let hi = T::from_usize_lossy(i + 1) / n;
        let mass = gamma.cell_mass(lo, hi);
        if mass != T::zero() {
            acc += utility.value(x) * mass;
        }
    }
    Ok(-acc)
}

/// CVaR at level `alpha` as a risk (positive for losses).
pub fn cvar_empirical<T: Scalar>(dist: &EmpiricalDistribution<T>, alpha: T) -> Result<T> {
    rdeu_empirical(dist, &Distortion::cvar(alpha)?, &Utility::Identity)
}

/// Unconditional lower and upper tail expectations of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailExpectations<T> {
    pub lower: T,
    pub upper: T,
}

// Count of order statistics in a tail of probability mass `q`. The small slack keeps
// products like 0.2 * 10 from flooring to 1 after rounding.
fn tail_count<T: Scalar>(q: T, n: usize) -> usize {
    let raw = q.as_f64() * n as f64;
    (raw + 1e-9 * raw.max(1.0)).floor() as usize
}

/// `(E[X 𝟙(F(X) < α)], E[X 𝟙(F(X) > β)])`: sums over the bottom `⌊αN⌋` and top
/// `⌊(1-β)N⌋` order statistics, divided by `N`.
pub fn tail_expectations<T: Scalar>(dist: &EmpiricalDistribution<T>, alpha: T, beta: T) -> Result<TailExpectations<T>> {
    if !(alpha > T::zero() && alpha <= beta && beta < T::one()) {
        return Err(param_err("need 0 < alpha <= beta < 1"));
    }
    let n = dist.len();
    let k_lo = tail_count(alpha, n);
    let k_hi = tail_count(T::one() - beta, n);
    if k_lo == 0 {
        return Err(domain_err(format!("lower tail is empty for alpha={alpha} and N={n}")));
    }
    let sorted = dist.sorted_vec();
    let nf = T::from_usize_lossy(n);
    let lower = sorted[..k_lo].iter().copied().sum::<T>() / nf;
    let upper = sorted[n - k_hi..].iter().copied().sum::<T>() / nf;
    Ok(TailExpectations { lower, upper })
}

/// Wasserstein-p distance between equal-size samples via matched order statistics.
pub fn wasserstein_p<T: Scalar>(a: &EmpiricalDistribution<T>, b: &EmpiricalDistribution<T>, order: T) -> Result<T> {
    if a.len() != b.len() {
        return Err(domain_err(format!("sample sizes differ: {} vs {}", a.len(), b.len())));
    }
    if !(order >= T::one()) {
        return Err(param_err(format!("Wasserstein order {order} must be >= 1")));
    }
    let total: T = a.sorted().zip(b.sorted()).map(|(x, y)| (x - y).abs().powf(order)).sum();
    Ok((total / T::from_usize_lossy(a.len())).powf(T::one() / order))
}
