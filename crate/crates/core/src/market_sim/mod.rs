//! Monte Carlo paths for the Heston stochastic-volatility model and for GBM.
//!
//! Paths are generated in fixed-size blocks. Block `b` draws the asset shocks
//! from ChaCha8 stream `2b` and the variance shocks from stream `2b + 1`, both
//! keyed by the batch seed, so output is independent of how many threads run
//! and a GBM batch with the same seed consumes exactly the asset shocks a Heston
//! batch would.

mod io;

pub use io::{cache_key, PathCache};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::scalar::{pos, Scalar};

/// Paths per RNG block. Changing this changes every simulated path.
pub const PATH_BLOCK: usize = 256;

/// Name of the generator family, recorded in manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64, stream per block";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HestonParams<T: Scalar> {
    pub s0: T,
    pub v0: T,
    pub mu: T,
    pub kappa: T,
    pub theta: T,
    /// Volatility of variance.
    pub xi: T,
    pub rho: T,
}

impl<T: Scalar> HestonParams<T> {
    /// S0 = 10, v0 = 0.3², μ = 0.08, κ = 3, θ = 0.3², ξ = 2, ρ = -0.5.
    pub fn reference() -> Self {
        Self {
            s0: T::lit(10.0),
            v0: T::lit(0.09),
            mu: T::lit(0.08),
            kappa: T::lit(3.0),
            theta: T::lit(0.09),
            xi: T::lit(2.0),
            rho: T::lit(-0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.s0, self.v0, self.mu, self.kappa, self.theta, self.xi, self.rho];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(param_err("Heston parameters must be finite"));
        }
        if self.s0 <= T::zero() {
            return Err(param_err("s0 must be positive"));
        }
        if self.v0 < T::zero() || self.kappa < T::zero() || self.theta < T::zero() || self.xi < T::zero() {
            return Err(param_err("v0, kappa, theta and xi must be non-negative"));
        }
        if self.rho.abs() > T::one() {
            return Err(param_err(format!("rho = {} outside [-1, 1]", self.rho)));
        }
        Ok(())
    }

    /// 2κθ > ξ².
    pub fn satisfies_feller(&self) -> bool {
        T::lit(2.0) * self.kappa * self.theta > self.xi * self.xi
    }
}

/// Simulation grid with trading on every `trade_every`-th step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeGrid<T: Scalar> {
    pub n_steps: usize,
    pub maturity: T,
    pub trade_every: usize,
}

impl<T: Scalar> TimeGrid<T> {
    /// 200 steps over one year, trading every 4 steps (50 trading times).
    pub fn reference() -> Self {
        Self { n_steps: 200, maturity: T::one(), trade_every: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.trade_every == 0 {
            return Err(param_err("n_steps and trade_every must be positive"));
        }
        if self.n_steps % self.trade_every != 0 {
            return Err(param_err(format!(
                "n_steps = {} is not divisible by trade_every = {}",
                self.n_steps, self.trade_every
            )));
        }
        if !(self.maturity > T::zero()) || !self.maturity.is_finite() {
            return Err(param_err("maturity must be positive"));
        }
        Ok(())
    }

    pub fn dt(&self) -> T {
        self.maturity / T::from_usize_lossy(self.n_steps)
    }

    /// Number of trading times N.
    pub fn n_trades(&self) -> usize {
        self.n_steps / self.trade_every
    }

    /// Fine-grid index of trading time `i`. `i == n_trades()` maps to maturity.
    pub fn trading_step(&self, i: usize) -> usize {
        i * self.trade_every
    }

    pub fn time(&self, step: usize) -> T {
        T::from_usize_lossy(step) * self.dt()
    }

    pub fn trading_time(&self, i: usize) -> T {
        self.time(self.trading_step(i))
    }
}

/// Which model produced a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "model", rename_all = "snake_case")]
pub enum PathSource<T: Scalar> {
    Heston(HestonParams<T>),
    Gbm { s0: T, mu: T, sigma: T },
    /// Paths supplied directly by the caller.
    External,
}

impl<T: Scalar> PathSource<T> {
    /// Draws a fresh batch from this model.
    pub fn simulate(&self, grid: &TimeGrid<T>, n_paths: usize, seed: u64) -> Result<PathBatch<T>> {
        match self {
            PathSource::Heston(p) => simulate_heston(p, grid, n_paths, seed),
            PathSource::Gbm { s0, mu, sigma } => simulate_gbm(*s0, *mu, *sigma, grid, n_paths, seed),
            PathSource::External => Err(param_err("external paths cannot be resimulated")),
        }
    }
}

/// Simulated prices and variances, `n_paths × (n_steps + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch<T: Scalar> {
    pub prices: Array2<T>,
    /// Positive part of the simulated variance (`σ²` for GBM, zero for external paths).
    pub variances: Array2<T>,
    pub seed: u64,
    pub grid: TimeGrid<T>,
    pub source: PathSource<T>,
}

impl<T: Scalar> PathBatch<T> {
    /// Wraps caller-provided prices; variances are set to zero.
    pub fn from_prices(prices: Array2<T>, grid: TimeGrid<T>) -> Result<Self> {
        grid.validate()?;
        if prices.ncols() != grid.n_steps + 1 {
            return Err(param_err(format!(
                "price matrix has {} columns, grid needs {}",
                prices.ncols(),
                grid.n_steps + 1
            )));
        }
        if prices.iter().any(|&p| !(p > T::zero()) || !p.is_finite()) {
            return Err(param_err("prices must be positive and finite"));
        }
        let variances = Array2::zeros(prices.raw_dim());
        Ok(Self { prices, variances, seed: 0, grid, source: PathSource::External })
    }

    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    pub fn terminal_prices(&self) -> Vec<T> {
        self.prices.column(self.grid.n_steps).to_vec()
    }
}

fn block_rngs(seed: u64, block: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut asset = ChaCha8Rng::seed_from_u64(seed);
    asset.set_stream(2 * block as u64);
    let mut vol = ChaCha8Rng::seed_from_u64(seed);
    vol.set_stream(2 * block as u64 + 1);
    (asset, vol)
}

fn normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// Runs `fill_block(block_index, rows_in_block, prices, variances)` over path blocks.
fn simulate_blocks<T, F>(n_paths: usize, n_cols: usize, fill_block: F) -> (Array2<T>, Array2<T>)
where
    T: Scalar,
    F: Fn(usize, &mut [T], &mut [T]) + Sync,
{
    let mut prices = Array2::<T>::zeros((n_paths, n_cols));
    let mut variances = Array2::<T>::zeros((n_paths, n_cols));
    let chunk = PATH_BLOCK * n_cols;
    prices
        .as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(chunk)
        .zip(variances.as_slice_mut().expect("fresh array is contiguous").par_chunks_mut(chunk))
        .enumerate()
        .for_each(|(block, (p, v))| fill_block(block, p, v));
    (prices, variances)
}

/// Heston paths: log-Euler for the price, full-truncation Euler for the variance.
pub fn simulate_heston<T: Scalar>(
    params: &HestonParams<T>,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch<T>> {
    params.validate()?;
    grid.validate()?;
    if n_paths == 0 {
        return Err(param_err("n_paths must be at least 1"));
    }
    let n_cols = grid.n_steps + 1;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let half = T::lit(0.5);
    let rho_perp = (T::one() - params.rho * params.rho).max(T::zero()).sqrt();
    let p = *params;

    let (prices, variances) = simulate_blocks(n_paths, n_cols, |block, prices, vars| {
        let (mut rng_s, mut rng_v) = block_rngs(seed, block);
        for (row_p, row_v) in prices.chunks_mut(n_cols).zip(vars.chunks_mut(n_cols)) {
            let mut log_s = p.s0.ln();
            let mut v = p.v0;
            row_p[0] = p.s0;
            row_v[0] = pos(v);
            for k in 1..n_cols {
                let z1: T = normal(&mut rng_s);
                let z2: T = normal(&mut rng_v);
                let vp = pos(v);
                let sd = (vp).sqrt() * sqrt_dt;
                log_s += (p.mu - half * vp) * dt + sd * z1;
                v = v + p.kappa * (p.theta - vp) * dt + p.xi * sd * (p.rho * z1 + rho_perp * z2);
                row_p[k] = log_s.exp();
                row_v[k] = pos(v);
            }
        }
    });
    Ok(PathBatch { prices, variances, seed, grid: *grid, source: PathSource::Heston(p) })
}

/// GBM paths with exact log-normal steps, driven by the asset-shock streams.
pub fn simulate_gbm<T: Scalar>(
    s0: T,
    mu: T,
    sigma: T,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch<T>> {
    grid.validate()?;
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(param_err(format!("sigma = {sigma} must be non-negative")));
    }
    if !(s0 > T::zero()) || !mu.is_finite() {
        return Err(param_err("s0 must be positive and mu finite"));
    }
    if n_paths == 0 {
        return Err(param_err("n_paths must be at least 1"));
    }
    let n_cols = grid.n_steps + 1;
    let dt = grid.dt();
    let drift = (mu - T::lit(0.5) * sigma * sigma) * dt;
    let sd = sigma * dt.sqrt();

    let (prices, _) = simulate_blocks(n_paths, n_cols, |block, prices, _| {
        let (mut rng_s, _) = block_rngs(seed, block);
        for row in prices.chunks_mut(n_cols) {
            let mut log_s = s0.ln();
            row[0] = s0;
            for slot in row.iter_mut().skip(1) {
                let z: T = normal(&mut rng_s);
                log_s += drift + sd * z;
                *slot = log_s.exp();
            }
        }
    });
    let variances = Array2::from_elem((n_paths, n_cols), sigma * sigma);
    Ok(PathBatch { prices, variances, seed, grid: *grid, source: PathSource::Gbm { s0, mu, sigma } })
}

/// Running minimum of each path over the fine grid.
pub fn running_minimum<T: Scalar>(batch: &PathBatch<T>) -> Array2<T> {
    let mut out = batch.prices.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mut m = T::infinity();
        for x in row.iter_mut() {
            m = m.min(*x);
            *x = m;
        }
    }
    out
}
