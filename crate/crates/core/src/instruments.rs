//! Down-barrier call payoffs and their zero-rate Black-Scholes benchmarks.
//!
//! The barrier formulas are the reflection-principle prices for driftless GBM.
//! They are applied to Heston paths only as a benchmark hedge.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, param_err, Result};
use crate::market_sim::PathBatch;
use crate::scalar::{norm_cdf, pos, sample_std, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    KnockIn,
    KnockOut,
}

impl BarrierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BarrierKind::KnockIn => "knock_in",
            BarrierKind::KnockOut => "knock_out",
        }
    }
}

/// Down-and-in / down-and-out call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BarrierOptionSpec<T: Scalar> {
    pub kind: BarrierKind,
    pub strike: T,
    pub barrier: T,
    pub maturity: T,
}

impl<T: Scalar> BarrierOptionSpec<T> {
    /// K = 10, B = 8.5, T = 1.
    pub fn reference(kind: BarrierKind) -> Self {
        Self { kind, strike: T::lit(10.0), barrier: T::lit(8.5), maturity: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.barrier > T::zero()) || !(self.strike > T::zero()) || !(self.maturity > T::zero()) {
            return Err(param_err("strike, barrier and maturity must be positive"));
        }
        Ok(())
    }

    /// A path minimum equal to the barrier counts as a breach.
    #[inline]
    pub fn is_breached(&self, path_min: T) -> bool {
        path_min <= self.barrier
    }
}

pub fn payoff<T: Scalar>(spec: &BarrierOptionSpec<T>, terminal_price: T, path_min: T) -> T {
    let vanilla = pos(terminal_price - spec.strike);
    let breached = spec.is_breached(path_min);
    match (spec.kind, breached) {
        (BarrierKind::KnockIn, true) | (BarrierKind::KnockOut, false) => vanilla,
        _ => T::zero(),
    }
}

fn d_plus_minus<T: Scalar>(s: T, k: T, sd: T) -> (T, T) {
    let d_plus = ((s / k).ln() + T::lit(0.5) * sd * sd) / sd;
    (d_plus, d_plus - sd)
}

/// Zero-rate Black-Scholes call.
pub fn bs_call_price<T: Scalar>(s: T, k: T, sigma: T, tau: T) -> T {
    let sd = sigma * tau.max(T::zero()).sqrt();
    if !(sd > T::zero()) {
        return pos(s - k);
    }
    let (dp, dm) = d_plus_minus(s, k, sd);
    s * norm_cdf(dp) - k * norm_cdf(dm)
}

/// `Φ(d₊)`; a step function at expiry or zero volatility.
pub fn bs_call_delta<T: Scalar>(s: T, k: T, sigma: T, tau: T) -> T {
    let sd = sigma * tau.max(T::zero()).sqrt();
    if !(sd > T::zero()) {
        return if s > k { T::one() } else { T::zero() };
    }
    norm_cdf(d_plus_minus(s, k, sd).0)
}

fn check_pre_breach<T: Scalar>(spec: &BarrierOptionSpec<T>, s: T, breached: bool) -> Result<()> {
    if !breached && s <= spec.barrier {
        return Err(domain_err(format!(
            "spot {s} at or below barrier {} but the barrier is flagged as not breached",
            spec.barrier
        )));
    }
    Ok(())
}

pub fn bs_barrier_price<T: Scalar>(spec: &BarrierOptionSpec<T>, s: T, sigma: T, tau: T, breached: bool) -> Result<T> {
    check_pre_breach(spec, s, breached)?;
    let (b, k) = (spec.barrier, spec.strike);
    Ok(match (spec.kind, breached) {
        (BarrierKind::KnockIn, true) => bs_call_price(s, k, sigma, tau),
        (BarrierKind::KnockOut, true) => T::zero(),
        (BarrierKind::KnockIn, false) => s / b * bs_call_price(b * b / s, k, sigma, tau),
        (BarrierKind::KnockOut, false) => {
            bs_call_price(s, k, sigma, tau) - s / b * bs_call_price(b * b / s, k, sigma, tau)
        }
    })
}

pub fn bs_barrier_delta<T: Scalar>(spec: &BarrierOptionSpec<T>, s: T, sigma: T, tau: T, breached: bool) -> Result<T> {
    check_pre_breach(spec, s, breached)?;
    let (b, k) = (spec.barrier, spec.strike);
    let knock_in_pre = || {
        let mirror = b * b / s;
        bs_call_price(mirror, k, sigma, tau) / b - b / s * bs_call_delta(mirror, k, sigma, tau)
    };
    Ok(match (spec.kind, breached) {
        (BarrierKind::KnockIn, true) => bs_call_delta(s, k, sigma, tau),
        (BarrierKind::KnockOut, true) => T::zero(),
        (BarrierKind::KnockIn, false) => knock_in_pre(),
        (BarrierKind::KnockOut, false) => bs_call_delta(s, k, sigma, tau) - knock_in_pre(),
    })
}

/// Black-Scholes volatility matching the dispersion of `log S_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedVolatility<T> {
    pub sigma: T,
    /// Set when every terminal price is identical.
    pub degenerate: bool,
}

pub fn match_bs_sigma<T: Scalar>(batch: &PathBatch<T>) -> Result<MatchedVolatility<T>> {
    if batch.n_paths() < 2 {
        return Err(domain_err("volatility matching needs at least two paths"));
    }
    let logs: Vec<T> = batch.terminal_prices().into_iter().map(|s| s.ln()).collect();
    let sd = sample_std(&logs);
    if !(sd > T::zero()) {
        log::warn!("all terminal prices are equal; matched volatility is zero");
        return Ok(MatchedVolatility { sigma: T::zero(), degenerate: true });
    }
    Ok(MatchedVolatility { sigma: sd / batch.grid.maturity.sqrt(), degenerate: false })
}

/// Black-Scholes barrier deltas at every trading time, `n_paths × N`.
///
/// Breach status uses the fine-grid running minimum. Holdings are not clipped.
pub fn bs_hedge_rollout<T: Scalar>(spec: &BarrierOptionSpec<T>, batch: &PathBatch<T>, sigma: T) -> Result<Array2<T>> {
    let grid = &batch.grid;
    let n_trades = grid.n_trades();
    let mut holdings = Array2::zeros((batch.n_paths(), n_trades));
    for (path, mut out) in batch.prices.rows().into_iter().zip(holdings.rows_mut()) {
        let mut running_min = T::infinity();
        let mut next = 0;
        for i in 0..n_trades {
            let step = grid.trading_step(i);
            while next <= step {
                running_min = running_min.min(path[next]);
                next += 1;
            }
            let tau = grid.maturity - grid.time(step);
            let s = path[step];
            out[i] = bs_barrier_delta(spec, s, sigma, tau, spec.is_breached(running_min))?;
        }
    }
    Ok(holdings)
}
