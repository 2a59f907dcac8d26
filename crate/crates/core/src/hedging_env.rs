//! Hedging episodes: features, holdings, costs and terminal wealth.
//!
//! Terminal wealth of one path is
//! `X = V0 + Σ Δ_i (S_{i+1} − S_i) − c Σ |Δ_i − Δ_{i−1}| S_i − V_N`
//! with `Δ_{−1} = 0`, trading prices taken every `trade_every` fine steps, the last
//! increment ending at maturity, and no unwind of the final position.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, param_err, Error, Result};
use crate::instruments::{payoff, BarrierOptionSpec};
use crate::market_sim::{running_minimum, PathBatch, TimeGrid};
use crate::nn::{ForwardCache, Mlp, OutputActivation};
use crate::scalar::{sgn, Scalar};

/// Proportional transaction cost: trading `q` units at price `S` costs `rate · S · |q|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TransactionCost<T: Scalar> {
    pub rate: T,
}

impl<T: Scalar> TransactionCost<T> {
    pub fn new(rate: T) -> Result<Self> {
        if !(rate >= T::zero()) || !rate.is_finite() {
            return Err(param_err(format!("transaction cost rate must be >= 0, got {rate}")));
        }
        Ok(Self { rate })
    }

    pub fn none() -> Self {
        Self { rate: T::zero() }
    }

    pub fn is_active(&self) -> bool {
        self.rate > T::zero()
    }
}

/// Feature count: `t/T, S/S0, M/S0, breach` plus the previous holding when costs are on.
pub fn feature_dim<T: Scalar>(cost: &TransactionCost<T>) -> usize {
    if cost.is_active() {
        5
    } else {
        4
    }
}

/// Everything the rollout needs from a path batch, sampled on the trading grid.
#[derive(Debug, Clone)]
pub struct HedgingMarket<T: Scalar> {
    /// `n × (N+1)`: prices at the trading times, last column is the price at maturity.
    pub trading_prices: Array2<T>,
    /// `n × N`: fine-grid running minimum up to each trading time.
    pub running_min: Array2<T>,
    /// Liability `V_N` per path.
    pub liability: Array1<T>,
    pub grid: TimeGrid<T>,
    pub s0: T,
}

impl<T: Scalar> HedgingMarket<T> {
    pub fn n_paths(&self) -> usize {
        self.trading_prices.nrows()
    }

    pub fn n_trades(&self) -> usize {
        self.running_min.ncols()
    }

    fn rows(&self, start: usize, end: usize) -> HedgingMarket<T> {
        HedgingMarket {
            trading_prices: self.trading_prices.slice(s![start..end, ..]).to_owned(),
            running_min: self.running_min.slice(s![start..end, ..]).to_owned(),
            liability: self.liability.slice(s![start..end]).to_owned(),
            grid: self.grid.clone(),
            s0: self.s0,
        }
    }
}

/// The hedging problem: which liability, at what cost, for what premium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HedgingEnv<T: Scalar> {
    /// `None` hedges nothing (pure trading, `V_N = 0`).
    pub option: Option<BarrierOptionSpec<T>>,
    pub cost: TransactionCost<T>,
    /// `V0`; zero while training.
    pub premium: T,
}

impl<T: Scalar> HedgingEnv<T> {
    pub fn new(option: Option<BarrierOptionSpec<T>>, cost: TransactionCost<T>, premium: T) -> Result<Self> {
        if let Some(spec) = &option {
            spec.validate()?;
        }
        TransactionCost::new(cost.rate)?;
        if !premium.is_finite() {
            return Err(param_err("premium must be finite"));
        }
        Ok(Self { option, cost, premium })
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(&self.cost)
    }

    pub fn with_premium(&self, premium: T) -> Self {
        Self { premium, ..self.clone() }
    }

    /// Samples the batch on the trading grid and evaluates the liability.
    pub fn market(&self, batch: &PathBatch<T>) -> Result<HedgingMarket<T>> {
        batch.grid.validate()?;
        let grid = batch.grid.clone();
        let n_trades = grid.n_trades();
        let n = batch.n_paths();
        if n == 0 {
            return Err(param_err("path batch is empty"));
        }
        let mins = running_minimum(batch);
        let mut trading_prices = Array2::zeros((n, n_trades + 1));
        let mut running_min = Array2::zeros((n, n_trades));
        for i in 0..=n_trades {
            let step = if i == n_trades { grid.n_steps } else { grid.trading_step(i) };
            trading_prices.column_mut(i).assign(&batch.prices.column(step));
            if i < n_trades {
                running_min.column_mut(i).assign(&mins.column(step));
            }
        }
        let liability = match &self.option {
            Some(spec) => Array1::from_shape_fn(n, |j| payoff(spec, batch.prices[[j, grid.n_steps]], mins[[j, grid.n_steps]])),
            None => Array1::zeros(n),
        };
        Ok(HedgingMarket { trading_prices, running_min, liability, grid, s0: batch.prices[[0, 0]] })
    }
}

/// Feature matrix at trading index `i`, one row per path.
pub fn build_features<T: Scalar>(
    market: &HedgingMarket<T>,
    env: &HedgingEnv<T>,
    i: usize,
    prev_delta: ArrayView1<T>,
) -> Result<Array2<T>> {
    let n = market.n_paths();
    if i >= market.n_trades() {
        return Err(contract_err(format!("trading index {i} outside 0..{}", market.n_trades())));
    }
    if env.cost.is_active() && prev_delta.len() != n {
        return Err(contract_err("previous holdings must have one entry per path"));
    }
    let dim = env.feature_dim();
    let t = market.grid.trading_time(i) / market.grid.maturity;
    let barrier = env.option.as_ref().map(|o| o.barrier);
    let mut x = Array2::zeros((n, dim));
    for (j, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let m = market.running_min[[j, i]];
        row[0] = t;
        row[1] = market.trading_prices[[j, i]] / market.s0;
        row[2] = m / market.s0;
        row[3] = match barrier {
            Some(b) if m <= b => T::one(),
            _ => T::zero(),
        };
        if dim == 5 {
            row[4] = prev_delta[j];
        }
    }
    Ok(x)
}

/// Wealth and cost per path for given holdings `n × N`.
pub fn wealth_from_holdings<T: Scalar>(
    market: &HedgingMarket<T>,
    env: &HedgingEnv<T>,
    holdings: ArrayView2<T>,
) -> Result<(Array1<T>, Array1<T>)> {
    let (n, n_trades) = (market.n_paths(), market.n_trades());
    if holdings.dim() != (n, n_trades) {
        return Err(contract_err(format!("holdings have shape {:?}, expected {:?}", holdings.dim(), (n, n_trades))));
    }
    let c = env.cost.rate;
    let mut wealth = Array1::zeros(n);
    let mut costs = Array1::zeros(n);
    for j in 0..n {
        let s = market.trading_prices.row(j);
        let mut gains = T::zero();
        let mut cost = T::zero();
        let mut prev = T::zero();
        for i in 0..n_trades {
            let d = holdings[[j, i]];
            gains += d * (s[i + 1] - s[i]);
            cost += c * (d - prev).abs() * s[i];
            prev = d;
        }
        costs[j] = cost;
        // premium last, so changing it shifts every sample by exactly the same amount
        wealth[j] = (gains - cost - market.liability[j]) + env.premium;
    }
    Ok((wealth, costs))
}

/// Result of running a policy over a path batch.
#[derive(Debug, Clone)]
pub struct EpisodeBatch<T: Scalar> {
    /// `n × N`.
    pub holdings: Array2<T>,
    pub wealth: Array1<T>,
    pub costs_paid: Array1<T>,
    pub liability: Array1<T>,
    pub trading_prices: Array2<T>,
    pub grid: TimeGrid<T>,
    pub premium: T,
}

impl<T: Scalar> EpisodeBatch<T> {
    pub fn n_paths(&self) -> usize {
        self.wealth.len()
    }

    pub fn wealth_vec(&self) -> Vec<T> {
        self.wealth.to_vec()
    }

    /// `path_id,trading_step,time,price,delta,wealth_terminal`, one row per path and trading time.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "path_id,trading_step,time,price,delta,wealth_terminal")?;
        for j in 0..self.n_paths() {
            for i in 0..self.holdings.ncols() {
                writeln!(
                    out,
                    "{j},{i},{},{},{},{}",
                    self.grid.trading_time(i),
                    self.trading_prices[[j, i]],
                    self.holdings[[j, i]],
                    self.wealth[j]
                )?;
            }
        }
        Ok(())
    }
}

fn check_policy<T: Scalar>(policy: &Mlp<T>, env: &HedgingEnv<T>) -> Result<()> {
    if policy.spec().input_dim != env.feature_dim() || policy.spec().output_dim != 1 {
        return Err(contract_err(format!(
            "policy maps {} -> {} features, the environment needs {} -> 1",
            policy.spec().input_dim,
            policy.spec().output_dim,
            env.feature_dim()
        )));
    }
    Ok(())
}

fn check_outputs<T: Scalar>(out: &Array2<T>, step: usize, row_offset: usize) -> Result<()> {
    if let Some((j, v)) = out.column(0).iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Training(format!(
            "policy output {v} at trading step {step}, path {}",
            j + row_offset
        )));
    }
    Ok(())
}

fn assert_bounded<T: Scalar>(policy: &Mlp<T>, holdings: &Array2<T>) {
    if let OutputActivation::TanhScaled { bound } = policy.spec().output_activation {
        let bound = T::lit(bound);
        debug_assert!(holdings.iter().all(|d| d.abs() <= bound));
    }
}

fn rollout_rows<T: Scalar>(policy: &Mlp<T>, market: &HedgingMarket<T>, env: &HedgingEnv<T>, offset: usize) -> Result<Array2<T>> {
    let (n, n_trades) = (market.n_paths(), market.n_trades());
    let mut holdings = Array2::zeros((n, n_trades));
    let mut prev = Array1::zeros(n);
    for i in 0..n_trades {
        let x = build_features(market, env, i, prev.view())?;
        let out = policy.predict(x.view())?;
        check_outputs(&out, i, offset)?;
        holdings.column_mut(i).assign(&out.column(0));
        prev.assign(&out.column(0));
    }
    Ok(holdings)
}

const ROLLOUT_CHUNK: usize = 8192;

/// Runs the policy forward over every path; chunks run in parallel.
pub fn rollout<T: Scalar>(policy: &Mlp<T>, batch: &PathBatch<T>, env: &HedgingEnv<T>) -> Result<EpisodeBatch<T>> {
    let market = env.market(batch)?;
    rollout_market(policy, &market, env)
}

pub fn rollout_market<T: Scalar>(policy: &Mlp<T>, market: &HedgingMarket<T>, env: &HedgingEnv<T>) -> Result<EpisodeBatch<T>> {
    check_policy(policy, env)?;
    let n = market.n_paths();
    let starts: Vec<usize> = (0..n).step_by(ROLLOUT_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ROLLOUT_CHUNK).min(n);
            if starts.len() == 1 {
                rollout_rows(policy, market, env, 0)
            } else {
                rollout_rows(policy, &market.rows(start, end), env, start)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let holdings = ndarray::concatenate(Axis(0), &views).map_err(|e| contract_err(e.to_string()))?;
    assert_bounded(policy, &holdings);
    episode_from_holdings(market, env, holdings)
}

/// Wraps externally chosen holdings (for example a benchmark strategy) into an episode.
pub fn episode_from_holdings<T: Scalar>(market: &HedgingMarket<T>, env: &HedgingEnv<T>, holdings: Array2<T>) -> Result<EpisodeBatch<T>> {
    let (wealth, costs_paid) = wealth_from_holdings(market, env, holdings.view())?;
    Ok(EpisodeBatch {
        holdings,
        wealth,
        costs_paid,
        liability: market.liability.clone(),
        trading_prices: market.trading_prices.clone(),
        grid: market.grid.clone(),
        premium: env.premium,
    })
}

/// Forward activations of every trading step, kept for one reverse sweep.
pub struct RolloutTape<T: Scalar> {
    caches: Vec<ForwardCache<T>>,
    holdings: Array2<T>,
    trading_prices: Array2<T>,
    cost_rate: T,
}

/// Rollout that records what [`RolloutTape::backward`] needs.
pub fn rollout_with_tape<T: Scalar>(
    policy: &Mlp<T>,
    market: &HedgingMarket<T>,
    env: &HedgingEnv<T>,
) -> Result<(EpisodeBatch<T>, RolloutTape<T>)> {
    check_policy(policy, env)?;
    let (n, n_trades) = (market.n_paths(), market.n_trades());
    let mut holdings = Array2::zeros((n, n_trades));
    let mut prev = Array1::zeros(n);
    let mut caches = Vec::with_capacity(n_trades);
    for i in 0..n_trades {
        let x = build_features(market, env, i, prev.view())?;
        let (out, cache) = policy.forward(x.view())?;
        check_outputs(&out, i, 0)?;
        holdings.column_mut(i).assign(&out.column(0));
        prev.assign(&out.column(0));
        caches.push(cache);
    }
    assert_bounded(policy, &holdings);
    let tape = RolloutTape {
        caches,
        holdings: holdings.clone(),
        trading_prices: market.trading_prices.clone(),
        cost_rate: env.cost.rate,
    };
    Ok((episode_from_holdings(market, env, holdings)?, tape))
}

impl<T: Scalar> RolloutTape<T> {
    /// `∂X/∂Δ` for every path and trading step, holding later holdings fixed.
    pub fn direct_holding_sensitivity(&self) -> Array2<T> {
        let (n, n_trades) = self.holdings.dim();
        let c = self.cost_rate;
        Array2::from_shape_fn((n, n_trades), |(j, i)| {
            let s = &self.trading_prices;
            let d = &self.holdings;
            let prev = if i == 0 { T::zero() } else { d[[j, i - 1]] };
            let mut g = s[[j, i + 1]] - s[[j, i]] - c * sgn(d[[j, i]] - prev) * s[[j, i]];
            if i + 1 < n_trades {
                g += c * sgn(d[[j, i + 1]] - d[[j, i]]) * s[[j, i + 1]];
            }
            g
        })
    }

    /// Gradient of `Σ_j weights_j · X_j` with respect to the policy parameters.
    ///
    /// With costs on, holdings feed the next step's features, so the input gradient on
    /// that feature is carried backwards in time.
    pub fn backward(&self, policy: &Mlp<T>, weights: ArrayView1<T>) -> Result<Vec<T>> {
        let (n, n_trades) = self.holdings.dim();
        if weights.len() != n {
            return Err(contract_err(format!("{} weights for {} paths", weights.len(), n)));
        }
        let direct = self.direct_holding_sensitivity();
        let recurrent = self.cost_rate > T::zero();
        let mut grad = vec![T::zero(); policy.n_params()];
        let mut carry = Array1::<T>::zeros(n);
        for i in (0..n_trades).rev() {
            let mut upstream = Array2::zeros((n, 1));
            for j in 0..n {
                upstream[[j, 0]] = weights[j] * direct[[j, i]] + carry[j];
            }
            let dx = policy.backward_accumulate(&self.caches[i], upstream.view(), &mut grad)?;
            if recurrent {
                carry.assign(&dx.column(4));
            }
        }
        Ok(grad)
    }
}
