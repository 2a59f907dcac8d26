//! Post-training analysis: P&L statistics, benchmark strategies, premium pricing,
//! total variation and the loss-weight sweep.
//!
//! Reported risk values use the wealth convention: `reported = −R`, the (weighted)
//! tail mean of wealth, so bad outcomes show up as negative numbers.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, param_err, Result};
use crate::hedging_env::{episode_from_holdings, rollout_market, EpisodeBatch, HedgingEnv, HedgingMarket};
use crate::instruments::{bs_hedge_rollout, match_bs_sigma};
use crate::market_sim::{PathBatch, PathSource, TimeGrid};
use crate::nn::{Mlp, MlpSpec};
use crate::risk::{rdeu_empirical, tail_expectations, Distortion, EmpiricalDistribution, Utility};
use crate::scalar::Scalar;
use crate::training::{train_nonrobust, TrainConfig, TrainSetup};

/// A hedging rule that can be run on any path batch.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a, T: Scalar> {
    Network(&'a Mlp<T>),
    /// Black-Scholes barrier delta at a fixed volatility.
    BlackScholes { sigma: T },
    /// Never trades.
    Zero,
}

pub fn run_strategy<T: Scalar>(strategy: Strategy<'_, T>, batch: &PathBatch<T>, env: &HedgingEnv<T>) -> Result<EpisodeBatch<T>> {
    let market = env.market(batch)?;
    run_on_market(strategy, batch, &market, env)
}

fn run_on_market<T: Scalar>(
    strategy: Strategy<'_, T>,
    batch: &PathBatch<T>,
    market: &HedgingMarket<T>,
    env: &HedgingEnv<T>,
) -> Result<EpisodeBatch<T>> {
    match strategy {
        Strategy::Network(policy) => rollout_market(policy, market, env),
        Strategy::BlackScholes { sigma } => {
            let option = env
                .option
                .as_ref()
                .ok_or_else(|| contract_err("the Black-Scholes benchmark needs an option to hedge"))?;
            episode_from_holdings(market, env, bs_hedge_rollout(option, batch, sigma)?)
        }
        Strategy::Zero => episode_from_holdings(market, env, Array2::zeros((market.n_paths(), market.n_trades()))),
    }
}

/// Per-path `Σ_i |Δ_i − Δ_{i−1}|` with `Δ_{−1} = 0`.
pub fn total_variation<T: Scalar>(episode: &EpisodeBatch<T>) -> Vec<T> {
    episode
        .holdings
        .rows()
        .into_iter()
        .map(|row| {
            let mut prev = T::zero();
            let mut tv = T::zero();
            for &d in row {
                tv += (d - prev).abs();
                prev = d;
            }
            tv
        })
        .collect()
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || !(hi > lo) {
            let v = if values.is_empty() { 0.0 } else { lo };
            return Self { edges: vec![v, v], counts: vec![values.len()] };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Monte Carlo standard error of the empirical RDEU from its influence function.
///
/// For `T = ∫ U(q(u)) γ(u) du` the influence of an observation `x` is
/// `∫ γ(F(t)) U'(t) (F(t) − 1[x ≤ t]) dt`, evaluated exactly on the empirical CDF.
pub fn risk_standard_error<T: Scalar>(dist: &EmpiricalDistribution<T>, gamma: &Distortion<T>, utility: &Utility) -> f64 {
    let n = dist.len();
    if n < 2 {
        return f64::NAN;
    }
    let x: Vec<f64> = dist.sorted().map(|v| v.as_f64()).collect();
    // interval k spans [x_k, x_{k+1}) where the empirical CDF equals (k+1)/n
    let w: Vec<f64> = (0..n - 1)
        .map(|k| {
            let f = (k + 1) as f64 / n as f64;
            gamma.weight(T::lit(f)).as_f64() * (utility.value(x[k + 1]) - utility.value(x[k]))
        })
        .collect();
    let weighted_cdf: f64 = w.iter().enumerate().map(|(k, &wk)| wk * (k + 1) as f64 / n as f64).sum();
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n - 1).rev() {
        suffix[k] = suffix[k + 1] + w[k];
    }
    let infl: Vec<f64> = (0..n).map(|i| weighted_cdf - suffix[i]).collect();
    let mean = infl.iter().sum::<f64>() / n as f64;
    let var = infl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Where and how an evaluation is run.
#[derive(Debug, Clone)]
pub struct EvalSpec<T: Scalar> {
    pub source: PathSource<T>,
    pub grid: TimeGrid<T>,
    pub env: HedgingEnv<T>,
    pub gamma: Distortion<T>,
    pub utility: Utility,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub strategy: String,
    pub market: serde_json::Value,
    pub seed: u64,
    pub n_paths: usize,
    pub cost_rate: f64,
    pub premium: f64,
    /// `R[X]`.
    pub risk: f64,
    /// `−R[X]`, the tail-mean convention.
    pub reported: f64,
    pub std_error: f64,
    /// Unconditional lower and upper tail expectations at the distortion's `α`, `β`.
    pub lte: Option<f64>,
    pub ute: Option<f64>,
    pub mean_wealth: f64,
    pub median_total_variation: f64,
    pub total_variation: Histogram,
}

/// Tail levels implied by a distortion, if it has tails.
fn tail_levels<T: Scalar>(gamma: &Distortion<T>) -> Option<(T, T)> {
    match gamma {
        Distortion::AlphaBeta(ab) => Some((ab.alpha(), ab.beta())),
        Distortion::Uniform => None,
    }
}

pub fn summarize<T: Scalar>(
    strategy_id: &str,
    episode: &EpisodeBatch<T>,
    spec: &EvalSpec<T>,
) -> Result<EvaluationReport> {
    let dist = EmpiricalDistribution::new(episode.wealth_vec())?;
    let risk = rdeu_empirical(&dist, &spec.gamma, &spec.utility)?.as_f64();
    let (lte, ute) = match tail_levels(&spec.gamma) {
        Some((a, b)) => match tail_expectations(&dist, a, b) {
            Ok(t) => (Some(t.lower.as_f64()), Some(t.upper.as_f64())),
            Err(_) => (None, None),
        },
        None => (None, None),
    };
    let tv: Vec<f64> = total_variation(episode).iter().map(|v| v.as_f64()).collect();
    Ok(EvaluationReport {
        strategy: strategy_id.to_string(),
        market: serde_json::to_value(&spec.source).unwrap_or(serde_json::Value::Null),
        seed: spec.seed,
        n_paths: episode.n_paths(),
        cost_rate: spec.env.cost.rate.as_f64(),
        premium: episode.premium.as_f64(),
        risk,
        reported: -risk,
        std_error: risk_standard_error(&dist, &spec.gamma, &spec.utility),
        lte,
        ute,
        mean_wealth: dist.mean().as_f64(),
        median_total_variation: median(&tv),
        total_variation: Histogram::new(&tv, 20),
    })
}

/// Simulates `spec`'s market and runs one strategy over it.
pub fn evaluate_strategy<T: Scalar>(
    strategy_id: &str,
    strategy: Strategy<'_, T>,
    spec: &EvalSpec<T>,
) -> Result<(EvaluationReport, EpisodeBatch<T>)> {
    if let Strategy::Network(policy) = strategy {
        if policy.spec().input_dim != spec.env.feature_dim() {
            return Err(contract_err(format!(
                "policy was trained on {} features but this evaluation provides {} (cost rate {})",
                policy.spec().input_dim,
                spec.env.feature_dim(),
                spec.env.cost.rate
            )));
        }
    }
    let batch = spec.source.simulate(&spec.grid, spec.n_paths, spec.seed)?;
    let episode = run_strategy(strategy, &batch, &spec.env)?;
    Ok((summarize(strategy_id, &episode, spec)?, episode))
}

pub fn evaluate_policy<T: Scalar>(policy: &Mlp<T>, spec: &EvalSpec<T>) -> Result<(EvaluationReport, EpisodeBatch<T>)> {
    evaluate_strategy("policy", Strategy::Network(policy), spec)
}

/// The Black-Scholes benchmark with volatility matched to the spec's own market.
pub fn evaluate_bs_benchmark<T: Scalar>(spec: &EvalSpec<T>, sigma: T) -> Result<(EvaluationReport, EpisodeBatch<T>)> {
    evaluate_strategy("black_scholes", Strategy::BlackScholes { sigma }, spec)
}

/// Volatility matched on a batch from `source` (the model the benchmark believes in).
pub fn matched_sigma<T: Scalar>(source: &PathSource<T>, grid: &TimeGrid<T>, n_paths: usize, seed: u64) -> Result<T> {
    let batch = source.simulate(grid, n_paths, seed)?;
    Ok(match_bs_sigma(&batch)?.sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceQuote {
    /// Premium that moves the reported risk onto the target.
    pub price: f64,
    /// Reported risk of the zero-premium wealth.
    pub reported_without_premium: f64,
    /// Reported risk after charging `price`; equals the target.
    pub reported_with_premium: f64,
}

/// Premium `P = target − v0` where `v0 = −R[X]` of the zero-premium wealth sample.
pub fn price_to_cvar_target<T: Scalar>(wealth: &[T], gamma: &Distortion<T>, utility: &Utility, target: f64) -> Result<PriceQuote> {
    if !utility.is_translation_invariant() {
        return Err(contract_err("premium pricing needs a translation-invariant risk measure (identity utility)"));
    }
    let dist = EmpiricalDistribution::from_slice(wealth)?;
    let v0 = -rdeu_empirical(&dist, gamma, utility)?.as_f64();
    let price = target - v0;
    let shifted: Vec<T> = wealth.iter().map(|&x| x + T::lit(price)).collect();
    let after = -rdeu_empirical(&EmpiricalDistribution::new(shifted)?, gamma, utility)?.as_f64();
    let tol = 1e-10f64.max(64.0 * T::epsilon().as_f64()) * (1.0 + target.abs() + v0.abs());
    if (after - target).abs() > tol {
        return Err(contract_err(format!("translation check failed: {after} vs target {target}")));
    }
    Ok(PriceQuote { price, reported_without_premium: v0, reported_with_premium: after })
}

/// One trained point of the loss-weight sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub lte: f64,
    pub ute: f64,
    pub risk: f64,
}

/// Trains a non-robust policy for every `p` in `p_grid` (shared seeds) and records
/// LTE, UTE and `R` on a common evaluation batch.
pub fn phase_sweep<T: Scalar>(
    base: &TrainSetup<T>,
    alpha: f64,
    beta: f64,
    p_grid: &[f64],
    config: &TrainConfig,
    eval_paths: usize,
    eval_seed: u64,
) -> Result<Vec<SweepRow>> {
    if p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(param_err("every p in the sweep grid must lie in (0, 1]"));
    }
    let eval_batch = base.source.simulate(&base.grid, eval_paths, eval_seed)?;
    let market = base.env.market(&eval_batch)?;
    let mut rows = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let gamma = Distortion::alpha_beta(T::lit(alpha), T::lit(beta), T::lit(p))?;
        let setup = TrainSetup { gamma: gamma.clone(), ..base.clone() };
        let trained = train_nonrobust(&setup, config, None)?;
        trained.status.clone().into_result()?;
        let episode = rollout_market(&trained.policy, &market, &base.env)?;
        let dist = EmpiricalDistribution::new(episode.wealth_vec())?;
        let tails = tail_expectations(&dist, T::lit(alpha), T::lit(beta))?;
        let risk = rdeu_empirical(&dist, &gamma, &base.utility)?;
        log::info!("sweep p={p:.3}: LTE {:.4} UTE {:.4} R {:.4}", tails.lower.as_f64(), tails.upper.as_f64(), risk.as_f64());
        rows.push(SweepRow { p, lte: tails.lower.as_f64(), ute: tails.upper.as_f64(), risk: risk.as_f64() });
    }
    Ok(rows)
}

/// The largest drop in UTE between neighbouring grid points as `p` increases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseJump {
    pub p_low: f64,
    pub p_high: f64,
    /// Midpoint of the two grid points.
    pub p_star: f64,
    /// `UTE(p_low) − UTE(p_high)`.
    pub jump: f64,
}

pub fn detect_phase_transition(rows: &[SweepRow]) -> Option<PhaseJump> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.p.total_cmp(&b.p));
    sorted
        .windows(2)
        .map(|w| PhaseJump { p_low: w[0].p, p_high: w[1].p, p_star: 0.5 * (w[0].p + w[1].p), jump: w[0].ute - w[1].ute })
        .max_by(|a, b| a.jump.total_cmp(&b.jump))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeverageRegime {
    NoTrade,
    FullLeverage,
    Intermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageReport {
    pub p: f64,
    pub bound: f64,
    pub risk_trained: f64,
    pub risk_zero: f64,
    pub risk_std_error: f64,
    pub median_abs_delta: f64,
    pub regime: LeverageRegime,
    /// `max_τ |R(τΔ) − τR(Δ)|` over `τ ∈ {0.5, 2}` on the evaluation paths.
    pub homogeneity_error: f64,
}

/// `|R(τΔ) − τR(Δ)|` for fixed holdings on a pure trading problem.
pub fn homogeneity_error<T: Scalar>(
    market: &HedgingMarket<T>,
    env: &HedgingEnv<T>,
    holdings: &Array2<T>,
    gamma: &Distortion<T>,
    tau: T,
) -> Result<f64> {
    if env.option.is_some() || env.cost.is_active() || env.premium != T::zero() {
        return Err(contract_err("homogeneity holds only without option, costs or premium"));
    }
    let base = episode_from_holdings(market, env, holdings.clone())?;
    let scaled = episode_from_holdings(market, env, holdings.mapv(|d| d * tau))?;
    let r = rdeu_empirical(&EmpiricalDistribution::new(base.wealth_vec())?, gamma, &Utility::Identity)?;
    let rs = rdeu_empirical(&EmpiricalDistribution::new(scaled.wealth_vec())?, gamma, &Utility::Identity)?;
    Ok((rs - tau * r).abs().as_f64())
}

/// Trains the option-free trading problem with holdings in `[−bound, bound]` and
/// classifies the learned strategy.
#[allow(clippy::too_many_arguments)]
pub fn leverage_dichotomy_check<T: Scalar>(
    alpha: f64,
    beta: f64,
    p: f64,
    source: &PathSource<T>,
    grid: &TimeGrid<T>,
    bound: f64,
    config: &TrainConfig,
    eval_paths: usize,
    eval_seed: u64,
) -> Result<(LeverageReport, Mlp<T>)> {
    let gamma = Distortion::alpha_beta(T::lit(alpha), T::lit(beta), T::lit(p))?;
    let env = HedgingEnv::new(None, crate::hedging_env::TransactionCost::none(), T::zero())?;
    let setup = TrainSetup {
        source: source.clone(),
        grid: *grid,
        env: env.clone(),
        gamma: gamma.clone(),
        utility: Utility::Identity,
        policy_spec: MlpSpec::hedging_policy_with_bound(env.feature_dim(), bound),
    };
    let trained = train_nonrobust(&setup, config, None)?;
    trained.status.clone().into_result()?;
    let batch = source.simulate(grid, eval_paths, eval_seed)?;
    let market = env.market(&batch)?;
    let episode = rollout_market(&trained.policy, &market, &env)?;
    let dist = EmpiricalDistribution::new(episode.wealth_vec())?;
    let risk = rdeu_empirical(&dist, &gamma, &Utility::Identity)?.as_f64();
    let se = risk_standard_error(&dist, &gamma, &Utility::Identity);
    let abs: Vec<f64> = episode.holdings.iter().map(|d| d.abs().as_f64()).collect();
    let med = median(&abs);
    let regime = if med >= 0.9 * bound {
        LeverageRegime::FullLeverage
    } else if med <= 0.1 * bound && risk.abs() <= 3.0 * se.max(1e-12) + 1e-3 {
        LeverageRegime::NoTrade
    } else {
        LeverageRegime::Intermediate
    };
    let mut homog: f64 = 0.0;
    for tau in [0.5, 2.0] {
        homog = homog.max(homogeneity_error(&market, &env, &episode.holdings, &gamma, T::lit(tau))?);
    }
    let report = LeverageReport {
        p,
        bound,
        risk_trained: risk,
        risk_zero: 0.0,
        risk_std_error: se,
        median_abs_delta: med,
        regime,
        homogeneity_error: homog,
    };
    Ok((report, trained.policy))
}

/// `path_id,wealth`.
pub fn write_pnl_csv<T: Scalar, W: Write>(episode: &EpisodeBatch<T>, mut out: W) -> Result<()> {
    writeln!(out, "path_id,wealth")?;
    for (j, x) in episode.wealth.iter().enumerate() {
        writeln!(out, "{j},{x}")?;
    }
    Ok(())
}

/// `path_id,total_variation`.
pub fn write_tv_csv<T: Scalar, W: Write>(episode: &EpisodeBatch<T>, mut out: W) -> Result<()> {
    writeln!(out, "path_id,total_variation")?;
    for (j, tv) in total_variation(episode).iter().enumerate() {
        writeln!(out, "{j},{tv}")?;
    }
    Ok(())
}

/// `p,lte,ute,risk`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "p,lte,ute,risk")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.p, r.lte, r.ute, r.risk)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingRow {
    pub scheme: String,
    pub option: String,
    pub price: f64,
    /// Reported risk after charging `price`; empty for prices not tied to a hedge.
    pub cvar_reported: Option<f64>,
}

/// `scheme,option,price,cvar_reported`.
pub fn write_pricing_csv<W: Write>(rows: &[PricingRow], mut out: W) -> Result<()> {
    writeln!(out, "scheme,option,price,cvar_reported")?;
    for r in rows {
        let cvar = r.cvar_reported.map(|c| c.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.scheme, r.option, r.price, cvar)?;
    }
    Ok(())
}
