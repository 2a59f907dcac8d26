//! Policy-gradient training of hedging policies under an RDEU risk measure.

mod kernel;
mod robust;

pub use kernel::SampleKernel;
pub use robust::{
    inner_gradient, lagrangian_value, multiplier, outer_gradient, penalty_c, train_robust, AdversarySample,
    LagrangianGradient, LagrangianValue, RobustConfig, RobustTrained,
};

use std::io::Write;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::hedging_env::{rollout_with_tape, EpisodeBatch, HedgingEnv, RolloutTape};
use crate::market_sim::{PathBatch, PathSource, TimeGrid};
use crate::nn::{AdamState, Mlp, MlpSpec};
use crate::risk::{rdeu_empirical, Distortion, EmpiricalDistribution, Utility};
use crate::scalar::Scalar;

/// Optimizer settings shared by both trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_policy: f64,
    pub lr_adversary: f64,
    pub seed: u64,
    /// Draw fresh paths every iteration instead of reusing one batch.
    pub resimulate_per_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 1024, iterations: 2000, lr_policy: 1e-3, lr_adversary: 1e-3, seed: 0, resimulate_per_batch: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 32 {
            return Err(param_err(format!("batch_size must be at least 32, got {}", self.batch_size)));
        }
        if self.iterations == 0 {
            return Err(param_err("iterations must be at least 1"));
        }
        if !(self.lr_policy > 0.0) || !(self.lr_adversary > 0.0) {
            return Err(param_err("learning rates must be positive"));
        }
        Ok(())
    }
}

/// The problem being trained on: market model, hedging environment, risk measure, network.
#[derive(Debug, Clone)]
pub struct TrainSetup<T: Scalar> {
    pub source: PathSource<T>,
    pub grid: TimeGrid<T>,
    pub env: HedgingEnv<T>,
    pub gamma: Distortion<T>,
    pub utility: Utility,
    pub policy_spec: MlpSpec,
}

impl<T: Scalar> TrainSetup<T> {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.utility.validate()?;
        self.policy_spec.validate()?;
        if self.policy_spec.input_dim != self.env.feature_dim() {
            return Err(param_err(format!(
                "policy takes {} inputs but the environment produces {} features",
                self.policy_spec.input_dim,
                self.env.feature_dim()
            )));
        }
        Ok(())
    }
}

const STREAM_POLICY_INIT: u64 = 1;
const STREAM_ADVERSARY_INIT: u64 = 2;
const STREAM_BATCH: u64 = 3;

/// Independent sub-seed for `(stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn policy_init_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_POLICY_INIT, 0)
}

pub fn adversary_init_seed(seed: u64) -> u64 {
    derive_seed(seed, STREAM_ADVERSARY_INIT, 0)
}

pub(crate) fn training_batch<T: Scalar>(setup: &TrainSetup<T>, config: &TrainConfig, iter: usize) -> Result<PathBatch<T>> {
    let index = if config.resimulate_per_batch { iter as u64 } else { 0 };
    setup
        .source
        .simulate(&setup.grid, config.batch_size, derive_seed(config.seed, STREAM_BATCH, index))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub risk_phi: f64,
    pub risk_theta: f64,
    pub wasserstein: f64,
    pub lambda: f64,
    pub mu: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainingHistory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,risk_phi,risk_theta,wasserstein,lambda,mu,grad_norm")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter, r.risk_phi, r.risk_theta, r.wasserstein, r.lambda, r.mu, r.grad_norm
            )?;
        }
        Ok(())
    }

    pub fn risk_phi(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.risk_phi).collect()
    }
}

/// How a training run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// Non-finite risk or policy output; the returned networks are the last finite ones.
    Diverged { iter: usize, reason: String },
    /// The adversary stayed outside the Wasserstein ball.
    ConstraintViolated { distance: f64, epsilon: f64 },
}

impl TrainStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, TrainStatus::Completed)
    }

    /// Turns an abnormal end into a training error.
    pub fn into_result(self) -> Result<()> {
        match self {
            TrainStatus::Completed => Ok(()),
            TrainStatus::Diverged { iter, reason } => Err(Error::Training(format!("diverged at iteration {iter}: {reason}"))),
            TrainStatus::ConstraintViolated { distance, epsilon } => Err(Error::Training(format!(
                "adversary stayed outside the ball: distance {distance:.5} > epsilon {epsilon}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy<T: Scalar> {
    pub policy: Mlp<T>,
    pub history: TrainingHistory,
    pub status: TrainStatus,
}

/// A gradient estimate and whether the kernel was usable.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub grad: Vec<T>,
    /// True when all wealth samples coincided; `grad` is then zero.
    pub degenerate: bool,
    pub bandwidth: T,
}

/// Kernel estimate of the policy gradient of `R[X]` for the episode in `tape`.
pub fn nonrobust_gradient<T: Scalar>(
    policy: &Mlp<T>,
    tape: &RolloutTape<T>,
    episode: &EpisodeBatch<T>,
    gamma: &Distortion<T>,
    utility: &Utility,
) -> Result<GradientEstimate<T>> {
    let x = episode.wealth_vec();
    let kernel = SampleKernel::new(&x)?;
    if kernel.is_degenerate() {
        return Ok(GradientEstimate { grad: vec![T::zero(); policy.n_params()], degenerate: true, bandwidth: kernel.bandwidth() });
    }
    let coeffs = kernel.spread(&kernel.rdeu_integrand(gamma, utility));
    let grad = tape.backward(policy, ndarray::ArrayView1::from(&coeffs))?;
    Ok(GradientEstimate { grad, degenerate: false, bandwidth: kernel.bandwidth() })
}

pub(crate) fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
}

pub(crate) fn empirical_risk<T: Scalar>(x: &[T], gamma: &Distortion<T>, utility: &Utility) -> Result<T> {
    rdeu_empirical(&EmpiricalDistribution::from_slice(x)?, gamma, utility)
}

/// Minimizes `R[X^φ]` over the policy parameters with Adam.
///
/// Starts from `init` when given, otherwise from a fresh network seeded by the config.
pub fn train_nonrobust<T: Scalar>(
    setup: &TrainSetup<T>,
    config: &TrainConfig,
    init: Option<Mlp<T>>,
) -> Result<TrainedPolicy<T>> {
    setup.validate()?;
    config.validate()?;
    let mut policy = match init {
        Some(p) => p,
        None => Mlp::init(setup.policy_spec.clone(), policy_init_seed(config.seed))?,
    };
    let mut adam = AdamState::new(policy.n_params(), config.lr_policy, 0.9, 0.999, 1e-8)?;
    let mut history = TrainingHistory::default();
    let mut last_good = policy.clone();
    let fixed_market = match config.resimulate_per_batch {
        false => Some(setup.env.market(&training_batch(setup, config, 0)?)?),
        true => None,
    };

    for iter in 0..config.iterations {
        let fresh;
        let market = match &fixed_market {
            Some(m) => m,
            None => {
                fresh = setup.env.market(&training_batch(setup, config, iter)?)?;
                &fresh
            }
        };
        let (episode, tape) = match rollout_with_tape(&policy, market, &setup.env) {
            Ok(r) => r,
            Err(Error::Training(reason)) => {
                warn!("non-robust training diverged at iteration {iter}: {reason}");
                return Ok(TrainedPolicy { policy: last_good, history, status: TrainStatus::Diverged { iter, reason } });
            }
            Err(e) => return Err(e),
        };
        let risk = match empirical_risk(episode.wealth.as_slice().expect("contiguous"), &setup.gamma, &setup.utility) {
            Ok(r) if r.is_finite() => r,
            Ok(r) => {
                let reason = format!("empirical risk is {r}");
                return Ok(TrainedPolicy { policy: last_good, history, status: TrainStatus::Diverged { iter, reason } });
            }
            Err(e) => {
                let reason = e.to_string();
                return Ok(TrainedPolicy { policy: last_good, history, status: TrainStatus::Diverged { iter, reason } });
            }
        };
        let est = nonrobust_gradient(&policy, &tape, &episode, &setup.gamma, &setup.utility)?;
        if est.degenerate {
            debug!("iteration {iter}: degenerate wealth sample, skipping update");
        }
        let grad_norm = norm(&est.grad);
        history.rows.push(HistoryRow {
            iter,
            risk_phi: risk.as_f64(),
            risk_theta: risk.as_f64(),
            wasserstein: 0.0,
            lambda: 0.0,
            mu: 0.0,
            grad_norm,
        });
        if !grad_norm.is_finite() {
            let reason = "non-finite gradient".to_string();
            return Ok(TrainedPolicy { policy: last_good, history, status: TrainStatus::Diverged { iter, reason } });
        }
        last_good = policy.clone();
        adam.step(policy.params_mut().values_mut(), &est.grad)?;
        if iter % 100 == 0 {
            info!("iter {iter}: risk {:.5} |grad| {grad_norm:.3e}", risk.as_f64());
        }
    }
    Ok(TrainedPolicy { policy, history, status: TrainStatus::Completed })
}
