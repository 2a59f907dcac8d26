//! Wasserstein-robust training: an adversary `H_θ` distorts the wealth sample,
//! `X^θ = H_θ(X^φ)`, inside a ball `d_p(X^θ, X^φ) ≤ ε` enforced by an augmented
//! Lagrangian `L = R[X^θ] + λc + (μ/2)c²` with `c = (d_p^p − ε^p)_+`.
//!
//! Both gradients are returned as two parts, `risk = ∇R[X^θ]` and
//! `penalty = ∇(λc + μc²/2)`. The adversary ascends `risk − penalty`; the trainer
//! moves the policy down the `risk` part only.

use log::{info, warn};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{
    adversary_init_seed, empirical_risk, norm, policy_init_seed, training_batch, HistoryRow, SampleKernel, TrainConfig,
    TrainSetup, TrainStatus, TrainingHistory,
};
use crate::error::{contract_err, param_err, Error, Result};
use crate::hedging_env::{rollout_with_tape, RolloutTape};
use crate::nn::{AdamState, ForwardCache, Mlp, MlpSpec};
use crate::risk::{Distortion, Utility};
use crate::scalar::{cmp, sgn, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Ball radius.
    pub epsilon: f64,
    /// Order `p` of the Wasserstein distance.
    pub wasserstein_order: f64,
    /// Starting Lagrange multiplier.
    pub lambda: f64,
    /// Starting penalty constant.
    pub mu: f64,
    pub mu_growth: f64,
    /// `μ` grows when the violation did not drop below this fraction of the previous one.
    pub violation_shrink: f64,
    pub max_mu: f64,
    pub inner_steps: usize,
    pub outer_steps: usize,
    /// Allowed `d_p − ε` averaged over the final tenth of training.
    pub violation_tolerance: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            wasserstein_order: 1.0,
            lambda: 0.0,
            mu: 10.0,
            mu_growth: 2.0,
            violation_shrink: 0.25,
            max_mu: 1e6,
            inner_steps: 10,
            outer_steps: 1,
            violation_tolerance: 0.005,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(param_err(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.wasserstein_order >= 1.0) {
            return Err(param_err("wasserstein_order must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !(self.mu >= 0.0) {
            return Err(param_err("lambda and mu must be non-negative"));
        }
        if !(self.mu_growth > 1.0) || !(self.violation_shrink > 0.0 && self.violation_shrink < 1.0) {
            return Err(param_err("mu_growth must exceed 1 and violation_shrink lie in (0, 1)"));
        }
        if self.outer_steps == 0 {
            return Err(param_err("outer_steps must be at least 1"));
        }
        Ok(())
    }
}

/// A wealth sample pushed through the adversary, with its comonotone pairing.
#[derive(Debug, Clone)]
pub struct AdversarySample<T: Scalar> {
    pub x_phi: Vec<T>,
    pub x_theta: Vec<T>,
    /// `pairing[i]` is the φ-sample with the same rank as θ-sample `i`.
    pub pairing: Vec<usize>,
    /// `H_θ'(x_phi)` per sample.
    pub slope: Vec<T>,
    cache: ForwardCache<T>,
}

fn argsort<T: Scalar>(x: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(&x[a], &x[b]).then(a.cmp(&b)));
    idx
}

impl<T: Scalar> AdversarySample<T> {
    pub fn new(adversary: &Mlp<T>, x_phi: &[T]) -> Result<Self> {
        if adversary.spec().input_dim != 1 || adversary.spec().output_dim != 1 {
            return Err(contract_err("adversary must map scalars to scalars"));
        }
        let n = x_phi.len();
        let input = Array2::from_shape_vec((n, 1), x_phi.to_vec()).map_err(|e| contract_err(e.to_string()))?;
        let (out, cache) = adversary.forward(input.view())?;
        let x_theta = out.column(0).to_vec();
        if let Some(i) = x_theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("adversary output is {} for sample {i}", x_theta[i])));
        }
        let slope = adversary.backward(&cache, Array2::ones((n, 1)).view())?.inputs.column(0).to_vec();
        let order_theta = argsort(&x_theta);
        let order_phi = argsort(x_phi);
        let mut pairing = vec![0; n];
        for (&ti, &pi) in order_theta.iter().zip(&order_phi) {
            pairing[ti] = pi;
        }
        Ok(Self { x_phi: x_phi.to_vec(), x_theta, pairing, slope, cache })
    }

    pub fn len(&self) -> usize {
        self.x_phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_phi.is_empty()
    }

    /// `x_theta[i] − x_phi[pairing[i]]`.
    pub fn transport(&self) -> Vec<T> {
        self.x_theta.iter().zip(&self.pairing).map(|(&t, &j)| t - self.x_phi[j]).collect()
    }

    /// `d_p(X^θ, X^φ)` from the order-statistic coupling.
    pub fn distance(&self, order: f64) -> T {
        wasserstein_from_transport(&self.transport(), order)
    }
}

fn wasserstein_from_transport<T: Scalar>(transport: &[T], order: f64) -> T {
    let n = T::from_usize_lossy(transport.len());
    let p = T::lit(order);
    let s: T = transport.iter().map(|d| d.abs().powf(p)).sum();
    (s / n).powf(T::one() / p)
}

fn sorted_distance<T: Scalar>(x_theta: &[T], x_phi: &[T], order: f64) -> Result<T> {
    if x_theta.len() != x_phi.len() || x_theta.is_empty() {
        return Err(crate::error::domain_err("penalty needs two non-empty samples of equal size"));
    }
    let mut a = x_theta.to_vec();
    let mut b = x_phi.to_vec();
    a.sort_by(|x, y| cmp(x, y));
    b.sort_by(|x, y| cmp(x, y));
    let transport: Vec<T> = a.iter().zip(&b).map(|(&x, &y)| x - y).collect();
    Ok(wasserstein_from_transport(&transport, order))
}

/// `(d_p^p − ε^p)_+` for two equally sized samples.
pub fn penalty_c<T: Scalar>(x_theta: &[T], x_phi: &[T], robust: &RobustConfig) -> Result<T> {
    let d = sorted_distance(x_theta, x_phi, robust.wasserstein_order)?;
    Ok(penalty_from_distance(d, robust))
}

fn penalty_from_distance<T: Scalar>(d: T, robust: &RobustConfig) -> T {
    let p = T::lit(robust.wasserstein_order);
    (d.powf(p) - T::lit(robust.epsilon).powf(p)).max(T::zero())
}

/// `Λ = (λ + μc)·1(d > ε)`.
pub fn multiplier<T: Scalar>(d: T, c: T, lambda: f64, mu: f64, epsilon: f64) -> T {
    if d > T::lit(epsilon) {
        T::lit(lambda) + T::lit(mu) * c
    } else {
        T::zero()
    }
}

/// Empirical Lagrangian and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianValue<T> {
    pub risk: T,
    pub distance: T,
    pub c: T,
    /// `R + λc + μc²/2`.
    pub value: T,
}

pub fn lagrangian_value<T: Scalar>(
    x_theta: &[T],
    x_phi: &[T],
    gamma: &Distortion<T>,
    utility: &Utility,
    robust: &RobustConfig,
) -> Result<LagrangianValue<T>> {
    let risk = empirical_risk(x_theta, gamma, utility)?;
    let distance = sorted_distance(x_theta, x_phi, robust.wasserstein_order)?;
    let c = penalty_from_distance(distance, robust);
    let value = risk + T::lit(robust.lambda) * c + T::lit(0.5 * robust.mu) * c * c;
    Ok(LagrangianValue { risk, distance, c, value })
}

/// Gradient of the Lagrangian split into its risk and penalty parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianGradient<T> {
    pub risk: Vec<T>,
    pub penalty: Vec<T>,
    pub degenerate: bool,
    pub distance: T,
    pub c: T,
    pub multiplier: T,
}

impl<T: Scalar> LagrangianGradient<T> {
    /// `∇L = risk + penalty`.
    pub fn total(&self) -> Vec<T> {
        self.risk.iter().zip(&self.penalty).map(|(&a, &b)| a + b).collect()
    }

    /// Gradient of the constrained objective `R − λc − μc²/2`.
    pub fn constrained_risk(&self) -> Vec<T> {
        self.risk.iter().zip(&self.penalty).map(|(&a, &b)| a - b).collect()
    }
}

struct PerSampleTerms<T: Scalar> {
    kernel: SampleKernel<T>,
    /// `U'(x^θ)γ(F̂_θ(x^θ))`.
    risk: Vec<T>,
    /// `−pΛ|x^θ − x_c|^{p−1} sgn(x^θ − x_c)`.
    penalty: Vec<T>,
    distance: T,
    c: T,
    multiplier: T,
}

fn per_sample_terms<T: Scalar>(
    sample: &AdversarySample<T>,
    gamma: &Distortion<T>,
    utility: &Utility,
    robust: &RobustConfig,
) -> Result<PerSampleTerms<T>> {
    let kernel = SampleKernel::new(&sample.x_theta)?;
    let risk = kernel.rdeu_integrand(gamma, utility);
    let transport = sample.transport();
    let distance = wasserstein_from_transport(&transport, robust.wasserstein_order);
    let c = penalty_from_distance(distance, robust);
    let lam = multiplier(distance, c, robust.lambda, robust.mu, robust.epsilon);
    let p = T::lit(robust.wasserstein_order);
    let penalty = transport
        .iter()
        .map(|&d| {
            if lam == T::zero() {
                T::zero()
            } else {
                -p * lam * d.abs().powf(p - T::one()) * sgn(d)
            }
        })
        .collect();
    Ok(PerSampleTerms { kernel, risk, penalty, distance, c, multiplier: lam })
}

/// Adversary-parameter gradient of `L` at `sample`.
pub fn inner_gradient<T: Scalar>(
    adversary: &Mlp<T>,
    sample: &AdversarySample<T>,
    gamma: &Distortion<T>,
    utility: &Utility,
    robust: &RobustConfig,
) -> Result<LagrangianGradient<T>> {
    let terms = per_sample_terms(sample, gamma, utility, robust)?;
    let n = sample.len();
    let pull = |coeffs: Vec<T>| -> Result<Vec<T>> {
        let up = Array2::from_shape_vec((n, 1), coeffs).map_err(|e| contract_err(e.to_string()))?;
        Ok(adversary.backward(&sample.cache, up.view())?.params)
    };
    let risk = pull(terms.kernel.spread(&terms.risk))?;
    let penalty = pull(terms.kernel.spread(&terms.penalty))?;
    Ok(LagrangianGradient {
        risk,
        penalty,
        degenerate: terms.kernel.is_degenerate(),
        distance: terms.distance,
        c: terms.c,
        multiplier: terms.multiplier,
    })
}

/// Policy-parameter gradient of `L` at `sample`, chaining through the adversary's slope.
///
/// The transport term differentiates both ends of each coupled pair: the θ-end through
/// the θ-kernel and the adversary, the φ-end through the φ-kernel with the opposite sign.
pub fn outer_gradient<T: Scalar>(
    policy: &Mlp<T>,
    tape: &RolloutTape<T>,
    sample: &AdversarySample<T>,
    gamma: &Distortion<T>,
    utility: &Utility,
    robust: &RobustConfig,
) -> Result<LagrangianGradient<T>> {
    let terms = per_sample_terms(sample, gamma, utility, robust)?;
    let n = sample.len();
    let risk_coeffs: Vec<T> = terms
        .kernel
        .spread(&terms.risk)
        .iter()
        .zip(&sample.slope)
        .map(|(&c, &s)| c * s)
        .collect();
    let risk = tape.backward(policy, ArrayView1::from(&risk_coeffs))?;

    let penalty = if terms.multiplier == T::zero() {
        vec![T::zero(); policy.n_params()]
    } else {
        let theta_side = terms.kernel.spread(&terms.penalty);
        let mut phi_integrand = vec![T::zero(); n];
        for (i, &j) in sample.pairing.iter().enumerate() {
            phi_integrand[j] = -terms.penalty[i];
        }
        let phi_kernel = SampleKernel::new(&sample.x_phi)?;
        let phi_side = phi_kernel.spread(&phi_integrand);
        let coeffs: Vec<T> = (0..n).map(|j| theta_side[j] * sample.slope[j] + phi_side[j]).collect();
        tape.backward(policy, ArrayView1::from(&coeffs))?
    };
    Ok(LagrangianGradient {
        risk,
        penalty,
        degenerate: terms.kernel.is_degenerate(),
        distance: terms.distance,
        c: terms.c,
        multiplier: terms.multiplier,
    })
}

#[derive(Debug, Clone)]
pub struct RobustTrained<T: Scalar> {
    pub policy: Mlp<T>,
    pub adversary: Mlp<T>,
    pub history: TrainingHistory,
    pub status: TrainStatus,
    pub lambda: f64,
    pub mu: f64,
}

/// Alternates adversary ascent and policy descent, updating `λ` and `μ` after every cycle.
pub fn train_robust<T: Scalar>(
    setup: &TrainSetup<T>,
    config: &TrainConfig,
    robust: &RobustConfig,
    init_policy: Option<Mlp<T>>,
) -> Result<RobustTrained<T>> {
    setup.validate()?;
    config.validate()?;
    robust.validate()?;
    let mut policy = match init_policy {
        Some(p) => p,
        None => Mlp::init(setup.policy_spec.clone(), policy_init_seed(config.seed))?,
    };
    let mut adversary = Mlp::init(MlpSpec::wealth_adversary(), adversary_init_seed(config.seed))?;
    let mut adam_policy = AdamState::new(policy.n_params(), config.lr_policy, 0.9, 0.999, 1e-8)?;
    let mut adam_adv = AdamState::new(adversary.n_params(), config.lr_adversary, 0.9, 0.999, 1e-8)?;
    let mut lambda = robust.lambda;
    let mut mu = robust.mu;
    let mut prev_c = f64::INFINITY;
    let mut history = TrainingHistory::default();
    let mut last_good = (policy.clone(), adversary.clone());
    let (gamma, utility) = (&setup.gamma, &setup.utility);

    let diverged = |iter: usize, reason: String, history: TrainingHistory, last: (Mlp<T>, Mlp<T>), lambda, mu| {
        warn!("robust training diverged at iteration {iter}: {reason}");
        Ok(RobustTrained {
            policy: last.0,
            adversary: last.1,
            history,
            status: TrainStatus::Diverged { iter, reason },
            lambda,
            mu,
        })
    };

    for iter in 0..config.iterations {
        let market = setup.env.market(&training_batch(setup, config, iter)?)?;
        let mut rolled = match rollout_with_tape(&policy, &market, &setup.env) {
            Ok(r) => r,
            Err(Error::Training(reason)) => return diverged(iter, reason, history, last_good, lambda, mu),
            Err(e) => return Err(e),
        };
        let x_phi = rolled.0.wealth_vec();
        let robust_now = RobustConfig { lambda, mu, ..robust.clone() };

        for _ in 0..robust.inner_steps {
            let sample = match AdversarySample::new(&adversary, &x_phi) {
                Ok(s) => s,
                Err(Error::Training(reason)) => return diverged(iter, reason, history, last_good, lambda, mu),
                Err(e) => return Err(e),
            };
            let g = inner_gradient(&adversary, &sample, gamma, utility, &robust_now)?;
            let ascent: Vec<T> = g.constrained_risk().iter().map(|&v| -v).collect();
            adam_adv.step(adversary.params_mut().values_mut(), &ascent)?;
        }

        let mut logged = None;
        let mut grad_norm = 0.0;
        for step in 0..robust.outer_steps {
            if step > 0 {
                rolled = match rollout_with_tape(&policy, &market, &setup.env) {
                    Ok(r) => r,
                    Err(Error::Training(reason)) => return diverged(iter, reason, history, last_good, lambda, mu),
                    Err(e) => return Err(e),
                };
            }
            let x_now = rolled.0.wealth_vec();
            let sample = match AdversarySample::new(&adversary, &x_now) {
                Ok(s) => s,
                Err(Error::Training(reason)) => return diverged(iter, reason, history, last_good, lambda, mu),
                Err(e) => return Err(e),
            };
            if step == 0 {
                let risk_phi = empirical_risk(&x_now, gamma, utility)?;
                let risk_theta = empirical_risk(&sample.x_theta, gamma, utility)?;
                logged = Some((risk_phi.as_f64(), risk_theta.as_f64(), sample.distance(robust.wasserstein_order).as_f64()));
            }
            let g = outer_gradient(&policy, &rolled.1, &sample, gamma, utility, &robust_now)?;
            // the penalty part is zero for a feasible adversary; when the adversary overshoots,
            // Λ can be orders of magnitude above the true multiplier and would swamp the risk
            let dir = g.risk;
            grad_norm = norm(&dir);
            if !grad_norm.is_finite() {
                return diverged(iter, "non-finite policy gradient".into(), history, last_good, lambda, mu);
            }
            last_good = (policy.clone(), adversary.clone());
            adam_policy.step(policy.params_mut().values_mut(), &dir)?;
        }

        let (risk_phi, risk_theta, distance) = logged.expect("at least one outer step");
        if !risk_phi.is_finite() || !risk_theta.is_finite() {
            return diverged(iter, format!("risk is {risk_phi} / {risk_theta}"), history, last_good, lambda, mu);
        }
        history.rows.push(HistoryRow { iter, risk_phi, risk_theta, wasserstein: distance, lambda, mu, grad_norm });

        let p = robust.wasserstein_order;
        let c = (distance.powf(p) - robust.epsilon.powf(p)).max(0.0);
        lambda = (lambda + mu * c).max(0.0);
        if c > 0.0 && c > robust.violation_shrink * prev_c {
            mu = (mu * robust.mu_growth).min(robust.max_mu);
        }
        prev_c = c;
        if iter % 100 == 0 {
            info!("iter {iter}: R_phi {risk_phi:.5} R_theta {risk_theta:.5} d {distance:.4} lambda {lambda:.3} mu {mu:.1}");
        }
    }

    let tail = (history.rows.len() / 10).max(1);
    let recent = &history.rows[history.rows.len() - tail..];
    let mean_d = recent.iter().map(|r| r.wasserstein).sum::<f64>() / tail as f64;
    let status = if robust.inner_steps > 0 && mean_d > robust.epsilon + robust.violation_tolerance {
        TrainStatus::ConstraintViolated { distance: mean_d, epsilon: robust.epsilon }
    } else {
        TrainStatus::Completed
    };
    Ok(RobustTrained { policy, adversary, history, status, lambda, mu })
}
