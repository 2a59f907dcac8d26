#![allow(dead_code)]

use hedgekit::hedging_env::{rollout_market, rollout_with_tape, HedgingEnv, HedgingMarket, TransactionCost};
use hedgekit::instruments::{BarrierKind, BarrierOptionSpec};
use hedgekit::market_sim::{simulate_gbm, TimeGrid};
use hedgekit::nn::{HiddenActivation, Mlp, MlpSpec, OutputActivation};
use hedgekit::risk::{rdeu_empirical, Distortion, EmpiricalDistribution, Utility};
use hedgekit::training::{
    inner_gradient, lagrangian_value, nonrobust_gradient, outer_gradient, AdversarySample, RobustConfig,
};
use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};

/// Ten fine steps, two trading dates.
pub fn toy_grid() -> TimeGrid<f64> {
    TimeGrid { n_steps: 10, maturity: 1.0, trade_every: 5 }
}

pub fn toy_env(cost: f64) -> HedgingEnv<f64> {
    let option = BarrierOptionSpec { kind: BarrierKind::KnockIn, strike: 10.0, barrier: 9.0, maturity: 1.0 };
    HedgingEnv::new(Some(option), TransactionCost::new(cost).unwrap(), 0.0).unwrap()
}

pub fn toy_market(env: &HedgingEnv<f64>, n: usize, seed: u64) -> HedgingMarket<f64> {
    let batch = simulate_gbm(10.0, 0.05, 0.3, &toy_grid(), n, seed).unwrap();
    env.market(&batch).unwrap()
}

/// A policy small enough for coordinate-wise finite differences.
pub fn toy_policy(input_dim: usize, seed: u64) -> Mlp<f64> {
    let spec = MlpSpec {
        input_dim,
        hidden_layers: vec![4],
        hidden_activation: HiddenActivation::Silu,
        output_dim: 1,
        output_activation: OutputActivation::TanhScaled { bound: 2.0 },
    };
    Mlp::init(spec, seed).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / ‖b‖`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub fn with_params(net: &Mlp<f64>, values: &[f64]) -> Mlp<f64> {
    let mut out = net.clone();
    out.params_mut().values_mut().copy_from_slice(values);
    out
}

pub fn empirical_risk(x: &[f64], gamma: &Distortion<f64>) -> f64 {
    rdeu_empirical(&EmpiricalDistribution::from_slice(x).unwrap(), gamma, &Utility::Identity).unwrap()
}

/// Relative error of the kernel estimator against finite differences of the empirical risk.
pub fn check_nonrobust(n: usize, cost: f64, gamma: Distortion<f64>) -> f64 {
    let env = toy_env(cost);
    let market = toy_market(&env, n, 11);
    let policy = toy_policy(env.feature_dim(), 5);
    let (episode, tape) = rollout_with_tape(&policy, &market, &env).unwrap();
    let est = nonrobust_gradient(&policy, &tape, &episode, &gamma, &Utility::Identity).unwrap();
    let fd = central_differences(policy.params().values(), 1e-4, |v| {
        let ep = rollout_market(&with_params(&policy, v), &market, &env).unwrap();
        empirical_risk(&ep.wealth_vec(), &gamma)
    });
    relative_error(&est.grad, &fd)
}

pub fn perturbed_adversary(scale: f64, seed: u64) -> Mlp<f64> {
    let mut adv = Mlp::init(MlpSpec::wealth_adversary(), seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for v in adv.params_mut().values_mut() {
        *v += scale * rng.random_range(-1.0..1.0);
    }
    adv
}

/// Relative error of the adversary gradient; `scale` moves the adversary away from the identity.
pub fn check_inner(n: usize, scale: f64, robust: &RobustConfig, expect_outside: bool) -> f64 {
    let env = toy_env(0.0);
    let market = toy_market(&env, n, 21);
    let policy = toy_policy(env.feature_dim(), 4);
    let x_phi = rollout_market(&policy, &market, &env).unwrap().wealth_vec();
    let adv = perturbed_adversary(scale, 8);
    let gamma = Distortion::cvar(0.2).unwrap();
    let sample = AdversarySample::new(&adv, &x_phi).unwrap();
    assert_eq!(sample.distance(1.0) > robust.epsilon, expect_outside);
    let g = inner_gradient(&adv, &sample, &gamma, &Utility::Identity, robust).unwrap();
    let fd = central_differences(adv.params().values(), 1e-5, |v| {
        let s = AdversarySample::new(&with_params(&adv, v), &x_phi).unwrap();
        lagrangian_value(&s.x_theta, &x_phi, &gamma, &Utility::Identity, robust).unwrap().value
    });
    relative_error(&g.total(), &fd)
}

/// Relative errors (total, risk part) of the policy gradient through a fixed adversary.
pub fn check_outer(n: usize) -> (f64, f64) {
    let env = toy_env(0.0);
    let market = toy_market(&env, n, 31);
    let policy = toy_policy(env.feature_dim(), 6);
    let adv = perturbed_adversary(0.05, 12);
    let gamma = Distortion::cvar(0.2).unwrap();
    let robust = RobustConfig { epsilon: 0.02, lambda: 1.0, mu: 10.0, ..RobustConfig::default() };
    let (episode, tape) = rollout_with_tape(&policy, &market, &env).unwrap();
    let sample = AdversarySample::new(&adv, &episode.wealth_vec()).unwrap();
    assert!(sample.distance(1.0) > robust.epsilon);
    let g = outer_gradient(&policy, &tape, &sample, &gamma, &Utility::Identity, &robust).unwrap();
    let x_theta = |v: &[f64]| {
        let x_phi = rollout_market(&with_params(&policy, v), &market, &env).unwrap().wealth_vec();
        let s = AdversarySample::new(&adv, &x_phi).unwrap();
        (s.x_theta, x_phi)
    };
    let fd = central_differences(policy.params().values(), 1e-4, |v| {
        let (xt, xp) = x_theta(v);
        lagrangian_value(&xt, &xp, &gamma, &Utility::Identity, &robust).unwrap().value
    });
    let risk_only = central_differences(policy.params().values(), 1e-4, |v| empirical_risk(&x_theta(v).0, &gamma));
    (relative_error(&g.total(), &fd), relative_error(&g.risk, &risk_only))
}

/// Relative error of the uniform-distortion estimator against the exact mean gradient.
pub fn check_uniform(n: usize) -> f64 {
    // no liability: the kernel smoothing of a payoff kink would dominate the comparison
    let env = HedgingEnv::new(None, TransactionCost::none(), 0.0).unwrap();
    let market = toy_market(&env, n, 3);
    let policy = toy_policy(env.feature_dim(), 9);
    let (episode, tape) = rollout_with_tape(&policy, &market, &env).unwrap();
    let est = nonrobust_gradient(&policy, &tape, &episode, &Distortion::Uniform, &Utility::Identity).unwrap();
    let w = vec![-1.0 / n as f64; n];
    let mean_grad = tape.backward(&policy, ArrayView1::from(&w)).unwrap();
    relative_error(&est.grad, &mean_grad)
}
