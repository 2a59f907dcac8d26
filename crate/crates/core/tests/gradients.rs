mod common;

use common::*;
use hedgekit::hedging_env::{rollout_market, rollout_with_tape};
use hedgekit::nn::{AdamState, Mlp, MlpSpec};
use hedgekit::risk::{Distortion, Utility};
use hedgekit::training::{
    inner_gradient, nonrobust_gradient, outer_gradient, AdversarySample, RobustConfig,
};
use ndarray::Array2;

const N: usize = 4096;

#[test]
fn rdeu_gradient_matches_finite_differences() {
    let err = check_nonrobust(N, 0.0, Distortion::cvar(0.2).unwrap());
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn rdeu_gradient_with_costs_matches_finite_differences() {
    let err = check_nonrobust(N, 0.01, Distortion::alpha_beta(0.1, 0.9, 0.8).unwrap());
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn uniform_distortion_reduces_to_the_mean_gradient() {
    let err = check_uniform(1024);
    assert!(err < 0.02, "relative error {err}");
}

#[test]
fn disconnected_policy_has_zero_gradient() {
    // zero output weights and a tanh head: Δ ≡ 0 regardless of inputs, but the
    // output layer still receives gradient; zero the upstream by using constant prices
    let env = toy_env(0.0);
    let grid = toy_grid();
    let prices = Array2::from_elem((64, grid.n_steps + 1), 10.0);
    let batch = hedgekit::market_sim::PathBatch::from_prices(prices, grid).unwrap();
    let market = env.market(&batch).unwrap();
    let policy = toy_policy(env.feature_dim(), 2);
    let (episode, tape) = rollout_with_tape(&policy, &market, &env).unwrap();
    let est = nonrobust_gradient(&policy, &tape, &episode, &Distortion::cvar(0.2).unwrap(), &Utility::Identity).unwrap();
    assert!(est.degenerate);
    assert!(est.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn adversary_gradient_inside_the_ball() {
    let robust = RobustConfig { epsilon: 0.5, lambda: 2.0, mu: 10.0, ..RobustConfig::default() };
    let err = check_inner(N, 0.01, &robust, false);
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn adversary_gradient_outside_the_ball() {
    let robust = RobustConfig { epsilon: 0.02, lambda: 2.0, mu: 10.0, ..RobustConfig::default() };
    let err = check_inner(N, 0.05, &robust, true);
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn policy_gradient_through_the_adversary() {
    let (total, risk) = check_outer(N);
    assert!(total < 0.05, "relative error {total}");
    assert!(risk < 0.05, "risk part relative error {risk}");
}

fn risk_theta(adv: &Mlp<f64>, x_phi: &[f64], gamma: &Distortion<f64>) -> f64 {
    empirical_risk(&AdversarySample::new(adv, x_phi).unwrap().x_theta, gamma)
}

#[test]
fn unconstrained_adversary_raises_the_risk() {
    let env = toy_env(0.0);
    let market = toy_market(&env, 2048, 41);
    let policy = toy_policy(env.feature_dim(), 4);
    let x_phi = rollout_market(&policy, &market, &env).unwrap().wealth_vec();
    let gamma = Distortion::cvar(0.2).unwrap();
    let robust = RobustConfig { epsilon: 1e3, ..RobustConfig::default() };
    let mut adv = Mlp::init(MlpSpec::wealth_adversary(), 2).unwrap();
    let mut adam = AdamState::new(adv.n_params(), 1e-2, 0.9, 0.999, 1e-8).unwrap();
    let before = risk_theta(&adv, &x_phi, &gamma);
    for _ in 0..20 {
        let sample = AdversarySample::new(&adv, &x_phi).unwrap();
        let g = inner_gradient(&adv, &sample, &gamma, &Utility::Identity, &robust).unwrap();
        let ascent: Vec<f64> = g.constrained_risk().iter().map(|v| -v).collect();
        adam.step(adv.params_mut().values_mut(), &ascent).unwrap();
    }
    let after = risk_theta(&adv, &x_phi, &gamma);
    assert!(after > before + 0.01, "{before} -> {after}");
}

#[test]
fn policy_lowers_the_risk_against_a_frozen_adversary() {
    let env = toy_env(0.0);
    let market = toy_market(&env, 2048, 43);
    let mut policy = toy_policy(env.feature_dim(), 4);
    let adv = perturbed_adversary(0.05, 6);
    let gamma = Distortion::cvar(0.2).unwrap();
    let robust = RobustConfig { lambda: 0.0, mu: 0.0, ..RobustConfig::default() };
    let mut adam = AdamState::new(policy.n_params(), 1e-2, 0.9, 0.999, 1e-8).unwrap();
    let x = |p: &Mlp<f64>| rollout_market(p, &market, &env).unwrap().wealth_vec();
    let before = risk_theta(&adv, &x(&policy), &gamma);
    for _ in 0..20 {
        let (episode, tape) = rollout_with_tape(&policy, &market, &env).unwrap();
        let sample = AdversarySample::new(&adv, &episode.wealth_vec()).unwrap();
        let g = outer_gradient(&policy, &tape, &sample, &gamma, &Utility::Identity, &robust).unwrap();
        adam.step(policy.params_mut().values_mut(), &g.risk).unwrap();
    }
    let after = risk_theta(&adv, &x(&policy), &gamma);
    assert!(after < before - 0.01, "{before} -> {after}");
}
