use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::scalar::Scalar;

/// Two-tailed piecewise-constant distortion
/// `γ(u) = (p·𝟙[u ≤ α] + (1-p)·𝟙[u ≥ β]) / η` with `η = pα + (1-p)(1-β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AlphaBeta<T: Scalar> {
    alpha: T,
    beta: T,
    p_weight: T,
    eta: T,
}

impl<T: Scalar> AlphaBeta<T> {
    pub fn new(alpha: T, beta: T, p_weight: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= beta && beta < T::one()) {
            return Err(param_err(format!("need 0 < alpha <= beta < 1, got alpha={alpha}, beta={beta}")));
        }
        if !(p_weight >= T::zero() && p_weight <= T::one()) {
            return Err(param_err(format!("p_weight = {p_weight} outside [0, 1]")));
        }
        let eta = p_weight * alpha + (T::one() - p_weight) * (T::one() - beta);
        if !(eta > T::zero()) {
            return Err(param_err("normalising constant eta must be positive"));
        }
        Ok(Self { alpha, beta, p_weight, eta })
    }

    /// CVaR at level `alpha < 1` (loss weight one; `beta` is irrelevant).
    pub fn cvar(alpha: T) -> Result<Self> {
        Self::new(alpha, alpha, T::one())
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }
    pub fn beta(&self) -> T {
        self.beta
    }
    pub fn p_weight(&self) -> T {
        self.p_weight
    }
    pub fn eta(&self) -> T {
        self.eta
    }
}

fn overlap<T: Scalar>(a: T, b: T, lo: T, hi: T) -> T {
    (b.min(hi) - a.max(lo)).max(T::zero())
}

/// Quantile weighting function γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "kind", rename_all = "snake_case")]
pub enum Distortion<T: Scalar> {
    AlphaBeta(AlphaBeta<T>),
    /// `γ ≡ 1`: the risk is minus the expectation.
    Uniform,
}

impl<T: Scalar> Distortion<T> {
    pub fn alpha_beta(alpha: T, beta: T, p_weight: T) -> Result<Self> {
        AlphaBeta::new(alpha, beta, p_weight).map(Self::AlphaBeta)
    }

    /// CVaR at level `alpha ∈ (0, 1]`; `alpha = 1` is the uniform distortion.
    pub fn cvar(alpha: T) -> Result<Self> {
        if alpha == T::one() {
            Ok(Self::Uniform)
        } else {
            AlphaBeta::cvar(alpha).map(Self::AlphaBeta)
        }
    }

    pub fn weight(&self, u: T) -> T {
        match self {
            Self::Uniform => T::one(),
            Self::AlphaBeta(ab) => {
                let mut w = T::zero();
                if u <= ab.alpha {
                    w += ab.p_weight;
                }
                if u >= ab.beta {
                    w += T::one() - ab.p_weight;
                }
                w / ab.eta
            }
        }
    }

    /// `∫_a^b γ(u) du` for `0 ≤ a ≤ b ≤ 1`, exact.
    pub fn cell_mass(&self, a: T, b: T) -> T {
        match self {
            Self::Uniform => b - a,
            Self::AlphaBeta(ab) => {
                (ab.p_weight * overlap(a, b, T::zero(), ab.alpha)
                    + (T::one() - ab.p_weight) * overlap(a, b, ab.beta, T::one()))
                    / ab.eta
            }
        }
    }
}

/// Utility applied to wealth before distortion. Must be non-decreasing and concave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    Identity,
    /// `U(x) = (1 - e^{-a x}) / a`.
    Exponential { risk_aversion: f64 },
}

impl Utility {
    pub fn value<T: Scalar>(&self, x: T) -> T {
        match *self {
            Utility::Identity => x,
            Utility::Exponential { risk_aversion } => {
                let a = T::lit(risk_aversion);
                (T::one() - (-a * x).exp()) / a
            }
        }
    }

    pub fn derivative<T: Scalar>(&self, x: T) -> T {
        match *self {
            Utility::Identity => T::one(),
            Utility::Exponential { risk_aversion } => (-T::lit(risk_aversion) * x).exp(),
        }
    }

    /// Whether `R[Z + m] = R[Z] - m` holds for every distortion.
    pub fn is_translation_invariant(&self) -> bool {
        matches!(self, Utility::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Utility::Identity => Ok(()),
            Utility::Exponential { risk_aversion } if risk_aversion > 0.0 && risk_aversion.is_finite() => Ok(()),
            Utility::Exponential { .. } => Err(param_err("exponential utility needs positive risk aversion")),
        }
    }
}
