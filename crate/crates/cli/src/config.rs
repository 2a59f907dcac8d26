//! Experiment configuration: flat `section.key = value` files with defaults for every key.

use std::collections::BTreeMap;
use std::fmt;

use hedgekit::hedging_env::{HedgingEnv, TransactionCost};
use hedgekit::instruments::{BarrierKind, BarrierOptionSpec};
use hedgekit::market_sim::{HestonParams, PathSource, TimeGrid};
use hedgekit::nn::MlpSpec;
use hedgekit::risk::{Distortion, Utility};
use hedgekit::training::{RobustConfig, TrainConfig, TrainSetup};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError {
    /// Dotted path of the offending key, when known.
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "{k}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: Some(key.to_string()), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Heston,
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub model: Model,
    pub s0: f64,
    pub v0: f64,
    pub mu: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    /// Volatility for `model = "gbm"`.
    pub sigma: f64,
    pub n_steps: usize,
    pub maturity: f64,
    pub trade_every: usize,
}

impl Default for MarketSection {
    fn default() -> Self {
        let h = HestonParams::<f64>::reference();
        let g = TimeGrid::<f64>::reference();
        Self {
            model: Model::Heston,
            s0: h.s0,
            v0: h.v0,
            mu: h.mu,
            kappa: h.kappa,
            theta: h.theta,
            xi: h.xi,
            rho: h.rho,
            sigma: 0.3,
            n_steps: g.n_steps,
            maturity: g.maturity,
            trade_every: g.trade_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    KnockIn,
    KnockOut,
    /// Pure trading, no liability.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionSection {
    pub kind: OptionKind,
    pub strike: f64,
    pub barrier: f64,
}

impl Default for OptionSection {
    fn default() -> Self {
        let r = BarrierOptionSpec::<f64>::reference(BarrierKind::KnockIn);
        Self { kind: OptionKind::KnockIn, strike: r.strike, barrier: r.barrier }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub alpha: f64,
    pub beta: f64,
    /// Weight on the lower tail; 1 gives CVaR at `alpha`.
    pub p_weight: f64,
    /// Exponential utility when positive, identity when zero.
    pub risk_aversion: f64,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.8, p_weight: 1.0, risk_aversion: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Nonrobust,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Mode,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_policy: f64,
    pub lr_adversary: f64,
    pub resimulate_per_batch: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: Mode::Nonrobust,
            batch_size: t.batch_size,
            iterations: t.iterations,
            lr_policy: t.lr_policy,
            lr_adversary: t.lr_adversary,
            resimulate_per_batch: t.resimulate_per_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_paths: usize,
    /// Paths used to match the Black-Scholes volatility.
    pub sigma_paths: usize,
    /// Reported (tail-mean) risk targeted by the price command.
    pub target: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_paths: 100_000, sigma_paths: 50_000, target: -0.5 }
    }
}

/// Parameters of the "true" market used by evaluate and price; unset keys keep the
/// training market.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActualSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl ActualSection {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alpha: f64,
    pub beta: f64,
    pub p_grid: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.9, p_grid: (70..=100).map(|k| k as f64 / 100.0).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub market: MarketSection,
    pub option: OptionSection,
    pub risk: RiskSection,
    pub cost: CostSection,
    pub train: TrainSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustConfig>,
    pub eval: EvalSection,
    #[serde(skip_serializing_if = "ActualSection::is_empty")]
    pub actual: ActualSection,
    pub sweep: SweepSection,
    pub simulate: SimulateSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            market: MarketSection::default(),
            option: OptionSection::default(),
            risk: RiskSection::default(),
            cost: CostSection::default(),
            train: TrainSection::default(),
            robust: None,
            eval: EvalSection::default(),
            actual: ActualSection::default(),
            sweep: SweepSection::default(),
            simulate: SimulateSection { n_paths: 1000 },
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
            key: None,
            message: e.message().to_string(),
        })?;
        serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| ConfigError { key: Some(e.path().to_string()), message: e.inner().to_string() })
    }

    /// The config as sorted `section.key = value` lines; parsing it gives back `self`.
    pub fn to_flat_string(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes to toml");
        let mut lines = BTreeMap::new();
        flatten("", &value, &mut lines);
        let mut out = String::new();
        // top-level keys first, then sections in order
        for (k, v) in lines.iter().filter(|(k, _)| !k.contains('.')) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in lines.iter().filter(|(k, _)| k.contains('.')) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.robust.is_some() && self.train.mode == Mode::Nonrobust {
            return Err(config_err("robust", "a robust section needs train.mode = \"robust\""));
        }
        if !(self.cost.rate >= 0.0) {
            return Err(config_err("cost.rate", "must be non-negative"));
        }
        if let Some(c) = self.actual.cost {
            if !(c >= 0.0) {
                return Err(config_err("actual.cost", "must be non-negative"));
            }
        }
        if self.risk.risk_aversion < 0.0 {
            return Err(config_err("risk.risk_aversion", "must be non-negative"));
        }
        if self.eval.n_paths < 2 || self.eval.sigma_paths < 2 {
            return Err(config_err("eval.n_paths", "need at least two evaluation paths"));
        }
        Ok(())
    }

    /// Fills the robust section with defaults when robust mode is selected.
    pub fn normalize(&mut self) {
        if self.train.mode == Mode::Robust && self.robust.is_none() {
            self.robust = Some(RobustConfig::default());
        }
    }

    pub fn grid(&self) -> TimeGrid<f64> {
        TimeGrid { n_steps: self.market.n_steps, maturity: self.market.maturity, trade_every: self.market.trade_every }
    }

    fn heston(&self, actual: Option<&ActualSection>) -> HestonParams<f64> {
        let m = &self.market;
        let a = actual.cloned().unwrap_or_default();
        HestonParams {
            s0: m.s0,
            v0: a.v0.unwrap_or(m.v0),
            mu: a.mu.unwrap_or(m.mu),
            kappa: a.kappa.unwrap_or(m.kappa),
            theta: a.theta.unwrap_or(m.theta),
            xi: a.xi.unwrap_or(m.xi),
            rho: a.rho.unwrap_or(m.rho),
        }
    }

    fn source_with(&self, actual: Option<&ActualSection>) -> PathSource<f64> {
        match self.market.model {
            Model::Heston => PathSource::Heston(self.heston(actual)),
            Model::Gbm => PathSource::Gbm {
                s0: self.market.s0,
                mu: actual.and_then(|a| a.mu).unwrap_or(self.market.mu),
                sigma: self.market.sigma,
            },
        }
    }

    /// The market the strategy was trained in.
    pub fn source(&self) -> PathSource<f64> {
        self.source_with(None)
    }

    /// The training market with the `actual` overrides applied.
    pub fn actual_source(&self) -> PathSource<f64> {
        self.source_with(Some(&self.actual))
    }

    pub fn option(&self) -> Option<BarrierOptionSpec<f64>> {
        let kind = match self.option.kind {
            OptionKind::KnockIn => BarrierKind::KnockIn,
            OptionKind::KnockOut => BarrierKind::KnockOut,
            OptionKind::None => return None,
        };
        Some(BarrierOptionSpec { kind, strike: self.option.strike, barrier: self.option.barrier, maturity: self.market.maturity })
    }

    pub fn gamma(&self) -> hedgekit::Result<Distortion<f64>> {
        Distortion::alpha_beta(self.risk.alpha, self.risk.beta, self.risk.p_weight)
    }

    pub fn utility(&self) -> Utility {
        if self.risk.risk_aversion > 0.0 {
            Utility::Exponential { risk_aversion: self.risk.risk_aversion }
        } else {
            Utility::Identity
        }
    }

    pub fn env(&self) -> hedgekit::Result<HedgingEnv<f64>> {
        HedgingEnv::new(self.option(), TransactionCost::new(self.cost.rate)?, 0.0)
    }

    pub fn actual_env(&self) -> hedgekit::Result<HedgingEnv<f64>> {
        HedgingEnv::new(self.option(), TransactionCost::new(self.actual.cost.unwrap_or(self.cost.rate))?, 0.0)
    }

    pub fn policy_spec(&self) -> hedgekit::Result<MlpSpec> {
        Ok(MlpSpec::hedging_policy(self.env()?.feature_dim()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            iterations: self.train.iterations,
            lr_policy: self.train.lr_policy,
            lr_adversary: self.train.lr_adversary,
            seed: self.seed,
            resimulate_per_batch: self.train.resimulate_per_batch,
        }
    }

    pub fn setup(&self) -> hedgekit::Result<TrainSetup<f64>> {
        Ok(TrainSetup {
            source: self.source(),
            grid: self.grid(),
            env: self.env()?,
            gamma: self.gamma()?,
            utility: self.utility(),
            policy_spec: self.policy_spec()?,
        })
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}
