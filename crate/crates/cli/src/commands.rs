//! Command implementations. Each writes its outputs, a config echo and a manifest
//! into the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hedgekit::evaluation::{
    detect_phase_transition, evaluate_bs_benchmark, evaluate_policy, matched_sigma, phase_sweep, price_to_cvar_target,
    run_strategy, write_pnl_csv, write_pricing_csv, write_sweep_csv, write_tv_csv, EvalSpec, PricingRow, Strategy,
};
use hedgekit::instruments::bs_barrier_price;
use hedgekit::market_sim::RNG_ALGORITHM;
use hedgekit::nn::{load_checkpoint, save_checkpoint, Mlp, MlpSpec};
use hedgekit::risk::{rdeu_empirical, EmpiricalDistribution};
use hedgekit::training::{derive_seed, train_nonrobust, train_robust, AdversarySample, TrainStatus, TrainingHistory};
use log::info;
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::{Command, Common};

const STREAM_EVAL: u64 = 4;
const STREAM_SIGMA: u64 = 5;
const STREAM_SIMULATE: u64 = 6;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Core(hedgekit::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<hedgekit::Error> for CliError {
    fn from(e: hedgekit::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "parse",
            CliError::Core(e) => match e {
                hedgekit::Error::Parameter(_) => "parameter",
                hedgekit::Error::Domain(_) => "domain",
                hedgekit::Error::Contract(_) => "contract",
                hedgekit::Error::Training(_) => "training",
                hedgekit::Error::Format(_) => "format",
                hedgekit::Error::Io(_) => "io",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(_) => 1,
        }
    }

    /// `{"error": kind, "key": ..., "message": ...}` on one line.
    pub fn to_json_line(&self) -> String {
        let (key, message) = match self {
            CliError::Usage(m) => (None, m.clone()),
            CliError::Config(e) => (e.key.clone(), e.message.clone()),
            CliError::Core(e) => (None, e.to_string()),
        };
        let mut obj = json!({ "error": self.kind(), "message": message });
        if let Some(k) = key {
            obj["key"] = json!(k);
        }
        obj.to_string()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Reads the config file (if any) and applies the flags that mean the same thing for every command.
fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError { key: None, message: format!("cannot read {}: {e}", path.display()) })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.display().to_string();
    }
    if let Some(p) = common.p_weight {
        cfg.risk.p_weight = p;
    }
    if let Some(n) = common.iterations {
        cfg.train.iterations = n;
    }
    if let Some(b) = common.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(eps) = common.epsilon {
        cfg.robust.get_or_insert_with(Default::default).epsilon = eps;
    }
    Ok(cfg)
}

/// Market flags applied to the training market.
fn override_training_market(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(k) = common.kappa {
        cfg.market.kappa = k;
    }
    if let Some(r) = common.rho {
        cfg.market.rho = r;
    }
    if let Some(c) = common.cost {
        cfg.cost.rate = c;
    }
}

/// Market flags applied to the actual market only.
fn override_actual_market(cfg: &mut ExperimentConfig, common: &Common) {
    if common.kappa.is_some() {
        cfg.actual.kappa = common.kappa;
    }
    if common.rho.is_some() {
        cfg.actual.rho = common.rho;
    }
    if common.cost.is_some() {
        cfg.actual.cost = common.cost;
    }
}

struct Run {
    command: &'static str,
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, cfg: &ExperimentConfig) -> CliResult<Self> {
        cfg.validate()?;
        let dir = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), cfg.to_flat_string())?;
        info!("{command}: writing to {}", dir.display());
        Ok(Self { command, dir, started: Instant::now(), outputs: vec!["config.toml".into()] })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> hedgekit::Result<()>) -> CliResult<()> {
        let mut out = BufWriter::new(fs::File::create(self.path(name))?);
        f(&mut out)?;
        out.flush()?;
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("json values serialize");
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn finish(mut self, cfg: &ExperimentConfig, extra: serde_json::Value) -> CliResult<()> {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() - self.started.elapsed().as_secs_f64())
            .unwrap_or(0.0);
        let manifest = json!({
            "command": self.command,
            "tool": "hedgekit",
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "derived_seeds": {
                "evaluation": eval_seed(cfg),
                "sigma_matching": derive_seed(cfg.seed, STREAM_SIGMA, 0),
                "simulate": derive_seed(cfg.seed, STREAM_SIMULATE, 0),
            },
            "rng": RNG_ALGORITHM,
            "config": "config.toml",
            "started_unix": started_unix,
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
            "outputs": self.outputs,
            "details": extra,
        });
        self.outputs.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&manifest).expect("json values serialize");
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, STREAM_EVAL, 0)
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate { common } => simulate(&common),
        Command::Train { common, mode } => train(&common, mode),
        Command::Evaluate { common, checkpoint } => evaluate(&common, &checkpoint),
        Command::Price { common, checkpoint, adversary, target } => price(&common, &checkpoint, adversary.as_deref(), target),
        Command::Sweep { common, p_grid } => sweep(&common, p_grid),
    }
}

fn simulate(common: &Common) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    override_training_market(&mut cfg, common);
    if let Some(n) = common.paths {
        cfg.simulate.n_paths = n;
    }
    let mut run = Run::start("simulate", &cfg)?;
    let batch = cfg.source().simulate(&cfg.grid(), cfg.simulate.n_paths, derive_seed(cfg.seed, STREAM_SIMULATE, 0))?;
    run.write("paths.csv", |w| batch.write_csv(w))?;
    run.finish(&cfg, json!({ "n_paths": cfg.simulate.n_paths }))
}

fn write_history(run: &mut Run, history: &TrainingHistory) -> CliResult<()> {
    run.write("history.csv", |w| history.write_csv(w))
}

fn checkpoint_meta(cfg: &ExperimentConfig, role: &str, status: &TrainStatus) -> serde_json::Value {
    json!({ "role": role, "config": cfg.to_flat_string(), "status": status })
}

fn train(common: &Common, mode: Option<Mode>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    override_training_market(&mut cfg, common);
    if let Some(m) = mode {
        cfg.train.mode = m;
    }
    cfg.normalize();
    let mut run = Run::start("train", &cfg)?;
    let setup = cfg.setup()?;
    let tc = cfg.train_config();
    let (status, final_risk) = match cfg.train.mode {
        Mode::Nonrobust => {
            let trained = train_nonrobust(&setup, &tc, None)?;
            save_checkpoint(&run.path("policy.ckpt"), &trained.policy, checkpoint_meta(&cfg, "policy", &trained.status))?;
            write_history(&mut run, &trained.history)?;
            (trained.status, tail_mean_risk(&trained.history))
        }
        Mode::Robust => {
            let robust = cfg.robust.clone().unwrap_or_default();
            let trained = train_robust(&setup, &tc, &robust, None)?;
            save_checkpoint(&run.path("policy.ckpt"), &trained.policy, checkpoint_meta(&cfg, "policy", &trained.status))?;
            save_checkpoint(
                &run.path("adversary.ckpt"),
                &trained.adversary,
                checkpoint_meta(&cfg, "adversary", &trained.status),
            )?;
            write_history(&mut run, &trained.history)?;
            (trained.status, tail_mean_risk(&trained.history))
        }
    };
    run.finish(&cfg, json!({ "status": status, "final_risk": final_risk }))?;
    status.into_result()?;
    Ok(())
}

/// Mean training risk over the last tenth of the history.
fn tail_mean_risk(history: &TrainingHistory) -> Option<f64> {
    let r = history.risk_phi();
    if r.is_empty() {
        return None;
    }
    let k = (r.len() / 10).max(1);
    Some(r[r.len() - k..].iter().sum::<f64>() / k as f64)
}

fn load_policy(cfg: &ExperimentConfig, path: &Path) -> CliResult<Mlp<f64>> {
    let (policy, _) = load_checkpoint(path, &cfg.policy_spec()?)?;
    Ok(policy)
}

fn actual_eval_spec(cfg: &ExperimentConfig) -> CliResult<EvalSpec<f64>> {
    Ok(EvalSpec {
        source: cfg.actual_source(),
        grid: cfg.grid(),
        env: cfg.actual_env()?,
        gamma: cfg.gamma()?,
        utility: cfg.utility(),
        n_paths: cfg.eval.n_paths,
        seed: eval_seed(cfg),
    })
}

/// Volatility the benchmark believes in, matched on the training market.
fn benchmark_sigma(cfg: &ExperimentConfig) -> CliResult<f64> {
    Ok(matched_sigma(&cfg.source(), &cfg.grid(), cfg.eval.sigma_paths, derive_seed(cfg.seed, STREAM_SIGMA, 0))?)
}

fn evaluate(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    override_actual_market(&mut cfg, common);
    if let Some(n) = common.paths {
        cfg.eval.n_paths = n;
    }
    let mut run = Run::start("evaluate", &cfg)?;
    let policy = load_policy(&cfg, checkpoint)?;
    let spec = actual_eval_spec(&cfg)?;
    let (report, episode) = evaluate_policy(&policy, &spec)?;
    run.write("pnl.csv", |w| write_pnl_csv(&episode, w))?;
    run.write("tv.csv", |w| write_tv_csv(&episode, w))?;
    println!("policy: reported {:.5} (se {:.5})", report.reported, report.std_error);
    let mut summary = json!({ "policy": report });
    if cfg.option().is_some() {
        let sigma = benchmark_sigma(&cfg)?;
        let (bs, bs_episode) = evaluate_bs_benchmark(&spec, sigma)?;
        run.write("bs_pnl.csv", |w| write_pnl_csv(&bs_episode, w))?;
        println!("black_scholes (sigma {sigma:.5}): reported {:.5} (se {:.5})", bs.reported, bs.std_error);
        summary["black_scholes"] = json!(bs);
        summary["sigma"] = json!(sigma);
    }
    run.write_json("report.json", &summary)?;
    run.finish(&cfg, json!({ "checkpoint": checkpoint.display().to_string() }))
}

fn price(common: &Common, checkpoint: &Path, adversary: Option<&Path>, target: Option<f64>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    override_actual_market(&mut cfg, common);
    if let Some(n) = common.paths {
        cfg.eval.n_paths = n;
    }
    if let Some(t) = target {
        cfg.eval.target = t;
    }
    let mut run = Run::start("price", &cfg)?;
    let option = cfg
        .option()
        .ok_or_else(|| CliError::Core(hedgekit::Error::Parameter("pricing needs option.kind knock_in or knock_out".into())))?;
    let policy = load_policy(&cfg, checkpoint)?;
    let adversary = match adversary {
        Some(p) => Some(load_checkpoint::<f64>(p, &MlpSpec::wealth_adversary())?.0),
        None => None,
    };
    let gamma = cfg.gamma()?;
    let utility = cfg.utility();
    let target = cfg.eval.target;
    let sigma = benchmark_sigma(&cfg)?;

    // prices come from the training market; the reported risk column from the actual one
    let train_env = cfg.env()?;
    let train_batch = cfg.source().simulate(&cfg.grid(), cfg.eval.n_paths, eval_seed(&cfg))?;
    let actual = actual_eval_spec(&cfg)?;
    let actual_batch = actual.source.simulate(&actual.grid, actual.n_paths, actual.seed)?;

    let reported_at = |strategy: Strategy<'_, f64>, premium: f64| -> CliResult<f64> {
        let ep = run_strategy(strategy, &actual_batch, &actual.env)?;
        let r = rdeu_empirical(&EmpiricalDistribution::new(ep.wealth_vec())?, &gamma, &utility)?;
        Ok(premium - r)
    };

    let policy_wealth = run_strategy(Strategy::Network(&policy), &train_batch, &train_env)?.wealth_vec();
    let scheme = if adversary.is_some() { "robust" } else { "policy" };
    let quote_policy = price_to_cvar_target(&policy_wealth, &gamma, &utility, target)?;
    let quote_worst = match &adversary {
        Some(adv) => Some(price_to_cvar_target(&AdversarySample::new(adv, &policy_wealth)?.x_theta, &gamma, &utility, target)?),
        None => None,
    };
    let bs_wealth = run_strategy(Strategy::BlackScholes { sigma }, &train_batch, &train_env)?.wealth_vec();
    let quote_bs = price_to_cvar_target(&bs_wealth, &gamma, &utility, target)?;
    let closed_form = bs_barrier_price(&option, cfg.market.s0, sigma, cfg.market.maturity, false)?;

    let kind = option.kind.as_str().to_string();
    let mut rows = vec![
        PricingRow {
            scheme: scheme.into(),
            option: kind.clone(),
            price: quote_policy.price,
            cvar_reported: Some(reported_at(Strategy::Network(&policy), quote_policy.price)?),
        },
        PricingRow {
            scheme: "black_scholes".into(),
            option: kind.clone(),
            price: quote_bs.price,
            cvar_reported: Some(reported_at(Strategy::BlackScholes { sigma }, quote_bs.price)?),
        },
        PricingRow { scheme: "closed_form".into(), option: kind.clone(), price: closed_form, cvar_reported: None },
    ];
    // premium that meets the target against the adversary's distortion of the policy wealth
    if let Some(q) = &quote_worst {
        rows.push(PricingRow { scheme: "worst_case".into(), option: kind, price: q.price, cvar_reported: None });
    }
    for r in &rows {
        println!("{}: price {:.5}", r.scheme, r.price);
    }
    run.write("pricing.csv", |w| write_pricing_csv(&rows, w))?;
    run.finish(
        &cfg,
        json!({
            "target": target,
            "sigma": sigma,
            "checkpoint": checkpoint.display().to_string(),
            "quotes": { scheme: quote_policy, "black_scholes": quote_bs, "worst_case": quote_worst },
        }),
    )
}

fn sweep(common: &Common, p_grid: Option<Vec<f64>>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    override_training_market(&mut cfg, common);
    if let Some(g) = p_grid {
        cfg.sweep.p_grid = g;
    }
    if let Some(n) = common.paths {
        cfg.eval.n_paths = n;
    }
    let mut run = Run::start("sweep", &cfg)?;
    let setup = cfg.setup()?;
    let rows = phase_sweep(
        &setup,
        cfg.sweep.alpha,
        cfg.sweep.beta,
        &cfg.sweep.p_grid,
        &cfg.train_config(),
        cfg.eval.n_paths,
        eval_seed(&cfg),
    )?;
    run.write("sweep.csv", |w| write_sweep_csv(&rows, w))?;
    let jump = detect_phase_transition(&rows);
    if let Some(j) = &jump {
        println!("largest UTE jump {:.5} between p = {} and {} (p* = {:.3})", j.jump, j.p_low, j.p_high, j.p_star);
    }
    run.finish(&cfg, json!({ "phase_jump": jump }))
}
