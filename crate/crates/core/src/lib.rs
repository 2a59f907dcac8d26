//! Deep hedging of barrier options under rank-dependent expected utility, with an
//! optional Wasserstein-ball adversary for model uncertainty.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The aliases below
//! fix the scalar for the common cases.

pub mod error;
pub mod scalar;

pub mod market_sim;
pub mod instruments;
pub mod risk;
pub mod nn;
pub mod hedging_env;
pub mod training;
pub mod evaluation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type HestonParams64 = market_sim::HestonParams<f64>;
pub type TimeGrid64 = market_sim::TimeGrid<f64>;
pub type PathBatch64 = market_sim::PathBatch<f64>;
pub type PathSource64 = market_sim::PathSource<f64>;
pub type BarrierOption64 = instruments::BarrierOptionSpec<f64>;
pub type Distortion64 = risk::Distortion<f64>;
pub type Mlp64 = nn::Mlp<f64>;
pub type HedgingEnv64 = hedging_env::HedgingEnv<f64>;
pub type TrainSetup64 = training::TrainSetup<f64>;

pub type HestonParams32 = market_sim::HestonParams<f32>;
pub type TimeGrid32 = market_sim::TimeGrid<f32>;
pub type PathBatch32 = market_sim::PathBatch<f32>;
pub type PathSource32 = market_sim::PathSource<f32>;
pub type BarrierOption32 = instruments::BarrierOptionSpec<f32>;
pub type Distortion32 = risk::Distortion<f32>;
pub type Mlp32 = nn::Mlp<f32>;
pub type HedgingEnv32 = hedging_env::HedgingEnv<f32>;
pub type TrainSetup32 = training::TrainSetup<f32>;
