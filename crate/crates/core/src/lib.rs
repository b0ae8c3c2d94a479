//! Equilibrium asset pricing with Cox-process default driven by the
//! dividend level.
//!
//! The core is generic over the scalar type (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which every command-line path uses.

pub mod app;
pub mod conditional;
pub mod config;
pub mod curve;
pub mod default_engine;
pub mod dividend;
pub mod error;
pub mod pde;
pub mod preferences;
pub mod pricing;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod validation;
pub mod wealth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GbmParams64 = dividend::GbmParams<f64>;
pub type DividendModel64 = dividend::DividendModel<f64>;
pub type PathSet64 = dividend::PathSet<f64>;
pub type CurveSpec64 = curve::CurveSpec<f64>;
pub type ScalarFn64 = curve::ScalarFn<f64>;
pub type Utility64 = preferences::Utility<f64>;
pub type Estimate64 = stats::Estimate<f64>;
pub type DefaultSample64 = default_engine::DefaultSample<f64>;
pub type ScenarioConfig64 = config::ScenarioConfig<f64>;
pub type Economy64 = pricing::Economy<f64>;
pub type GridFunction64 = conditional::GridFunction<f64>;
pub type PdeSolution64 = pde::PdeSolution<f64>;
