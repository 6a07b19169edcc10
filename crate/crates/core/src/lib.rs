//! Hierarchical multi-task opinion mining over multimodal token features.
//!
//! Tokens, sentences and whole reviews are predicted jointly by one stacked
//! model trained on a weighted sum of per-level losses whose weights follow
//! an epoch schedule.
//!
//! The model code is generic over the floating point type ([`Scalar`]);
//! the aliases below fix it to `f64` or `f32`.

pub mod align;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod hierarchy;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = hierarchy::HierModel<f64>;
pub type Model32 = hierarchy::HierModel<f32>;
pub type Params = params::ParamStore<f64>;
pub type Params32 = params::ParamStore<f32>;
pub type Predictions = hierarchy::PredictionBundle<f64>;
