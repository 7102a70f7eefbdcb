//! Weekly multi-population mortality modelling with gradient-boosted
//! Li–Lee ensembles.

pub mod artifact;
pub mod backtest;
pub mod boost;
pub mod cluster;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod lee_carter;
pub mod model;
pub mod report;
mod serde_na;
pub mod multipop;
pub mod tsmodels;

pub use error::{Error, ErrorKind, Result};
