//! Poisson mortality modelling with regression-tree back-testing.
//!
//! The crate fits Lee-Carter and Renshaw-Haberman models to exposure and
//! death tables, checks a fitted rate surface with a one-step Poisson
//! regression-tree boost, and estimates cause-of-death probabilities by the
//! same boosting device on an age-bucketed grid.

pub mod backtest;
pub mod cod;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod lc;
pub mod model;
pub mod rh;
#[cfg(feature = "svg")]
pub mod svg;
pub mod synth;
pub mod tree;

#[cfg(test)]
mod testutil;

pub use domain::{
    aggregate_rates, aggregate_table, crude_rates, extend_feature, AgeBucketing, CondensedRates,
    ExtendedFeature, Feature, FeatureSpace, Gender, MortalityTable, RateSurface,
};
pub use error::{Error, ErrorKind, Result};
pub use model::{FitConfig, FitReport, RateModel};
