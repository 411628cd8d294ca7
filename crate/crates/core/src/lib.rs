//! Simulation of interference bias in article-randomized pricing
//! experiments.
//!
//! A [`demand`] system with clustered cross-price substitution provides
//! exact counterfactuals. [`experiment`] randomizes articles or clusters and
//! compares the naive estimate with the true roll-out effect.
//! [`clickstream`] and [`clustering`] infer clusters from co-view sessions
//! and trace the bias/variance/exposure frontier, and [`metaexp`] compares
//! paired real experiments.
//!
//! Numeric types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix them to `f64`.

pub mod clickstream;
pub mod clustering;
pub mod csvfmt;
pub mod demand;
pub mod error;
pub mod experiment;
pub mod metaexp;
pub mod partition;
pub mod rng;
pub mod scalar;

pub use clickstream::{ExposureReport, Session, SessionGraph, SessionParams};
pub use demand::{GeneratorConfig, Metric, OwnDraw, Provenance};
pub use error::{LabError, Result};
pub use experiment::{Arm, Assignment, RandomizationStrategy, SweepStrategy};
pub use partition::Partition;
pub use scalar::Scalar;

pub type DemandSystem = demand::DemandSystem<f64>;
pub type ElasticityStructure = demand::ElasticityStructure<f64>;
pub type PricePolicy = demand::PricePolicy<f64>;
pub type Estimate = experiment::Estimate<f64>;
pub type BiasReport = experiment::BiasReport<f64>;
pub type CoverageReport = experiment::CoverageReport<f64>;
pub type SweepRow = experiment::SweepRow<f64>;
pub type FrontierPoint = clustering::FrontierPoint<f64>;
pub type MetaExperimentInput = metaexp::MetaExperimentInput<f64>;
pub type MetaComparison = metaexp::MetaComparison<f64>;
