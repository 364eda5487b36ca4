//! Bayesian spatial clustering of threshold excesses.
//!
//! Sites are grouped into spatially contiguous clusters, each defined by a
//! centre site, that share generalized Pareto parameters. Marginal
//! information enters through a curvature-adjusted independence likelihood
//! and spatial dependence through a beta-binomial model of joint exceedance
//! counts for adjacent sites. A reversible-jump sampler explores the number
//! of clusters, their centres and all parameters.

pub mod data;
pub mod dependence;
pub mod delaunay;
pub mod error;
pub mod exec;
pub mod gpd;
pub mod io;
pub mod linalg;
pub mod marginal;
pub mod posterior;
pub mod preprocess;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod simgen;

pub use data::{
    assign_labels, validate_state, ClusterState, Count, DependenceCounts, Exceedances, Excess, Hyperparameters,
    PairCounts, SeriesMatrix, Spatial,
};
pub use error::{Error, Result};
pub use exec::Exec;
