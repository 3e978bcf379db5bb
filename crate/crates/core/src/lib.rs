//! Linkage-free dual system estimation.
//!
//! Estimates the size of a population covered by two incomplete lists from
//! the match proportion of a Fellegi–Sunter mixture fitted by EM to the
//! comparison patterns of all cross-list record pairs, so the pairs never
//! have to be linked. Also provided: the classical dual system estimator,
//! a Monte Carlo harness comparing the two, and a parametric bootstrap for
//! the variance of the linkage-free estimate.

pub mod bootstrap;
pub mod cli;
pub mod em;
pub mod error;
pub mod estimators;
pub mod linkage;
pub mod report;
pub mod sampling;
pub mod simulation;

pub use error::{Error, Result};
