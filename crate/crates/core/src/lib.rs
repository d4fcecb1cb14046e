//! Multiple imputation by chained equations for datasets that mix scalar
//! and functional (curve-valued) variables.
//!
//! The building blocks are usable on their own: B-spline bases and
//! penalties ([`basis`]), functional principal components ([`fpca`]),
//! penalized regression with REML smoothing ([`penreg`]), function-on-scalar
//! and scalar-on-function models ([`frm`], [`srm`]), the imputation loop
//! ([`mice`]) and Rubin's rules for coefficient functions ([`pool`]).
//! [`simlab`] holds the simulation studies.

pub mod basis;
pub mod csvio;
pub mod dataset;
pub mod error;
pub mod fdgrid;
pub mod fpca;
pub mod frm;
pub mod mice;
pub mod model;
pub mod penreg;
pub mod plot;
pub mod pool;
pub mod simlab;
pub mod srm;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
