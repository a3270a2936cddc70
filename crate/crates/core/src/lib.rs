//! Bayesian semiparametric age-period-cohort and Renshaw-Haberman mortality
//! models: slope-change linear splines with shrinkage priors, lasso
//! pre-screening, MCMC sampling and PSIS-LOO scoring for one or two
//! related populations.

pub mod config;
pub mod curves;
pub mod design;
pub mod error;
pub mod frame;
pub mod lasso;
pub mod likelihood;
pub mod loo;
pub mod mcmc;
pub mod model;
pub mod pipeline;
pub mod prior;
pub mod projection;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
