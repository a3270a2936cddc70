//! Observation families and mean structures.

mod family;
mod mean;

pub use family::{
    family_by_name, family_names, pointwise_loglik, simulate, GaussianFamily, NegativeBinomialFamily,
    ObservationFamily, PoissonFamily,
};
pub use mean::{trend_weights, MeanEval, MeanGradient, MeanParams, MeanStructure};
