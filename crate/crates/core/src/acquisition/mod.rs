//! Monte Carlo batch acquisition functions.

mod estimator;
mod integrand;
mod pool;
mod samples;

pub use estimator::{
    branch_signature, estimate, estimate_gradient, estimate_with, gradient_from_posterior, reparam_outcomes,
    AcqGradient, Acquisition, AcquisitionSpec, Estimate, PoolOrdering,
};
pub use integrand::{
    argmax, integrand_ei, integrand_es_pmax, integrand_pi, integrand_sr, integrand_ucb, sigmoid, ucb_scale, Family,
};
pub use pool::{canonical_permutation, Pool};
pub use samples::{BaseSampleBlock, SamplePolicy};
