//! Filtering, smoothing and parameter estimation for discrete-time,
//! finite-population stochastic compartmental epidemic models.
//!
//! The latent process is a population of `n` individuals moving between `m`
//! compartments according to a (possibly state- and time-dependent)
//! row-stochastic transition kernel. Observations are binomially thinned
//! counts of either compartment occupancies or compartment-to-compartment
//! transition counts. Exact inference requires summing over all count
//! configurations and is intractable beyond toy sizes; this crate instead
//! propagates multinomial approximations through closed-form prediction and
//! update steps, giving filtering, smoothing and an approximate marginal
//! likelihood at a cost independent of the population size.
//!
//! Modules:
//!
//! * [`types`] — validated probability vectors/matrices and count types.
//! * [`model`] — transition-kernel families (SEIR, SEIR with intervention
//!   decay, the two-stage Wuhan travel model) and the model specification.
//! * [`simulate`] — forward simulation of the latent chains and both
//!   observation models.
//! * [`filter`] — multinomial filtering recursions and the approximate
//!   marginal likelihood, for both observation models.
//! * [`smooth`] — backward smoothing recursions.
//! * [`estimate`] — EM with closed-form M-steps, profile likelihood, and
//!   Metropolis-within-Gibbs MCMC.
//! * [`smc`] — particle filter over a time-varying transmission rate with
//!   ancestor-traced backward sampling and derived posterior summaries.
//! * [`oracle`] — exact brute-force inference on tiny instances, used to
//!   verify the approximations.
//! * [`io`] — CSV schemas for observations, traces and summaries.

pub mod dist;
pub mod estimate;
pub mod filter;
pub mod io;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulate;
pub mod smc;
pub mod smooth;
pub mod types;

pub use model::{EbolaKernel, CovidKernel, KernelSpec, ModelSpec, SeirKernel};
pub use types::{
    CountMatrix, CountVector, JointMatrix, ParamRecord, ProbVector, StochMatrix, TypeError,
};
