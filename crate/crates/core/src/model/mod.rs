//! DNCB-MF and DNCB-TD: generative models, latent state and Gibbs sampler.
//!
//! Both models explain an `I x J` matrix `B` of values in (0, 1) as
//! `β_ij = γ1 / (γ1 + γ2)` with `γt ~ Gam(ε_t + y_t, c_j)` and
//! `y_t ~ Pois(λ^(t)_ij)`. DNCB-MF factorizes `λ^(t) = Θ^(t) Φ`; DNCB-TD
//! factorizes `λ^(t) = Θ Π^(t) Φ` with a shared sample-cluster matrix.

mod chain;
pub mod geweke;
mod gibbs;
mod init;
mod simulate;
mod state;
mod types;

pub use chain::{Chain, ChainSnapshot, PosteriorSamples, Schedule};
pub use gibbs::{
    gibbs_allocate_subcounts, gibbs_iteration, gibbs_sample_counts, gibbs_sample_gammas, update_factors,
    update_factors_mf, update_factors_td,
};
pub use init::{initialize_state, InitStrategy};
pub use simulate::{sample_mf_prior, sample_observations, sample_td_prior, simulate_mf, simulate_td, Simulated};
pub use state::{AugmentedState, MfStats, Subcount, Subcounts, TdStats};
pub use types::{
    compose_rates_mf, compose_rates_td, BoundedMatrix, DncbParams, Factors, Hyperparams, MfFactors, Model, ModelKind,
    TdFactors,
};
