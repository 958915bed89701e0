//! The scalar-on-tensor regression model
//! `y_i = ⟨B, X_i⟩ + γᵀη_i + ε_i` with a Tucker-decomposed `B` under a
//! generalized double-Pareto shrinkage prior, and its Gibbs sampler.

pub mod conditionals;
mod data;
pub mod draws;
mod hyper;
pub mod sampler;
mod state;

pub use conditionals::{
    clamp_scale, core_conditional, beta_conditional, linear_predictor, log_likelihood,
    update_beta_margin, update_core, update_gamma, update_lambda, update_omega, update_sigma2,
    update_tau, update_v_phi_z, CoreScales, SCALE_CAP, SCALE_FLOOR,
};
pub use data::Dataset;
pub use draws::{dic, posterior_predict, DicReport, Manifest, PosteriorDraws, Prediction};
pub use hyper::Hyperparams;
pub use sampler::{fit, fit_chains, fit_with_progress, stream_id, Block, Chain, FitConfig, FitOutput};
pub use state::{init_state, sample_prior, ModelState};
