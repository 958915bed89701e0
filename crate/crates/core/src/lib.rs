//! Bayesian scalar-on-tensor regression with a Tucker-decomposed coefficient.
//!
//! The crate is organised around the model pipeline:
//!
//! - [`tensor`]: dense tensors in mode-1-major layout, matricization, CP and
//!   Tucker composition and the mode contractions used by the sampler.
//! - [`rng`]: seedable substreams and the variate generators the full
//!   conditionals need (gamma, inverse gamma, GIG, multivariate normal).
//! - [`model`]: hyperparameters, state, the Gibbs sampler, log-likelihood,
//!   DIC and posterior prediction.
//! - [`glm`]: the voxelwise two-step GLM with Benjamini-Hochberg control.
//! - [`selection`]: sequential 2-means sparsification and the DIC rank search.
//! - [`simgen`]: synthetic activation-region datasets.
//! - [`diagnostics`]: RMSE, RMSPE, Pearson correlation, ESS and trace checks.
//! - [`io`]: binary tensor and draws files, text values and run configuration.
//! - [`cli`]: the `btrt` command-line pipelines.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and always reduces in a fixed chunk order,
//! so results never depend on the number of worker threads.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod io;
pub mod model;
pub mod par;
pub mod rng;
pub mod selection;
pub mod simgen;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Dataset, FitConfig, Hyperparams, ModelState, PosteriorDraws};
pub use tensor::{DenseTensor, TuckerFactorSet};
