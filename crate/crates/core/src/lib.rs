//! Gaussian process random fields (GPRF): a block-pairwise surrogate for the
//! GP marginal likelihood, with exact-GP oracles, committee prediction, MAP
//! fitting of latent locations and seeded synthetic data.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod bcm;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod full_gp;
pub mod gaussian;
pub mod kernels;
pub mod lbfgs;
pub mod mapfit;
pub mod objective;
pub mod scalar;
pub mod verify;

pub use bcm::{bcm_predict, gprf_conditional_predict, BcmPrediction};
pub use blocks::{grid_partition, pa_tree_partition, EdgeSet, Partition, Rect};
pub use error::{GprfError, Result, Term};
pub use full_gp::{ou_chain_fixture, FullGp, OuChainConfig, Prediction};
pub use gaussian::{factorize, gaussian_kl, mvn_grad_wrt_cov, mvn_logpdf, GaussianFactor};
pub use kernels::{cov_matrix, Hyperparams, KernelFamily, KernelSpec};
pub use mapfit::{fit, fit_hybrid, map_objective, mean_location_error, FitConfig, LocationPrior, Trajectory};
pub use objective::{assemble_precision, bethe_check, gprf_gradient, gprf_value, GprfModel, ObjectiveReport};
pub use scalar::Real;

pub type GprfModel64 = GprfModel<f64>;
pub type GprfModel32 = GprfModel<f32>;
pub type KernelSpec64 = KernelSpec<f64>;
pub type KernelSpec32 = KernelSpec<f32>;
pub type FullGp64 = FullGp<f64>;
pub type FullGp32 = FullGp<f32>;
pub type LocationPrior64 = LocationPrior<f64>;
pub type LocationPrior32 = LocationPrior<f32>;
