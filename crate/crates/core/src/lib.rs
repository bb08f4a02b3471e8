//! Hierarchical discrete variational autoencoder for calorimeter showers with
//! a four-partite, topology-constrained, energy-conditioned RBM prior.
//!
//! Modules, bottom-up:
//! - [`data`]: geometry, batches, logit transform, energy codes, dataset files
//! - [`topology`]: sparse latent graphs with a 4-partition into independent sets
//! - [`rbm`]: energy, block Gibbs sampling, exact enumeration, contrastive divergence
//! - [`ais`]: forward and reverse annealed importance sampling of `log Z`
//! - [`calibrate`]: effective inverse temperature of black-box samplers
//! - [`nn`]: dense networks, the Gumbel relaxation, Adam, gradient checking
//! - [`hvae`]: hierarchical encoder/decoder, ELBO, training schedule, generation
//! - [`metrics`]: shower observables and Fréchet / kernel distances

pub mod ais;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod hvae;
pub mod metrics;
pub mod nn;
pub mod rbm;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
