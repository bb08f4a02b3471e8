//! Hierarchical discrete VAE with an RBM prior.
//!
//! Three sub-encoders produce the free latent partitions one after another,
//! each seeing the preprocessed shower, the condition code and every earlier
//! partition. `G` autoregressive sub-decoders each emit a block of
//! `L / G` calorimeter layers as a hit mask and a positive activation, seeing
//! the full latent vector, the condition code and all earlier blocks.

mod bundle;
mod elbo;
mod generate;
mod model;
mod train;

pub use bundle::{load_bundle, load_config, save_bundle};
pub use elbo::{elbo_batch, elbo_event, ElboGrads, ElboTerms, ElboNoise};
pub use generate::{generate, generate_with_masks, SamplerKind};
pub use model::{DecodeOutput, Decoder, EncodeOutput, Encoder, Model};
pub use train::{format_log, posterior_states, train, write_log, EpochLog, Phase, TrainOutput, Trainer};

use serde::{Deserialize, Serialize};

use crate::data::{Geometry, PreprocessConfig};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub geometry: Geometry,
    /// Number of autoregressive sub-decoders; must divide the layer count.
    pub groups: usize,
    /// Condition partition size followed by the three free partition sizes.
    pub partition_sizes: [usize; 4],
    pub preprocess: PreprocessConfig,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub slope_start: f64,
    pub slope_end: f64,
    /// Epochs over which the slope is annealed linearly.
    pub anneal_epochs: usize,
    /// Further joint epochs at the final slope.
    pub joint_epochs: usize,
    /// Total epochs; those after the joint phase train only the prior.
    pub total_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rbm_learning_rate: f64,
    /// Block Gibbs sweeps per negative phase.
    pub gibbs_sweeps: usize,
    pub persistent_chains: bool,
    pub rbm_init_scale: f64,
    /// Sweeps used to draw prior samples at generation time.
    pub generation_sweeps: usize,
    /// Estimate the prior log-likelihood every this many epochs (0 = never).
    pub loglik_every: usize,
    pub loglik_events: usize,
    pub ais_temps: usize,
    pub ais_chains: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            groups: 9,
            partition_sizes: [8, 64, 64, 64],
            preprocess: PreprocessConfig::default(),
            encoder_hidden: vec![256, 256],
            decoder_hidden: vec![256, 256],
            activation: Activation::Relu,
            slope_start: 5.0,
            slope_end: 500.0,
            anneal_epochs: 45,
            joint_epochs: 45,
            total_epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            rbm_learning_rate: 1e-2,
            gibbs_sweeps: 3000,
            persistent_chains: true,
            rbm_init_scale: 0.01,
            generation_sweeps: 3000,
            loglik_every: 10,
            loglik_events: 256,
            ais_temps: 100,
            ais_chains: 100,
        }
    }
}

impl VaeConfig {
    /// Reduced geometry and network widths for runs on a laptop CPU.
    pub fn toy() -> Self {
        Self {
            geometry: Geometry {
                layers: 12,
                angular: 8,
                radial: 4,
            },
            groups: 4,
            partition_sizes: [4, 16, 16, 16],
            preprocess: PreprocessConfig {
                k_bits: 4,
                ..PreprocessConfig::default()
            },
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![32, 32],
            gibbs_sweeps: 20,
            generation_sweeps: 500,
            loglik_every: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        let g = self.geometry;
        Geometry::new(g.layers, g.angular, g.radial)?;
        if self.groups == 0 || g.layers % self.groups != 0 {
            return Err(Error::Config(format!(
                "group count {} must divide the layer count {}",
                self.groups, g.layers
            )));
        }
        if self.partition_sizes[0] != self.preprocess.k_bits {
            return Err(Error::Config(format!(
                "condition partition has {} nodes but the energy code has {} bits",
                self.partition_sizes[0], self.preprocess.k_bits
            )));
        }
        if self.partition_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("partition sizes must be >= 1".into()));
        }
        if !(self.slope_start > 0.0 && self.slope_end > 0.0) {
            return Err(Error::Config("Gumbel slopes must be > 0".into()));
        }
        if self.total_epochs < self.anneal_epochs + self.joint_epochs {
            return Err(Error::Config(format!(
                "total_epochs {} shorter than anneal {} + joint {}",
                self.total_epochs, self.anneal_epochs, self.joint_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Checks that `topology` has exactly the configured partition sizes.
    pub fn check_topology(&self, topology: &Topology) -> Result<()> {
        let sizes = topology.partition_sizes();
        if sizes != self.partition_sizes {
            return Err(Error::Config(format!(
                "topology partition sizes {sizes:?} do not match configured {:?}",
                self.partition_sizes
            )));
        }
        Ok(())
    }

    pub fn layers_per_group(&self) -> usize {
        self.geometry.layers / self.groups
    }

    pub fn group_voxels(&self) -> usize {
        self.layers_per_group() * self.geometry.voxels_per_layer()
    }

    pub fn n_latent(&self) -> usize {
        self.partition_sizes.iter().sum()
    }

    pub fn k_bits(&self) -> usize {
        self.partition_sizes[0]
    }

    /// Gumbel slope for 1-indexed `epoch`: linear from `slope_start` at
    /// epoch 1 to `slope_end` at epoch `anneal_epochs`, constant afterwards.
    pub fn slope_at(&self, epoch: usize) -> f64 {
        if self.anneal_epochs <= 1 || epoch >= self.anneal_epochs {
            return self.slope_end;
        }
        let t = (epoch.max(1) - 1) as f64 / (self.anneal_epochs - 1) as f64;
        self.slope_start + (self.slope_end - self.slope_start) * t
    }

    pub fn phase_at(&self, epoch: usize) -> Phase {
        if epoch <= self.anneal_epochs {
            Phase::Anneal
        } else if epoch <= self.anneal_epochs + self.joint_epochs {
            Phase::Joint
        } else {
            Phase::PriorOnly
        }
    }
}
