#![allow(dead_code)]

use std::sync::Arc;

use calovae_core::data::{
    binarize_energy, forward_transform, generate_toy_dataset, Geometry, PreprocessConfig, ShowerBatch,
};
use calovae_core::hvae::{Model, VaeConfig};
use calovae_core::nn::Activation;
use calovae_core::rng;
use calovae_core::topology::{build_quadripartite, Topology};

/// G=2 over a 4x2x2 grid with an 8-node latent (2 per partition).
pub fn tiny_config(act: Activation) -> VaeConfig {
    VaeConfig {
        geometry: Geometry {
            layers: 4,
            angular: 2,
            radial: 2,
        },
        groups: 2,
        partition_sizes: [2, 2, 2, 2],
        preprocess: PreprocessConfig {
            k_bits: 2,
            ..PreprocessConfig::default()
        },
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        activation: act,
        anneal_epochs: 2,
        joint_epochs: 1,
        total_epochs: 5,
        batch_size: 8,
        gibbs_sweeps: 5,
        generation_sweeps: 50,
        loglik_every: 0,
        ..VaeConfig::default()
    }
}

pub fn topology_for(cfg: &VaeConfig, seed: u64) -> Arc<Topology> {
    Arc::new(build_quadripartite(cfg.partition_sizes, 4, 4, seed).unwrap())
}

pub fn model_for(cfg: &VaeConfig, seed: u64) -> Model {
    let topo = topology_for(cfg, seed);
    let mut m = Model::new(cfg.clone(), topo, &mut rng::seeded(seed)).unwrap();
    // Nonzero prior so the cross term and its gradient are exercised.
    let mut r = rng::seeded(seed ^ 0xabc);
    use rand::Rng;
    for b in m.rbm.bias.iter_mut().chain(m.rbm.weight.iter_mut()) {
        *b = r.gen_range(-0.5..0.5);
    }
    m
}

pub fn toy_batch(cfg: &VaeConfig, n: usize, seed: u64) -> ShowerBatch {
    let pp = &cfg.preprocess;
    generate_toy_dataset(n, cfg.geometry, pp.e_min, pp.e_max, seed).unwrap()
}

pub fn prepared(cfg: &VaeConfig, batch: &ShowerBatch) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let pp = &cfg.preprocess;
    let xs = batch
        .events()
        .zip(&batch.incident)
        .map(|(ev, &e)| ev.iter().map(|&x| forward_transform(x as f64, e as f64, pp)).collect())
        .collect();
    let conds = batch
        .incident
        .iter()
        .map(|&e| binarize_energy(e as f64, pp).unwrap().into_iter().map(f64::from).collect())
        .collect();
    (xs, conds)
}
