use std::sync::Arc;

use rand::{Rng, RngCore};

use super::VaeConfig;
use crate::error::{shape, Result};
use crate::nn::{draw_noise, gumbel_with_noise, DenseNet, GumbelConfig, GumbelSample};
use crate::rbm::{LatentState, RbmParams};
use crate::rng;
use crate::topology::Topology;

/// Factor applied to transformed voxel values where they enter a network:
/// the reciprocal of the largest value the transform can produce.
pub(crate) fn voxel_scale(cfg: &VaeConfig) -> f64 {
    let a = cfg.preprocess.alpha;
    1.0 / (2.0 * ((1.0 - a) / a).ln())
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub nets: Vec<DenseNet>,
    sizes: [usize; 3],
    voxel_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    pub logits: Vec<Vec<f64>>,
    pub samples: Vec<GumbelSample>,
    /// Condition bits followed by the forward values of partitions 1..=3.
    pub latent: Vec<f64>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &VaeConfig, rng: &mut R) -> Result<Self> {
        let v = cfg.geometry.voxel_count();
        let sizes = [cfg.partition_sizes[1], cfg.partition_sizes[2], cfg.partition_sizes[3]];
        let mut nets = Vec::with_capacity(3);
        let mut input = v + cfg.k_bits();
        for &out in &sizes {
            nets.push(DenseNet::mlp(input, &cfg.encoder_hidden, out, cfg.activation, rng)?);
            input += out;
        }
        Ok(Self {
            nets,
            sizes,
            voxel_scale: voxel_scale(cfg),
        })
    }

    pub fn partition_sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub(crate) fn input(&self, k: usize, x_pre: &[f64], cond: &[f64], previous: &[&[f64]]) -> Vec<f64> {
        let mut input = Vec::with_capacity(x_pre.len() + cond.len() + 64);
        input.extend(x_pre.iter().map(|x| x * self.voxel_scale));
        input.extend_from_slice(cond);
        for p in &previous[..k] {
            input.extend_from_slice(p);
        }
        input
    }

    /// Logits of partition `k` (0-based among the free partitions) given the
    /// samples of the partitions before it.
    pub fn sub_logits(&self, k: usize, x_pre: &[f64], cond: &[f64], previous: &[&[f64]]) -> Result<Vec<f64>> {
        self.nets[k].forward(&self.input(k, x_pre, cond, previous))
    }

    pub fn encode_with_noise(
        &self,
        x_pre: &[f64],
        cond: &[f64],
        slope: f64,
        hard: bool,
        noise: &[Vec<f64>],
    ) -> Result<EncodeOutput> {
        if noise.len() != 3 {
            return Err(shape("encoder noise blocks", 3, noise.len()));
        }
        let gumbel = GumbelConfig { slope, hard };
        let mut logits = Vec::with_capacity(3);
        let mut samples: Vec<GumbelSample> = Vec::with_capacity(3);
        for k in 0..3 {
            let prev: Vec<&[f64]> = samples.iter().map(|s| s.value.as_slice()).collect();
            let l = self.sub_logits(k, x_pre, cond, &prev)?;
            if noise[k].len() != l.len() {
                return Err(shape("encoder noise", l.len(), noise[k].len()));
            }
            samples.push(gumbel_with_noise(&l, &noise[k], &gumbel));
            logits.push(l);
        }
        let mut latent = cond.to_vec();
        for s in &samples {
            latent.extend_from_slice(&s.value);
        }
        Ok(EncodeOutput {
            logits,
            samples,
            latent,
        })
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.sizes.iter().map(|&n| draw_noise(n, rng)).collect()
    }

    pub fn encode<R: Rng + ?Sized>(
        &self,
        x_pre: &[f64],
        cond: &[f64],
        slope: f64,
        hard: bool,
        rng: &mut R,
    ) -> Result<EncodeOutput> {
        let noise = self.draw_noise(rng);
        self.encode_with_noise(x_pre, cond, slope, hard, &noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub nets: Vec<DenseNet>,
    group_voxels: usize,
    n_latent: usize,
    voxel_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Mask times activation, in the transformed (logit) space.
    pub shower_pre: Vec<f64>,
    pub mask: Vec<f64>,
    pub activation: Vec<f64>,
    pub mask_logits: Vec<f64>,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(cfg: &VaeConfig, rng: &mut R) -> Result<Self> {
        let gv = cfg.group_voxels();
        let n_latent = cfg.n_latent();
        let nets = (0..cfg.groups)
            .map(|g| {
                let input = n_latent + cfg.k_bits() + g * gv;
                DenseNet::mlp(input, &cfg.decoder_hidden, 2 * gv, cfg.activation, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nets,
            group_voxels: gv,
            n_latent,
            voxel_scale: voxel_scale(cfg),
        })
    }

    pub fn groups(&self) -> usize {
        self.nets.len()
    }

    pub fn group_voxels(&self) -> usize {
        self.group_voxels
    }

    pub(crate) fn input(&self, latent: &[f64], cond: &[f64], previous: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(latent.len() + cond.len() + previous.len());
        input.extend_from_slice(latent);
        input.extend_from_slice(cond);
        input.extend(previous.iter().map(|x| x * self.voxel_scale));
        input
    }

    pub(crate) fn voxel_scale(&self) -> f64 {
        self.voxel_scale
    }

    /// `(mask logits, activations)` of group `g` given the voxels of all
    /// earlier groups.
    pub fn group_forward(
        &self,
        g: usize,
        latent: &[f64],
        cond: &[f64],
        previous: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if latent.len() != self.n_latent {
            return Err(shape("latent vector", self.n_latent, latent.len()));
        }
        if previous.len() != g * self.group_voxels {
            return Err(shape("previous groups", g * self.group_voxels, previous.len()));
        }
        let out = self.nets[g].forward(&self.input(latent, cond, previous))?;
        let (logits, raw) = out.split_at(self.group_voxels);
        Ok((logits.to_vec(), raw.iter().map(|&r| softplus(r)).collect()))
    }

    /// Autoregressive decode; `mask_of(g, logits)` turns group `g`'s mask
    /// logits into its mask.
    pub fn decode_with_masks<F>(&self, latent: &[f64], cond: &[f64], mut mask_of: F) -> Result<DecodeOutput>
    where
        F: FnMut(usize, &[f64]) -> Vec<f64>,
    {
        let total = self.groups() * self.group_voxels;
        let mut out = DecodeOutput {
            shower_pre: Vec::with_capacity(total),
            mask: Vec::with_capacity(total),
            activation: Vec::with_capacity(total),
            mask_logits: Vec::with_capacity(total),
        };
        for g in 0..self.groups() {
            let (logits, act) = self.group_forward(g, latent, cond, &out.shower_pre)?;
            let mask = mask_of(g, &logits);
            if mask.len() != self.group_voxels {
                return Err(shape("group mask", self.group_voxels, mask.len()));
            }
            out.shower_pre.extend(mask.iter().zip(&act).map(|(m, a)| m * a));
            out.mask.extend_from_slice(&mask);
            out.activation.extend_from_slice(&act);
            out.mask_logits.extend_from_slice(&logits);
        }
        Ok(out)
    }

    pub fn decode_with_noise(
        &self,
        latent: &[f64],
        cond: &[f64],
        slope: f64,
        hard: bool,
        noise: &[Vec<f64>],
    ) -> Result<DecodeOutput> {
        if noise.len() != self.groups() {
            return Err(shape("decoder noise blocks", self.groups(), noise.len()));
        }
        let gumbel = GumbelConfig { slope, hard };
        self.decode_with_masks(latent, cond, |g, logits| {
            gumbel_with_noise(logits, &noise[g], &gumbel).value
        })
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.groups()).map(|_| draw_noise(self.group_voxels, rng)).collect()
    }

    pub fn decode<R: Rng + ?Sized>(
        &self,
        latent: &[f64],
        cond: &[f64],
        slope: f64,
        hard: bool,
        rng: &mut R,
    ) -> Result<DecodeOutput> {
        let noise = self.draw_noise(rng);
        self.decode_with_noise(latent, cond, slope, hard, &noise)
    }
}

/// Encoder, decoder and prior over one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: VaeConfig,
    pub topology: Arc<Topology>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub rbm: RbmParams,
    /// Node id of each latent-vector position.
    latent_nodes: Vec<usize>,
}

impl Model {
    pub fn new<R: RngCore + ?Sized>(config: VaeConfig, topology: Arc<Topology>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        config.check_topology(&topology)?;
        let mut r = rng::seeded(rng::fork(rng));
        let encoder = Encoder::new(&config, &mut r)?;
        let decoder = Decoder::new(&config, &mut r)?;
        let rbm = RbmParams::init(topology.clone(), config.rbm_init_scale, &mut r);
        Self::from_parts(config, topology, encoder, decoder, rbm)
    }

    pub fn from_parts(
        config: VaeConfig,
        topology: Arc<Topology>,
        encoder: Encoder,
        decoder: Decoder,
        rbm: RbmParams,
    ) -> Result<Self> {
        config.validate()?;
        config.check_topology(&topology)?;
        let latent_nodes = topology.latent_order();
        Ok(Self {
            config,
            topology,
            encoder,
            decoder,
            rbm,
            latent_nodes,
        })
    }

    pub fn latent_nodes(&self) -> &[usize] {
        &self.latent_nodes
    }

    /// RBM state holding a latent vector in VAE order.
    pub fn latent_to_state(&self, latent: &[f64]) -> LatentState {
        let n = self.topology.n_nodes();
        let k = self.config.k_bits();
        let mut s = LatentState {
            z: vec![0.0; n],
            clamp_mask: vec![false; n],
        };
        for (pos, (&node, &v)) in self.latent_nodes.iter().zip(latent).enumerate() {
            s.z[node] = v;
            s.clamp_mask[node] = pos < k;
        }
        s
    }

    /// RBM state of a latent vector with every free value thresholded at 1/2.
    pub fn hard_state(&self, latent: &[f64]) -> LatentState {
        let kb = self.config.k_bits();
        let hard: Vec<f64> = latent
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < kb || v > 0.5 { v.round() } else { 0.0 })
            .collect();
        self.latent_to_state(&hard)
    }

    pub fn state_to_latent(&self, s: &LatentState) -> Vec<f64> {
        self.latent_nodes.iter().map(|&i| s.z[i]).collect()
    }

    pub fn n_encoder_params(&self) -> usize {
        self.encoder.nets.iter().map(|n| n.n_params()).sum()
    }

    pub fn n_decoder_params(&self) -> usize {
        self.decoder.nets.iter().map(|n| n.n_params()).sum()
    }

    pub fn n_rbm_params(&self) -> usize {
        self.rbm.bias.len() + self.rbm.weight.len()
    }

    /// Encoder, decoder and RBM parameters concatenated in that order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_encoder_params() + self.n_decoder_params() + self.n_rbm_params());
        for n in self.encoder.nets.iter().chain(&self.decoder.nets) {
            out.extend_from_slice(&n.params);
        }
        out.extend_from_slice(&self.rbm.bias);
        out.extend_from_slice(&self.rbm.weight);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.n_encoder_params() + self.n_decoder_params() + self.n_rbm_params();
        if flat.len() != total {
            return Err(shape("flat parameters", total, flat.len()));
        }
        let mut pos = 0;
        for n in self.encoder.nets.iter_mut().chain(self.decoder.nets.iter_mut()) {
            let k = n.params.len();
            n.params.copy_from_slice(&flat[pos..pos + k]);
            pos += k;
        }
        let nb = self.rbm.bias.len();
        self.rbm.bias.copy_from_slice(&flat[pos..pos + nb]);
        pos += nb;
        self.rbm.weight.copy_from_slice(&flat[pos..]);
        Ok(())
    }
}
