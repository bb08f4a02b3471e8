use rand::Rng;
use rayon::prelude::*;

use super::model::{softplus, Model};
use crate::data::sigmoid;
use crate::error::{shape, Error, Result};
use crate::nn::{gumbel_with_noise, relax_grad, GumbelConfig};

/// Frozen logistic noise for one event: one block per sub-encoder and one
/// per decoder group.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub encoder: Vec<Vec<f64>>,
    pub decoder: Vec<Vec<f64>>,
}

impl ElboNoise {
    pub fn draw<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Self {
        Self {
            encoder: model.encoder.draw_noise(rng),
            decoder: model.decoder.draw_noise(rng),
        }
    }
}

const CHUNK: usize = 8;

/// Loss terms; the loss is `recon + prior - entropy`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboTerms {
    pub recon: f64,
    pub prior: f64,
    pub entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.recon + self.prior - self.entropy
    }

    fn add(&mut self, o: &ElboTerms) {
        self.recon += o.recon;
        self.prior += o.prior;
        self.entropy += o.entropy;
    }

    fn scale(&mut self, f: f64) {
        self.recon *= f;
        self.prior *= f;
        self.entropy *= f;
    }
}

/// Gradients laid out like the model's networks and RBM parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGrads {
    pub encoder: Vec<Vec<f64>>,
    pub decoder: Vec<Vec<f64>>,
    pub rbm_bias: Vec<f64>,
    pub rbm_weight: Vec<f64>,
}

impl ElboGrads {
    pub fn zeros(model: &Model) -> Self {
        Self {
            encoder: model.encoder.nets.iter().map(|n| vec![0.0; n.n_params()]).collect(),
            decoder: model.decoder.nets.iter().map(|n| vec![0.0; n.n_params()]).collect(),
            rbm_bias: vec![0.0; model.rbm.bias.len()],
            rbm_weight: vec![0.0; model.rbm.weight.len()],
        }
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .chain(std::iter::once(&mut self.rbm_bias))
            .chain(std::iter::once(&mut self.rbm_weight))
    }

    fn add(&mut self, o: &ElboGrads) {
        let others: Vec<&Vec<f64>> = o
            .encoder
            .iter()
            .chain(&o.decoder)
            .chain([&o.rbm_bias, &o.rbm_weight])
            .collect();
        for (a, b) in self.blocks_mut().zip(others) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, f: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= f);
        }
    }

    /// Same order as [`Model::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain([&self.rbm_bias, &self.rbm_weight])
            .flat_map(|b| b.iter().copied())
            .collect()
    }
}

fn bernoulli_entropy(l: f64) -> f64 {
    softplus(l) - sigmoid(l) * l
}

/// Loss of one event with frozen noise; accumulates gradients into `grads`
/// when given. Returns the terms and the relaxed latent vector.
///
/// The decoder runs free: group `g` sees the relaxed outputs
/// `mask * activation` of earlier groups, and gradients flow back through
/// them.
pub fn elbo_event(
    model: &Model,
    x_pre: &[f64],
    cond: &[f64],
    slope: f64,
    noise: &ElboNoise,
    grads: Option<&mut ElboGrads>,
) -> Result<(ElboTerms, Vec<f64>)> {
    let v = model.config.geometry.voxel_count();
    if x_pre.len() != v {
        return Err(shape("event voxels", v, x_pre.len()));
    }
    let kb = model.config.k_bits();
    if cond.len() != kb {
        return Err(shape("condition bits", kb, cond.len()));
    }
    let enc = &model.encoder;
    let dec = &model.decoder;
    let gumbel = GumbelConfig { slope, hard: false };
    if noise.encoder.len() != 3 {
        return Err(shape("encoder noise blocks", 3, noise.encoder.len()));
    }
    if noise.decoder.len() != dec.groups() {
        return Err(shape("decoder noise blocks", dec.groups(), noise.decoder.len()));
    }

    let mut traces = Vec::with_capacity(3);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(3);
    for k in 0..3 {
        let prev: Vec<&[f64]> = z.iter().map(|s| s.as_slice()).collect();
        let trace = enc.nets[k].forward_trace(&enc.input(k, x_pre, cond, &prev))?;
        let l = trace.output();
        if noise.encoder[k].len() != l.len() {
            return Err(shape("encoder noise", l.len(), noise.encoder[k].len()));
        }
        z.push(gumbel_with_noise(l, &noise.encoder[k], &gumbel).value);
        traces.push(trace);
    }
    let mut latent = cond.to_vec();
    z.iter().for_each(|s| latent.extend_from_slice(s));

    let mut terms = ElboTerms::default();
    for t in &traces {
        terms.entropy += t.output().iter().map(|&l| bernoulli_entropy(l)).sum::<f64>();
    }
    let state = model.latent_to_state(&latent);
    terms.prior = model.rbm.energy(&state.z);

    let gv = dec.group_voxels();
    let groups = dec.groups();
    let mut emitted: Vec<f64> = Vec::with_capacity(groups * gv);
    let mut dec_traces = Vec::with_capacity(groups);
    let mut masks = Vec::with_capacity(groups);
    for g in 0..groups {
        let trace = dec.nets[g].forward_trace(&dec.input(&latent, cond, &emitted))?;
        let out = trace.output();
        let (logits, raw) = out.split_at(gv);
        if noise.decoder[g].len() != gv {
            return Err(shape("decoder noise", gv, noise.decoder[g].len()));
        }
        let mask = gumbel_with_noise(logits, &noise.decoder[g], &gumbel).value;
        let target = &x_pre[g * gv..(g + 1) * gv];
        for j in 0..gv {
            let hit = target[j] > 0.0;
            terms.recon += softplus(logits[j]) - if hit { logits[j] } else { 0.0 };
            if hit {
                let diff = softplus(raw[j]) - target[j];
                terms.recon += diff * diff;
            }
            emitted.push(mask[j] * softplus(raw[j]));
        }
        masks.push(mask);
        dec_traces.push(trace);
    }

    let Some(gr) = grads else {
        return Ok((terms, latent));
    };


    let mut d_latent = vec![0.0; latent.len()];
    let mut d_emitted = vec![0.0; groups * gv];
    let prior_width = latent.len() + kb;
    for g in (0..groups).rev() {
        let out = dec_traces[g].output();
        let (logits, raw) = out.split_at(gv);
        let target = &x_pre[g * gv..(g + 1) * gv];
        let mut upstream = vec![0.0; 2 * gv];
        for j in 0..gv {
            let hit = target[j] > 0.0;
            let act = softplus(raw[j]);
            let dy = d_emitted[g * gv + j];
            let m = masks[g][j];
            upstream[j] = sigmoid(logits[j]) - if hit { 1.0 } else { 0.0 } + dy * act * relax_grad(m, slope);
            let mut d_act = dy * m;
            if hit {
                d_act += 2.0 * (act - target[j]);
            }
            upstream[gv + j] = d_act * sigmoid(raw[j]);
        }
        let din = dec.nets[g].backward_into(&dec_traces[g], &upstream, &mut gr.decoder[g])?;
        d_latent.iter_mut().zip(&din).for_each(|(a, b)| *a += b);
        for (d, v) in d_emitted[..g * gv].iter_mut().zip(&din[prior_width..]) {
            *d += v * dec.voxel_scale();
        }
    }

    // Prior cross term: E = -sum b z - sum w z z.
    let nodes = model.latent_nodes();
    let topo = model.topology.as_ref();
    for (pos, &node) in nodes.iter().enumerate() {
        gr.rbm_bias[node] -= state.z[node];
        if pos >= kb {
            d_latent[pos] -= model.rbm.field(node, &state.z, 1.0);
        }
    }
    for (e, &(i, j)) in topo.edges().iter().enumerate() {
        gr.rbm_weight[e] -= state.z[i] * state.z[j];
    }

    let sizes = enc.partition_sizes();
    let mut offsets = [kb; 3];
    for k in 1..3 {
        offsets[k] = offsets[k - 1] + sizes[k - 1];
    }
    for k in (0..3).rev() {
        let l = traces[k].output();
        let upstream: Vec<f64> = (0..sizes[k])
            .map(|i| {
                let zi = z[k][i];
                let p = sigmoid(l[i]);
                d_latent[offsets[k] + i] * relax_grad(zi, slope) + l[i] * p * (1.0 - p)
            })
            .collect();
        let din = enc.nets[k].backward_into(&traces[k], &upstream, &mut gr.encoder[k])?;
        let mut pos = v + kb;
        for j in 0..k {
            for i in 0..sizes[j] {
                d_latent[offsets[j] + i] += din[pos + i];
            }
            pos += sizes[j];
        }
    }
    Ok((terms, latent))
}

/// Batch-mean loss and gradients. Events are processed in fixed chunks in
/// parallel and the chunk sums are reduced in order, so the result does not
/// depend on the thread count.
pub fn elbo_batch(
    model: &Model,
    x_pre: &[Vec<f64>],
    cond: &[Vec<f64>],
    slope: f64,
    noise: &[ElboNoise],
) -> Result<(ElboTerms, ElboGrads, Vec<Vec<f64>>)> {
    let n = x_pre.len();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if cond.len() != n {
        return Err(shape("batch conditions", n, cond.len()));
    }
    if noise.len() != n {
        return Err(shape("batch noise", n, noise.len()));
    }
    let chunks: Vec<(ElboTerms, ElboGrads, Vec<Vec<f64>>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut terms = ElboTerms::default();
            let mut grads = ElboGrads::zeros(model);
            let mut latents = Vec::with_capacity(CHUNK);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (t, lat) = elbo_event(model, &x_pre[i], &cond[i], slope, &noise[i], Some(&mut grads))?;
                terms.add(&t);
                latents.push(lat);
            }
            Ok((terms, grads, latents))
        })
        .collect::<Result<_>>()?;
    let mut terms = ElboTerms::default();
    let mut grads = ElboGrads::zeros(model);
    let mut latents = Vec::with_capacity(n);
    for (t, g, l) in chunks {
        terms.add(&t);
        grads.add(&g);
        latents.extend(l);
    }
    let inv = 1.0 / n as f64;
    terms.scale(inv);
    grads.scale(inv);
    Ok((terms, grads, latents))
}
