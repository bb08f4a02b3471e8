use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;

use super::model::Model;
use crate::calibrate::{rescale_for_device, Device};
use crate::data::{binarize_energy, code_to_index, inverse_transform, ShowerBatch};
use crate::error::{shape, Error, Result};
use crate::rbm::{sample_conditioned, ChainInit, LatentState};
use crate::rng;

/// Source of prior samples for generation.
#[derive(Clone, Copy)]
pub enum SamplerKind<'a> {
    /// Block Gibbs chains at unit inverse temperature.
    Classical,
    /// A programmable device whose parameters are rescaled by the calibrated
    /// inverse temperature before programming.
    BlackBox {
        device: &'a dyn Device,
        beta_hat: Option<f64>,
    },
}

fn prior_states<R: RngCore + ?Sized>(
    model: &Model,
    codes: &[Vec<u8>],
    sampler: SamplerKind<'_>,
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    match sampler {
        SamplerKind::Classical => sample_conditioned(
            &model.rbm,
            codes,
            model.config.generation_sweeps,
            1.0,
            ChainInit::Random,
            rng,
        ),
        SamplerKind::BlackBox { device, beta_hat } => {
            let beta_hat = beta_hat.ok_or(Error::CalibrationMissing)?;
            let programmed = rescale_for_device(&model.rbm, beta_hat)?;
            let mut groups: BTreeMap<&[u8], Vec<usize>> = BTreeMap::new();
            for (i, c) in codes.iter().enumerate() {
                groups.entry(c.as_slice()).or_default().push(i);
            }
            let base = rng::fork(rng);
            let mut out: Vec<Option<LatentState>> = vec![None; codes.len()];
            for (code, idx) in groups {
                let mut sampler = device.program(&programmed, rng::fork(&mut rng::stream(base, code_to_index(code))));
                let states = sampler.draw(idx.len(), code)?;
                if states.len() != idx.len() {
                    return Err(shape("device samples", idx.len(), states.len()));
                }
                for (i, s) in idx.into_iter().zip(states) {
                    out[i] = Some(s);
                }
            }
            Ok(out.into_iter().map(|s| s.expect("every event sampled")).collect())
        }
    }
}

/// Generates one shower per incident energy: condition bits, a prior
/// sample, a hard-mask decode and the inverse transform back to MeV.
pub fn generate<R: RngCore + ?Sized>(
    model: &Model,
    incident: &[f32],
    sampler: SamplerKind<'_>,
    rng: &mut R,
) -> Result<ShowerBatch> {
    generate_with_masks(model, incident, sampler, rng).map(|(b, _)| b)
}

/// [`generate`], also returning each event's binary decoder mask.
pub fn generate_with_masks<R: RngCore + ?Sized>(
    model: &Model,
    incident: &[f32],
    sampler: SamplerKind<'_>,
    rng: &mut R,
) -> Result<(ShowerBatch, Vec<Vec<f64>>)> {
    let cfg = &model.config;
    let pp = &cfg.preprocess;
    let codes = incident
        .iter()
        .map(|&e| binarize_energy(e as f64, pp))
        .collect::<Result<Vec<_>>>()?;
    let states = prior_states(model, &codes, sampler, rng)?;
    let base = rng::fork(rng);
    let decoded: Vec<(Vec<f32>, Vec<f64>)> = states
        .par_iter()
        .zip(&codes)
        .zip(incident)
        .enumerate()
        .map(|(i, ((s, code), &e))| {
            let cond: Vec<f64> = code.iter().map(|&b| f64::from(b)).collect();
            let latent = model.state_to_latent(s);
            let out = model
                .decoder
                .decode(&latent, &cond, cfg.slope_end, true, &mut rng::stream(base, i as u64))?;
            let voxels = out
                .shower_pre
                .iter()
                .zip(&out.mask)
                .map(|(&z, &m)| {
                    if m == 0.0 {
                        0.0
                    } else {
                        (inverse_transform(z, e as f64, pp) as f32).max(f32::MIN_POSITIVE)
                    }
                })
                .collect();
            Ok((voxels, out.mask))
        })
        .collect::<Result<_>>()?;
    let (events, masks): (Vec<Vec<f32>>, Vec<Vec<f64>>) = decoded.into_iter().unzip();
    let batch = ShowerBatch::new(cfg.geometry, pp.bounds(), events.concat(), incident.to_vec())?;
    Ok((batch, masks))
}
