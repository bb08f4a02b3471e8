use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::elbo::{elbo_batch, elbo_event, ElboNoise, ElboTerms};
use super::model::Model;
use super::VaeConfig;
use crate::ais::{log_likelihood, AisConfig, LogZCache, MAX_LIKELIHOOD_CONDITIONS};
use crate::data::{binarize_energy, forward_transform, ShowerBatch};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rbm::{CdTrainer, LatentState};
use crate::rng;
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Anneal,
    Joint,
    PriorOnly,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Anneal => "anneal",
            Phase::Joint => "joint",
            Phase::PriorOnly => "prior-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub slope: f64,
    pub recon: f64,
    pub prior: f64,
    pub entropy: f64,
    pub loglik: Option<f64>,
    pub loglik_stderr: Option<f64>,
    pub wall_s: f64,
}

impl EpochLog {
    pub fn loss(&self) -> f64 {
        self.recon + self.prior - self.entropy
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Transformed voxels and condition bits of every event.
pub(crate) fn prepare(config: &VaeConfig, data: &ShowerBatch) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if data.geometry != config.geometry {
        return Err(Error::Config(format!(
            "dataset geometry {:?} does not match model geometry {:?}",
            data.geometry, config.geometry
        )));
    }
    let pp = &config.preprocess;
    let mut xs = Vec::with_capacity(data.len());
    let mut conds = Vec::with_capacity(data.len());
    for (voxels, &e) in data.events().zip(&data.incident) {
        let e = e as f64;
        xs.push(voxels.iter().map(|&x| forward_transform(x as f64, e, pp)).collect());
        conds.push(binarize_energy(e, pp)?.into_iter().map(f64::from).collect());
    }
    Ok((xs, conds))
}

/// Epoch-by-epoch trainer. Each epoch draws from its own generator stream,
/// so a run can be stopped and inspected between epochs without changing
/// the result.
pub struct Trainer {
    model: Model,
    xs: Vec<Vec<f64>>,
    conds: Vec<Vec<f64>>,
    seed: u64,
    epoch: usize,
    adam_enc: Vec<Adam>,
    adam_dec: Vec<Adam>,
    cd: CdTrainer,
}

impl Trainer {
    pub fn new(config: VaeConfig, data: &ShowerBatch, topology: Arc<Topology>, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let (xs, conds) = prepare(&config, data)?;
        let model = Model::new(config, topology, &mut rng::stream(seed, 0))?;
        let lr = model.config.learning_rate;
        let adam_enc = model.encoder.nets.iter().map(|n| Adam::new(n.n_params(), lr)).collect();
        let adam_dec = model.decoder.nets.iter().map(|n| Adam::new(n.n_params(), lr)).collect();
        let cd = CdTrainer::new(
            model.config.rbm_learning_rate,
            model.config.gibbs_sweeps,
            model.config.persistent_chains,
        );
        Ok(Self {
            model,
            xs,
            conds,
            seed,
            epoch: 0,
            adam_enc,
            adam_dec,
            cd,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.model.config.total_epochs
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Runs the next epoch (1-indexed).
    pub fn step_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        self.epoch += 1;
        let epoch = self.epoch;
        let cfg = self.model.config.clone();
        let phase = cfg.phase_at(epoch);
        let slope = cfg.slope_at(epoch);
        let mut r = rng::stream(self.seed, epoch as u64);
        let mut order: Vec<usize> = (0..self.xs.len()).collect();
        order.shuffle(&mut r);

        // Incomplete trailing batches are dropped so the persistent chains
        // keep one length.
        let bs = cfg.batch_size.min(order.len());
        let mut sum = ElboTerms::default();
        let mut seen = 0usize;
        for batch in order.chunks_exact(bs) {
            let x: Vec<Vec<f64>> = batch.iter().map(|&i| self.xs[i].clone()).collect();
            let c: Vec<Vec<f64>> = batch.iter().map(|&i| self.conds[i].clone()).collect();
            let noise: Vec<ElboNoise> = batch.iter().map(|_| ElboNoise::draw(&self.model, &mut r)).collect();
            let (terms, latents) = if phase == Phase::PriorOnly {
                let mut terms = ElboTerms::default();
                let mut latents = Vec::with_capacity(batch.len());
                for i in 0..batch.len() {
                    let (t, l) = elbo_event(&self.model, &x[i], &c[i], slope, &noise[i], None)?;
                    terms.recon += t.recon;
                    terms.prior += t.prior;
                    terms.entropy += t.entropy;
                    latents.push(l);
                }
                let inv = 1.0 / batch.len() as f64;
                terms.recon *= inv;
                terms.prior *= inv;
                terms.entropy *= inv;
                (terms, latents)
            } else {
                let (terms, grads, latents) = elbo_batch(&self.model, &x, &c, slope, &noise)?;
                for ((net, adam), g) in self.model.encoder.nets.iter_mut().zip(&mut self.adam_enc).zip(&grads.encoder) {
                    adam.step(&mut net.params, g);
                }
                for ((net, adam), g) in self.model.decoder.nets.iter_mut().zip(&mut self.adam_dec).zip(&grads.decoder) {
                    adam.step(&mut net.params, g);
                }
                (terms, latents)
            };
            let w = batch.len() as f64;
            seen += batch.len();
            sum.recon += terms.recon * w;
            sum.prior += terms.prior * w;
            sum.entropy += terms.entropy * w;
            let positives: Vec<LatentState> = latents.iter().map(|l| self.model.hard_state(l)).collect();
            self.cd.step(&mut self.model.rbm, &positives, &mut r)?;
        }
        let n = seen as f64;

        let due = cfg.loglik_every > 0 && (epoch % cfg.loglik_every == 0 || epoch == cfg.total_epochs);
        let (loglik, loglik_stderr) = if due {
            let (ll, se) = self.log_likelihood()?;
            (Some(ll), Some(se))
        } else {
            (None, None)
        };
        Ok(EpochLog {
            epoch,
            phase,
            slope,
            recon: sum.recon / n,
            prior: sum.prior / n,
            entropy: sum.entropy / n,
            loglik,
            loglik_stderr,
            wall_s: start.elapsed().as_secs_f64(),
        })
    }

    /// RBM log-likelihood of hard encoder samples for a fixed subset of
    /// events, with the propagated standard error of the log Z estimates.
    /// The subset, the encoder noise and the AIS streams are the same at
    /// every call.
    pub fn log_likelihood(&self) -> Result<(f64, f64)> {
        let cfg = &self.model.config;
        let n = cfg.loglik_events.min(self.xs.len()).max(1);
        let mut r = rng::stream(self.seed, u64::MAX);
        let slope = cfg.slope_end;
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let noise = ElboNoise::draw(&self.model, &mut r);
            let (_, latent) = elbo_event(&self.model, &self.xs[i], &self.conds[i], slope, &noise, None)?;
            states.push(self.model.hard_state(&latent));
        }
        let ais = AisConfig::linear(cfg.ais_temps, cfg.ais_chains);
        let mut cache = LogZCache::new();
        let mut ar = rng::stream(self.seed, u64::MAX - 1);
        let ll = log_likelihood(&self.model.rbm, &states, &ais, MAX_LIKELIHOOD_CONDITIONS, &mut cache, &mut ar)?;
        let topo = self.model.topology.as_ref();
        let mut var = 0.0;
        let mut count = 0usize;
        let mut weights = std::collections::BTreeMap::new();
        for s in &states {
            let code = s.condition(topo);
            if cache.get(&code).is_some() {
                *weights.entry(code).or_insert(0usize) += 1;
                count += 1;
            }
        }
        for (code, k) in &weights {
            let se = cache.get(code).expect("cached").stderr;
            var += (*k as f64 * se).powi(2);
        }
        Ok((ll, var.sqrt() / count.max(1) as f64))
    }
}

/// Hard posterior samples of every event, one encoder noise draw each.
pub fn posterior_states<R: RngCore + ?Sized>(model: &Model, data: &ShowerBatch, rng: &mut R) -> Result<Vec<LatentState>> {
    let (xs, conds) = prepare(&model.config, data)?;
    let mut r = rng::seeded(rng::fork(rng));
    xs.iter()
        .zip(&conds)
        .map(|(x, c)| {
            let out = model.encoder.encode(x, c, model.config.slope_end, true, &mut r)?;
            Ok(model.latent_to_state(&out.latent))
        })
        .collect()
}

/// Full schedule: anneal, joint, then prior-only epochs.
pub fn train(config: VaeConfig, data: &ShowerBatch, topology: Arc<Topology>, seed: u64) -> Result<TrainOutput> {
    let mut t = Trainer::new(config, data, topology, seed)?;
    let mut log = Vec::new();
    while !t.finished() {
        log.push(t.step_epoch()?);
    }
    Ok(TrainOutput {
        model: t.into_model(),
        log,
    })
}

/// Tab-separated training log. `wall_s` is omitted when `with_wall` is
/// false so that the file is reproducible.
pub fn format_log(log: &[EpochLog], with_wall: bool) -> String {
    let mut s = String::from("epoch\tphase\tslope\trecon\tprior\tentropy\tloglik");
    s.push_str(if with_wall { "\twall_s\n" } else { "\n" });
    for e in log {
        let ll = e.loglik.map(|v| format!("{v:.10}")).unwrap_or_default();
        let _ = write!(
            s,
            "{}\t{}\t{:.6}\t{:.10}\t{:.10}\t{:.10}\t{}",
            e.epoch,
            e.phase.as_str(),
            e.slope,
            e.recon,
            e.prior,
            e.entropy,
            ll
        );
        if with_wall {
            let _ = write!(s, "\t{:.3}", e.wall_s);
        }
        s.push('\n');
    }
    s
}

pub fn write_log(log: &[EpochLog], with_wall: bool, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_log(log, with_wall))?;
    Ok(())
}

