//! Effective inverse-temperature estimation for black-box Boltzmann-like
//! samplers, plus the simulated device that stands in for annealing hardware.
//!
//! A device programmed with parameters `p` is assumed to return samples close
//! to `exp(-beta_eff * E_p(z))` for some unknown `beta_eff`. The estimator
//! iterates the Newton map for `<E>_beta = E_device`,
//!
//! `beta <- beta + (<E>_beta - E_device) / Var_beta(E)`,
//!
//! which has `beta_eff` as an attracting fixed point because
//! `d<E>/dbeta = -Var(E) < 0`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::Histogram;
use crate::rbm::{sample_chains, sweep, ChainInit, LatentState, RbmParams};
use crate::rng::{self, ChainRng};

/// Opaque sampler; no temperature is exposed.
pub trait BlackBoxSampler: Send {
    fn draw(&mut self, n: usize, condition_bits: &[u8]) -> Result<Vec<LatentState>>;
}

/// Something that can be programmed with RBM parameters and then sampled.
pub trait Device: Sync {
    fn program(&self, p: &RbmParams, seed: u64) -> Box<dyn BlackBoxSampler>;
}

/// Long-run Gibbs sampler at a hidden inverse temperature.
#[derive(Debug, Clone)]
pub struct SimulatedAnnealer {
    params: RbmParams,
    beta_star: f64,
    n_burn_sweeps: usize,
    rng: ChainRng,
}

pub fn simulated_annealer<R: RngCore + ?Sized>(
    p: &RbmParams,
    beta_star: f64,
    n_burn_sweeps: usize,
    rng: &mut R,
) -> Result<SimulatedAnnealer> {
    if !(beta_star > 0.0 && beta_star.is_finite()) {
        return Err(Error::Config(format!("device inverse temperature must be > 0, got {beta_star}")));
    }
    Ok(SimulatedAnnealer {
        params: p.clone(),
        beta_star,
        n_burn_sweeps,
        rng: rng::seeded(rng::fork(rng)),
    })
}

impl BlackBoxSampler for SimulatedAnnealer {
    fn draw(&mut self, n: usize, condition_bits: &[u8]) -> Result<Vec<LatentState>> {
        sample_chains(
            &self.params,
            n,
            self.n_burn_sweeps,
            self.beta_star,
            condition_bits,
            ChainInit::Random,
            &mut self.rng,
        )
    }
}

/// Factory for [`SimulatedAnnealer`]s sharing one hidden temperature.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedDevice {
    pub beta_star: f64,
    pub n_burn_sweeps: usize,
}

impl Device for SimulatedDevice {
    fn program(&self, p: &RbmParams, seed: u64) -> Box<dyn BlackBoxSampler> {
        Box::new(SimulatedAnnealer {
            params: p.clone(),
            beta_star: self.beta_star,
            n_burn_sweeps: self.n_burn_sweeps,
            rng: rng::seeded(seed),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub max_iters: usize,
    /// Stop once `|beta_{t+1} - beta_t| < tol`.
    pub tol: f64,
    /// Device draws used for the target mean energy.
    pub n_device_samples: usize,
    pub n_chains: usize,
    pub n_sweeps: usize,
    /// Sweeps discarded from the start of each model chain.
    pub n_burn: usize,
    /// Step factor applied when the variance estimate is noisy.
    pub damping: f64,
    /// Relative standard error of `Var(E)` above which steps are damped.
    pub noise_threshold: f64,
    /// Variances below this make the temperature unidentifiable.
    pub var_floor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 5e-3,
            n_device_samples: 4096,
            n_chains: 64,
            n_sweeps: 200,
            n_burn: 50,
            damping: 0.5,
            noise_threshold: 0.1,
            var_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationStep {
    pub iter: usize,
    pub beta: f64,
    pub mean_e_model: f64,
    pub mean_e_device: f64,
    pub var_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    /// Iterates `beta_0, beta_1, ...`, including the final one.
    pub trajectory: Vec<f64>,
    pub steps: Vec<CalibrationStep>,
    pub converged: bool,
}

/// Model energy statistics at inverse temperature `beta`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyMoments {
    pub mean: f64,
    pub var: f64,
    /// Relative standard error of `var`, from chain-to-chain spread.
    pub var_rel_err: f64,
}

/// Mean and variance of the energy under Gibbs chains at `beta`. Chains
/// start uniform, discard `n_burn` sweeps and record every later sweep.
pub fn energy_moments<R: RngCore + ?Sized>(
    p: &RbmParams,
    condition_bits: &[u8],
    beta: f64,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<EnergyMoments> {
    let mut chains = sample_chains(
        p,
        cfg.n_chains,
        0,
        beta,
        condition_bits,
        ChainInit::Zeros,
        rng,
    )?;
    let base = rng::fork(rng);
    let recorded = cfg.n_sweeps.saturating_sub(cfg.n_burn).max(1);
    let per_chain: Vec<(f64, f64)> = chains
        .par_iter_mut()
        .enumerate()
        .map(|(c, s)| {
            let mut r = rng::stream(base, c as u64);
            s.randomize_free(&mut r);
            for _ in 0..cfg.n_burn {
                sweep(p, s, beta, 1.0, &mut r);
            }
            let (mut m1, mut m2) = (0.0, 0.0);
            for _ in 0..recorded {
                sweep(p, s, beta, 1.0, &mut r);
                let e = p.energy(&s.z);
                m1 += e;
                m2 += e * e;
            }
            (m1 / recorded as f64, m2 / recorded as f64)
        })
        .collect();
    let n = per_chain.len() as f64;
    let mean = per_chain.iter().map(|c| c.0).sum::<f64>() / n;
    let second = per_chain.iter().map(|c| c.1).sum::<f64>() / n;
    let var = (second - mean * mean).max(0.0);
    let chain_vars: Vec<f64> = per_chain.iter().map(|(a, b)| b - 2.0 * a * mean + mean * mean).collect();
    let cv_mean = chain_vars.iter().sum::<f64>() / n;
    let cv_sd = (chain_vars.iter().map(|v| (v - cv_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let var_rel_err = if var > 0.0 { cv_sd / n.sqrt() / var } else { f64::INFINITY };
    Ok(EnergyMoments {
        mean,
        var,
        var_rel_err,
    })
}

/// Fixed-point estimate of the device's effective inverse temperature.
///
/// Each step moves by `(<E>_beta - E_device) / Var_beta(E)`, multiplied by
/// `damping` when the variance estimate is noisy, and limited to a factor of
/// two in either direction so the iterate stays positive.
pub fn estimate_beta<R: RngCore + ?Sized>(
    p: &RbmParams,
    sampler: &mut dyn BlackBoxSampler,
    condition_bits: &[u8],
    beta_init: f64,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<BetaEstimate> {
    if !(beta_init > 0.0 && beta_init.is_finite()) {
        return Err(Error::Config(format!("beta_init must be > 0, got {beta_init}")));
    }
    let draws = sampler.draw(cfg.n_device_samples, condition_bits)?;
    if draws.is_empty() {
        return Err(Error::Calibration("device returned no samples".into()));
    }
    let mean_e_device = draws.iter().map(|s| p.energy(&s.z)).sum::<f64>() / draws.len() as f64;

    let mut beta = beta_init;
    let mut trajectory = vec![beta];
    let mut steps = Vec::new();
    for iter in 0..cfg.max_iters {
        let m = energy_moments(p, condition_bits, beta, cfg, rng)?;
        if m.var < cfg.var_floor {
            return Err(Error::Calibration(format!(
                "energy variance {:.3e} below floor at beta {beta}; temperature unidentifiable",
                m.var
            )));
        }
        steps.push(CalibrationStep {
            iter,
            beta,
            mean_e_model: m.mean,
            mean_e_device,
            var_e: m.var,
        });
        let mut step = (m.mean - mean_e_device) / m.var;
        if m.var_rel_err > cfg.noise_threshold {
            step *= cfg.damping;
        }
        let next = (beta + step).clamp(0.5 * beta, 2.0 * beta);
        trajectory.push(next);
        let done = (next - beta).abs() < cfg.tol;
        beta = next;
        if done {
            return Ok(BetaEstimate {
                beta_hat: beta,
                trajectory,
                steps,
                converged: true,
            });
        }
    }
    Ok(BetaEstimate {
        beta_hat: beta,
        trajectory,
        steps,
        converged: false,
    })
}

/// Divides every parameter by `beta_hat`, so a device running at `beta_hat`
/// samples the original model at unit inverse temperature.
pub fn rescale_for_device(p: &RbmParams, beta_hat: f64) -> Result<RbmParams> {
    if !(beta_hat > 0.0 && beta_hat.is_finite()) {
        return Err(Error::Calibration(format!("beta_hat must be > 0, got {beta_hat}")));
    }
    if beta_hat == 1.0 {
        return Ok(p.clone());
    }
    Ok(p.scaled(1.0 / beta_hat))
}

/// Histogram of model energies over `states`, with equal-width bins spanning
/// the observed range.
pub fn energy_histogram(p: &RbmParams, states: &[LatentState], n_bins: usize) -> Result<Histogram> {
    if states.is_empty() {
        return Err(Error::Data("energy histogram of an empty state set".into()));
    }
    let energies: Vec<f64> = states.iter().map(|s| p.energy(&s.z)).collect();
    Histogram::from_values(&energies, n_bins)
}

/// Tab-separated calibration trajectory.
pub fn write_calibration_report(est: &BetaEstimate, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("iter\tbeta\tmean_E_model\tmean_E_device\tvar_E\n");
    for st in &est.steps {
        let _ = writeln!(
            s,
            "{}\t{:.10}\t{:.10}\t{:.10}\t{:.10}",
            st.iter, st.beta, st.mean_e_model, st.mean_e_device, st.var_e
        );
    }
    let _ = writeln!(s, "# beta_hat\t{:.10}\tconverged\t{}", est.beta_hat, est.converged);
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::rbm::exact_distribution_at;
    use crate::topology::build_quadripartite;

    fn rbm(seed: u64) -> RbmParams {
        let topo = Arc::new(build_quadripartite([2, 4, 4, 4], 3, 2, seed).unwrap());
        let mut r = rng::seeded(seed);
        let n = Normal::new(0.0, 0.7).unwrap();
        let bias = (0..topo.n_nodes()).map(|_| n.sample(&mut r)).collect();
        let weight = (0..topo.n_edges()).map(|_| n.sample(&mut r)).collect();
        RbmParams::from_parts(topo, bias, weight).unwrap()
    }

    fn exact_moments(p: &RbmParams, cond: &[u8], beta: f64) -> (f64, f64) {
        let d = exact_distribution_at(p, cond, beta).unwrap();
        let topo = p.topology();
        let mut s = LatentState::with_condition(topo, cond).unwrap();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (k, &pk) in d.probs.iter().enumerate() {
            for (b, &i) in d.free.iter().enumerate() {
                s.z[i] = ((k >> b) & 1) as f64;
            }
            let e = p.energy(&s.z);
            m1 += pk * e;
            m2 += pk * e * e;
        }
        (m1, m2 - m1 * m1)
    }

    #[test]
    fn moments_match_enumeration() {
        let p = rbm(3);
        let cond = [1, 0];
        let cfg = CalibrationConfig {
            n_chains: 64,
            n_sweeps: 1200,
            ..CalibrationConfig::default()
        };
        for beta in [0.5, 1.5] {
            let m = energy_moments(&p, &cond, beta, &cfg, &mut rng::seeded(1)).unwrap();
            let (mean, var) = exact_moments(&p, &cond, beta);
            assert!((m.mean - mean).abs() < 0.03 * var.sqrt() + 0.02, "{} vs {mean}", m.mean);
            assert!((m.var / var - 1.0).abs() < 0.08, "{} vs {var}", m.var);
        }
    }

    #[test]
    fn recovers_hidden_temperature() {
        let p = rbm(5);
        let cond = [0, 1];
        let device = SimulatedDevice {
            beta_star: 1.6,
            n_burn_sweeps: 200,
        };
        let mut sampler = device.program(&p, 9);
        let est = estimate_beta(&p, sampler.as_mut(), &cond, 1.0, &CalibrationConfig::default(), &mut rng::seeded(2))
            .unwrap();
        assert!(est.converged);
        assert!((est.beta_hat / 1.6 - 1.0).abs() < 0.05, "{}", est.beta_hat);
        assert_eq!(est.trajectory.len(), est.steps.len() + 1);
        assert_eq!(est.trajectory[0], 1.0);
    }

    #[test]
    fn rescaled_model_at_beta_hat_is_original_at_one() {
        let p = rbm(7);
        let q = rescale_for_device(&p, 2.5).unwrap();
        let cond = [1, 1];
        let a = exact_distribution_at(&p, &cond, 1.0).unwrap();
        let b = exact_distribution_at(&q, &cond, 2.5).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(rescale_for_device(&p, 0.0), Err(Error::Calibration(_))));
        assert!(matches!(rescale_for_device(&p, f64::NAN), Err(Error::Calibration(_))));
    }

    #[test]
    fn flat_energy_is_unidentifiable() {
        let topo = Arc::new(build_quadripartite([1, 2, 2, 2], 2, 2, 0).unwrap());
        let p = RbmParams::zeros(topo);
        let mut sampler = SimulatedDevice {
            beta_star: 1.0,
            n_burn_sweeps: 5,
        }
        .program(&p, 0);
        let r = estimate_beta(&p, sampler.as_mut(), &[0], 1.0, &CalibrationConfig::default(), &mut rng::seeded(0));
        assert!(matches!(r, Err(Error::Calibration(_))));
        assert!(matches!(
            estimate_beta(&p, sampler.as_mut(), &[0], -1.0, &CalibrationConfig::default(), &mut rng::seeded(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_lists_every_step() {
        let p = rbm(2);
        let mut sampler = SimulatedDevice {
            beta_star: 0.8,
            n_burn_sweeps: 100,
        }
        .program(&p, 1);
        let est = estimate_beta(&p, sampler.as_mut(), &[0, 0], 1.0, &CalibrationConfig::default(), &mut rng::seeded(3))
            .unwrap();
        let path = std::env::temp_dir().join(format!("calovae-cal-{}.tsv", std::process::id()));
        write_calibration_report(&est, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), est.steps.len() + 1);
        assert!(text.contains("# beta_hat"));
        let h = energy_histogram(&p, &sampler.draw(500, &[0, 0]).unwrap(), 20).unwrap();
        assert_eq!(h.total(), 500);
    }
}
