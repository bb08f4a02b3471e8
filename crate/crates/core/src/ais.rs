//! Annealed importance sampling (AIS) and its reverse (RAIS) for the
//! condition-dependent log partition function of an [`RbmParams`].
//!
//! The path anneals only the couplings: the intermediate distribution at
//! `beta_k` has full biases and couplings scaled by `beta_k`. At `beta = 0`
//! the free nodes are independent Bernoulli variables, whose normalizer is
//! known in closed form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::data::{code_to_index, sigmoid};
use crate::error::{shape, Error, Result};
use crate::rbm::{sweep, LatentState, RbmParams};
use crate::rng;
use crate::topology::CONDITION;

#[derive(Debug, Clone, PartialEq)]
pub struct AisConfig {
    /// Inverse temperatures `0 = beta_0 < ... < beta_K = 1`.
    pub schedule: Vec<f64>,
    pub n_chains: usize,
}

impl Default for AisConfig {
    fn default() -> Self {
        Self::linear(100, 200)
    }
}

impl AisConfig {
    /// `n_temps` equal steps from 0 to 1.
    pub fn linear(n_temps: usize, n_chains: usize) -> Self {
        let k = n_temps.max(1);
        let schedule = (0..=k)
            .map(|i| if i == k { 1.0 } else { i as f64 / k as f64 })
            .collect();
        Self { schedule, n_chains }
    }

    pub fn n_temps(&self) -> usize {
        self.schedule.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if s.len() < 2 || s[0] != 0.0 || *s.last().unwrap() != 1.0 {
            return Err(Error::Config("AIS schedule must start at 0 and end at 1".into()));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("AIS schedule must be strictly increasing".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("AIS needs at least one chain".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogZEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// `log Z` at zero coupling for the given condition.
pub fn base_log_z(p: &RbmParams, condition_bits: &[u8]) -> Result<f64> {
    let topo = p.topology();
    let cond = topo.members(CONDITION as usize);
    if cond.len() != condition_bits.len() {
        return Err(shape("condition bits", cond.len(), condition_bits.len()));
    }
    let clamped: f64 = cond
        .iter()
        .zip(condition_bits)
        .map(|(&i, &c)| p.bias[i] * c as f64)
        .sum();
    let free: f64 = topo.free_nodes().iter().map(|&i| softplus(p.bias[i])).sum();
    Ok(clamped + free)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(mean(exp(lw)))` with its jackknife standard error. Inputs are
/// sorted first, so the result does not depend on their order.
pub fn log_mean_exp_jackknife(log_weights: &[f64]) -> (f64, f64) {
    let mut lw = log_weights.to_vec();
    lw.sort_by(|a, b| a.total_cmp(b));
    let n = lw.len();
    let max = *lw.last().unwrap();
    let terms: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = terms.iter().sum();
    let estimate = max + (total / n as f64).ln();
    if n < 2 {
        return (estimate, f64::INFINITY);
    }
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let rest = total - terms[i];
            let rest = if rest > 1e-12 * total {
                rest
            } else {
                terms.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| t).sum()
            };
            max + (rest / (n - 1) as f64).ln()
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (estimate, var.sqrt())
}

/// Forward AIS from the independent-bias base to the full model. One block
/// sweep per intermediate temperature per chain.
pub fn ais_log_z<R: RngCore + ?Sized>(
    p: &RbmParams,
    condition_bits: &[u8],
    cfg: &AisConfig,
    rng: &mut R,
) -> Result<LogZEstimate> {
    cfg.validate()?;
    let log_z0 = base_log_z(p, condition_bits)?;
    let topo = p.topology();
    let free = topo.free_nodes();
    let start = LatentState::with_condition(topo, condition_bits)?;
    let base = rng::fork(rng);
    let schedule = &cfg.schedule;
    let log_weights: Vec<f64> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(base, c as u64);
            let mut s = start.clone();
            for &i in &free {
                s.z[i] = if r.gen::<f64>() < sigmoid(p.bias[i]) { 1.0 } else { 0.0 };
            }
            let mut lw = 0.0;
            let k_max = schedule.len() - 1;
            for k in 1..=k_max {
                lw += (schedule[k] - schedule[k - 1]) * p.coupling_energy(&s.z);
                if k < k_max {
                    sweep(p, &mut s, 1.0, schedule[k], &mut r);
                }
            }
            lw
        })
        .collect();
    let (lme, stderr) = log_mean_exp_jackknife(&log_weights);
    Ok(LogZEstimate {
        estimate: lme + log_z0,
        stderr,
    })
}

/// Reverse AIS: starts from (approximate) samples of the full model and
/// anneals the couplings back to zero. The estimator of `log Z` is biased
/// upwards, complementing the downward bias of [`ais_log_z`].
pub fn rais_log_z<R: RngCore + ?Sized>(
    p: &RbmParams,
    condition_bits: &[u8],
    cfg: &AisConfig,
    rng: &mut R,
    start_states: &[LatentState],
) -> Result<LogZEstimate> {
    cfg.validate()?;
    if start_states.is_empty() {
        return Err(Error::Data("reverse AIS needs start states".into()));
    }
    let log_z0 = base_log_z(p, condition_bits)?;
    let topo = p.topology();
    let base = rng::fork(rng);
    let schedule = &cfg.schedule;
    let log_v: Vec<f64> = start_states
        .par_iter()
        .enumerate()
        .map(|(c, s0)| -> Result<f64> {
            let mut r = rng::stream(base, c as u64);
            let mut s = s0.clone();
            s.set_condition(topo, condition_bits)?;
            let mut lv = 0.0;
            for k in (1..schedule.len()).rev() {
                lv += (schedule[k - 1] - schedule[k]) * p.coupling_energy(&s.z);
                if k > 1 {
                    sweep(p, &mut s, 1.0, schedule[k - 1], &mut r);
                }
            }
            Ok(lv)
        })
        .collect::<Result<_>>()?;
    let (lme, stderr) = log_mean_exp_jackknife(&log_v);
    Ok(LogZEstimate {
        estimate: log_z0 - lme,
        stderr,
    })
}

/// Long Gibbs chains from uniform starts, used as approximate target samples
/// for [`rais_log_z`].
pub fn target_states<R: RngCore + ?Sized>(
    p: &RbmParams,
    condition_bits: &[u8],
    n: usize,
    burn_sweeps: usize,
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    crate::rbm::sample_chains(
        p,
        n,
        burn_sweeps,
        1.0,
        condition_bits,
        crate::rbm::ChainInit::Random,
        rng,
    )
}

/// One line of a partition-function report.
#[derive(Debug, Clone, PartialEq)]
pub struct LogZRow {
    pub condition: Vec<u8>,
    pub estimate: f64,
    pub stderr: f64,
    pub n_temps: usize,
    pub n_chains: usize,
}

/// Insert-once store of `log Z` estimates keyed by condition code.
#[derive(Debug, Clone, Default)]
pub struct LogZCache {
    entries: BTreeMap<Vec<u8>, LogZEstimate>,
}

impl LogZCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, condition: &[u8]) -> Option<LogZEstimate> {
        self.entries.get(condition).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Estimates every condition not yet cached. Each condition gets a
    /// generator derived from its code, so the result does not depend on
    /// which other conditions are requested alongside it.
    pub fn fill(
        &mut self,
        p: &RbmParams,
        conditions: &[Vec<u8>],
        cfg: &AisConfig,
        seed: u64,
    ) -> Result<()> {
        let missing: Vec<&Vec<u8>> = conditions
            .iter()
            .filter(|c| !self.entries.contains_key(*c))
            .collect();
        let estimates: Vec<(Vec<u8>, LogZEstimate)> = missing
            .par_iter()
            .map(|c| {
                let mut r = rng::stream(seed, code_to_index(c));
                ais_log_z(p, c, cfg, &mut r).map(|e| ((*c).clone(), e))
            })
            .collect::<Result<_>>()?;
        for (c, e) in estimates {
            self.entries.entry(c).or_insert(e);
        }
        Ok(())
    }

    pub fn rows(&self, cfg: &AisConfig) -> Vec<LogZRow> {
        self.entries
            .iter()
            .map(|(c, e)| LogZRow {
                condition: c.clone(),
                estimate: e.estimate,
                stderr: e.stderr,
                n_temps: cfg.n_temps(),
                n_chains: cfg.n_chains,
            })
            .collect()
    }
}

/// Default cap on the number of distinct conditions used by
/// [`log_likelihood`].
pub const MAX_LIKELIHOOD_CONDITIONS: usize = 32;

/// Mean of `-E(z) - log Z(condition)` over `samples`.
///
/// Samples are grouped by their condition bits. When more than
/// `max_conditions` distinct codes occur, a random subset of that many codes
/// is kept and only their samples contribute.
pub fn log_likelihood<R: RngCore + ?Sized>(
    p: &RbmParams,
    samples: &[LatentState],
    cfg: &AisConfig,
    max_conditions: usize,
    cache: &mut LogZCache,
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("log-likelihood of an empty sample set".into()));
    }
    let topo = p.topology();
    let mut groups: BTreeMap<Vec<u8>, Vec<&LatentState>> = BTreeMap::new();
    for s in samples {
        if !s.is_binary() {
            return Err(Error::Data("log-likelihood requires binary states".into()));
        }
        groups.entry(s.condition(topo)).or_default().push(s);
    }
    let mut codes: Vec<Vec<u8>> = groups.keys().cloned().collect();
    let seed = rng::fork(rng);
    if codes.len() > max_conditions.max(1) {
        use rand::seq::SliceRandom;
        codes.shuffle(&mut rng::stream(seed, u64::MAX));
        codes.truncate(max_conditions.max(1));
        codes.sort();
    }
    cache.fill(p, &codes, cfg, seed)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for code in &codes {
        let log_z = cache.get(code).expect("filled").estimate;
        for s in &groups[code] {
            total += -p.energy(&s.z) - log_z;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Tab-separated report with one row per condition code.
pub fn write_log_z_report(rows: &[LogZRow], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("condition_code\testimate\tstderr\tn_temps\tn_chains\n");
    for r in rows {
        let code: String = r.condition.iter().map(|b| char::from(b'0' + b)).collect();
        let _ = writeln!(
            s,
            "{code}\t{:.10}\t{:.10}\t{}\t{}",
            r.estimate, r.stderr, r.n_temps, r.n_chains
        );
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::exact_distribution;
    use crate::topology::build_quadripartite;
    use std::sync::Arc;

    fn random_rbm(seed: u64, scale: f64) -> RbmParams {
        let topo = Arc::new(build_quadripartite([2, 4, 4, 4], 3, 2, seed).unwrap());
        let mut rng = rng::seeded(seed);
        let mut p = RbmParams::init(topo, scale, &mut rng);
        for b in &mut p.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
        p
    }

    #[test]
    fn schedule_validation() {
        assert!(AisConfig::linear(100, 10).validate().is_ok());
        assert_eq!(AisConfig::linear(1, 10).schedule, vec![0.0, 1.0]);
        let bad = AisConfig {
            schedule: vec![0.0, 0.5, 0.5, 1.0],
            n_chains: 3,
        };
        assert!(bad.validate().is_err());
        let bad = AisConfig {
            schedule: vec![0.1, 1.0],
            n_chains: 3,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_weights_are_exact() {
        let mut p = random_rbm(1, 1.0);
        p.weight.iter_mut().for_each(|w| *w = 0.0);
        let exact = exact_distribution(&p, &[1, 0]).unwrap().log_z;
        let mut rng = rng::seeded(3);
        let a = ais_log_z(&p, &[1, 0], &AisConfig::linear(10, 50), &mut rng).unwrap();
        assert!((a.estimate - exact).abs() < 1e-9);
        assert_eq!(a.stderr, 0.0);
        let starts = target_states(&p, &[1, 0], 20, 10, &mut rng).unwrap();
        let r = rais_log_z(&p, &[1, 0], &AisConfig::linear(10, 20), &mut rng, &starts).unwrap();
        assert!((r.estimate - exact).abs() < 1e-9);
    }

    #[test]
    fn jackknife_is_order_invariant() {
        let mut rng = rng::seeded(5);
        let lw: Vec<f64> = (0..101).map(|_| rng.gen_range(-3.0..2.0)).collect();
        let mut rev = lw.clone();
        rev.reverse();
        assert_eq!(log_mean_exp_jackknife(&lw), log_mean_exp_jackknife(&rev));
    }

    #[test]
    fn ais_matches_enumeration() {
        let p = random_rbm(2, 1.0);
        let exact = exact_distribution(&p, &[0, 1]).unwrap().log_z;
        let mut rng = rng::seeded(11);
        let a = ais_log_z(&p, &[0, 1], &AisConfig::linear(100, 200), &mut rng).unwrap();
        assert!((a.estimate - exact).abs() < 0.05, "{} vs {exact}", a.estimate);
    }

    #[test]
    fn single_jump_is_noisier() {
        let p = random_rbm(4, 1.0);
        let mut rng = rng::seeded(12);
        let one = ais_log_z(&p, &[1, 1], &AisConfig::linear(1, 200), &mut rng).unwrap();
        let many = ais_log_z(&p, &[1, 1], &AisConfig::linear(100, 200), &mut rng).unwrap();
        assert!(one.stderr > many.stderr);
    }

    #[test]
    fn likelihood_of_independent_model_is_exact() {
        let mut p = random_rbm(6, 1.0);
        p.weight.iter_mut().for_each(|w| *w = 0.0);
        let mut rng = rng::seeded(1);
        let samples = target_states(&p, &[1, 0], 30, 5, &mut rng).unwrap();
        let mut cache = LogZCache::new();
        let ll = log_likelihood(&p, &samples, &AisConfig::linear(5, 10), 32, &mut cache, &mut rng).unwrap();
        let log_z = base_log_z(&p, &[1, 0]).unwrap();
        let expected: f64 =
            samples.iter().map(|s| -p.energy(&s.z) - log_z).sum::<f64>() / samples.len() as f64;
        assert!((ll - expected).abs() < 1e-9);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn likelihood_caps_conditions() {
        let p = random_rbm(7, 0.5);
        let mut rng = rng::seeded(2);
        let mut samples = Vec::new();
        for c in 0..4u8 {
            samples.extend(target_states(&p, &[c >> 1 & 1, c & 1], 5, 5, &mut rng).unwrap());
        }
        let mut cache = LogZCache::new();
        log_likelihood(&p, &samples, &AisConfig::linear(5, 10), 2, &mut cache, &mut rng).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
