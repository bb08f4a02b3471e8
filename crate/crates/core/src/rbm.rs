//! Four-partite conditioned RBM over a [`Topology`].
//!
//! Energy: `E(z) = -sum_i b_i z_i - sum_{(i,j) in edges} w_ij z_i z_j`.
//! Partition 0 is clamped to the condition code during sampling.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::sigmoid;
use crate::error::{shape, Error, Result};
use crate::rng;
use crate::topology::{Topology, CONDITION};

/// Free-node limit for exact enumeration.
pub const MAX_EXACT_FREE: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    topology: Arc<Topology>,
    pub bias: Vec<f64>,
    /// One weight per topology edge, in [`Topology::edges`] order.
    pub weight: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(topology: Arc<Topology>) -> Self {
        let n = topology.n_nodes();
        let m = topology.n_edges();
        Self {
            topology,
            bias: vec![0.0; n],
            weight: vec![0.0; m],
        }
    }

    /// Zero biases and `N(0, scale^2)` edge weights.
    pub fn init<R: Rng + ?Sized>(topology: Arc<Topology>, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(topology);
        let normal = Normal::new(0.0, scale).expect("finite scale");
        for w in &mut p.weight {
            *w = normal.sample(rng);
        }
        p
    }

    pub fn from_parts(topology: Arc<Topology>, bias: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        if bias.len() != topology.n_nodes() {
            return Err(shape("rbm biases", topology.n_nodes(), bias.len()));
        }
        if weight.len() != topology.n_edges() {
            return Err(shape("rbm weights", topology.n_edges(), weight.len()));
        }
        if bias.iter().chain(&weight).any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite rbm parameter".into()));
        }
        Ok(Self {
            topology,
            bias,
            weight,
        })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn n_nodes(&self) -> usize {
        self.bias.len()
    }

    /// Same topology, every parameter multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            topology: self.topology.clone(),
            bias: self.bias.iter().map(|b| b * factor).collect(),
            weight: self.weight.iter().map(|w| w * factor).collect(),
        }
    }

    /// Local field `b_i + weight_scale * sum_j w_ij z_j`.
    #[inline]
    pub fn field(&self, node: usize, z: &[f64], weight_scale: f64) -> f64 {
        let coupling: f64 = self
            .topology
            .neighbors(node)
            .iter()
            .map(|&(j, e)| self.weight[e] * z[j])
            .sum();
        self.bias[node] + weight_scale * coupling
    }

    /// Coupling part `sum_edges w_ij z_i z_j`.
    pub fn coupling_energy(&self, z: &[f64]) -> f64 {
        self.topology
            .edges()
            .iter()
            .zip(&self.weight)
            .map(|(&(i, j), w)| w * z[i] * z[j])
            .sum()
    }

    /// Bias part `sum_i b_i z_i`.
    pub fn bias_energy(&self, z: &[f64]) -> f64 {
        self.bias.iter().zip(z).map(|(b, x)| b * x).sum()
    }

    pub fn energy(&self, z: &[f64]) -> f64 {
        -self.bias_energy(z) - self.coupling_energy(z)
    }

    pub fn write_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(RBM_MAGIC);
        buf.extend_from_slice(&RBM_VERSION.to_le_bytes());
        buf.extend_from_slice(self.topology.hash().as_bytes());
        buf.extend_from_slice(&(self.bias.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.weight.len() as u64).to_le_bytes());
        for x in self.bias.iter().chain(&self.weight) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// Reads parameters written by [`RbmParams::write_checkpoint`]; the stored
    /// topology hash must match `topology`.
    pub fn read_checkpoint(path: impl AsRef<Path>, topology: Arc<Topology>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let fmt = |m: &str| Error::Format(format!("rbm checkpoint: {m}"));
        if bytes.len() < 44 || &bytes[..8] != RBM_MAGIC {
            return Err(fmt("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != RBM_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let hash = std::str::from_utf8(&bytes[12..28]).map_err(|_| fmt("bad hash"))?;
        if hash != topology.hash() {
            return Err(Error::Config(format!(
                "rbm checkpoint topology {hash} does not match {}",
                topology.hash()
            )));
        }
        let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        let m = u64::from_le_bytes(bytes[36..44].try_into().unwrap()) as usize;
        let payload = &bytes[44..];
        if payload.len() != 8 * (n + m) {
            return Err(fmt("payload length mismatch"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(topology, values[..n].to_vec(), values[n..].to_vec())
    }
}

const RBM_MAGIC: &[u8; 8] = b"CALORBM\0";
const RBM_VERSION: u32 = 1;

/// Assignment to every latent node. Clamped nodes are never resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub clamp_mask: Vec<bool>,
}

impl LatentState {
    /// All free nodes zero; condition nodes set to `condition` and clamped.
    pub fn with_condition(topology: &Topology, condition: &[u8]) -> Result<Self> {
        let cond_nodes = topology.members(CONDITION as usize);
        if condition.len() != cond_nodes.len() {
            return Err(shape("condition bits", cond_nodes.len(), condition.len()));
        }
        let mut z = vec![0.0; topology.n_nodes()];
        let mut clamp_mask = vec![false; topology.n_nodes()];
        for (&node, &bit) in cond_nodes.iter().zip(condition) {
            z[node] = bit as f64;
            clamp_mask[node] = true;
        }
        Ok(Self { z, clamp_mask })
    }

    /// Condition bits read back from partition 0.
    pub fn condition(&self, topology: &Topology) -> Vec<u8> {
        topology
            .members(CONDITION as usize)
            .iter()
            .map(|&i| (self.z[i] > 0.5) as u8)
            .collect()
    }

    /// Overwrites the condition partition with `condition`.
    pub fn set_condition(&mut self, topology: &Topology, condition: &[u8]) -> Result<()> {
        let cond_nodes = topology.members(CONDITION as usize);
        if condition.len() != cond_nodes.len() {
            return Err(shape("condition bits", cond_nodes.len(), condition.len()));
        }
        for (&node, &bit) in cond_nodes.iter().zip(condition) {
            self.z[node] = bit as f64;
            self.clamp_mask[node] = true;
        }
        Ok(())
    }

    pub fn randomize_free<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (z, &c) in self.z.iter_mut().zip(&self.clamp_mask) {
            if !c {
                *z = if rng.gen::<bool>() { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn is_binary(&self) -> bool {
        self.z.iter().all(|&x| x == 0.0 || x == 1.0)
    }
}

pub fn energy(p: &RbmParams, s: &LatentState) -> f64 {
    p.energy(&s.z)
}

/// One block sweep over partitions 1, 2, 3 at inverse temperature `beta`,
/// with couplings scaled by `weight_scale`. Each unclamped node is set to 1
/// with probability `sigmoid(beta * (b_i + weight_scale * sum_j w_ij z_j))`.
///
/// Returns the number of coupling terms evaluated.
pub fn sweep<R: Rng + ?Sized>(
    p: &RbmParams,
    s: &mut LatentState,
    beta: f64,
    weight_scale: f64,
    rng: &mut R,
) -> u64 {
    let topo = &p.topology;
    let mut visits = 0u64;
    for k in 1..crate::topology::N_PARTITIONS {
        // Nodes of one partition share no edges, so updating them in place
        // in any order is the same as a simultaneous block update.
        for &i in topo.members(k) {
            if s.clamp_mask[i] {
                continue;
            }
            visits += topo.degree(i) as u64;
            let prob = sigmoid(beta * p.field(i, &s.z, weight_scale));
            s.z[i] = if rng.gen::<f64>() < prob { 1.0 } else { 0.0 };
        }
    }
    visits
}

pub fn gibbs_sweep<R: Rng + ?Sized>(p: &RbmParams, s: &mut LatentState, beta: f64, rng: &mut R) {
    sweep(p, s, beta, 1.0, rng);
}

/// Starting point for [`sample_chains`].
#[derive(Debug, Clone, Copy)]
pub enum ChainInit<'a> {
    /// Free nodes uniform on {0, 1}.
    Random,
    Zeros,
    States(&'a [LatentState]),
}

/// Advances every state by `n_sweeps` in parallel. Chain `c` uses its own
/// generator stream, so results are independent of thread count.
pub fn advance_chains<R: RngCore + ?Sized>(
    p: &RbmParams,
    states: &mut [LatentState],
    n_sweeps: usize,
    beta: f64,
    rng: &mut R,
) {
    let base = rng::fork(rng);
    states.par_iter_mut().enumerate().for_each(|(c, s)| {
        let mut r = rng::stream(base, c as u64);
        for _ in 0..n_sweeps {
            sweep(p, s, beta, 1.0, &mut r);
        }
    });
}

/// `n_chains` independent chains clamped to `condition_bits`, each advanced
/// `n_sweeps` block sweeps at `beta`.
pub fn sample_chains<R: RngCore + ?Sized>(
    p: &RbmParams,
    n_chains: usize,
    n_sweeps: usize,
    beta: f64,
    condition_bits: &[u8],
    init: ChainInit<'_>,
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    let conditions = vec![condition_bits.to_vec(); n_chains];
    sample_conditioned(p, &conditions, n_sweeps, beta, init, rng)
}

/// Like [`sample_chains`] but with one condition per chain.
pub fn sample_conditioned<R: RngCore + ?Sized>(
    p: &RbmParams,
    conditions: &[Vec<u8>],
    n_sweeps: usize,
    beta: f64,
    init: ChainInit<'_>,
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    let topo = p.topology.as_ref();
    let mut states = match init {
        ChainInit::States(given) => {
            if given.len() != conditions.len() {
                return Err(shape("initial states", conditions.len(), given.len()));
            }
            let mut out = given.to_vec();
            for (s, c) in out.iter_mut().zip(conditions) {
                if s.z.len() != topo.n_nodes() {
                    return Err(shape("initial state", topo.n_nodes(), s.z.len()));
                }
                s.set_condition(topo, c)?;
            }
            out
        }
        ChainInit::Zeros | ChainInit::Random => conditions
            .iter()
            .map(|c| LatentState::with_condition(topo, c))
            .collect::<Result<Vec<_>>>()?,
    };
    if n_sweeps == 0 {
        return Ok(states);
    }
    let init_seed = rng::fork(rng);
    if matches!(init, ChainInit::Random) {
        states.par_iter_mut().enumerate().for_each(|(c, s)| {
            s.randomize_free(&mut rng::stream(init_seed, c as u64));
        });
    }
    advance_chains(p, &mut states, n_sweeps, beta, rng);
    Ok(states)
}

/// Exact conditional Boltzmann distribution over the free nodes.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    /// Free node ids; bit `k` of a state index is node `free[k]`.
    pub free: Vec<usize>,
    pub probs: Vec<f64>,
    pub log_z: f64,
}

impl ExactDistribution {
    /// Index of the free-node configuration in `z`.
    pub fn index_of(&self, z: &[f64]) -> usize {
        self.free
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &i)| acc | (((z[i] > 0.5) as usize) << k))
    }

    /// Total-variation distance to the empirical distribution of `states`.
    pub fn tv_distance(&self, states: &[LatentState]) -> f64 {
        let mut counts = vec![0f64; self.probs.len()];
        for s in states {
            counts[self.index_of(&s.z)] += 1.0;
        }
        let n = states.len() as f64;
        0.5 * counts
            .iter()
            .zip(&self.probs)
            .map(|(c, p)| (c / n - p).abs())
            .sum::<f64>()
    }

    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.free.len()];
        for (idx, p) in self.probs.iter().enumerate() {
            for (k, mk) in m.iter_mut().enumerate() {
                if idx >> k & 1 == 1 {
                    *mk += p;
                }
            }
        }
        m
    }

    /// `KL(self || other)`; both must enumerate the same free nodes.
    pub fn kl_to(&self, other: &ExactDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q).ln())
            .sum()
    }

    /// Draws `n` independent states from the table.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        topology: &Topology,
        condition: &[u8],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<LatentState>> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u = rng.gen::<f64>() * acc;
                let idx = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
                let mut s = LatentState::with_condition(topology, condition)?;
                for (k, &i) in self.free.iter().enumerate() {
                    s.z[i] = (idx >> k & 1) as f64;
                }
                Ok(s)
            })
            .collect()
    }
}

/// Enumerates all free-node states at `beta = 1`.
pub fn exact_distribution(p: &RbmParams, condition_bits: &[u8]) -> Result<ExactDistribution> {
    exact_distribution_at(p, condition_bits, 1.0)
}

pub fn exact_distribution_at(
    p: &RbmParams,
    condition_bits: &[u8],
    beta: f64,
) -> Result<ExactDistribution> {
    let topo = p.topology.as_ref();
    let free = topo.free_nodes();
    if free.len() > MAX_EXACT_FREE {
        return Err(Error::Capacity {
            free: free.len(),
            limit: MAX_EXACT_FREE,
        });
    }
    let base = LatentState::with_condition(topo, condition_bits)?;
    let n_states = 1usize << free.len();
    let log_weights: Vec<f64> = (0..n_states)
        .into_par_iter()
        .map_init(
            || base.z.clone(),
            |z, idx| {
                for (k, &i) in free.iter().enumerate() {
                    z[i] = (idx >> k & 1) as f64;
                }
                -beta * p.energy(z)
            },
        )
        .collect();
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_weights.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let probs = log_weights.iter().map(|l| (l - log_z).exp()).collect();
    Ok(ExactDistribution { free, probs, log_z })
}

/// Contrastive-divergence step: moves parameters along the difference
/// between positive- and negative-phase moments. Pairs must share their
/// condition bits.
pub fn cd_update(
    p: &RbmParams,
    positive: &[LatentState],
    negative: &[LatentState],
    learning_rate: f64,
) -> Result<RbmParams> {
    let mut out = p.clone();
    apply_cd(&mut out, positive, negative, learning_rate)?;
    Ok(out)
}

pub fn apply_cd(
    p: &mut RbmParams,
    positive: &[LatentState],
    negative: &[LatentState],
    learning_rate: f64,
) -> Result<()> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Data("contrastive divergence needs non-empty state sets".into()));
    }
    if positive.len() != negative.len() {
        return Err(shape("negative states", positive.len(), negative.len()));
    }
    let topo = p.topology.clone();
    let cond = topo.members(CONDITION as usize);
    for (k, (a, b)) in positive.iter().zip(negative).enumerate() {
        if cond.iter().any(|&i| a.z[i] != b.z[i]) {
            return Err(Error::Data(format!("condition bits differ in pair {k}")));
        }
    }
    let (pos_b, pos_w) = moments(&topo, positive);
    let (neg_b, neg_w) = moments(&topo, negative);
    for ((b, hp), hn) in p.bias.iter_mut().zip(&pos_b).zip(&neg_b) {
        *b += learning_rate * (hp - hn);
    }
    for ((w, hp), hn) in p.weight.iter_mut().zip(&pos_w).zip(&neg_w) {
        *w += learning_rate * (hp - hn);
    }
    Ok(())
}

/// Mean `z_i` per node and mean `z_i z_j` per edge.
pub fn moments(topo: &Topology, states: &[LatentState]) -> (Vec<f64>, Vec<f64>) {
    let mut mb = vec![0.0; topo.n_nodes()];
    let mut mw = vec![0.0; topo.n_edges()];
    for s in states {
        for (m, z) in mb.iter_mut().zip(&s.z) {
            *m += z;
        }
        for (m, &(i, j)) in mw.iter_mut().zip(topo.edges()) {
            *m += s.z[i] * s.z[j];
        }
    }
    let n = states.len() as f64;
    mb.iter_mut().chain(mw.iter_mut()).for_each(|m| *m /= n);
    (mb, mw)
}

/// Contrastive-divergence training loop state.
#[derive(Debug, Clone)]
pub struct CdTrainer {
    pub learning_rate: f64,
    pub sweeps: usize,
    /// Keep negative chains between updates (persistent CD). When false the
    /// negative chains restart from the positive states (CD-k).
    pub persistent: bool,
    chains: Vec<LatentState>,
}

impl CdTrainer {
    pub fn new(learning_rate: f64, sweeps: usize, persistent: bool) -> Self {
        Self {
            learning_rate,
            sweeps,
            persistent,
            chains: Vec::new(),
        }
    }

    pub fn chains(&self) -> &[LatentState] {
        &self.chains
    }

    /// Runs the negative phase for `positive` and applies one update.
    pub fn step<R: RngCore + ?Sized>(
        &mut self,
        p: &mut RbmParams,
        positive: &[LatentState],
        rng: &mut R,
    ) -> Result<()> {
        let topo = p.topology.clone();
        if !self.persistent || self.chains.len() != positive.len() {
            self.chains = positive.to_vec();
            if self.persistent {
                let seed = rng::fork(rng);
                for (c, s) in self.chains.iter_mut().enumerate() {
                    s.randomize_free(&mut rng::stream(seed, c as u64));
                }
            }
        }
        for (chain, pos) in self.chains.iter_mut().zip(positive) {
            chain.set_condition(&topo, &pos.condition(&topo))?;
        }
        advance_chains(p, &mut self.chains, self.sweeps, 1.0, rng);
        apply_cd(p, positive, &self.chains, self.learning_rate)
    }
}

/// Uniform random binary states on the free nodes, for tests and seeding.
pub fn random_states<R: Rng + ?Sized>(
    topology: &Topology,
    condition: &[u8],
    n: usize,
    rng: &mut R,
) -> Result<Vec<LatentState>> {
    (0..n)
        .map(|_| {
            let mut s = LatentState::with_condition(topology, condition)?;
            s.randomize_free(rng);
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_quadripartite;

    fn random_rbm(sizes: [usize; 4], seed: u64, scale: f64) -> RbmParams {
        let topo = Arc::new(build_quadripartite(sizes, 2, 2, seed).unwrap());
        let mut rng = rng::seeded(seed + 100);
        let mut p = RbmParams::init(topo, scale, &mut rng);
        for b in &mut p.bias {
            *b = rng.gen_range(-scale..scale);
        }
        p
    }

    #[test]
    fn energy_closed_forms() {
        let p = random_rbm([1, 2, 2, 1], 1, 1.0);
        let s = LatentState::with_condition(p.topology(), &[0]).unwrap();
        assert_eq!(energy(&p, &s), 0.0);

        let topo = Arc::new(build_quadripartite([1, 1, 1, 1], 1, 1, 0).unwrap());
        let mut p = RbmParams::zeros(topo.clone());
        p.bias[2] = 0.3;
        p.weight.iter_mut().for_each(|w| *w = 5.0);
        let mut s = LatentState::with_condition(&topo, &[0]).unwrap();
        s.z[2] = 1.0;
        assert!((energy(&p, &s) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn energy_matches_term_enumeration() {
        let p = random_rbm([1, 2, 2, 1], 4, 1.0);
        let topo = p.topology().clone();
        let mut rng = rng::seeded(3);
        for _ in 0..20 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(0..2) as f64).collect();
            // enumerate all node pairs and look up weights by pair
            let mut e = 0.0;
            for i in 0..6 {
                if z[i] == 1.0 {
                    e -= p.bias[i];
                }
                for j in (i + 1)..6 {
                    if let Some(k) = topo.edge_index(i, j) {
                        if z[i] == 1.0 && z[j] == 1.0 {
                            e -= p.weight[k];
                        }
                    }
                }
            }
            assert!((p.energy(&z) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_is_relabeling_invariant() {
        let p = random_rbm([2, 3, 3, 3], 5, 1.0);
        let topo = p.topology();
        let n = topo.n_nodes();
        // reverse node ids within the free partitions; labels are unchanged
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 1..4 {
            let m = topo.members(k);
            for (a, b) in m.iter().zip(m.iter().rev()) {
                perm[*a] = *b;
            }
        }
        let edges: Vec<(usize, usize)> = topo.edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let t2 = Arc::new(Topology::new(n, edges.clone(), topo.partition().to_vec()).unwrap());
        let mut p2 = RbmParams::zeros(t2.clone());
        for i in 0..n {
            p2.bias[perm[i]] = p.bias[i];
        }
        for (e, &(i, j)) in edges.iter().enumerate() {
            p2.weight[t2.edge_index(i, j).unwrap()] = p.weight[e];
        }
        let mut rng = rng::seeded(0);
        for _ in 0..20 {
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
            let mut z2 = vec![0.0; n];
            for i in 0..n {
                z2[perm[i]] = z[i];
            }
            assert!((p.energy(&z) - p2.energy(&z2)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_closed_forms() {
        let topo = Arc::new(build_quadripartite([1, 1, 1, 1], 1, 1, 0).unwrap());
        let p = RbmParams::zeros(topo.clone());
        let d = exact_distribution(&p, &[1]).unwrap();
        assert!(d.probs.iter().all(|x| (x - 0.125).abs() < 1e-15));
        assert!((d.log_z - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut p = RbmParams::zeros(topo);
        p.bias[1] = 1.0;
        let d = exact_distribution(&p, &[0]).unwrap();
        assert!((d.marginals()[0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn exact_rejects_large_instances() {
        let topo = Arc::new(build_quadripartite([1, 9, 8, 8], 1, 1, 0).unwrap());
        let p = RbmParams::zeros(topo);
        assert!(matches!(exact_distribution(&p, &[0]), Err(Error::Capacity { free: 25, .. })));
    }

    #[test]
    fn zero_model_sweeps_are_fair_coins() {
        let p = RbmParams::zeros(Arc::new(build_quadripartite([1, 2, 2, 2], 1, 1, 0).unwrap()));
        let mut s = LatentState::with_condition(p.topology(), &[1]).unwrap();
        let mut rng = rng::seeded(1);
        let mut sum = vec![0.0; s.z.len()];
        for _ in 0..10_000 {
            gibbs_sweep(&p, &mut s, 1.0, &mut rng);
            sum.iter_mut().zip(&s.z).for_each(|(a, z)| *a += z);
        }
        for &i in &p.topology().free_nodes() {
            assert!((sum[i] / 10_000.0 - 0.5).abs() < 0.02);
        }
        assert_eq!(s.z[0], 1.0);
    }

    #[test]
    fn isolated_node_mean() {
        let topo = Arc::new(Topology::new(2, vec![], vec![0, 1]).unwrap());
        let mut p = RbmParams::zeros(topo);
        p.bias[1] = 2.0;
        let mut s = LatentState::with_condition(p.topology(), &[0]).unwrap();
        let mut rng = rng::seeded(2);
        let mut sum = 0.0;
        for _ in 0..40_000 {
            gibbs_sweep(&p, &mut s, 1.0, &mut rng);
            sum += s.z[1];
        }
        assert!((sum / 40_000.0 - 0.8807970779778823).abs() < 0.01);
    }

    #[test]
    fn clamped_bits_survive() {
        let p = random_rbm([3, 4, 4, 4], 2, 3.0);
        let mut rng = rng::seeded(4);
        let out = sample_chains(&p, 8, 300, 1.0, &[1, 0, 1], ChainInit::Random, &mut rng).unwrap();
        for s in &out {
            assert_eq!(s.condition(p.topology()), vec![1, 0, 1]);
        }
        assert!(matches!(
            sample_chains(&p, 1, 1, 1.0, &[1, 0], ChainInit::Random, &mut rng),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_sweeps_return_init() {
        let p = random_rbm([1, 3, 3, 3], 7, 1.0);
        let mut rng = rng::seeded(8);
        let init = random_states(p.topology(), &[1], 5, &mut rng).unwrap();
        let out = sample_chains(&p, 5, 0, 1.0, &[1], ChainInit::States(&init), &mut rng).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn chains_are_reproducible() {
        let p = random_rbm([2, 4, 4, 4], 3, 1.0);
        let run = || {
            let mut rng = rng::seeded(77);
            sample_chains(&p, 16, 50, 1.0, &[0, 1], ChainInit::Random, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sweep_cost_counts_edges() {
        let p = random_rbm([3, 6, 6, 6], 1, 1.0);
        let topo = p.topology();
        let mut s = LatentState::with_condition(topo, &[0, 0, 0]).unwrap();
        let expected: usize = topo.free_nodes().iter().map(|&i| topo.degree(i)).sum();
        let visits = sweep(&p, &mut s, 1.0, 1.0, &mut rng::seeded(0));
        assert_eq!(visits as usize, expected);
    }

    #[test]
    fn cd_closed_forms() {
        let p = random_rbm([1, 2, 2, 2], 1, 0.5);
        let topo = p.topology().clone();
        let mut rng = rng::seeded(9);
        let pos = random_states(&topo, &[1], 10, &mut rng).unwrap();
        assert_eq!(cd_update(&p, &pos, &pos, 0.1).unwrap(), p);

        let ones: Vec<LatentState> = (0..4)
            .map(|_| {
                let mut s = LatentState::with_condition(&topo, &[1]).unwrap();
                s.z.iter_mut().for_each(|z| *z = 1.0);
                s
            })
            .collect();
        let zeros = vec![LatentState::with_condition(&topo, &[1]).unwrap(); 4];
        let q = cd_update(&p, &ones, &zeros, 0.25).unwrap();
        for i in topo.free_nodes() {
            assert!((q.bias[i] - p.bias[i] - 0.25).abs() < 1e-15);
        }
        assert!(cd_update(&p, &[], &zeros, 0.1).is_err());
        let other = vec![LatentState::with_condition(&topo, &[0]).unwrap(); 4];
        assert!(matches!(cd_update(&p, &zeros, &other, 0.1), Err(Error::Data(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = random_rbm([2, 3, 3, 3], 5, 1.0);
        let dir = std::env::temp_dir().join(format!("calovae-rbm-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rbm.bin");
        p.write_checkpoint(&path).unwrap();
        let back = RbmParams::read_checkpoint(&path, p.topology().clone()).unwrap();
        assert_eq!(back, p);
        let other = Arc::new(build_quadripartite([2, 3, 3, 4], 2, 2, 5).unwrap());
        assert!(RbmParams::read_checkpoint(&path, other).is_err());
    }
}
