//! Shower observables and distribution distances.
//!
//! Per-event quantities (sparsity, total energy, granularity), mean energy
//! profiles along each axis, the physics feature vector, and Fréchet and
//! kernel (MMD) distances between feature sets. Distances use this crate's
//! own feature definition, so their absolute values are only comparable
//! with other numbers produced here.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Geometry, ShowerBatch};
use crate::error::{Error, Result};
use crate::rng;

/// Equal-width histogram with explicit edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `n_bins` bins spanning the observed range of `values`. A degenerate
    /// range is widened to one unit around the single value.
    pub fn from_values(values: &[f64], n_bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("histogram of no values".into()));
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Self::uniform(values, lo, hi, n_bins)
    }

    /// `n_bins` bins on `[lo, hi]`; values outside fall into the end bins.
    pub fn uniform(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Data(format!("bad histogram range [{lo}, {hi}]")));
        }
        let width = (hi - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins)
            .map(|i| if i == n_bins { hi } else { lo + i as f64 * width })
            .collect();
        let mut counts = vec![0u64; n_bins];
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(n_bins - 1) };
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Total-variation distance between the normalized histograms. Both must
    /// share the same edges.
    pub fn tv_distance(&self, other: &Histogram) -> Result<f64> {
        if self.edges != other.edges {
            return Err(Error::Data("histograms have different edges".into()));
        }
        let (na, nb) = (self.total() as f64, other.total() as f64);
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Data("empty histogram".into()));
        }
        Ok(0.5
            * self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| (*a as f64 / na - *b as f64 / nb).abs())
                .sum::<f64>())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histogram serializes")
    }
}

/// Fraction of voxels with energy exactly zero.
pub fn sparsity_index(event: &[f32]) -> f64 {
    if event.is_empty() {
        return 1.0;
    }
    event.iter().filter(|&&x| x == 0.0).count() as f64 / event.len() as f64
}

pub fn total_energy(event: &[f32]) -> f64 {
    event.iter().map(|&x| x as f64).sum()
}

/// Mean energy per layer, angular bin and radial bin, in MeV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub layer: Vec<f64>,
    pub angular: Vec<f64>,
    pub radial: Vec<f64>,
}

pub fn mean_profiles(batch: &ShowerBatch) -> Result<Profiles> {
    if batch.is_empty() {
        return Err(Error::Data("profiles of an empty batch".into()));
    }
    let g = batch.geometry;
    let mut out = Profiles {
        layer: vec![0.0; g.layers],
        angular: vec![0.0; g.angular],
        radial: vec![0.0; g.radial],
    };
    for ev in batch.events() {
        for l in 0..g.layers {
            for a in 0..g.angular {
                for r in 0..g.radial {
                    let x = ev[g.index(l, a, r)] as f64;
                    out.layer[l] += x;
                    out.angular[a] += x;
                    out.radial[r] += x;
                }
            }
        }
    }
    let n = batch.len() as f64;
    for v in out.layer.iter_mut().chain(&mut out.angular).chain(&mut out.radial) {
        *v /= n;
    }
    Ok(out)
}

/// Population standard deviation of `event - shifted(event)`, where the
/// shift is cyclic by `da` along the angular axis and by `dr` along the
/// radial axis, which is not periodic: voxels whose radial partner falls
/// outside the grid are left out.
pub fn granularity_with_shifts(event: &[f32], g: &Geometry, da: usize, dr: usize) -> f64 {
    let mut diffs = Vec::with_capacity(event.len());
    for l in 0..g.layers {
        for a in 0..g.angular {
            let a2 = (a + da) % g.angular;
            for r in 0..g.radial.saturating_sub(dr) {
                let x = event[g.index(l, a, r)] as f64;
                let y = event[g.index(l, a2, r + dr)] as f64;
                diffs.push(x - y);
            }
        }
    }
    if diffs.is_empty() {
        return 0.0;
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Granularity with shifts drawn uniformly from `1..A` and `1..R`.
pub fn granularity<R: Rng + ?Sized>(event: &[f32], g: &Geometry, rng: &mut R) -> Result<f64> {
    if g.angular < 2 || g.radial < 2 {
        return Err(Error::Data(format!(
            "granularity needs at least 2 angular and 2 radial bins, got {} and {}",
            g.angular, g.radial
        )));
    }
    let da = rng.gen_range(1..g.angular);
    let dr = rng.gen_range(1..g.radial);
    Ok(granularity_with_shifts(event, g, da, dr))
}

/// Granularity of every event, with event `i` using generator stream `i`.
pub fn batch_granularity(batch: &ShowerBatch, seed: u64) -> Result<Vec<f64>> {
    let g = batch.geometry;
    (0..batch.len())
        .into_par_iter()
        .map(|i| granularity(batch.event(i), &g, &mut rng::stream(seed, i as u64)))
        .collect()
}

/// Per-event physics features: layer, angular and radial energy fractions,
/// sparsity index and `ln(total + 1 MeV)`. Fractions are zero for empty
/// events.
pub fn features(event: &[f32], g: &Geometry) -> Vec<f64> {
    let mut f = vec![0.0; g.layers + g.angular + g.radial + 2];
    let total = total_energy(event);
    if total > 0.0 {
        for l in 0..g.layers {
            for a in 0..g.angular {
                for r in 0..g.radial {
                    let x = event[g.index(l, a, r)] as f64 / total;
                    f[l] += x;
                    f[g.layers + a] += x;
                    f[g.layers + g.angular + r] += x;
                }
            }
        }
    }
    let n = f.len();
    f[n - 2] = sparsity_index(event);
    f[n - 1] = (total + 1.0).ln();
    f
}

pub fn feature_matrix(batch: &ShowerBatch) -> Vec<Vec<f64>> {
    let g = batch.geometry;
    batch.events().map(|e| features(e, &g)).collect()
}

fn check_rows(rows: &[Vec<f64>], min: usize, what: &str) -> Result<usize> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.len() < min {
        return Err(Error::Data(format!("{what}: need at least {min} rows, got {}", rows.len())));
    }
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Data(format!("{what}: ragged feature rows")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Data(format!("{what}: non-finite feature")));
    }
    Ok(dim)
}

fn mean_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(dim);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= n - 1.0;
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Squared Fréchet distance between Gaussian fits of two feature sets:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`. The trace of the
/// matrix square root is taken as `tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})` with
/// negative eigenvalues clipped. The two sets are put in a canonical order
/// first, so the result is exactly symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let dim = check_rows(a, 2, "frechet_distance")?;
    check_rows(b, 2, "frechet_distance")?;
    if b[0].len() != dim || a.len() < dim + 1 || b.len() < dim + 1 {
        return Err(Error::Data(format!(
            "frechet_distance: need at least {} rows of dimension {dim} per set",
            dim + 1
        )));
    }
    let (mut ma, mut ca) = mean_cov(a);
    let (mut mb, mut cb) = mean_cov(b);
    let order = (a.len().cmp(&b.len()))
        .then_with(|| lex_cmp(ma.as_slice(), mb.as_slice()))
        .then_with(|| lex_cmp(ca.as_slice(), cb.as_slice()));
    if order == Ordering::Greater {
        std::mem::swap(&mut ma, &mut mb);
        std::mem::swap(&mut ca, &mut cb);
    }
    let diff = (&ma - &mb).norm_squared();
    let sa = sym_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let d2 = diff + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    if !d2.is_finite() {
        return Err(Error::Data("frechet_distance: covariance not computable".into()));
    }
    Ok(d2.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpdConfig {
    pub n_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KpdConfig {
    fn default() -> Self {
        Self {
            n_batches: 10,
            batch_size: 1000,
            seed: 0,
        }
    }
}

#[inline]
fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased MMD^2 with the cubic polynomial kernel.
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let within = |s: &[Vec<f64>]| -> f64 {
        let rows: Vec<f64> = (0..s.len())
            .into_par_iter()
            .map(|i| ((i + 1)..s.len()).map(|j| poly_kernel(&s[i], &s[j])).sum())
            .collect();
        let m = s.len() as f64;
        2.0 * rows.iter().sum::<f64>() / (m * (m - 1.0))
    };
    let cross: Vec<f64> = x
        .par_iter()
        .map(|xi| y.iter().map(|yj| poly_kernel(xi, yj)).sum())
        .collect();
    within(x) + within(y) - 2.0 * cross.iter().sum::<f64>() / (x.len() * y.len()) as f64
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Kernel distance between feature sets: median of `n_batches` unbiased
/// MMD^2 estimates on random subsets, with half the central 67.45% range of
/// those estimates as the spread. Features are standardized with the pooled
/// mean and standard deviation of both sets.
pub fn kernel_distance(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &KpdConfig) -> Result<(f64, f64)> {
    let dim = check_rows(a, 2, "kernel_distance")?;
    check_rows(b, 2, "kernel_distance")?;
    if b[0].len() != dim {
        return Err(Error::Data("kernel_distance: feature dimensions differ".into()));
    }
    let n = (a.len() + b.len()) as f64;
    let mut mean = vec![0.0; dim];
    for r in a.iter().chain(b) {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut sd = vec![0.0; dim];
    for r in a.iter().chain(b) {
        sd.iter_mut().zip(r).zip(&mean).for_each(|((s, x), m)| *s += (x - m).powi(2) / n);
    }
    let sd: Vec<f64> = sd.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    let standardize = |r: &Vec<f64>| -> Vec<f64> {
        r.iter().zip(&mean).zip(&sd).map(|((x, m), s)| (x - m) / s).collect()
    };
    let sa: Vec<Vec<f64>> = a.iter().map(standardize).collect();
    let sb: Vec<Vec<f64>> = b.iter().map(standardize).collect();

    let m = cfg.batch_size.min(sa.len()).min(sb.len()).max(2);
    let mut rng = rng::seeded(cfg.seed);
    let mut values = Vec::with_capacity(cfg.n_batches.max(1));
    for _ in 0..cfg.n_batches.max(1) {
        let ia = sample(&mut rng, sa.len(), m);
        let ib = sample(&mut rng, sb.len(), m);
        let xa: Vec<Vec<f64>> = ia.iter().map(|i| sa[i].clone()).collect();
        let xb: Vec<Vec<f64>> = ib.iter().map(|i| sb[i].clone()).collect();
        values.push(mmd2_unbiased(&xa, &xb));
    }
    values.sort_by(|x, y| x.total_cmp(y));
    let median = percentile(&values, 50.0);
    let spread = (percentile(&values, 83.725) - percentile(&values, 16.275)) / 2.0;
    Ok((median, spread))
}

/// Whole-batch summary used by reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub sparsity: Vec<f64>,
    pub total_energy: Vec<f64>,
    pub granularity: Vec<f64>,
}

pub fn event_metrics(batch: &ShowerBatch, seed: u64) -> Result<EventMetrics> {
    Ok(EventMetrics {
        sparsity: batch.events().map(sparsity_index).collect(),
        total_energy: batch.events().map(total_energy).collect(),
        granularity: batch_granularity(batch, seed)?,
    })
}

/// Sparsity histograms of two batches on `[0, 1]` with `n_bins` bins and
/// their total-variation distance.
pub fn sparsity_tv(a: &ShowerBatch, b: &ShowerBatch, n_bins: usize) -> Result<f64> {
    let sa: Vec<f64> = a.events().map(sparsity_index).collect();
    let sb: Vec<f64> = b.events().map(sparsity_index).collect();
    Histogram::uniform(&sa, 0.0, 1.0, n_bins)?.tv_distance(&Histogram::uniform(&sb, 0.0, 1.0, n_bins)?)
}
