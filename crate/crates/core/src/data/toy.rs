//! Stand-in shower generator so the pipeline can be trained without detector
//! simulation output. Each event scatters a number of energy deposits over a
//! longitudinally peaked, radially falling density; higher incident energies
//! produce more deposits and therefore denser showers.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::{EnergyBounds, Geometry, ShowerBatch};
use crate::error::Result;
use crate::rng;

/// Upper bound on the fraction of voxels that can receive a deposit.
const MAX_HIT_FRACTION: f64 = 0.6;

pub fn generate_toy_dataset(
    n: usize,
    geometry: Geometry,
    e_min: f64,
    e_max: f64,
    seed: u64,
) -> Result<ShowerBatch> {
    let bounds = EnergyBounds::new(e_min, e_max)?;
    let geometry = Geometry::new(geometry.layers, geometry.angular, geometry.radial)?;
    let v = geometry.voxel_count();
    let mut energies = vec![0f32; n * v];
    let mut incident = Vec::with_capacity(n);
    let mut density = vec![0f64; v];
    let mut cumulative = vec![0f64; v];
    let mut deposit = vec![0f64; v];
    let mut rng = rng::seeded(seed);
    let (ln_lo, ln_hi) = (e_min.ln(), e_max.ln());

    for event in energies.chunks_exact_mut(v) {
        let t: f64 = rng.gen();
        let e_inc = to_f32_within((ln_lo + t * (ln_hi - ln_lo)).exp(), &bounds);
        incident.push(e_inc);
        let t = ((e_inc as f64).ln() - ln_lo) / (ln_hi - ln_lo);

        let fraction = 1.0 - 0.6 * rng.gen::<f64>();
        let total = fraction * e_inc as f64;

        let layers = geometry.layers as f64;
        let jitter: f64 = rng.sample(StandardNormal);
        let peak = (0.15 + 0.45 * t) * (layers - 1.0) + 0.05 * layers * jitter;
        let width = (0.12 + 0.08 * rng.gen::<f64>()) * layers + 0.5;
        let r0 = 0.6 + 0.8 * rng.gen::<f64>();
        let phase = std::f64::consts::TAU * rng.gen::<f64>();
        let anisotropy = 0.4 * rng.gen::<f64>();

        for l in 0..geometry.layers {
            let dl = (l as f64 - peak) / width;
            let longitudinal = (-0.5 * dl * dl).exp();
            for a in 0..geometry.angular {
                let angle = std::f64::consts::TAU * a as f64 / geometry.angular as f64;
                let angular = 1.0 + anisotropy * (angle - phase).cos();
                for r in 0..geometry.radial {
                    density[geometry.index(l, a, r)] =
                        longitudinal * angular * (-(r as f64) / r0).exp();
                }
            }
        }
        let mut acc = 0.0;
        for (c, d) in cumulative.iter_mut().zip(&density) {
            acc += d;
            *c = acc;
        }

        let spread = 0.8 + 0.4 * rng.gen::<f64>();
        let spots = ((v as f64) * (0.04 + 0.36 * t) * spread).round() as usize;
        let spots = spots.clamp(1, ((v as f64) * MAX_HIT_FRACTION) as usize);

        deposit.iter_mut().for_each(|d| *d = 0.0);
        let mut sum = 0.0;
        for _ in 0..spots {
            let target = rng.gen::<f64>() * acc;
            let idx = cumulative.partition_point(|c| *c <= target).min(v - 1);
            let share: f64 = Exp1.sample(&mut rng);
            let share = share + 1e-3;
            deposit[idx] += share;
            sum += share;
        }
        for (out, d) in event.iter_mut().zip(&deposit) {
            if *d > 0.0 {
                *out = ((total * d / sum) as f32).max(f32::MIN_POSITIVE);
            }
        }
    }

    ShowerBatch::new(geometry, bounds, energies, incident)
}

/// `n` incident energies, log-uniform on `bounds`, in single precision.
pub fn log_uniform_incident<R: Rng + ?Sized>(n: usize, bounds: &EnergyBounds, rng: &mut R) -> Vec<f32> {
    let (ln_lo, ln_hi) = (bounds.min.ln(), bounds.max.ln());
    (0..n)
        .map(|_| to_f32_within((ln_lo + rng.gen::<f64>() * (ln_hi - ln_lo)).exp(), bounds))
        .collect()
}

/// Rounds to single precision without leaving the closed bounds.
fn to_f32_within(e: f64, bounds: &EnergyBounds) -> f32 {
    let mut x = e as f32;
    while (x as f64) < bounds.min {
        x = x.next_up();
    }
    while (x as f64) > bounds.max {
        x = x.next_down();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_batch_keeps_geometry() {
        let g = Geometry::new(4, 3, 2).unwrap();
        let b = generate_toy_dataset(0, g, 1e3, 1e6, 1).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.geometry, g);
        assert!(b.energies.is_empty());
    }

    #[test]
    fn default_geometry_event_width() {
        let b = generate_toy_dataset(10, Geometry::default(), 1e3, 1e6, 3).unwrap();
        assert_eq!(b.len(), 10);
        for ev in b.events() {
            assert_eq!(ev.len(), 6480);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = Geometry::new(12, 8, 4).unwrap();
        let a = generate_toy_dataset(50, g, 1e3, 1e6, 9).unwrap();
        let b = generate_toy_dataset(50, g, 1e3, 1e6, 9).unwrap();
        let c = generate_toy_dataset(50, g, 1e3, 1e6, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(generate_toy_dataset(1, Geometry::default(), 1e6, 1e3, 0).is_err());
    }

    #[test]
    fn sparsity_floor_and_energy_fraction() {
        let g = Geometry::new(12, 8, 4).unwrap();
        let b = generate_toy_dataset(1000, g, 1e3, 1e6, 5).unwrap();
        for (ev, &e) in b.events().zip(&b.incident) {
            let zeros = ev.iter().filter(|x| **x == 0.0).count();
            assert!(zeros as f64 / ev.len() as f64 >= 0.3);
            let total: f64 = ev.iter().map(|x| *x as f64).sum();
            assert!(total > 0.0 && total <= e as f64 * (1.0 + 1e-5));
        }
    }

    #[test]
    fn incident_energies_are_log_uniform() {
        let b = generate_toy_dataset(5000, Geometry::new(2, 2, 2).unwrap(), 1e3, 1e6, 11).unwrap();
        let (lo, hi) = (1e3f64.ln(), 1e6f64.ln());
        let mut u: Vec<f64> = b
            .incident
            .iter()
            .map(|e| ((*e as f64).ln() - lo) / (hi - lo))
            .collect();
        u.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let above = (i as f64 + 1.0) / n - x;
                let below = x - i as f64 / n;
                above.max(below)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.03, "KS statistic {ks}");
    }
}
