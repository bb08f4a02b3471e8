use serde::{Deserialize, Serialize};

use super::EnergyBounds;
use crate::error::{Error, Result};

/// Parameters of the voxel transform and of the condition code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Logit regularizer, `0 < alpha < 0.5`.
    pub alpha: f64,
    /// Divisor applied to the incident energy before normalizing voxels.
    pub scale_f: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// Width of the binarized incident-energy code.
    pub k_bits: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            scale_f: 1.0,
            e_min: 1.0e3,
            e_max: 1.0e6,
            k_bits: 8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if !(self.scale_f > 0.0 && self.scale_f.is_finite()) {
            return Err(Error::Config(format!("scale_f must be > 0, got {}", self.scale_f)));
        }
        EnergyBounds::new(self.e_min, self.e_max)?;
        if self.k_bits == 0 || self.k_bits > 52 {
            return Err(Error::Config(format!("k_bits must lie in [1, 52], got {}", self.k_bits)));
        }
        Ok(())
    }

    pub fn bounds(&self) -> EnergyBounds {
        EnergyBounds {
            min: self.e_min,
            max: self.e_max,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps a voxel energy to the shifted logit space.
///
/// With `u = clamp(x / (scale_f * e_inc), 0, 1)` and
/// `v = alpha + (1 - 2 alpha) u`, returns `logit(v) - logit(alpha)`. The
/// difference is evaluated as `ln1p(c u / alpha) - ln1p(-c u / (1 - alpha))`
/// with `c = 1 - 2 alpha`, which is the same quantity without cancellation,
/// and is exactly zero at `x = 0`.
pub fn forward_transform(x: f64, e_inc: f64, cfg: &PreprocessConfig) -> f64 {
    let u = (x / (cfg.scale_f * e_inc)).clamp(0.0, 1.0);
    if u == 0.0 {
        return 0.0;
    }
    let a = cfg.alpha;
    let cu = (1.0 - 2.0 * a) * u;
    (cu / a).ln_1p() - (-cu / (1.0 - a)).ln_1p()
}

/// Inverse of [`forward_transform`] on its unclamped range; negative outputs
/// are clamped to zero.
///
/// Uses `sigmoid(z + logit(alpha)) - alpha = alpha (1 - alpha) expm1(z) /
/// (1 - alpha + alpha e^z)`.
pub fn inverse_transform(z: f64, e_inc: f64, cfg: &PreprocessConfig) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let a = cfg.alpha;
    let v_minus_a = if z > 700.0 {
        // e^z overflows; the ratio tends to 1 - alpha.
        1.0 - a
    } else {
        a * (1.0 - a) * z.exp_m1() / (1.0 - a + a * z.exp())
    };
    let u = v_minus_a / (1.0 - 2.0 * a);
    (cfg.scale_f * e_inc * u).max(0.0)
}

/// Big-endian binary code of the quantized log-energy.
///
/// `u = (ln e - ln e_min) / (ln e_max - ln e_min)` is scaled to
/// `[0, 2^k - 1]` and rounded half-up. A relative slack of `1e-9` is added
/// before flooring so that exact half-way points, which the logarithms can
/// only approximate, round up as documented.
pub fn binarize_energy(e_inc: f64, cfg: &PreprocessConfig) -> Result<Vec<u8>> {
    if !(e_inc >= cfg.e_min && e_inc <= cfg.e_max) {
        return Err(Error::Data(format!(
            "incident energy {e_inc} outside [{}, {}]",
            cfg.e_min, cfg.e_max
        )));
    }
    let levels = ((1u64 << cfg.k_bits) - 1) as f64;
    let u = (e_inc.ln() - cfg.e_min.ln()) / (cfg.e_max.ln() - cfg.e_min.ln());
    let scaled = u * levels;
    let index = ((scaled + 0.5 + 1e-9 * levels.max(1.0)).floor() as u64).min(levels as u64);
    Ok((0..cfg.k_bits)
        .rev()
        .map(|b| ((index >> b) & 1) as u8)
        .collect())
}

/// Integer value of a big-endian bit code.
pub fn code_to_index(code: &[u8]) -> u64 {
    code.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}
