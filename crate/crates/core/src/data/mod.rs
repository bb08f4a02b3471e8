//! Calorimeter shower data: geometry, batches, the sparsity-preserving logit
//! transform, incident-energy binarization, a toy generator and the binary
//! dataset format.

mod io;
mod toy;
mod transform;

pub use io::{read_batch, write_batch, DATASET_MAGIC, DATASET_VERSION};
pub use toy::{generate_toy_dataset, log_uniform_incident};
pub use transform::{binarize_energy, code_to_index, forward_transform, inverse_transform, logit, sigmoid, PreprocessConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cylindrical readout grid: `layers` along the shower axis, `angular` bins
/// around it and `radial` bins outwards. Voxels are laid out layer-major,
/// then angular, then radial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub layers: usize,
    pub angular: usize,
    pub radial: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            layers: 45,
            angular: 16,
            radial: 9,
        }
    }
}

impl Geometry {
    pub fn new(layers: usize, angular: usize, radial: usize) -> Result<Self> {
        if layers == 0 || angular == 0 || radial == 0 {
            return Err(Error::Config(format!(
                "geometry axes must be >= 1, got ({layers}, {angular}, {radial})"
            )));
        }
        Ok(Self {
            layers,
            angular,
            radial,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.layers * self.angular * self.radial
    }

    pub fn voxels_per_layer(&self) -> usize {
        self.angular * self.radial
    }

    #[inline]
    pub fn index(&self, layer: usize, angle: usize, radius: usize) -> usize {
        (layer * self.angular + angle) * self.radial + radius
    }
}

/// Incident-energy range of a dataset, in MeV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBounds {
    pub min: f64,
    pub max: f64,
}

impl EnergyBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min > 0.0 && min < max) {
            return Err(Error::Config(format!(
                "incident energy bounds must satisfy 0 < e_min < e_max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.min && e <= self.max
    }
}

/// `N` voxelized showers with their incident energies. Values are kept in
/// single precision, matching the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct ShowerBatch {
    pub geometry: Geometry,
    pub bounds: EnergyBounds,
    /// Row-major `N x voxel_count` voxel energies in MeV.
    pub energies: Vec<f32>,
    /// Incident energy per event in MeV.
    pub incident: Vec<f32>,
}

impl ShowerBatch {
    pub fn empty(geometry: Geometry, bounds: EnergyBounds) -> Self {
        Self {
            geometry,
            bounds,
            energies: Vec::new(),
            incident: Vec::new(),
        }
    }

    pub fn new(
        geometry: Geometry,
        bounds: EnergyBounds,
        energies: Vec<f32>,
        incident: Vec<f32>,
    ) -> Result<Self> {
        let batch = Self {
            geometry,
            bounds,
            energies,
            incident,
        };
        batch.check()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.incident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.incident.is_empty()
    }

    pub fn event(&self, i: usize) -> &[f32] {
        let v = self.geometry.voxel_count();
        &self.energies[i * v..(i + 1) * v]
    }

    pub fn events(&self) -> impl Iterator<Item = &[f32]> {
        self.energies.chunks_exact(self.geometry.voxel_count())
    }

    /// Verifies shape and value invariants.
    pub fn check(&self) -> Result<()> {
        let v = self.geometry.voxel_count();
        if self.energies.len() != self.incident.len() * v {
            return Err(Error::Data(format!(
                "energy payload has {} values, expected {} events x {v} voxels",
                self.energies.len(),
                self.incident.len()
            )));
        }
        if let Some(pos) = self.energies.iter().position(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::Data(format!(
                "voxel {} of event {} has invalid energy {}",
                pos % v,
                pos / v,
                self.energies[pos]
            )));
        }
        if let Some(pos) = self
            .incident
            .iter()
            .position(|e| !self.bounds.contains(*e as f64))
        {
            return Err(Error::Data(format!(
                "incident energy {} of event {pos} outside [{}, {}]",
                self.incident[pos], self.bounds.min, self.bounds.max
            )));
        }
        Ok(())
    }

    /// Events `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ShowerBatch {
        let v = self.geometry.voxel_count();
        ShowerBatch {
            geometry: self.geometry,
            bounds: self.bounds,
            energies: self.energies[range.start * v..range.end * v].to_vec(),
            incident: self.incident[range].to_vec(),
        }
    }
}
