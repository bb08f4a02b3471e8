//! Binary dataset format.
//!
//! ```text
//! magic     8 bytes   "CALOSHW\0"
//! hlen      u32 LE    length of the JSON header in bytes
//! header    hlen      {"layers","angular","radial","events","e_min","e_max","version"}
//! voxels    N*L*A*R   f32 LE
//! incident  N         f32 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnergyBounds, Geometry, ShowerBatch};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"CALOSHW\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    layers: usize,
    angular: usize,
    radial: usize,
    events: usize,
    e_min: f64,
    e_max: f64,
    version: u32,
}

pub fn write_batch(batch: &ShowerBatch, path: impl AsRef<Path>) -> Result<()> {
    batch.check()?;
    let header = Header {
        layers: batch.geometry.layers,
        angular: batch.geometry.angular,
        radial: batch.geometry.radial,
        events: batch.len(),
        e_min: batch.bounds.min,
        e_max: batch.bounds.max,
        version: DATASET_VERSION,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf =
        Vec::with_capacity(12 + header.len() + 4 * (batch.energies.len() + batch.incident.len()));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for x in batch.energies.iter().chain(&batch.incident) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<ShowerBatch> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<ShowerBatch> {
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("missing dataset magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header.version)));
    }
    let geometry = Geometry::new(header.layers, header.angular, header.radial)
        .map_err(|e| Error::Format(e.to_string()))?;
    let bounds =
        EnergyBounds::new(header.e_min, header.e_max).map_err(|e| Error::Format(e.to_string()))?;
    let n_voxels = header
        .events
        .checked_mul(geometry.voxel_count())
        .ok_or_else(|| Error::Format("event count overflows".into()))?;
    let payload = &body[hlen..];
    let expected = (n_voxels + header.events) * 4;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let energies: Vec<f32> = values.by_ref().take(n_voxels).collect();
    let incident: Vec<f32> = values.collect();
    ShowerBatch::new(geometry, bounds, energies, incident)
        .map_err(|e| Error::Format(e.to_string()))
}
