use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::model::Model;
use super::VaeConfig;
use crate::error::{Error, Result};
use crate::nn::{read_networks, write_networks};
use crate::rbm::RbmParams;
use crate::topology::{import_topology, Topology};

pub const CONFIG_FILE: &str = "config.json";
pub const TOPOLOGY_FILE: &str = "topology.txt";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const DECODER_FILE: &str = "decoder.bin";
pub const RBM_FILE: &str = "rbm.bin";

/// Writes the model into `dir`, creating it if needed. Returns the written
/// file names in a fixed order.
pub fn save_bundle(model: &Model, dir: impl AsRef<Path>) -> Result<Vec<&'static str>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let config = serde_json::to_string_pretty(&model.config)
        .map_err(|e| Error::Format(format!("cannot serialize config: {e}")))?;
    fs::write(dir.join(CONFIG_FILE), config + "\n")?;
    model.topology.export(dir.join(TOPOLOGY_FILE))?;
    write_networks(&model.encoder.nets.iter().collect::<Vec<_>>(), dir.join(ENCODER_FILE))?;
    write_networks(&model.decoder.nets.iter().collect::<Vec<_>>(), dir.join(DECODER_FILE))?;
    model.rbm.write_checkpoint(dir.join(RBM_FILE))?;
    Ok(vec![CONFIG_FILE, TOPOLOGY_FILE, ENCODER_FILE, DECODER_FILE, RBM_FILE])
}

pub fn load_config(path: impl AsRef<Path>) -> Result<VaeConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let cfg: VaeConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let config = load_config(dir.join(CONFIG_FILE))?;
    let topology: Arc<Topology> = Arc::new(import_topology(dir.join(TOPOLOGY_FILE), true)?);
    let mut model = Model::new(config, topology.clone(), &mut crate::rng::seeded(0))?;
    model.encoder.nets = load_nets(dir.join(ENCODER_FILE), &model.encoder.nets)?;
    model.decoder.nets = load_nets(dir.join(DECODER_FILE), &model.decoder.nets)?;
    model.rbm = RbmParams::read_checkpoint(dir.join(RBM_FILE), topology)?;
    Ok(model)
}

fn load_nets(path: impl AsRef<Path>, expected: &[crate::nn::DenseNet]) -> Result<Vec<crate::nn::DenseNet>> {
    let path = path.as_ref();
    let nets = read_networks(path)?;
    let ok = nets.len() == expected.len()
        && nets
            .iter()
            .zip(expected)
            .all(|(a, b)| a.dims() == b.dims() && a.activations() == b.activations());
    if !ok {
        return Err(Error::Format(format!(
            "{}: network layout does not match the configuration",
            path.display()
        )));
    }
    Ok(nets)
}
