use std::fs;
use std::path::Path;

use calovae_core::calibrate::CalibrationConfig;
use calovae_core::hvae::VaeConfig;
use calovae_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataSection,
    pub model: VaeConfig,
    pub topology: TopologySection,
    pub sample: SampleSection,
    pub calibration: CalibrationSection,
    pub ais: AisSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataSection { events: 5000 },
            model: VaeConfig::toy(),
            topology: TopologySection {
                degree_bound: 6,
                locality_window: 4,
            },
            sample: SampleSection {
                events: 1000,
                sampler: Sampler::Classical,
                beta_star: 0.6,
                burn_sweeps: 500,
                beta_hat: None,
            },
            calibration: CalibrationSection {
                beta_star: 0.37,
                beta_init: 1.0,
                burn_sweeps: 500,
                incident_energy: None,
                init_scale: 0.5,
                max_iters: 30,
                tol: 5e-3,
                device_samples: 4096,
                chains: 64,
                sweeps: 200,
                burn: 50,
                hist_bins: 40,
            },
            ais: AisSection {
                temps: 100,
                chains: 100,
                max_conditions: 32,
            },
            evaluate: EvaluateSection {
                hist_bins: 40,
                tv_bins: 20,
                kpd_batches: 10,
                kpd_batch_size: 1000,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub degree_bound: usize,
    pub locality_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Classical,
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub events: usize,
    pub sampler: Sampler,
    /// Hidden inverse temperature of the simulated device.
    pub beta_star: f64,
    pub burn_sweeps: usize,
    pub beta_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub beta_star: f64,
    pub beta_init: f64,
    pub burn_sweeps: usize,
    /// Incident energy whose code conditions the calibration; defaults to
    /// the geometric mean of the energy bounds.
    pub incident_energy: Option<f64>,
    /// Weight scale of the random RBM used when no model is given.
    pub init_scale: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub device_samples: usize,
    pub chains: usize,
    pub sweeps: usize,
    pub burn: usize,
    pub hist_bins: usize,
}

impl CalibrationSection {
    pub fn estimator(&self) -> CalibrationConfig {
        CalibrationConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            n_device_samples: self.device_samples,
            n_chains: self.chains,
            n_sweeps: self.sweeps,
            n_burn: self.burn,
            ..CalibrationConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AisSection {
    pub temps: usize,
    pub chains: usize,
    pub max_conditions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Bins of exported sparsity histograms.
    pub hist_bins: usize,
    /// Bins of the histograms behind the sparsity total-variation distance.
    pub tv_bins: usize,
    pub kpd_batches: usize,
    pub kpd_batch_size: usize,
}

/// Defaults, then the config file, then `--set` assignments, in that order.
pub fn resolve(path: Option<&Path>, sets: &[String]) -> Result<Value> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(path) = path {
        let text = fs::read_to_string(path)?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(Error::Config(format!("{}: top level must be an object", path.display())));
        }
        merge(&mut value, file);
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        assign(&mut value, key, v)?;
    }
    Ok(value)
}

pub fn finish(value: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.model.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets a dotted path such as `model.batch_size`.
pub fn assign(value: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key {key}")));
            }
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
    }
    Err(Error::Config("empty config key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_round_trip() {
        let cfg = finish(resolve(None, &[]).unwrap()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn set_overrides_nested_keys() {
        let v = resolve(None, &["model.batch_size=16".into(), "seed=4".into(), "sample.sampler=device".into()]).unwrap();
        let cfg = finish(v).unwrap();
        assert_eq!(cfg.model.batch_size, 16);
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.sample.sampler, Sampler::Device);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(resolve(None, &["model.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(resolve(None, &["noequals".into()]), Err(Error::Config(_))));
        let mut v = resolve(None, &[]).unwrap();
        merge(&mut v, json!({"model": {"typo_field": 3}}));
        assert!(matches!(finish(v), Err(Error::Config(_))));
    }

    #[test]
    fn file_values_merge_into_defaults() {
        let mut v = resolve(None, &[]).unwrap();
        merge(&mut v, json!({"model": {"geometry": {"layers": 8}}, "data": {"events": 10}}));
        let cfg = finish(v).unwrap();
        assert_eq!(cfg.model.geometry.layers, 8);
        assert_eq!(cfg.model.geometry.angular, 8);
        assert_eq!(cfg.data.events, 10);
    }
}
