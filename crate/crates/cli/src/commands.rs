use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use calovae_core::ais::{log_likelihood, write_log_z_report, AisConfig, LogZCache};
use calovae_core::calibrate::{estimate_beta, Device, SimulatedDevice};
use calovae_core::data::{
    binarize_energy, code_to_index, forward_transform, generate_toy_dataset, log_uniform_incident, read_batch,
    write_batch, ShowerBatch,
};
use calovae_core::hvae::{
    format_log, generate, load_bundle, posterior_states, save_bundle, SamplerKind, Trainer,
};
use calovae_core::metrics::{
    feature_matrix, frechet_distance, kernel_distance, mean_profiles, sparsity_index, Histogram, KpdConfig,
};
use calovae_core::rbm::{sample_chains, ChainInit, RbmParams};
use calovae_core::topology::{build_quadripartite, import_topology, topology_from_edge_list, Topology};
use calovae_core::{rng, Error, Result};
use serde_json::json;

use crate::config::{RunConfig, Sampler};
use crate::manifest::Manifest;

pub const DATASET_FILE: &str = "dataset.cshw";
pub const SAMPLES_FILE: &str = "samples.cshw";
pub const PREPROCESSED_FILE: &str = "preprocessed.bin";
pub const TOPOLOGY_FILE: &str = "topology.txt";
pub const MODEL_DIR: &str = "model";
pub const BETA_FILE: &str = "beta_hat.json";

const PREPROCESSED_MAGIC: &[u8; 8] = b"CALOPRE\0";

/// Output directory, manifest and resolved configuration of one run.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn new(command: &str, cfg: RunConfig, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out)?;
        let json = serde_json::to_string(&cfg).expect("config serializes");
        let manifest = Manifest::new(command, &json, cfg.seed);
        Ok(Self { cfg, out, manifest })
    }

    pub fn seed(&self) -> Result<u64> {
        self.cfg
            .seed
            .ok_or_else(|| Error::Config("this command is stochastic and needs --seed or a config seed".into()))
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input not found: {}", path.display()),
            )));
        }
        self.manifest.input(path)
    }

    fn write(&mut self, rel: &str, content: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.out.join(rel), content)?;
        self.manifest.artifact(&self.out, rel)
    }

    fn write_json(&mut self, rel: &str, value: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
        self.write(rel, text)
    }

    pub fn finish(self) -> Result<()> {
        self.manifest.write(&self.out)
    }
}

fn sparsity_histogram(batch: &ShowerBatch, bins: usize) -> Result<Histogram> {
    let s: Vec<f64> = batch.events().map(sparsity_index).collect();
    Histogram::uniform(&s, 0.0, 1.0, bins)
}

fn histogram_json(h: &Histogram) -> serde_json::Value {
    json!({ "edges": h.edges, "counts": h.counts })
}

pub fn gen_data(mut run: Run) -> Result<()> {
    let seed = run.seed()?;
    let m = &run.cfg.model;
    let batch = generate_toy_dataset(run.cfg.data.events, m.geometry, m.preprocess.e_min, m.preprocess.e_max, seed)?;
    write_batch(&batch, run.out.join(DATASET_FILE))?;
    run.manifest.artifact(&run.out, DATASET_FILE)?;
    let h = sparsity_histogram(&batch, run.cfg.evaluate.hist_bins)?;
    run.write_json("sparsity_hist.json", &histogram_json(&h))?;
    run.finish()
}

pub fn preprocess(mut run: Run, data: &Path) -> Result<()> {
    run.input(data)?;
    let batch = read_batch(data)?;
    let pp = run.cfg.model.preprocess;
    pp.validate()?;
    let v = batch.geometry.voxel_count();
    let mut values = Vec::with_capacity(batch.energies.len());
    let mut codes = Vec::with_capacity(batch.len() * pp.k_bits);
    let mut hits = 0usize;
    let mut z_max = 0.0f64;
    for (ev, &e) in batch.events().zip(&batch.incident) {
        for &x in ev {
            let z = forward_transform(x as f64, e as f64, &pp);
            hits += usize::from(z > 0.0);
            z_max = z_max.max(z);
            values.push(z as f32);
        }
        codes.extend(binarize_energy(e as f64, &pp)?);
    }
    let header = json!({
        "events": batch.len(),
        "voxels": v,
        "k_bits": pp.k_bits,
        "alpha": pp.alpha,
        "scale_f": pp.scale_f,
    })
    .to_string();
    let mut bytes = Vec::with_capacity(16 + header.len() + values.len() * 4 + codes.len());
    bytes.extend_from_slice(PREPROCESSED_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    values.iter().for_each(|z| bytes.extend_from_slice(&z.to_le_bytes()));
    bytes.extend_from_slice(&codes);
    run.write(PREPROCESSED_FILE, bytes)?;
    let mut per_code = vec![0usize; 1 << pp.k_bits];
    for c in codes.chunks(pp.k_bits.max(1)) {
        per_code[code_to_index(c) as usize] += 1;
    }
    let total = values.len().max(1) as f64;
    run.write_json(
        "preprocess_summary.json",
        &json!({
            "events": batch.len(),
            "voxels": v,
            "hit_fraction": hits as f64 / total,
            "z_max": z_max,
            "condition_counts": per_code,
        }),
    )?;
    run.finish()
}

fn topology_report(t: &Topology) -> serde_json::Value {
    json!({
        "valid": true,
        "nodes": t.n_nodes(),
        "edges": t.n_edges(),
        "partition_sizes": t.partition_sizes(),
        "max_degree": (0..t.n_nodes()).map(|i| t.degree(i)).max().unwrap_or(0),
        "hash": t.hash(),
    })
}

fn write_topology(run: &mut Run, t: &Topology) -> Result<()> {
    t.export(run.out.join(TOPOLOGY_FILE))?;
    run.manifest.artifact(&run.out, TOPOLOGY_FILE)?;
    run.write_json("topology_report.json", &topology_report(t))
}

pub fn topology_gen(mut run: Run) -> Result<()> {
    let seed = run.seed()?;
    let t = build_quadripartite(
        run.cfg.model.partition_sizes,
        run.cfg.topology.degree_bound,
        run.cfg.topology.locality_window,
        seed,
    )?;
    write_topology(&mut run, &t)?;
    run.finish()
}

pub fn topology_import(mut run: Run, input: &Path, partition_supplied: bool) -> Result<()> {
    run.input(input)?;
    let t = import_topology(input, partition_supplied)?;
    write_topology(&mut run, &t)?;
    run.finish()
}

/// Writes a report either way; an invalid topology still exits with an error.
pub fn topology_check(mut run: Run, input: &Path) -> Result<()> {
    run.input(input)?;
    let text = fs::read_to_string(input)?;
    match topology_from_edge_list(&text, true) {
        Ok(t) => {
            let mut report = topology_report(&t);
            let matches = t.partition_sizes() == run.cfg.model.partition_sizes;
            report["matches_model_config"] = json!(matches);
            run.write_json("topology_report.json", &report)?;
            run.finish()
        }
        Err(e) => {
            run.write_json(
                "topology_report.json",
                &json!({ "valid": false, "code": e.code(), "error": e.to_string() }),
            )?;
            run.finish()?;
            Err(e)
        }
    }
}

fn load_or_build_topology(run: &mut Run, path: Option<&Path>, seed: u64) -> Result<Arc<Topology>> {
    let t = match path {
        Some(p) => {
            run.input(p)?;
            import_topology(p, true)?
        }
        None => build_quadripartite(
            run.cfg.model.partition_sizes,
            run.cfg.topology.degree_bound,
            run.cfg.topology.locality_window,
            seed,
        )?,
    };
    run.cfg.model.check_topology(&t)?;
    Ok(Arc::new(t))
}

pub fn train(mut run: Run, data: &Path, topology: Option<&Path>, verbose: bool) -> Result<()> {
    let seed = run.seed()?;
    run.input(data)?;
    let batch = read_batch(data)?;
    let topo = load_or_build_topology(&mut run, topology, seed)?;
    let mut trainer = Trainer::new(run.cfg.model.clone(), &batch, topo, seed)?;
    let mut log = Vec::new();
    while !trainer.finished() {
        let e = trainer.step_epoch()?;
        if verbose {
            let mut err = std::io::stderr();
            let _ = writeln!(
                err,
                "epoch {} {} slope={:.1} loss={:.4}{}",
                e.epoch,
                e.phase.as_str(),
                e.slope,
                e.loss(),
                e.loglik.map(|l| format!(" loglik={l:.4}")).unwrap_or_default()
            );
        }
        log.push(e);
    }
    let model = trainer.into_model();
    let files = save_bundle(&model, run.out.join(MODEL_DIR))?;
    for f in files {
        run.manifest.artifact(&run.out, &format!("{MODEL_DIR}/{f}"))?;
    }
    fs::write(run.out.join("train_log.tsv"), format_log(&log, true))?;
    run.manifest
        .artifact_with("train_log.tsv", "wall_s excluded", format_log(&log, false).as_bytes());
    run.finish()
}

fn read_beta_hat(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    v["beta_hat"]
        .as_f64()
        .ok_or_else(|| Error::Format(format!("{}: no numeric beta_hat", path.display())))
}

pub struct SampleArgs<'a> {
    pub model: &'a Path,
    pub calibration: Option<&'a Path>,
    pub incident: Option<&'a Path>,
}

pub fn sample(mut run: Run, args: SampleArgs<'_>) -> Result<()> {
    let seed = run.seed()?;
    run.input(args.model)?;
    let model = load_bundle(args.model)?;
    let mut r = rng::seeded(seed);
    let incident = match args.incident {
        Some(p) => {
            run.input(p)?;
            let mut e = read_batch(p)?.incident;
            e.truncate(run.cfg.sample.events);
            e
        }
        None => log_uniform_incident(run.cfg.sample.events, &model.config.preprocess.bounds(), &mut r),
    };
    let mut beta_hat = run.cfg.sample.beta_hat;
    if let Some(p) = args.calibration {
        run.input(p)?;
        beta_hat = Some(read_beta_hat(p)?);
    }
    let device = SimulatedDevice {
        beta_star: run.cfg.sample.beta_star,
        n_burn_sweeps: run.cfg.sample.burn_sweeps,
    };
    let kind = match run.cfg.sample.sampler {
        Sampler::Classical => SamplerKind::Classical,
        Sampler::Device => SamplerKind::BlackBox {
            device: &device,
            beta_hat,
        },
    };
    let batch = generate(&model, &incident, kind, &mut r)?;
    write_batch(&batch, run.out.join(SAMPLES_FILE))?;
    run.manifest.artifact(&run.out, SAMPLES_FILE)?;
    let h = sparsity_histogram(&batch, run.cfg.evaluate.hist_bins)?;
    run.write_json("sparsity_hist.json", &histogram_json(&h))?;
    run.finish()
}

pub fn calibrate(mut run: Run, model: Option<&Path>, topology: Option<&Path>) -> Result<()> {
    let seed = run.seed()?;
    let mut r = rng::seeded(seed);
    let rbm = match model {
        Some(dir) => {
            run.input(dir)?;
            load_bundle(dir)?.rbm
        }
        None => {
            let topo = load_or_build_topology(&mut run, topology, seed)?;
            random_rbm(topo, run.cfg.calibration.init_scale, &mut r)
        }
    };
    let cal = run.cfg.calibration.clone();
    let pp = run.cfg.model.preprocess;
    let energy = cal.incident_energy.unwrap_or_else(|| (pp.e_min * pp.e_max).sqrt());
    let code = binarize_energy(energy, &pp)?;
    let device = SimulatedDevice {
        beta_star: cal.beta_star,
        n_burn_sweeps: cal.burn_sweeps,
    };
    let mut sampler = device.program(&rbm, rng::fork(&mut r));
    let est = estimate_beta(&rbm, sampler.as_mut(), &code, cal.beta_init, &cal.estimator(), &mut r)?;
    calovae_core::calibrate::write_calibration_report(&est, run.out.join("calibration.tsv"))?;
    run.manifest.artifact(&run.out, "calibration.tsv")?;

    let device_states = sampler.draw(cal.device_samples, &code)?;
    let model_states = sample_chains(&rbm, cal.device_samples, cal.sweeps, est.beta_hat, &code, ChainInit::Random, &mut r)?;
    let ed: Vec<f64> = device_states.iter().map(|s| rbm.energy(&s.z)).collect();
    let em: Vec<f64> = model_states.iter().map(|s| rbm.energy(&s.z)).collect();
    let lo = ed.iter().chain(&em).copied().fold(f64::INFINITY, f64::min);
    let hi = ed.iter().chain(&em).copied().fold(f64::NEG_INFINITY, f64::max);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    run.write_json(
        "energy_hist.json",
        &json!({
            "device": histogram_json(&Histogram::uniform(&ed, lo, hi, cal.hist_bins)?),
            "model_at_beta_hat": histogram_json(&Histogram::uniform(&em, lo, hi, cal.hist_bins)?),
        }),
    )?;
    run.write_json(
        BETA_FILE,
        &json!({
            "beta_hat": est.beta_hat,
            "converged": est.converged,
            "iterations": est.steps.len(),
            "device_beta_star": cal.beta_star,
            "condition_code": code,
        }),
    )?;
    run.finish()?;
    if !est.converged {
        return Err(Error::Calibration(format!(
            "no convergence within {} iterations (last beta {})",
            cal.max_iters, est.beta_hat
        )));
    }
    Ok(())
}

fn random_rbm<R: rand::Rng + ?Sized>(topo: Arc<Topology>, scale: f64, rng: &mut R) -> RbmParams {
    let mut p = RbmParams::init(topo, scale, rng);
    for b in &mut p.bias {
        *b = scale * (2.0 * rng.gen::<f64>() - 1.0);
    }
    p
}

pub fn loglik(mut run: Run, model: &Path, data: &Path) -> Result<()> {
    let seed = run.seed()?;
    run.input(model)?;
    run.input(data)?;
    let model = load_bundle(model)?;
    let batch = read_batch(data)?;
    let mut r = rng::seeded(seed);
    let states = posterior_states(&model, &batch, &mut r)?;
    let ais = AisConfig::linear(run.cfg.ais.temps, run.cfg.ais.chains);
    let mut cache = LogZCache::new();
    let ll = log_likelihood(&model.rbm, &states, &ais, run.cfg.ais.max_conditions, &mut cache, &mut r)?;
    write_log_z_report(&cache.rows(&ais), run.out.join("log_z.tsv"))?;
    run.manifest.artifact(&run.out, "log_z.tsv")?;
    run.write_json(
        "loglik.json",
        &json!({ "loglik": ll, "events": batch.len(), "conditions": cache.len() }),
    )?;
    run.finish()
}

pub fn evaluate(mut run: Run, reference: &Path, candidate: &Path) -> Result<()> {
    let seed = run.seed()?;
    run.input(reference)?;
    run.input(candidate)?;
    let a = read_batch(reference)?;
    let b = read_batch(candidate)?;
    if a.geometry != b.geometry {
        return Err(Error::Data(format!(
            "geometries differ: {:?} vs {:?}",
            a.geometry, b.geometry
        )));
    }
    let ev = &run.cfg.evaluate;
    let (fa, fb) = (feature_matrix(&a), feature_matrix(&b));
    let fpd = frechet_distance(&fa, &fb)?;
    let kpd_cfg = KpdConfig {
        n_batches: ev.kpd_batches,
        batch_size: ev.kpd_batch_size,
        seed,
    };
    let (kpd, kpd_spread) = kernel_distance(&fa, &fb, &kpd_cfg)?;
    let (ha, hb) = (sparsity_histogram(&a, ev.hist_bins)?, sparsity_histogram(&b, ev.hist_bins)?);
    let tv = sparsity_histogram(&a, ev.tv_bins)?.tv_distance(&sparsity_histogram(&b, ev.tv_bins)?)?;
    let (pa, pb) = (mean_profiles(&a)?, mean_profiles(&b)?);
    run.write_json(
        "metrics.json",
        &json!({
            "fpd": fpd,
            "kpd": kpd,
            "kpd_spread": kpd_spread,
            "sparsity_tv": tv,
            "events_reference": a.len(),
            "events_candidate": b.len(),
        }),
    )?;
    run.write_json(
        "sparsity_hist.json",
        &json!({ "reference": histogram_json(&ha), "candidate": histogram_json(&hb) }),
    )?;
    run.write_json(
        "profiles.json",
        &json!({
            "reference": { "layer": pa.layer, "angular": pa.angular, "radial": pa.radial },
            "candidate": { "layer": pb.layer, "angular": pb.angular, "radial": pb.radial },
        }),
    )?;
    run.finish()
}
