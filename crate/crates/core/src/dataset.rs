//! Synthetic labeled feature datasets generated with the reduced model.
//!
//! Samples are stored one JSON record per line so an interrupted run can be
//! resumed; CSV exports are written once all samples are present. Noisy
//! test features are drawn at generation time for every partition index,
//! since the trajectories themselves are not kept.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::{GlobalParameter, SensorLayout, DAMAGEABLE};
use crate::classify::{FeatureSource, TtConfig};
use crate::error::{Error, Result};
use crate::features::{add_noise, feature_vector, FeatureKind, SensorSignals};
use crate::library::ArchetypeLibrary;
use crate::offline::OfflineCache;
use crate::online::{evaluate_online, BridgeSystem, OnlineConfig};
use crate::params::ParameterBounds;

const SAMPLES_FILE: &str = "samples.jsonl";
const MANIFEST_FILE: &str = "dataset.json";
const N_SENSORS: usize = 4;

/// A named sensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLayout {
    pub name: String,
    pub layout: SensorLayout,
}

impl NamedLayout {
    pub fn near() -> Self {
        Self { name: "near".into(), layout: SensorLayout::NEAR }
    }
    pub fn far() -> Self {
        Self { name: "far".into(), layout: SensorLayout::FAR }
    }
}

/// Everything that determines a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub seed: u64,
    pub layouts: Vec<NamedLayout>,
    /// Positive test noise factors.
    pub noise_levels: Vec<f64>,
    /// Number of partitions for which noisy test features are drawn.
    pub n_part: usize,
    /// Cap on the greedy iterations, for degraded-accuracy studies.
    pub n_cap: Option<usize>,
    pub online: OnlineConfig,
    pub bounds: ParameterBounds,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.layouts.is_empty() {
            return Err(Error::Config("dataset needs samples and at least one layout".into()));
        }
        if self.noise_levels.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("noise levels must be positive".into()));
        }
        if !self.noise_levels.is_empty() && self.n_part == 0 {
            return Err(Error::Config("noisy features need n_part > 0".into()));
        }
        if self.n_cap == Some(0) {
            return Err(Error::Config("N cap must be positive".into()));
        }
        self.bounds.validate()
    }

    /// Seed of the parameter draw of sample `id`.
    pub fn sample_seed(&self, id: usize) -> u64 {
        mix(self.seed, id as u64)
    }

    pub fn hash(&self, library_hash: &str) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("spec serializes"));
        h.update(library_hash.as_bytes());
        hex::encode(h.finalize())
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the measurement noise of one test realization.
pub fn noise_seed(sample_seed: u64, layout: usize, noise: usize, partition: usize, comp: usize) -> u64 {
    let key = ((layout as u64) << 48) ^ ((noise as u64) << 32) ^ ((partition as u64) << 8) ^ comp as u64;
    mix(mix(sample_seed, 0x6e6f_6973_65), key)
}

/// One simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub seed: u64,
    pub params: Vec<f64>,
    pub labels: [u8; 2],
    pub n_greedy: usize,
    pub n_basis: usize,
    pub online_s: f64,
    /// Noiseless IPV, `[layout][comp]`.
    pub ipv: Vec<Vec<Vec<f64>>>,
    /// Per-signal maxima, `[layout][comp][direction][sensor]`.
    pub maxima: Vec<Vec<Vec<Vec<f64>>>>,
    /// Noisy IPV, `[layout][noise][partition][comp]`.
    pub noisy: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
}

/// Simulates one sample.
pub fn simulate_sample(lib: &ArchetypeLibrary, cache: &OfflineCache, spec: &DatasetSpec, id: usize) -> Result<SampleRecord> {
    let seed = spec.sample_seed(id);
    let mu = GlobalParameter::sample_seeded(&spec.bounds, seed);
    let labels = mu.damage;
    let params = mu.to_vec();
    let sys = BridgeSystem::new(lib, cache, mu)?;
    let layouts: Vec<SensorLayout> = spec.layouts.iter().map(|l| l.layout).collect();
    let ev = evaluate_online(&sys, &spec.online, &layouts, spec.n_cap)?;
    let nc = DAMAGEABLE.len();
    let mut ipv = Vec::with_capacity(layouts.len());
    let mut maxima = Vec::with_capacity(layouts.len());
    let mut noisy = Vec::with_capacity(layouts.len());
    for li in 0..layouts.len() {
        let mut sig = Vec::with_capacity(nc);
        for c in 0..nc {
            sig.push(SensorSignals::from_rows(&ev.trajectory.outputs[li * nc + c], 2, N_SENSORS, ev.t_final)?);
        }
        ipv.push(sig.iter().map(|s| feature_vector(s, FeatureKind::Ipv)).collect::<Result<Vec<_>>>()?);
        maxima.push(sig.iter().map(|s| s.signal_maxima()).collect());
        let mut by_noise = Vec::with_capacity(spec.noise_levels.len());
        for (q, &sigma) in spec.noise_levels.iter().enumerate() {
            let mut by_part = Vec::with_capacity(spec.n_part);
            for p in 0..spec.n_part {
                let mut comps = Vec::with_capacity(nc);
                for (c, s) in sig.iter().enumerate() {
                    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(seed, li, q, p, c));
                    comps.push(feature_vector(&add_noise(s, sigma, &mut rng)?, FeatureKind::Ipv)?);
                }
                by_part.push(comps);
            }
            by_noise.push(by_part);
        }
        noisy.push(by_noise);
    }
    Ok(SampleRecord {
        id,
        seed,
        params,
        labels,
        n_greedy: ev.stats.n_greedy,
        n_basis: ev.stats.n_basis,
        online_s: ev.stats.total_s,
        ipv,
        maxima,
        noisy,
    })
}

/// Provenance of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub spec_hash: String,
    pub library_hash: String,
    pub complete: bool,
    pub n_done: usize,
    pub wall_time_s: f64,
    pub csv_files: Vec<String>,
    /// Noise enters only the test features of each partition.
    pub noise_on_test_only: bool,
}

/// A complete in-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SampleRecord>,
}

fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read(path)?;
    let mut out = Vec::new();
    let mut valid_len = 0usize;
    let mut start = 0usize;
    for (i, &b) in text.iter().enumerate() {
        if b == b'\n' {
            match serde_json::from_slice::<SampleRecord>(&text[start..i]) {
                Ok(r) => {
                    out.push(r);
                    valid_len = i + 1;
                }
                Err(e) => return Err(Error::Corrupted(format!("{}: {e}", path.display()))),
            }
            start = i + 1;
        }
    }
    if valid_len < text.len() {
        log::warn!("{}: dropping a partially written record", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(valid_len as u64)?;
    }
    Ok(out)
}

fn write_manifest(dir: &Path, m: &DatasetManifest) -> Result<()> {
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    std::fs::write(&tmp, serde_json::to_vec_pretty(m).map_err(|e| Error::Corrupted(e.to_string()))?)?;
    std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Option<DatasetManifest>> {
    let p = dir.join(MANIFEST_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read(&p)?;
    serde_json::from_slice(&text).map(Some).map_err(|e| Error::Corrupted(format!("{}: {e}", p.display())))
}

/// Generates or resumes the dataset in `dir`.
pub fn generate_dataset(lib: &ArchetypeLibrary, cache: &OfflineCache, spec: &DatasetSpec, dir: &Path) -> Result<Dataset> {
    use rayon::prelude::*;
    spec.validate()?;
    if cache.library_hash != lib.hash() {
        return Err(Error::ArtifactMismatch("offline cache was built for another library".into()));
    }
    std::fs::create_dir_all(dir)?;
    let spec_hash = spec.hash(&lib.hash());
    if let Some(m) = read_manifest(dir)? {
        if m.spec_hash != spec_hash {
            return Err(Error::ArtifactMismatch(format!("{} holds a dataset with different settings", dir.display())));
        }
        if m.complete {
            let samples = read_samples(&dir.join(SAMPLES_FILE))?;
            if samples.len() == spec.n_samples {
                return Ok(Dataset { manifest: m, samples });
            }
        }
    }
    let t0 = std::time::Instant::now();
    let mut manifest = DatasetManifest {
        spec: spec.clone(),
        spec_hash,
        library_hash: lib.hash(),
        complete: false,
        n_done: 0,
        wall_time_s: 0.0,
        csv_files: Vec::new(),
        noise_on_test_only: true,
    };
    write_manifest(dir, &manifest)?;
    let path = dir.join(SAMPLES_FILE);
    let mut samples = read_samples(&path)?;
    let mut done = vec![false; spec.n_samples];
    samples.retain(|s| s.id < spec.n_samples && !std::mem::replace(&mut done[s.id], true));
    let todo: Vec<usize> = (0..spec.n_samples).filter(|&i| !done[i]).collect();
    if !samples.is_empty() {
        log::info!("resuming: {} samples present, {} to go", samples.len(), todo.len());
    }
    let sink = Mutex::new(BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?));
    let fresh: Vec<SampleRecord> = todo
        .par_iter()
        .map(|&id| {
            let r = simulate_sample(lib, cache, spec, id)?;
            let mut line = serde_json::to_vec(&r).map_err(|e| Error::Corrupted(e.to_string()))?;
            line.push(b'\n');
            let mut w = sink.lock().expect("sink lock");
            w.write_all(&line)?;
            w.flush()?;
            if id % 100 == 0 {
                log::info!("sample {id}: N = {}, {:.3} s", r.n_greedy, r.online_s);
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    samples.extend(fresh);
    samples.sort_by_key(|s| s.id);
    manifest.n_done = samples.len();
    manifest.csv_files = write_csv_exports(dir, spec, &samples)?;
    manifest.complete = true;
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    write_manifest(dir, &manifest)?;
    Ok(Dataset { manifest, samples })
}

/// Loads a completed dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?.ok_or_else(|| Error::Config(format!("{}: no dataset manifest found", dir.display())))?;
    if !manifest.complete {
        return Err(Error::Corrupted(format!("{} holds a partial dataset run", dir.display())));
    }
    let mut samples = read_samples(&dir.join(SAMPLES_FILE))?;
    samples.sort_by_key(|s| s.id);
    if samples.len() != manifest.spec.n_samples || samples.iter().enumerate().any(|(i, s)| s.id != i) {
        return Err(Error::Corrupted(format!("{}: sample records do not match the manifest", dir.display())));
    }
    Ok(Dataset { manifest, samples })
}

fn format_sigma(s: f64) -> String {
    format!("{s}").replace('.', "p")
}

fn write_csv_exports(dir: &Path, spec: &DatasetSpec, samples: &[SampleRecord]) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let names = GlobalParameter::names();
    for kind in [FeatureKind::Ipv, FeatureKind::Ipvx] {
        let nf = kind.len(2, N_SENSORS);
        let mut header = vec!["id".to_string(), "seed".into()];
        header.extend(names.iter().cloned());
        header.extend(["label_8".to_string(), "label_16".into()]);
        for c in DAMAGEABLE {
            header.extend((0..nf).map(|k| format!("{}_{}_{k}", kind.name(), c + 1)));
        }
        for (li, l) in spec.layouts.iter().enumerate() {
            let mut sigmas: Vec<Option<usize>> = vec![None];
            sigmas.extend((0..spec.noise_levels.len()).map(Some));
            for q in sigmas {
                let sigma = q.map_or(0.0, |q| spec.noise_levels[q]);
                let name = format!("features_{}_{}_sigma{}.csv", kind.name(), l.name, format_sigma(sigma));
                let mut w = BufWriter::new(File::create(dir.join(&name))?);
                let mut h = header.clone();
                if q.is_some() {
                    h.insert(2, "partition".into());
                }
                writeln!(w, "{}", h.join(","))?;
                for s in samples {
                    let prefix = |w: &mut BufWriter<File>, p: Option<usize>| -> std::io::Result<()> {
                        write!(w, "{},{}", s.id, s.seed)?;
                        if let Some(p) = p {
                            write!(w, ",{p}")?;
                        }
                        for v in &s.params {
                            write!(w, ",{v:e}")?;
                        }
                        write!(w, ",{},{}", s.labels[0], s.labels[1])
                    };
                    match q {
                        None => {
                            prefix(&mut w, None)?;
                            for f in &s.ipv[li] {
                                for v in &f[..nf] {
                                    write!(w, ",{v:e}")?;
                                }
                            }
                            writeln!(w)?;
                        }
                        Some(q) => {
                            for (p, comps) in s.noisy[li][q].iter().enumerate() {
                                prefix(&mut w, Some(p))?;
                                for f in comps {
                                    for v in &f[..nf] {
                                        write!(w, ",{v:e}")?;
                                    }
                                }
                                writeln!(w)?;
                            }
                        }
                    }
                }
                w.flush()?;
                files.push(name);
            }
        }
    }
    Ok(files)
}

/// Features of one layout and kind, as seen by the train-test protocol.
pub struct DatasetView<'a> {
    pub dataset: &'a Dataset,
    pub layout: usize,
    pub kind: FeatureKind,
}

impl<'a> DatasetView<'a> {
    pub fn new(dataset: &'a Dataset, layout: &str, kind: FeatureKind) -> Result<Self> {
        let li = dataset
            .manifest
            .spec
            .layouts
            .iter()
            .position(|l| l.name == layout)
            .ok_or_else(|| Error::Config(format!("dataset has no layout '{layout}'")))?;
        Ok(Self { dataset, layout: li, kind })
    }

    /// Index of the noise factor `sigma` among the dataset's noise levels.
    pub fn noise_index(&self, sigma: f64) -> Result<Option<usize>> {
        if sigma == 0.0 {
            return Ok(None);
        }
        self.dataset
            .manifest
            .spec
            .noise_levels
            .iter()
            .position(|&s| (s - sigma).abs() <= 1e-12 * sigma)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("dataset has no noisy features at sigma = {sigma}")))
    }

    /// Checks that the dataset covers a train-test configuration.
    pub fn check(&self, cfg: &TtConfig) -> Result<()> {
        cfg.validate(self.dataset.samples.len())?;
        if cfg.noise.is_some() && cfg.n_part > self.dataset.manifest.spec.n_part {
            return Err(Error::Config(format!(
                "{} partitions requested, noisy features drawn for {}",
                cfg.n_part, self.dataset.manifest.spec.n_part
            )));
        }
        Ok(())
    }

    fn n_features(&self) -> usize {
        self.kind.len(2, N_SENSORS)
    }
}

impl FeatureSource for DatasetView<'_> {
    fn n_samples(&self) -> usize {
        self.dataset.samples.len()
    }
    fn n_components(&self) -> usize {
        DAMAGEABLE.len()
    }
    fn labels(&self, sample: usize) -> Vec<u8> {
        self.dataset.samples[sample].labels.to_vec()
    }
    fn clean(&self, sample: usize, comp: usize) -> &[f64] {
        &self.dataset.samples[sample].ipv[self.layout][comp][..self.n_features()]
    }
    fn noisy(&self, sample: usize, comp: usize, noise: usize, p: usize) -> &[f64] {
        &self.dataset.samples[sample].noisy[self.layout][noise][p][comp][..self.n_features()]
    }
}

/// Path of the JSON-lines sample store inside a dataset directory.
pub fn samples_path(dir: &Path) -> PathBuf {
    dir.join(SAMPLES_FILE)
}

/// Reads the sample store line by line without loading the manifest.
pub fn count_samples(dir: &Path) -> Result<usize> {
    let p = samples_path(dir);
    if !p.exists() {
        return Ok(0);
    }
    Ok(BufReader::new(File::open(p)?).lines().count())
}

/// Train-test settings shared by every cell of an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub phi: f64,
    pub n_part: usize,
    pub seed: u64,
    pub train: crate::classify::TrainConfig,
}

/// Runs the train-test protocol for every `(n_tt, sigma)` pair.
pub fn evaluate_grid(
    view: &DatasetView<'_>,
    n_tt: &[usize],
    sigmas: &[f64],
    g: &GridSettings,
) -> Result<Vec<crate::classify::ClassificationReport>> {
    let mut out = Vec::new();
    for &sigma in sigmas {
        let noise = view.noise_index(sigma)?;
        for &n in n_tt {
            let cfg = TtConfig {
                n_tt: n,
                phi: g.phi,
                n_part: g.n_part,
                noise,
                noise_factor: sigma,
                train: g.train.clone(),
                seed: g.seed,
            };
            view.check(&cfg)?;
            out.push(crate::classify::tt_learning(view, &cfg)?);
        }
    }
    Ok(out)
}

/// Plot-ready error curves: one row per grid cell.
pub fn write_curve_csv<W: Write>(w: &mut W, reports: &[crate::classify::ClassificationReport]) -> std::io::Result<()> {
    writeln!(w, "n_tt,sigma,mean_error,std_error,err_8,std_8,err_16,std_16,err_structure,std_structure,err_full,std_full,reference")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.config.n_tt,
            r.config.noise_factor,
            r.mean_error(),
            r.std_error(),
            r.mean_component[0],
            r.std_component[0],
            r.mean_component[1],
            r.std_component[1],
            r.mean_structure,
            r.std_structure,
            r.mean_full_state,
            r.std_full_state,
            r.reference_error
        )?;
    }
    Ok(())
}
