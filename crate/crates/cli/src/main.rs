use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use prrbc::artifact::{encode_reduced_model, load_offline_cache, save_offline_cache, write_atomic, ArtifactHeader, KIND_REDUCED_MODEL};
use prrbc::bridge::GlobalParameter;
use prrbc::config::PipelineConfig;
use prrbc::dataset::{evaluate_grid, generate_dataset, load_dataset, write_curve_csv, DatasetSpec, DatasetView, GridSettings, NamedLayout};
use prrbc::features::FeatureKind;
use prrbc::library::{ArchetypeLibrary, ALL_VARIANTS};
use prrbc::offline::{build_offline_cache, OfflineCache};
use prrbc::online::{evaluate_online, write_sensor_csv, BridgeSystem};
use prrbc::truth::{compare_trajectories, level1_error, FullOrderModel};

const CACHE_FILE: &str = "offline.prrbc";

#[derive(Parser)]
#[command(name = "prrbc", version, about = "Reduced-order bridge simulation and crack classification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; the built-in full configuration when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the built-in coarse smoke configuration.
    #[arg(long, global = true)]
    smoke: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 lets the pool decide).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reuse) the offline cache.
    Offline,
    /// Run one online simulation and export the sensor signals.
    Simulate {
        /// Parameter draw seed.
        #[arg(long, conflicts_with = "example")]
        seed: Option<u64>,
        /// Reference parameter case 1..=4.
        #[arg(long)]
        example: Option<usize>,
        /// Sensor layouts.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["near".to_string(), "far".to_string()])]
        layout: Vec<String>,
        /// Also march the full model and report the deviation.
        #[arg(long)]
        fe_truth: bool,
        /// Greedy iteration cap.
        #[arg(long)]
        n_cap: Option<usize>,
    },
    /// Generate a labeled feature dataset.
    Dataset {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Positive test noise factors.
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        layout: Option<Vec<String>>,
        #[arg(long)]
        n_cap: Option<usize>,
        /// Dataset directory name inside the output directory.
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Train and test classifiers over an (n_tt, sigma) grid.
    Evaluate {
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "near")]
        layout: String,
        #[arg(long, default_value = "ipvx")]
        feature_kind: String,
        #[arg(long, value_delimiter = ',')]
        n_tt: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        noise: Option<Vec<f64>>,
        #[arg(long)]
        n_part: Option<usize>,
    },
    /// Compare reduced and full solutions.
    FeCheck {
        /// Reference cases to check.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 4])]
        example: Vec<usize>,
        /// Additional random parameter draws.
        #[arg(long, default_value_t = 0)]
        random: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        /// Largest accepted relative H1 deviation.
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_name: &'a str,
    config_hash: String,
    library_hash: String,
    started_unix_s: u64,
    finished_unix_s: u64,
    artifacts: Vec<String>,
    code_version: &'static str,
    config: &'a PipelineConfig,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    match (&c.config, c.smoke) {
        (Some(_), true) => bail!("--config and --smoke are exclusive"),
        (Some(p), false) => Ok(PipelineConfig::load(p)?),
        (None, true) => Ok(PipelineConfig::smoke()),
        (None, false) => Ok(PipelineConfig::full()),
    }
}

fn layouts_by_name(names: &[String]) -> Result<Vec<NamedLayout>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "near" => Ok(NamedLayout::near()),
            "far" => Ok(NamedLayout::far()),
            _ => bail!("unknown sensor layout '{n}' (expected near or far)"),
        })
        .collect()
}

fn ensure_cache(cfg: &PipelineConfig, out: &Path, lib: &ArchetypeLibrary) -> Result<OfflineCache> {
    let path = out.join(CACHE_FILE);
    let key = cfg.offline_hash();
    if path.exists() {
        match load_offline_cache(&path, Some(&lib.hash())) {
            Ok((cache, prov)) if prov.get("offline_hash").and_then(|v| v.as_str()) == Some(key.as_str()) => {
                log::info!("reusing offline cache {}", path.display());
                return Ok(cache);
            }
            Ok(_) => log::info!("offline cache {} was built with other settings, rebuilding", path.display()),
            Err(e) => log::warn!("ignoring offline cache {}: {e}", path.display()),
        }
    }
    let cache = build_offline_cache(lib, &cfg.offline, &cfg.bounds, cfg.offline_frequencies()?)?;
    let prov = serde_json::json!({ "offline_hash": key, "config": cfg });
    save_offline_cache(&path, &cache, prov)?;
    Ok(cache)
}

fn print_offline_summary(cache: &OfflineCache) {
    let s = &cache.stats;
    println!("offline stage: {:.1} s", s.wall_time_s);
    println!("  port space sizes       {:?}", s.port_sizes);
    println!("  port retained energy   {:?}", s.port_retained_energy);
    println!("  lifting bubble size    {}", s.lifting_size);
    println!("  inhomogeneity size     {}", s.inhomogeneity_size);
    println!("  EIM sizes              {:?} (training error {:?})", s.eim_sizes, s.eim_training_error);
    for v in ALL_VARIANTS {
        println!("  {:<12} local basis {}", format!("{v:?}"), cache.variant(v).n_basis());
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    cfg.validate()?;
    if cli.common.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.common.workers).build_global()?;
    }
    let out = cli.common.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let started = unix_now();
    let lib = ArchetypeLibrary::build(&cfg.library)?;
    let mut artifacts = vec![out.join(CACHE_FILE).display().to_string()];
    let command = match &cli.command {
        Command::Offline => "offline",
        Command::Simulate { .. } => "simulate",
        Command::Dataset { .. } => "dataset",
        Command::Evaluate { .. } => "evaluate",
        Command::FeCheck { .. } => "fe-check",
    };
    match cli.command {
        Command::Offline => {
            let cache = ensure_cache(&cfg, &out, &lib)?;
            print_offline_summary(&cache);
        }
        Command::Simulate { seed, example, layout, fe_truth, n_cap } => {
            let cache = ensure_cache(&cfg, &out, &lib)?;
            let (mu, tag) = match (seed, example) {
                (_, Some(k)) => (GlobalParameter::example(&cfg.bounds, k)?, format!("example{k}")),
                (Some(s), None) => (GlobalParameter::sample_seeded(&cfg.bounds, s), format!("seed{s}")),
                (None, None) => bail!("simulate needs --seed or --example"),
            };
            let layouts: Vec<_> = layouts_by_name(&layout)?.into_iter().map(|l| l.layout).collect();
            let sys = BridgeSystem::new(&lib, &cache, mu.clone())?;
            let ev = evaluate_online(&sys, &cfg.online, &layouts, n_cap)?;
            println!(
                "online: N = {} ({} basis vectors), {:.3} s (level 1 {:.3} s, greedy {:.3} s, march {:.3} s)",
                ev.stats.n_greedy, ev.stats.n_basis, ev.stats.total_s, ev.stats.level1_s, ev.stats.greedy_s, ev.stats.march_s
            );
            let csv = out.join(format!("sensors_{tag}.csv"));
            let mut w = std::io::BufWriter::new(std::fs::File::create(&csv)?);
            write_sensor_csv(&mut w, &ev.model, &ev.trajectory)?;
            drop(w);
            let header = ArtifactHeader { kind: KIND_REDUCED_MODEL, library_hash: lib.hash(), h: cache.h, frequencies: cache.frequencies };
            let model_path = out.join(format!("model_{tag}.prrbc"));
            write_atomic(&model_path, &encode_reduced_model(&ev.model, &header, serde_json::json!({ "mu": mu, "config_hash": cfg.hash() }))?)?;
            let mut summary = serde_json::json!({ "mu": mu, "stats": ev.stats, "t_final": ev.t_final, "n_steps": ev.trajectory.n_steps });
            if fe_truth {
                let fom = FullOrderModel::new(&lib, mu)?;
                let cmp = compare_trajectories(&sys, &fom, &ev.model, &ev.trajectory, ev.t_final, cfg.online.load_sampling)?;
                println!(
                    "full model: {} dofs, march {:.2} s; relative H1 deviation {:.3e}, output deviation {:.3e}",
                    fom.n_dofs(),
                    cmp.fe_march_s,
                    cmp.h1_relative,
                    cmp.output_relative
                );
                summary["fe"] = serde_json::to_value(&cmp)?;
            }
            let sp = out.join(format!("simulate_{tag}.json"));
            write_json(&sp, &summary)?;
            artifacts.extend([csv, model_path, sp].iter().map(|p| p.display().to_string()));
        }
        Command::Dataset { n_samples, seed, noise, layout, n_cap, name } => {
            let cache = ensure_cache(&cfg, &out, &lib)?;
            let d = &cfg.dataset;
            let spec = DatasetSpec {
                n_samples: n_samples.unwrap_or(d.n_samples),
                seed: seed.unwrap_or(d.seed),
                layouts: match layout {
                    Some(l) => layouts_by_name(&l)?,
                    None => d.layouts.clone(),
                },
                noise_levels: noise.unwrap_or_else(|| d.noise_levels.clone()),
                n_part: d.n_part,
                n_cap: n_cap.or(d.n_cap),
                online: cfg.online.clone(),
                bounds: cfg.bounds,
            };
            let dir = out.join(name);
            let t0 = Instant::now();
            let ds = generate_dataset(&lib, &cache, &spec, &dir)?;
            let mean_n = ds.samples.iter().map(|s| s.n_greedy as f64).sum::<f64>() / ds.samples.len() as f64;
            println!("dataset: {} samples in {:.1} s, mean N = {mean_n:.1}, written to {}", ds.samples.len(), t0.elapsed().as_secs_f64(), dir.display());
            artifacts.push(dir.display().to_string());
        }
        Command::Evaluate { dataset, layout, feature_kind, n_tt, noise, n_part } => {
            let ds = load_dataset(&dataset)?;
            if ds.manifest.library_hash != lib.hash() {
                bail!("dataset {} was generated for another archetype library", dataset.display());
            }
            let kind: FeatureKind = feature_kind.parse()?;
            let view = DatasetView::new(&ds, &layout, kind)?;
            let e = &cfg.evaluate;
            let g = GridSettings { phi: e.phi, n_part: n_part.unwrap_or(e.n_part), seed: e.seed, train: e.train.clone() };
            let n_tt = n_tt.unwrap_or_else(|| e.n_tt.clone());
            let sigmas = noise.unwrap_or_else(|| e.sigma.clone());
            let reports = evaluate_grid(&view, &n_tt, &sigmas, &g)?;
            println!("{:>6} {:>6} {:>11} {:>11} {:>11} {:>11} {:>11}", "n_tt", "sigma", "mean err", "std", "structure", "full state", "reference");
            for r in &reports {
                println!(
                    "{:>6} {:>6} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e}",
                    r.config.n_tt,
                    r.config.noise_factor,
                    r.mean_error(),
                    r.std_error(),
                    r.mean_structure,
                    r.mean_full_state,
                    r.reference_error
                );
            }
            let stem = format!("{}_{}", kind.name(), layout);
            let rp = out.join(format!("report_{stem}.json"));
            write_json(&rp, &serde_json::json!({ "dataset": dataset, "dataset_spec_hash": ds.manifest.spec_hash, "reports": reports }))?;
            let cp = out.join(format!("curve_{stem}.csv"));
            let mut w = Vec::new();
            write_curve_csv(&mut w, &reports)?;
            write_atomic(&cp, &w)?;
            artifacts.extend([rp, cp].iter().map(|p| p.display().to_string()));
        }
        Command::FeCheck { example, random, seed, tol } => {
            let cache = ensure_cache(&cfg, &out, &lib)?;
            let mut cases = Vec::new();
            for k in example {
                cases.push((format!("example {k}"), GlobalParameter::example(&cfg.bounds, k)?));
            }
            for i in 0..random as u64 {
                cases.push((format!("seed {}", seed + i), GlobalParameter::sample_seeded(&cfg.bounds, seed + i)));
            }
            let mut rows = Vec::new();
            let mut worst: f64 = 0.0;
            for (name, mu) in cases {
                let sys = BridgeSystem::new(&lib, &cache, mu.clone())?;
                let fom = FullOrderModel::new(&lib, mu)?;
                let ev = evaluate_online(&sys, &cfg.online, &[prrbc::bridge::SensorLayout::NEAR], None)?;
                let omega = cache.frequencies.omegas()[cache.frequencies.len() / 2];
                let site = prrbc::bridge::LoadSite { slot: 2, axle: 0, l: 0.0 };
                let l1 = level1_error(&sys, &fom, omega, &site)?;
                let cmp = compare_trajectories(&sys, &fom, &ev.model, &ev.trajectory, ev.t_final, cfg.online.load_sampling)?;
                println!(
                    "{name:<12} N = {:>2}  online {:.3} s  full {:.2} s  speedup {:>6.1}  H1 deviation {:.3e}  output deviation {:.3e}  level 1 {:.3e}",
                    ev.stats.n_greedy,
                    ev.stats.total_s,
                    cmp.fe_march_s,
                    cmp.fe_march_s / ev.stats.total_s,
                    cmp.h1_relative,
                    cmp.output_relative,
                    l1
                );
                worst = worst.max(cmp.h1_relative);
                rows.push(serde_json::json!({ "case": name, "n": ev.stats.n_greedy, "online_s": ev.stats.total_s, "comparison": cmp, "level1_error": l1 }));
            }
            let rp = out.join("fe_check.json");
            write_json(&rp, &rows)?;
            artifacts.push(rp.display().to_string());
            if !(worst < tol) {
                bail!("largest relative H1 deviation {worst:.3e} exceeds {tol:.1e}");
            }
        }
    }
    let manifest = RunManifest {
        command,
        config_name: &cfg.name,
        config_hash: cfg.hash(),
        library_hash: lib.hash(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
        artifacts,
        code_version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
    };
    write_json(&out.join(format!("run_{command}.json")), &manifest)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
