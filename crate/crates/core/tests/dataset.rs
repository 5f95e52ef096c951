use std::path::Path;

use prrbc::classify::TrainConfig;
use prrbc::config::PipelineConfig;
use prrbc::dataset::{
    evaluate_grid, generate_dataset, load_dataset, samples_path, write_curve_csv, DatasetSpec, DatasetView, GridSettings,
    NamedLayout,
};
use prrbc::features::FeatureKind;
use prrbc::library::ArchetypeLibrary;
use prrbc::offline::build_offline_cache;
use prrbc::Error;

fn spec(cfg: &PipelineConfig, n: usize) -> DatasetSpec {
    DatasetSpec {
        n_samples: n,
        seed: 5,
        layouts: vec![NamedLayout::near(), NamedLayout::far()],
        noise_levels: vec![0.02],
        n_part: 2,
        n_cap: None,
        online: cfg.online.clone(),
        bounds: cfg.bounds,
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generation_is_deterministic_resumable_and_guarded() {
    let cfg = PipelineConfig::smoke();
    let lib = ArchetypeLibrary::build(&cfg.library).unwrap();
    let cache = build_offline_cache(&lib, &cfg.offline, &cfg.bounds, cfg.offline_frequencies().unwrap()).unwrap();
    let s = spec(&cfg, 6);
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let ds = generate_dataset(&lib, &cache, &s, &a).unwrap();
    assert!(ds.manifest.complete);
    assert_eq!(ds.samples.len(), 6);
    let first = &ds.samples[0];
    assert_eq!(first.params.len(), 45);
    assert_eq!(first.ipv.len(), 2);
    assert_eq!(first.ipv[0][0].len(), 32);
    assert_eq!(first.noisy[1][0].len(), 2);
    let files = csv_files(&a);
    assert_eq!(files.len(), 8);
    assert!(files.iter().any(|(n, _)| n == "features_ipvx_near_sigma0p02.csv"));

    // Interrupted run: three records plus a torn fourth line.
    std::fs::create_dir_all(&b).unwrap();
    let text = std::fs::read_to_string(samples_path(&a)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let partial = format!("{}\n{}\n{}\n{}", lines[0], lines[1], lines[2], &lines[3][..lines[3].len() / 2]);
    std::fs::write(samples_path(&b), partial).unwrap();
    let resumed = generate_dataset(&lib, &cache, &s, &b).unwrap();
    assert_eq!(resumed.samples.len(), 6);
    assert_eq!(csv_files(&b), files);
    let loaded = load_dataset(&b).unwrap();
    assert_eq!(loaded.samples.iter().map(|r| r.ipv.clone()).collect::<Vec<_>>(), ds.samples.iter().map(|r| r.ipv.clone()).collect::<Vec<_>>());

    // A complete dataset is reused as is.
    let again = generate_dataset(&lib, &cache, &s, &a).unwrap();
    assert_eq!(again.manifest.wall_time_s, ds.manifest.wall_time_s);

    let other = DatasetSpec { seed: 6, ..s.clone() };
    assert!(matches!(generate_dataset(&lib, &cache, &other, &a), Err(Error::ArtifactMismatch(_))));
    assert!(load_dataset(&tmp.path().join("missing")).is_err());

    // Evaluation over the tiny dataset produces one curve row per cell.
    let view = DatasetView::new(&ds, "near", FeatureKind::Ipvx).unwrap();
    let g = GridSettings { phi: 0.5, n_part: 2, seed: 1, train: TrainConfig { max_epochs: 50, ..TrainConfig::default() } };
    match evaluate_grid(&view, &[6], &[0.0, 0.02], &g) {
        Ok(reports) => {
            assert_eq!(reports.len(), 2);
            let mut out = Vec::new();
            write_curve_csv(&mut out, &reports).unwrap();
            let text = String::from_utf8(out).unwrap();
            assert_eq!(text.lines().count(), 3);
            assert!(text.starts_with("n_tt,sigma,mean_error,std_error"));
        }
        // Six samples may leave a training split with a single class.
        Err(e) => assert!(e.to_string().contains("class"), "{e}"),
    }
    assert!(DatasetView::new(&ds, "middle", FeatureKind::Ipv).is_err());
    assert!(view.noise_index(0.05).is_err());
    // Pre-drawn noise exists for only two partitions.
    let g3 = GridSettings { n_part: 3, ..g };
    assert!(evaluate_grid(&view, &[6], &[0.02], &g3).is_err());
}
