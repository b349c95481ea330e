use sonoskill::config::ExperimentConfig;
use sonoskill::eval::{error_table, evaluate, from_csv, to_csv, Method};
use sonoskill::gmm::{fit_nodes, EmConfig, GmmModel};
use sonoskill::mc::{load_mc, save_mc, train_mlp, MlpConfig};
use sonoskill::synth::{generate_corpus, CorpusConfig, ImageHandling};
use sonoskill::trajectory::{load_dataset, save_dataset};
use sonoskill::{ControlVariable, FEATURE_DIM};

fn small_corpus(images: ImageHandling<'_>) -> sonoskill::Dataset {
    let cfg = CorpusConfig { subjects: 3, demos: 2, duration_s: 5.0, seed: 4, ..Default::default() };
    generate_corpus(&cfg, images).unwrap()
}

fn with_features(mut ds: sonoskill::Dataset) -> sonoskill::Dataset {
    for s in &mut ds.subjects {
        for d in &mut s.demos {
            for (i, f) in d.frames.iter_mut().enumerate() {
                let v: [f64; FEATURE_DIM] = std::array::from_fn(|j| ((i * 7 + j) as f64 * 0.37).sin() + f.w.f.force[2] * 0.01);
                f.features = Some(v);
            }
        }
    }
    ds
}

#[test]
fn trajectory_directory_round_trips_controls_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let ds = with_features(small_corpus(ImageHandling::Skip));
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.subjects.len(), ds.subjects.len());
    for (a, b) in ds.frames().zip(back.frames()) {
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.w, b.w);
        assert_eq!(a.features, b.features);
    }
    for (a, b) in ds.subjects.iter().zip(&back.subjects) {
        assert_eq!(a.meta, b.meta);
    }
}

#[test]
fn image_sidecars_round_trip_to_byte_precision() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_corpus(ImageHandling::Keep);
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    for (a, b) in ds.frames().zip(back.frames()) {
        let (a, b) = (a.image.as_ref().unwrap(), b.image.as_ref().unwrap());
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn truncated_trajectory_is_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_corpus(ImageHandling::Skip);
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("subject_001.traj");
    let text = std::fs::read_to_string(&path).unwrap();
    let broken: String = text.lines().take(4).map(|l| format!("{l}\n")).collect::<String>() + "0.5,1,0,0\n";
    std::fs::write(&path, broken).unwrap();
    let e = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(e.contains("subject_001.traj"), "{e}");
}

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = with_features(small_corpus(ImageHandling::Skip)).nodes().unwrap();
    let fit = fit_nodes(&nodes, 3, &EmConfig { max_iter: 20, ..Default::default() }).unwrap();
    let gmm_path = dir.path().join("gmm.txt");
    fit.model.save(&gmm_path).unwrap();
    let back = GmmModel::load(&gmm_path).unwrap();
    let x = nodes[5].to_array();
    assert_eq!(back.log_density(&x).unwrap(), fit.model.log_density(&x).unwrap());

    let t = train_mlp(&nodes, &MlpConfig { epochs: 5, hidden: vec![8], ..Default::default() }).unwrap();
    let mc_path = dir.path().join("mc.txt");
    save_mc(&mc_path, &t.model, &t.bounds).unwrap();
    let (mlp, bounds) = load_mc(&mc_path).unwrap();
    assert_eq!(bounds, t.bounds);
    assert_eq!(mlp.score(&x), t.model.score(&x));

    assert!(GmmModel::load(&mc_path).is_err());
}

#[test]
fn report_tables_and_config_files_parse_back() {
    let nodes = with_features(small_corpus(ImageHandling::Skip)).nodes().unwrap();
    let fixed = ControlVariable::default();
    let r = evaluate(Method::Mc { samples: 7 }, "intra", &nodes, |_, _| Ok((fixed, None))).unwrap();
    let csv = to_csv(std::slice::from_ref(&r));
    let back = from_csv(&csv).unwrap();
    assert_eq!(back[0].pose, r.pose);
    assert_eq!(back[0].fps, r.fps);
    assert_eq!(error_table(&back), error_table(std::slice::from_ref(&r)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    let cfg = ExperimentConfig { seed: 12, mc_samples: vec![10, 20], ..Default::default() };
    std::fs::write(&path, cfg.to_text()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}
