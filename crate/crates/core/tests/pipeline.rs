use umix::data::save_csv;
use umix::pipeline::*;
use umix::uncertainty::ImportanceWeights;

const BASE: &str = r#"
name = "pipeline"
master_seed = 5
seeds = [0, 1]
methods = [{ name = "erm" }, { name = "focal", gamma = 1.0 }, { name = "umix", alpha = 1.0 }]

[dataset]
kind = "four_moons"
samples_per_group = [80, 80, 8, 8]
eval_samples_per_group = 30

[train]
epochs = 5
arch = { kind = "mlp", hidden = [8] }

[uncertainty]
start_epoch = 1
window = 3
eta = 4.0
eta_sweep = [0.5]
"#;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(BASE).unwrap()
}

#[test]
fn configs_round_trip() {
    let every_method = BASE.replace(
        r#"methods = [{ name = "erm" }, { name = "focal", gamma = 1.0 }, { name = "umix", alpha = 1.0 }]"#,
        r#"methods = [
            { name = "erm" }, { name = "vanilla_mixup", alpha = 0.2 }, { name = "ingroup_mixup", sigma = 1.0 },
            { name = "focal" }, { name = "cvar_dro", alpha = 0.5 }, { name = "jtt", t_id = 2, lambda_up = 4.0 },
            { name = "static_reweight" }, { name = "group_dro" }, { name = "umix", pairing = "identity" },
        ]
        [theory]
        alphas = [2.0]
        [selection]
        criterion = "average""#,
    );
    for text in [BASE.to_string(), every_method] {
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }
    for file in ["spurious.toml", "four_moons.toml"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(file);
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(
            ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(),
            c,
            "{file}"
        );
    }
}

#[test]
fn sweep_rows_and_sample_std() {
    let cfg = config();
    let labels: Vec<String> = cells(&cfg).into_iter().map(|c| c.label).collect();
    assert_eq!(labels, ["erm", "focal", "umix", "umix[eta=0.5]"]);

    let tmp = tempfile::tempdir().unwrap();
    let result = run_pipeline(&cfg, tmp.path()).unwrap();
    assert_eq!(result.runs.len(), 4 * 2);
    for s in &result.summary {
        let worst: Vec<f64> = result
            .runs
            .iter()
            .filter(|r| r.method == s.method)
            .map(|r| r.selected.test.worst_acc)
            .collect();
        let mean = worst.iter().sum::<f64>() / 2.0;
        let std = ((worst[0] - mean).powi(2) + (worst[1] - mean).powi(2)).sqrt();
        assert_eq!(s.seeds, 2);
        assert!((s.worst_mean - mean).abs() < 1e-15 && (s.worst_std - std).abs() < 1e-15);
    }
    assert_eq!(
        mean_std(&[1.0, 2.0, 3.0, 4.0]),
        (2.5, (5.0f64 / 3.0).sqrt())
    );
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));

    let dir = run_dir(tmp.path(), "umix[eta=0.5]", 1);
    assert!(dir.join("log.csv").is_file());
    let selected = result
        .runs
        .iter()
        .find(|r| r.method == "umix[eta=0.5]" && r.seed == 1)
        .unwrap();
    assert!(dir
        .join(format!("epoch-{:04}.ckpt", selected.selected.epoch))
        .is_file());
}

#[test]
fn staged_run_matches_one_shot() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    let one_shot = run_pipeline(&cfg, &tmp.path().join("a")).unwrap();
    train_all(&cfg, &tmp.path().join("b")).unwrap();
    let staged = evaluate_saved(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(one_shot.runs, staged.runs);
    assert_eq!(one_shot.summary, staged.summary);
}

#[test]
fn phase_b_needs_matching_persisted_weights() {
    let cfg = config();
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare_data(&cfg.dataset).unwrap();
    let umix_cell = cells(&cfg).into_iter().find(|c| c.label == "umix").unwrap();

    // no phase A yet
    assert!(train_cell(&cfg, &umix_cell, &data.train, 0, tmp.path(), None).is_err());

    uncertainty_phase(&cfg, &data.train, 0, tmp.path()).unwrap();
    let dir = seed_dir(tmp.path(), 0).join("uncertainty");
    let w = ImportanceWeights::load(&dir, "weights-eta4").unwrap();
    w.check_binding(&data.train).unwrap();
    assert!(train_cell(&cfg, &umix_cell, &data.train, 0, tmp.path(), None).is_ok());

    let mut forged = w.clone();
    forged.dataset_fingerprint = "0000".into();
    forged.save(&dir, "weights-eta4").unwrap();
    let err = train_cell(&cfg, &umix_cell, &data.train, 0, tmp.path(), None).unwrap_err();
    assert!(
        matches!(err, umix::Error::FingerprintMismatch { .. }),
        "{err}"
    );
}

#[test]
fn group_free_validation_needs_average_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare_data(&config().dataset).unwrap();
    save_csv(&data.train, &tmp.path().join("train.csv")).unwrap();
    save_csv(&data.val.without_groups(), &tmp.path().join("val.csv")).unwrap();
    save_csv(&data.test, &tmp.path().join("test.csv")).unwrap();
    let text = format!(
        r#"
        seeds = [0]
        methods = [{{ name = "erm" }}]
        [dataset]
        kind = "csv"
        train = "{0}/train.csv"
        val = "{0}/val.csv"
        test = "{0}/test.csv"
        num_classes = 2
        num_groups = 4
        [train]
        epochs = 2
        arch = {{ kind = "glm" }}
        "#,
        tmp.path().display()
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let err = run_pipeline(&cfg, &tmp.path().join("out")).unwrap_err();
    assert!(
        err.is_config_error() && err.to_string().contains("average"),
        "{err}"
    );

    let avg =
        ExperimentConfig::from_toml(&format!("{text}\n[selection]\ncriterion = \"average\"\n"))
            .unwrap();
    let r = run_pipeline(&avg, &tmp.path().join("out")).unwrap();
    assert!(r.runs[0].alternative.is_none());
}
