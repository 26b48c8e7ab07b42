//! End-to-end pipeline tests at miniature scale.

use std::fs;
use std::process::Command;

use mnd_cli::commands::{self, Method, Workspace};
use mnd_cli::config::ExperimentConfig;
use mnd_cli::report;
use mnd_core::classifier::Classifier;
use mnd_core::losses::AttackMode;
use mnd_core::pixmap;

/// A configuration small enough for test-tier runtimes.
fn mini_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.dataset.classes = 4;
    config.dataset.train_per_class = 40;
    config.dataset.test_per_class = 10;
    config.dataset.height = 16;
    config.dataset.width = 16;
    config.classifier.epochs = 4;
    config.classifier.learning_rate = 0.12;
    config.classifier.batch_size = 16;
    config.attack.count = 6;
    config.attack.alpha = 1e-2;
    config.attack.max_iters = 80;
    config.validate().unwrap();
    config
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = mini_config();
    let ws_a = Workspace::new(&dir.path().join("a")).unwrap();
    let ws_b = Workspace::new(&dir.path().join("b")).unwrap();
    commands::cmd_gen_data(&config, &ws_a).unwrap();
    commands::cmd_gen_data(&config, &ws_b).unwrap();
    assert_eq!(
        fs::read(ws_a.train_data()).unwrap(),
        fs::read(ws_b.train_data()).unwrap()
    );
    assert_eq!(
        fs::read(ws_a.test_data()).unwrap(),
        fs::read(ws_b.test_data()).unwrap()
    );
    let manifest = fs::read_to_string(ws_a.manifest()).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 4 * 40);
}

#[test]
fn attack_records_roundtrip_through_stored_images() {
    let dir = tempfile::tempdir().unwrap();
    let config = mini_config();
    let ws = Workspace::new(dir.path()).unwrap();
    commands::cmd_gen_data(&config, &ws).unwrap();
    commands::cmd_train(&config, &ws).unwrap();

    let methods = vec![
        Method::parse("mnd").unwrap(),
        Method::parse("bim").unwrap(),
    ];
    let outcome = commands::cmd_attack(&config, &ws, AttackMode::NonTargeted, &methods).unwrap();
    assert_eq!(outcome.per_method.len(), 2);
    assert_eq!(outcome.selected.len(), config.attack.count);

    // Skip log lists exactly the cleans the classifier got wrong.
    let classifier = Classifier::load(&ws.checkpoint()).unwrap();
    let test = mnd_core::dataset::Dataset::load(&ws.test_data()).unwrap();
    let wrong: Vec<usize> = (0..test.len())
        .filter(|&i| classifier.predict(&test.image(i)).unwrap().class != test.label(i))
        .collect();
    let skipped: Vec<usize> = outcome.skipped.iter().map(|s| s.image_id).collect();
    assert_eq!(skipped, wrong);

    // Stored adversarial images reproduce the recorded class on reload.
    for (method, records) in &outcome.per_method {
        let mdir = ws.method_dir(AttackMode::NonTargeted, *method);
        for r in records {
            let img = pixmap::read_p6(&commands::image_file(&mdir, r.image_id)).unwrap();
            assert!(img.is_on_grid_255());
            let predicted = classifier.predict(&img).unwrap().class;
            assert_eq!(predicted, r.adversarial_class, "{} image {}", method.label(), r.image_id);
        }
    }
}

#[test]
fn evaluate_csvs_are_consistent_and_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let config = mini_config();
    let ws = Workspace::new(dir.path()).unwrap();
    commands::cmd_gen_data(&config, &ws).unwrap();
    commands::cmd_train(&config, &ws).unwrap();
    let methods = Method::parse_list("mnd,no-norm,bim", AttackMode::NonTargeted).unwrap();
    commands::cmd_attack(&config, &ws, AttackMode::NonTargeted, &methods).unwrap();
    let outcome = commands::cmd_evaluate(&config, &ws, AttackMode::NonTargeted).unwrap();

    let eval_dir = ws.eval_dir(AttackMode::NonTargeted);
    let parsed = report::read_per_image_csv(&eval_dir.join("per_image.csv")).unwrap();
    assert_eq!(parsed.len(), outcome.records.len());

    // Aggregates recomputed from the emitted per-image CSV reproduce the
    // aggregate CSV byte-for-byte.
    let recomputed = mnd_core::metrics::aggregate(&parsed).unwrap();
    let expected = fs::read_to_string(eval_dir.join("aggregate.csv")).unwrap();
    assert_eq!(report::aggregate_csv_text(&recomputed), expected);

    // Aggregate row count equals the number of methods run.
    assert_eq!(outcome.report.methods.len(), 3);
}

#[test]
fn reproduce_twice_yields_identical_aggregate_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = mini_config();
    config.attack.count = 4;
    config.attack.max_iters = 50;
    let run = |tag: &str| {
        let ws = Workspace::new(&dir.path().join(tag)).unwrap();
        let outcome = commands::cmd_reproduce(&config, &ws).unwrap();
        assert!(!outcome.verdicts.is_empty());
        (
            fs::read(ws.eval_dir(AttackMode::NonTargeted).join("aggregate.csv")).unwrap(),
            fs::read(ws.eval_dir(AttackMode::Targeted).join("aggregate.csv")).unwrap(),
            fs::read_to_string(ws.summary()).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    // One verdict line per table claim checked.
    assert_eq!(a.2.lines().count(), 4 * 3 + 4 + 2);
}

#[test]
fn binary_smoke_gen_data_and_stage_tagged_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let exe = env!("CARGO_BIN_EXE_mnd");

    // Attack before train fails with a stage-tagged message and nonzero exit.
    let fail = Command::new(exe)
        .args(["attack", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!fail.status.success());
    let stderr = String::from_utf8_lossy(&fail.stderr);
    assert!(stderr.contains("[attack]"), "stderr: {stderr}");

    // gen-data with a tiny config file succeeds.
    let config_path = dir.path().join("config.json");
    let config_text = serde_json::to_string_pretty(&{
        let mut c = mini_config();
        c.dataset.train_per_class = 5;
        c.dataset.test_per_class = 2;
        c
    })
    .unwrap();
    fs::write(&config_path, config_text).unwrap();
    let ok = Command::new(exe)
        .args(["gen-data", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(out.join("dataset").join("train.bin").exists());

    // Unknown config keys are rejected, naming the key.
    fs::write(&config_path, r#"{"attack": {"alhpa": 0.1}}"#).unwrap();
    let bad = Command::new(exe)
        .args(["gen-data", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("alhpa"));
}
