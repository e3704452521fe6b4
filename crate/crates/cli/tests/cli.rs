use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use proptest::prelude::*;
use se2p::cache::read_cache;
use se2p::model::load_checkpoint;
use se2p::nn::Parameters;
use se2p::{ConfigClass, Dataset, Stage};
use se2p_cli::commands::TrainOptions;
use se2p_cli::config::dataset_defaults;
use se2p_cli::{cmd_params, cmd_preprocess, cmd_train, load_dataset, resolve, RunConfigFile};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mutag() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| load_dataset(Some(&data_dir()), "MUTAG").unwrap())
}

fn se2p(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_se2p"))
        .args(args)
        .current_dir(cwd)
        .env_remove(se2p_cli::DATA_DIR_ENV)
        .output()
        .unwrap()
}

fn quick(out: &Path) -> RunConfigFile {
    RunConfigFile {
        dataset: Some("MUTAG".into()),
        data_dir: Some(data_dir()),
        out: Some(out.to_path_buf()),
        epochs: Some(2),
        folds: Some(2),
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn flags_override_file_and_file_overrides_table(
        flag_hidden in prop::option::of(2usize..40),
        file_hidden in prop::option::of(2usize..40),
        flag_dropout in prop::option::of(0.0f64..0.9),
        file_dropout in prop::option::of(0.0f64..0.9),
        flag_p in prop::option::of(0.0f64..0.9),
        file_p in prop::option::of(0.0f64..0.9),
        flag_seed in prop::option::of(any::<u64>()),
        file_seed in prop::option::of(any::<u64>()),
        file_epochs in prop::option::of(1usize..500),
    ) {
        let flags = RunConfigFile { hidden: flag_hidden, dropout: flag_dropout, p: flag_p, seed: flag_seed, ..Default::default() };
        let file = RunConfigFile { hidden: file_hidden, dropout: file_dropout, p: file_p, seed: file_seed, epochs: file_epochs, ..Default::default() };
        let rc = resolve(&flags.layer(&file), mutag()).unwrap();
        let table = dataset_defaults("MUTAG").unwrap();
        let derived = se2p::default_hparams(mutag().gamma).unwrap();
        prop_assert_eq!(rc.model.hidden, flag_hidden.or(file_hidden).unwrap_or(table.hidden));
        prop_assert_eq!(rc.model.dropout, flag_dropout.or(file_dropout).unwrap_or(table.dropout));
        prop_assert_eq!(rc.plan.p, flag_p.or(file_p).unwrap_or(derived.p));
        prop_assert_eq!(rc.seed, flag_seed.or(file_seed).unwrap_or(0));
        prop_assert_eq!(rc.epochs, file_epochs.unwrap_or(se2p::trainer::DEFAULT_EPOCHS));
        prop_assert_eq!(rc.model.batch_size, table.batch_size);
        prop_assert_eq!(rc.l, table.l);
    }
}

#[test]
fn mutag_defaults_follow_the_table_and_dataset_statistics() {
    let rc = resolve(&RunConfigFile::default(), mutag()).unwrap();
    assert_eq!(rc.class, ConfigClass::C2);
    assert_eq!((rc.l, rc.plan.r), (3, 3));
    assert!((rc.plan.p - 0.499).abs() < 0.01, "p = {}", rc.plan.p);
    assert_eq!(
        (rc.model.hidden, rc.model.batch_size, rc.model.n_pool),
        (32, 64, Some(3))
    );
    assert_eq!(rc.run_name(), "MUTAG_c2_0");
}

#[test]
fn binary_layers_flags_over_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "dataset": "MUTAG",
        "data_dir": data_dir(),
        "config_class": "c1",
        "epochs": 2,
        "folds": 2,
        "hidden": 8,
    });
    fs::write(&config, body.to_string()).unwrap();
    let out = se2p(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--hidden",
            "4",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/MUTAG_c1_3.json")).unwrap()).unwrap();
    assert_eq!(json["model"]["hidden"], 4);
    assert_eq!(json["epochs"], 2);
    assert_eq!(json["model"]["dropout"], 0.5);
    assert_eq!(json["fold_acc"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(dir.path().join("out/MUTAG_c1_3.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,mean,fold0,fold1"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn exit_codes_separate_configuration_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| se2p(args, dir.path()).status.code();

    assert_eq!(code(&["preprocess", "--dataset", "MUTAG"]), Some(2));
    assert_eq!(
        code(&["preprocess", "--dataset", "MUTAG", "--data-dir", "/nonexistent"]),
        Some(2)
    );
    let data = data_dir();
    let data = data.to_str().unwrap();
    assert_eq!(code(&["preprocess", "--dataset", "NOPE", "--data-dir", data]), Some(2));
    assert_eq!(
        code(&["preprocess", "--dataset", "MUTAG", "--data-dir", data, "--p", "1.5"]),
        Some(2)
    );

    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"dataset": "MUTAG", "learning_rate": 0.1}"#).unwrap();
    assert_eq!(code(&["train", "--config", config.to_str().unwrap()]), Some(2));

    let broken = dir.path().join("BROKEN");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("BROKEN_A.txt"), "1, 2\n2, x\n").unwrap();
    fs::write(broken.join("BROKEN_graph_indicator.txt"), "1\n1\n").unwrap();
    fs::write(broken.join("BROKEN_graph_labels.txt"), "1\n").unwrap();
    let out = se2p(
        &[
            "preprocess",
            "--dataset",
            "BROKEN",
            "--data-dir",
            dir.path().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BROKEN_A.txt"));
}

#[test]
fn params_report_every_class() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_params(&quick(dir.path())).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.config_class).collect::<Vec<_>>(),
        ConfigClass::ALL
    );
    assert_eq!(rows[0].formula, Some(420));
    for row in &rows {
        if let Some(f) = row.formula {
            assert!(row.with_bias > f);
        }
    }
    let out = se2p(
        &[
            "params",
            "--dataset",
            "MUTAG",
            "--data-dir",
            data_dir().to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.lines().nth(1).unwrap().contains("420"));
}

#[test]
fn wl_demo_prints_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = se2p(&["wl-demo", "--out", "demo"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().next().unwrap().ends_with(": indistinguishable"));
    assert!(stdout.contains("of 36 pairs distinguishable"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("demo/wl_demo.json")).unwrap()).unwrap();
    assert_eq!(json["pairs"].as_array().unwrap().len(), 36);
    assert_eq!(json["original_distinguishable"], false);
}

#[test]
fn preprocess_writes_graph_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfigFile {
        config_class: Some(ConfigClass::C1),
        ..quick(dir.path())
    };
    let report = cmd_preprocess(&cfg).unwrap();
    assert_eq!(
        (report.graphs, report.r, report.l, report.levels, report.d),
        (188, 3, 3, 4, 7)
    );
    let cache = read_cache(&report.cache).unwrap();
    assert_eq!(cache.header.stage, Stage::GraphVector);
    assert_eq!(cache.graphs.len(), 188);
    assert!(cache
        .graphs
        .iter()
        .all(|g| g.shape() == vec![28] && g.payload.len() == 28));
}

#[test]
fn train_reuses_a_matching_cache_and_rebuilds_a_stale_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_train(&cfg, TrainOptions::default()).unwrap();
    let cache = dir.path().join("MUTAG_c2_0.cache");
    let mut bytes = fs::read(&cache).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&cache, &bytes).unwrap();
    let err = cmd_train(&cfg, TrainOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    let changed = RunConfigFile { p: Some(0.2), ..cfg };
    let summary = cmd_train(&changed, TrainOptions::default()).unwrap();
    assert_eq!(summary.p, 0.2);
    assert!(read_cache(&cache).is_ok());
}

#[test]
fn checkpoints_are_written_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfigFile {
        config_class: Some(ConfigClass::C3),
        ..quick(dir.path())
    };
    let summary = cmd_train(&cfg, TrainOptions { checkpoints: true }).unwrap();
    for f in 0..2 {
        let model = load_checkpoint(dir.path().join(format!("MUTAG_c3_0_fold{f}.se2m"))).unwrap();
        assert_eq!(model.cfg, summary.model);
        assert_eq!(model.num_scalars() as u64, summary.params_with_bias);
    }
}
