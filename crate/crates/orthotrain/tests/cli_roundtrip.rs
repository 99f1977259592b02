//! End-to-end command-line contract: run directories repeat byte-for-byte
//! (wall-clock excluded), every artifact re-parses, IDX datasets survive the
//! disk round trip, and malformed inputs exit with the documented codes.

use orthotrain::cli::{load_run_model, run_cli};
use orthotrain::config::{load_train_config, save_train_config};
use orthotrain::data::{synth_digits, write_dataset_idx, DataKind, DatasetSpec};
use orthotrain::model::{materialize, ModelSpec, OrthoChoice, TrainMode};
use orthotrain::ortho::{Method, OrthoSpec};
use orthotrain::train::{DecayTargets, MetricsRecord, OptimizerSpec, SoptSpec, SubsetSize, TrainConfig};
use std::path::Path;

fn small_config(method: Method) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(method)),
            ..ModelSpec::with_dims(vec![32, 12, 4])
        },
        mode: TrainMode::Opt,
        optimizer: OptimizerSpec {
            lr: 0.05,
            momentum: 0.9,
        },
        batch: 20,
        epochs: 2,
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 21,
        sopt: None,
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 150, 1.0),
        eval_every: 3,
    }
}

fn train_into(cfg_path: &Path, out_dir: &Path) {
    let code = run_cli([
        "train",
        cfg_path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "train exited nonzero");
}

/// metrics.jsonl with the wall-clock column stripped, for byte comparison.
fn metrics_modulo_wall(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn identical_configs_produce_identical_run_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.toml");
    save_train_config(&cfg_path, &small_config(Method::Gs)).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_into(&cfg_path, &a);
    train_into(&cfg_path, &b);

    assert_eq!(metrics_modulo_wall(&a), metrics_modulo_wall(&b));
    // every non-metrics artifact is byte-identical outright
    for f in ["config.toml", "report.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
    for sub in ["model", "weights"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            assert_eq!(
                std::fs::read(a.join(sub).join(&name)).unwrap(),
                std::fs::read(b.join(sub).join(&name)).unwrap(),
                "{sub}/{name:?} differs between identical runs"
            );
        }
    }
}

#[test]
fn run_dir_artifacts_all_reparse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.toml");
    let cfg = small_config(Method::Cp);
    save_train_config(&cfg_path, &cfg).unwrap();
    let run = tmp.path().join("run");
    train_into(&cfg_path, &run);

    // config: parses back to the exact original
    let stored = load_train_config(&run.join("config.toml")).unwrap();
    assert_eq!(stored, cfg);
    // metrics: every line is a full record with the pinned schema
    let text = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let records: Vec<MetricsRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(records.len() >= 2);
    assert_eq!(records[0].iter, 0);
    // report: well-formed JSON with the run verdicts
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["v_hash_ok"], serde_json::Value::Bool(true));
    assert!(report["parameter_counts"]["materialized"].as_u64().unwrap() > 0);
    // model dir: reconstructs a model whose weights match the run bitwise
    let (_, model) = load_run_model(&run).unwrap();
    let rebuilt = materialize(&model).unwrap();
    let weights_dir = run.join("weights");
    for (l, (w, _)) in rebuilt.iter().enumerate() {
        let stored =
            orthotrain::Matrix::read_text_file(&weights_dir.join(format!("layer{l:02}.w.txt")))
                .unwrap();
        assert_eq!(stored.byte_hash(), w.byte_hash(), "layer {l} weights differ");
    }
}

#[test]
fn subset_training_runs_survive_the_dir_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.toml");
    let mut cfg = small_config(Method::Gs);
    cfg.model = ModelSpec {
        ortho: OrthoChoice::Shared(OrthoSpec::with_method(Method::Gs)),
        ..ModelSpec::with_dims(vec![32, 16, 16, 4])
    };
    cfg.sopt = Some(SoptSpec {
        p: SubsetSize::Count(4),
        n_out: 3,
        n_in: 5,
    });
    save_train_config(&cfg_path, &cfg).unwrap();
    let run = tmp.path().join("run");
    train_into(&cfg_path, &run);
    // subset folds mutate the stored directions; the reloaded model must
    // carry the folded directions, not the seed's initial draw
    let (loaded_cfg, model) = load_run_model(&run).unwrap();
    assert_eq!(loaded_cfg.sopt, cfg.sopt);
    for layer in &model.layers {
        assert!(layer.frozen_intact(), "v hash must be re-pinned after folds");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["v_hash_ok"], serde_json::Value::Bool(true));
}

#[test]
fn landscape_runs_against_a_stored_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.toml");
    save_train_config(&cfg_path, &small_config(Method::Gs)).unwrap();
    let run = tmp.path().join("run");
    train_into(&cfg_path, &run);
    assert_eq!(
        run_cli([
            "landscape",
            run.to_str().unwrap(),
            "--grid",
            "5",
            "--range",
            "0.3",
        ]),
        0
    );
    let csv = std::fs::read_to_string(run.join("landscape.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,beta,loss,test_err");
    assert_eq!(lines.len(), 1 + 25);
    // identical invocation rewrites the identical file
    let first = csv.clone();
    assert_eq!(
        run_cli([
            "landscape",
            run.to_str().unwrap(),
            "--grid",
            "5",
            "--range",
            "0.3",
        ]),
        0
    );
    assert_eq!(std::fs::read_to_string(run.join("landscape.csv")).unwrap(), first);
}

#[test]
fn idx_datasets_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("idx");
    let mut rng = orthotrain::RngState::new(55);
    let corpus = synth_digits(200, 0.4, &mut rng).unwrap();
    write_dataset_idx(&dir, &corpus, 28).unwrap();
    let spec = DatasetSpec {
        kind: DataKind::Mnist,
        n: None,
        noise: None,
        dir: Some(dir),
        train_cap: None,
        test_cap: None,
    };
    let loaded = spec.load(0).unwrap();
    assert_eq!(loaded.x_train.byte_hash(), corpus.x_train.byte_hash());
    assert_eq!(loaded.x_test.byte_hash(), corpus.x_test.byte_hash());
    assert_eq!(loaded.y_train, corpus.y_train);
    assert_eq!(loaded.y_test, corpus.y_test);
    assert_eq!(loaded.num_classes, 10);
}

#[test]
fn malformed_inputs_exit_with_documented_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // unknown flag / subcommand -> usage error 2
    assert_eq!(run_cli(["train", "--frobnicate"]), 2);
    assert_eq!(run_cli(["no-such-command"]), 2);
    // missing config file -> runtime error 1
    let ghost = tmp.path().join("missing.toml");
    assert_eq!(run_cli(["train", ghost.to_str().unwrap()]), 1);
    // config with an unknown key -> runtime error 1 (strict TOML)
    let bad = tmp.path().join("bad.toml");
    let mut text =
        orthotrain::config::render_train_config(&small_config(Method::Gs)).unwrap();
    text.push_str("\ntypo_key = true\n");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(run_cli(["train", bad.to_str().unwrap()]), 1);
    // landscape against a directory that is not a run dir -> 1
    assert_eq!(run_cli(["landscape", tmp.path().to_str().unwrap()]), 1);
    // energy on a non-matrix file -> 1
    let junk = tmp.path().join("junk.txt");
    std::fs::write(&junk, "not a matrix").unwrap();
    assert_eq!(run_cli(["energy", junk.to_str().unwrap()]), 1);
}

#[test]
fn seed_and_eval_every_overrides_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.toml");
    save_train_config(&cfg_path, &small_config(Method::Gs)).unwrap();
    let run = tmp.path().join("run");
    let code = run_cli([
        "train",
        cfg_path.to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--seed",
        "777",
        "--eval-every",
        "5",
    ]);
    assert_eq!(code, 0);
    let stored = load_train_config(&run.join("config.toml")).unwrap();
    assert_eq!(stored.seed, 777);
    assert_eq!(stored.eval_every, 5);
    // a rerun of the stored config reproduces the stored metrics
    let rerun = tmp.path().join("rerun");
    train_into(&run.join("config.toml"), &rerun);
    assert_eq!(metrics_modulo_wall(&run), metrics_modulo_wall(&rerun));
}
