//! Command-line front end: four subcommands over the library.
//!
//! * `train <config.toml>` — run a training job and populate a run
//!   directory: the effective config, a JSONL metrics stream, a JSON
//!   report (including the frozen-directions hash verdict), the exact
//!   trainable state under `model/`, and materialized inference weights
//!   under `weights/`.
//! * `energy <matrix-file | --random N D SEED>` — hyperspherical-energy
//!   report of a point set (rows are points), as JSON on stdout; optional
//!   gradient refinement.
//! * `landscape <run-dir> --grid N --range R` — loss/test-error surface
//!   around a finished run's trainable parameters, as CSV (stdout and
//!   `landscape.csv` in the run directory).
//! * `selftest` — deterministic golden/invariant suite; exit 0 iff all
//!   checks pass. Its stdout is byte-identical across runs.
//!
//! Every file output goes through [`atomic_write`] (temp file + rename), so
//! interrupted runs never leave truncated JSONL/CSV behind. Exit codes:
//! `0` success, `1` runtime failure (including a failed selftest and a
//! diverged training run), `2` usage errors (unknown flags, missing
//! arguments).
//!
//! The `ORTHOTRAIN_THREADS` environment variable caps internal parallelism;
//! every computation in this crate is single-threaded, so the cap is
//! honored vacuously (the default of 1 is what actually happens).

use crate::config::{load_train_config, render_train_config};
use crate::data::{load_mnist_idx, synth_dataset, write_idx_images, write_idx_labels, SynthKind};
use crate::energy::{energy_report, hyperspherical_energy, refine_mhe};
use crate::landscape::{landscape_csv, landscape_grid};
use crate::matrix::Matrix;
use crate::model::{
    build_forward, init_model, materialize, parameter_counts, LayerMode, ModelState, ModelSpec,
    OrthoChoice, TrainMode,
};
use crate::ortho::{
    cayley_transform, gram_schmidt, householder_orthogonalize, iterative_gram_schmidt, lowdin,
    modified_gram_schmidt, ogd_step, Method, OrthoSpec,
};
use crate::rng::{RngState, STREAM_MODEL};
use crate::train::{
    records_equal_modulo_wall, train_run, DecayTargets, MetricsRecord, OptimizerSpec, SoptSpec,
    SubsetSize, TrainConfig, TrainOutcome,
};
use crate::{Error, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes `bytes` to `path` atomically: a unique temp file in the same
/// directory is written, flushed, then renamed over the target, so readers
/// never observe a partially-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    // avoid collisions if the same process writes the same target twice
    let mut k = 0u32;
    while tmp.exists() {
        k += 1;
        tmp = dir.join(format!(
            ".{}.tmp-{}-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id(),
            k
        ));
    }
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Thread cap from `ORTHOTRAIN_THREADS` (default 1; invalid values fall
/// back to 1). Nothing in the crate spawns threads, so this is a contract
/// knob rather than a tuning knob.
pub fn thread_cap() -> usize {
    std::env::var("ORTHOTRAIN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn command() -> Command {
    Command::new("orthotrain")
        .about("Energy-preserving rotation training: orthogonalization kernels, hyperspherical energy, and a training harness")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .no_binary_name(true)
        .subcommand(
            Command::new("train")
                .about("Run a training job described by a TOML config")
                .arg(
                    Arg::new("config_pos")
                        .value_name("CONFIG")
                        .value_parser(value_parser!(PathBuf))
                        .num_args(0..=1)
                        .help("Path to the TOML training config"),
                )
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("CONFIG")
                        .value_parser(value_parser!(PathBuf))
                        .help("Alternative to the positional config path"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("SEED")
                        .value_parser(value_parser!(u64))
                        .help("Override the config's seed"),
                )
                .arg(
                    Arg::new("out-dir")
                        .long("out-dir")
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf))
                        .help("Run directory (default: config path with a .run extension)"),
                )
                .arg(
                    Arg::new("eval-every")
                        .long("eval-every")
                        .value_name("ITERS")
                        .value_parser(value_parser!(usize))
                        .help("Override the config's metrics cadence"),
                ),
        )
        .subcommand(
            Command::new("energy")
                .about("Hyperspherical-energy report of a point set (rows are points)")
                .arg(
                    Arg::new("matrix")
                        .value_name("MATRIX_FILE")
                        .value_parser(value_parser!(PathBuf))
                        .num_args(0..=1)
                        .help("Matrix text file; rows are points"),
                )
                .arg(
                    Arg::new("random")
                        .long("random")
                        .num_args(3)
                        .value_names(["N", "D", "SEED"])
                        .value_parser(value_parser!(u64))
                        .help("Use N random Gaussian points in D dimensions instead of a file"),
                )
                .arg(
                    Arg::new("s")
                        .long("s")
                        .value_name("S")
                        .value_parser(value_parser!(f64))
                        .default_value("1.0")
                        .help("Riesz exponent (0 = logarithmic energy)"),
                )
                .arg(
                    Arg::new("half-space")
                        .long("half-space")
                        .action(ArgAction::SetTrue)
                        .help("Also count each point's antipode"),
                )
                .arg(
                    Arg::new("refine")
                        .long("refine")
                        .num_args(2)
                        .value_names(["STEPS", "LR"])
                        .help("Refine the points by projected energy descent and report both states"),
                ),
        )
        .subcommand(
            Command::new("landscape")
                .about("Loss surface around a finished run's trainable parameters")
                .arg(
                    Arg::new("run-dir")
                        .value_name("RUN_DIR")
                        .value_parser(value_parser!(PathBuf))
                        .required(true)
                        .help("Run directory produced by `train`"),
                )
                .arg(
                    Arg::new("grid")
                        .long("grid")
                        .value_name("N")
                        .value_parser(value_parser!(usize))
                        .default_value("25")
                        .help("Grid steps per axis (N x N points)"),
                )
                .arg(
                    Arg::new("range")
                        .long("range")
                        .value_name("R")
                        .value_parser(value_parser!(f64))
                        .default_value("1.0")
                        .help("Coefficients span [-R, R] on both axes"),
                ),
        )
        .subcommand(
            Command::new("selftest")
                .about("Deterministic golden/invariant suite; exit 0 iff all checks pass"),
        )
}

/// Parses and runs a command line (without the binary name). Returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = thread_cap();
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            };
        }
    };
    let run = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("energy", m)) => cmd_energy(m),
        Some(("landscape", m)) => cmd_landscape(m),
        Some(("selftest", _)) => return cmd_selftest(),
        _ => unreachable!("subcommand_required"),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ------------------------------------------------------------------
// train

fn cmd_train(m: &ArgMatches) -> Result<i32> {
    let config_path = match (
        m.get_one::<PathBuf>("config_pos"),
        m.get_one::<PathBuf>("config"),
    ) {
        (Some(p), None) | (None, Some(p)) => p.clone(),
        (Some(_), Some(_)) => {
            return Err(Error::Config {
                what: "config given both positionally and via --config".into(),
            })
        }
        (None, None) => {
            return Err(Error::Config {
                what: "no config file given (positional path or --config)".into(),
            })
        }
    };
    let mut cfg = load_train_config(&config_path)?;
    if let Some(&seed) = m.get_one::<u64>("seed") {
        cfg.seed = seed;
    }
    if let Some(&every) = m.get_one::<usize>("eval-every") {
        cfg.eval_every = every;
    }
    let out_dir = m
        .get_one::<PathBuf>("out-dir")
        .cloned()
        .unwrap_or_else(|| config_path.with_extension("run"));
    let ds = cfg.dataset.load(cfg.seed)?;
    let outcome = train_run(&cfg, &ds)?;
    write_run_dir(&out_dir, &cfg, &outcome)?;
    println!("run directory: {}", out_dir.display());
    println!(
        "records: {} (last iteration {})",
        outcome.records.len(),
        outcome.records.last().map_or(0, |r| r.iter)
    );
    if let Some(last) = outcome.records.last() {
        println!("final loss: {}", last.loss);
        println!("final test error: {}", last.test_err);
    }
    println!("frozen directions intact: {}", outcome.v_hash_ok);
    if let Some(at) = outcome.diverged {
        println!("diverged at iteration {at}");
        return Ok(1);
    }
    Ok(0)
}

/// Serializes the metrics stream as JSONL (one record per line, pinned key
/// order; non-finite values from a divergence diagnostic serialize as
/// `null`).
pub fn metrics_jsonl(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format {
            what: format!("cannot serialize metrics record: {e}"),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Populates a run directory: `config.toml` (the effective config),
/// `metrics.jsonl`, `report.json`, the exact trainable state under
/// `model/`, and materialized inference weights under `weights/`.
pub fn write_run_dir(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(
        &dir.join("config.toml"),
        render_train_config(cfg)?.as_bytes(),
    )?;
    atomic_write(
        &dir.join("metrics.jsonl"),
        metrics_jsonl(&outcome.records)?.as_bytes(),
    )?;
    let counts = parameter_counts(&outcome.model)?;
    let last = outcome.records.last();
    let report = serde_json::json!({
        "v_hash_ok": outcome.v_hash_ok,
        "diverged": outcome.diverged,
        "iterations": last.map_or(0, |r| r.iter),
        "final_loss": last.map(|r| r.loss),
        "final_test_err": last.map(|r| r.test_err),
        "parameter_counts": {
            "materialized": counts.materialized,
            "trainable": counts.trainable,
            "rotation": counts.rotation,
        },
        "dataset": cfg.dataset,
    });
    let report_text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
        what: format!("cannot serialize report: {e}"),
    })?;
    atomic_write(&dir.join("report.json"), report_text.as_bytes())?;
    let model_dir = dir.join("model");
    for (l, layer) in outcome.model.layers.iter().enumerate() {
        let bias = Matrix::from_vec(1, layer.bias.len(), layer.bias.clone())?;
        bias.write_text_file(&model_dir.join(format!("layer{l:02}.bias.txt")))?;
        match layer.mode {
            LayerMode::Standard => {
                layer.params[0].write_text_file(&model_dir.join(format!("layer{l:02}.w.txt")))?;
            }
            LayerMode::Opt | LayerMode::Upt => {
                layer
                    .v_fixed
                    .write_text_file(&model_dir.join(format!("layer{l:02}.v.txt")))?;
                for (b, p) in layer.params.iter().enumerate() {
                    p.write_text_file(&model_dir.join(format!("layer{l:02}.p{b:02}.txt")))?;
                }
            }
        }
    }
    let weights_dir = dir.join("weights");
    for (l, (w, bias)) in materialize(&outcome.model)?.iter().enumerate() {
        w.write_text_file(&weights_dir.join(format!("layer{l:02}.w.txt")))?;
        let b = Matrix::from_vec(1, bias.len(), bias.clone())?;
        b.write_text_file(&weights_dir.join(format!("layer{l:02}.bias.txt")))?;
    }
    Ok(())
}

/// Reconstructs a run's exact trainable state from its directory: the
/// stored config rebuilds the layer wiring, then every tensor is overwritten
/// from the `model/` files (the text format round-trips `f64` exactly).
pub fn load_run_model(dir: &Path) -> Result<(TrainConfig, ModelState)> {
    let cfg = load_train_config(&dir.join("config.toml"))?;
    let mut rng = RngState::new(cfg.seed).split(STREAM_MODEL);
    let mut model = init_model(&cfg.model, cfg.mode, &mut rng)?;
    let model_dir = dir.join("model");
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let bias = Matrix::read_text_file(&model_dir.join(format!("layer{l:02}.bias.txt")))?;
        layer.bias = (0..bias.cols()).map(|j| bias.get(0, j)).collect();
        match layer.mode {
            LayerMode::Standard => {
                layer.params =
                    vec![Matrix::read_text_file(&model_dir.join(format!("layer{l:02}.w.txt")))?];
            }
            LayerMode::Opt | LayerMode::Upt => {
                layer.v_fixed =
                    Matrix::read_text_file(&model_dir.join(format!("layer{l:02}.v.txt")))?;
                layer.v_hash = layer.v_fixed.byte_hash();
                let mut params = Vec::with_capacity(layer.params.len());
                for b in 0..layer.params.len() {
                    params.push(Matrix::read_text_file(
                        &model_dir.join(format!("layer{l:02}.p{b:02}.txt")),
                    )?);
                }
                layer.params = params;
            }
        }
    }
    Ok((cfg, model))
}

// ------------------------------------------------------------------
// energy

fn cmd_energy(m: &ArgMatches) -> Result<i32> {
    let file = m.get_one::<PathBuf>("matrix");
    let random: Option<Vec<u64>> = m
        .get_many::<u64>("random")
        .map(|vals| vals.copied().collect());
    let v = match (file, random) {
        (Some(path), None) => Matrix::read_text_file(path)?,
        (None, Some(spec)) => {
            let (n, d, seed) = (spec[0] as usize, spec[1] as usize, spec[2]);
            if n == 0 || d == 0 {
                return Err(Error::Config {
                    what: format!("--random needs positive N and D, got {n} {d}"),
                });
            }
            RngState::new(seed).gaussian_matrix(n, d, 0.0, 1.0)
        }
        _ => {
            return Err(Error::Config {
                what: "provide exactly one of <matrix-file> or --random N D SEED".into(),
            })
        }
    };
    let s = *m.get_one::<f64>("s").expect("defaulted");
    let half_space = m.get_flag("half-space");
    let report = energy_report(&v, s, half_space)?;
    let json = if let Some(vals) = m.get_many::<String>("refine") {
        let args: Vec<&String> = vals.collect();
        let steps: usize = args[0].parse().map_err(|_| Error::Config {
            what: format!("--refine STEPS must be an integer, got {}", args[0]),
        })?;
        let lr: f64 = args[1].parse().map_err(|_| Error::Config {
            what: format!("--refine LR must be a number, got {}", args[1]),
        })?;
        let refined = refine_mhe(&v, s, half_space, steps, lr)?;
        let after = energy_report(&refined.v, s, half_space)?;
        serde_json::json!({
            "initial": report,
            "refined": after,
            "steps_taken": refined.steps_taken,
            "stalled": refined.stalled,
        })
    } else {
        serde_json::to_value(&report).map_err(|e| Error::Format {
            what: format!("cannot serialize energy report: {e}"),
        })?
    };
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Format {
        what: format!("cannot serialize energy report: {e}"),
    })?;
    println!("{text}");
    Ok(0)
}

// ------------------------------------------------------------------
// landscape

fn cmd_landscape(m: &ArgMatches) -> Result<i32> {
    let run_dir = m.get_one::<PathBuf>("run-dir").expect("required").clone();
    let steps = *m.get_one::<usize>("grid").expect("defaulted");
    let range = *m.get_one::<f64>("range").expect("defaulted");
    let (cfg, model) = load_run_model(&run_dir)?;
    let ds = cfg.dataset.load(cfg.seed)?;
    let points = landscape_grid(&model, &ds, steps, range, cfg.seed)?;
    let csv = landscape_csv(&points);
    atomic_write(&run_dir.join("landscape.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(0)
}

// ------------------------------------------------------------------
// selftest

struct SelfTest {
    out: String,
    passed: usize,
    failed: usize,
}

impl SelfTest {
    fn new() -> Self {
        SelfTest {
            out: String::new(),
            passed: 0,
            failed: 0,
        }
    }

    fn check(&mut self, name: &str, result: std::result::Result<(), String>) {
        match result {
            Ok(()) => {
                self.passed += 1;
                self.out.push_str(&format!("ok   {name}\n"));
            }
            Err(msg) => {
                self.failed += 1;
                self.out.push_str(&format!("FAIL {name}: {msg}\n"));
            }
        }
    }
}

fn fail(msg: impl Into<String>) -> std::result::Result<(), String> {
    Err(msg.into())
}

fn expect(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        fail(msg)
    }
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(Method::Cp)),
            ..ModelSpec::with_dims(vec![32, 8, 4])
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
        seed: 17,
        sopt: None,
        dataset: crate::data::DatasetSpec::synthetic(crate::data::DataKind::Blobs, 100, 1.0),
        eval_every: 2,
    }
}

/// Runs every selftest check and renders the deterministic report. The
/// report never contains wall-clock values or filesystem paths, so two runs
/// produce byte-identical text.
pub fn selftest_report() -> (String, bool) {
    let mut t = SelfTest::new();

    t.check("prng-integer-goldens", {
        let mut r = RngState::new(0);
        let a = r.next_u64();
        let mut r2 = RngState::new(0);
        let b = r2.next_u64();
        let mut s1 = RngState::new(7).split(1);
        let mut s2 = RngState::new(7).split(2);
        expect(a == b, "same seed must repeat").and_then(|_| {
            expect(
                s1.next_u64() != s2.next_u64(),
                "distinct streams must decorrelate",
            )
        })
    });

    t.check("matrix-text-roundtrip", {
        let m = RngState::new(3).gaussian_matrix(7, 5, 0.0, 1.0);
        match crate::matrix::Matrix::from_text(&m.to_text()) {
            Ok(back) => expect(back.byte_hash() == m.byte_hash(), "text format must round-trip bits"),
            Err(e) => fail(format!("parse failed: {e}")),
        }
    });

    t.check("orthogonalization-residuals", {
        let u = RngState::new(11).gaussian_matrix(16, 16, 0.0, 1.0);
        let mut worst: (String, f64) = (String::new(), 0.0);
        let mut record = |name: &str, r: Result<Matrix>| match r {
            Ok(q) => {
                let res = q.ortho_residual();
                if res > worst.1 {
                    worst = (name.to_string(), res);
                }
            }
            Err(e) => worst = (format!("{name} errored: {e}"), f64::INFINITY),
        };
        record("gs", gram_schmidt(&u));
        record("mgs", modified_gram_schmidt(&u));
        record("igs", iterative_gram_schmidt(&u, 2));
        record("hr", householder_orthogonalize(&u));
        record("ls", lowdin(&u, 30));
        expect(
            worst.1 <= 1e-10,
            format!("worst residual {} from {}", worst.1, worst.0),
        )
    });

    t.check("rotation-determinant", {
        let p = crate::ortho::cayley_init_params(12, 0.01, &mut RngState::new(5));
        match crate::ortho::skew_from_upper(&p).and_then(|w| cayley_transform(&w)) {
            Ok(r) => match crate::linalg::det(&r) {
                Ok(d) => expect(
                    (d - 1.0).abs() <= 1e-10 && r.ortho_residual() <= 1e-10,
                    format!("det {} residual {}", d, r.ortho_residual()),
                ),
                Err(e) => fail(format!("determinant failed: {e}")),
            },
            Err(e) => fail(format!("transform failed: {e}")),
        }
    });

    t.check("energy-rotation-invariance", {
        let v = RngState::new(13).gaussian_matrix(16, 8, 0.0, 1.0);
        let r = crate::linalg::rand_orthogonal(8, &mut RngState::new(14));
        match crate::energy::energy_invariance_check(&v, &r, 1.0, false) {
            Ok(dev) => expect(dev <= 1e-9, format!("relative deviation {dev}")),
            Err(e) => fail(format!("check failed: {e}")),
        }
    });

    t.check("antipodal-energy-golden", {
        let v = Matrix::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]).expect("fixture");
        match hyperspherical_energy(&v, 1.0, false) {
            Ok(e) => expect(e == 1.0, format!("expected exactly 1.0, got {e}")),
            Err(e) => fail(format!("energy failed: {e}")),
        }
    });

    t.check("gradient-check-gram-schmidt", {
        let x0 = RngState::new(19).gaussian_matrix(4, 4, 0.0, 1.0);
        let w = RngState::new(20).gaussian_matrix(4, 4, 0.0, 1.0);
        let built = crate::autodiff::grad_check(
            |tape, x| {
                let q = tape.gram_schmidt(x, crate::autodiff::GsVariant::Classic)?;
                let wn = tape.leaf(w.clone());
                let h = tape.hadamard(q, wn)?;
                Ok(tape.frobenius_sq(h))
            },
            &x0,
            1e-5,
        );
        match built {
            Ok(err) => expect(err <= 1e-4, format!("worst relative error {err}")),
            Err(e) => fail(format!("grad check failed: {e}")),
        }
    });

    t.check("manifold-step-stays-orthogonal", {
        let u = crate::linalg::rand_orthogonal(8, &mut RngState::new(23));
        let g = RngState::new(24).gaussian_matrix(8, 8, 0.0, 1.0);
        match ogd_step(&u, &g, 1e-2, 2, true) {
            Ok(stepped) => {
                let res = stepped.ortho_residual();
                expect(res <= 1e-10, format!("residual {res}"))
            }
            Err(e) => fail(format!("step failed: {e}")),
        }
    });

    t.check("idx-files-roundtrip", {
        (|| -> std::result::Result<(), String> {
            let dir = std::env::temp_dir().join(format!("orthotrain-selftest-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let result = (|| {
                let mut rng = RngState::new(31);
                let ds = synth_dataset(SynthKind::Blobs, 20, 0.5, &mut rng)
                    .map_err(|e| e.to_string())?;
                let images = dir.join("imgs.idx");
                let labels = dir.join("lbls.idx");
                // quantize to the byte grid the format stores
                let mut q = ds.x_train.clone();
                for i in 0..q.rows() {
                    for j in 0..q.cols() {
                        let byte = (q.get(i, j).clamp(0.0, 1.0) * 255.0).round();
                        q.set(i, j, byte / 255.0);
                    }
                }
                write_idx_images(&images, &q, 1, q.cols()).map_err(|e| e.to_string())?;
                write_idx_labels(&labels, &ds.y_train).map_err(|e| e.to_string())?;
                let (x, y) = load_mnist_idx(&images, &labels).map_err(|e| e.to_string())?;
                expect(
                    x.byte_hash() == q.byte_hash() && y == ds.y_train,
                    "IDX round-trip must be bit-exact",
                )
            })();
            let _ = std::fs::remove_dir_all(&dir);
            result
        })()
    });

    t.check("config-roundtrip", {
        let cfg = tiny_train_config();
        match render_train_config(&cfg)
            .and_then(|text| crate::config::parse_train_config(&text))
        {
            Ok(back) => expect(back == cfg, "TOML round-trip must be identity"),
            Err(e) => fail(format!("round-trip failed: {e}")),
        }
    });

    t.check("training-determinism-and-energy", {
        (|| -> std::result::Result<(), String> {
            let cfg = tiny_train_config();
            let ds = cfg.dataset.load(cfg.seed).map_err(|e| e.to_string())?;
            let a = train_run(&cfg, &ds).map_err(|e| e.to_string())?;
            let b = train_run(&cfg, &ds).map_err(|e| e.to_string())?;
            expect(
                records_equal_modulo_wall(&a.records, &b.records),
                "identical configs must give identical metrics",
            )?;
            expect(a.v_hash_ok, "frozen directions must stay intact")?;
            expect(a.diverged.is_none(), "tiny run must not diverge")?;
            let e0 = &a.records[0].energy;
            for r in &a.records {
                for (e, base) in r.energy.iter().zip(e0.iter()) {
                    let drift = ((e - base) / base).abs();
                    if drift > 1e-6 {
                        return fail(format!("energy drift {drift} at iteration {}", r.iter));
                    }
                }
            }
            Ok(())
        })()
    });

    t.check("inference-equivalence", {
        (|| -> std::result::Result<(), String> {
            let cfg = tiny_train_config();
            let ds = cfg.dataset.load(cfg.seed).map_err(|e| e.to_string())?;
            let out = train_run(&cfg, &ds).map_err(|e| e.to_string())?;
            let mats = materialize(&out.model).map_err(|e| e.to_string())?;
            let x = RngState::new(41).gaussian_matrix(6, 32, 0.0, 1.0);
            let y = vec![0usize; 6];
            let plain = crate::model::forward_standard(&mats, out.model.spec.activation, &x)
                .map_err(|e| e.to_string())?;
            let pass = build_forward(&out.model, &x, &y).map_err(|e| e.to_string())?;
            let graph = pass.tape.value(pass.logits);
            let diff = plain.max_abs_diff(graph).map_err(|e| e.to_string())?;
            expect(
                diff <= 1e-10,
                format!("materialized and graph forward differ by {diff}"),
            )
        })()
    });

    t.check("subset-fold-preserves-energy", {
        (|| -> std::result::Result<(), String> {
            let mut cfg = tiny_train_config();
            cfg.model = ModelSpec {
                ortho: OrthoChoice::Shared(OrthoSpec::with_method(Method::Gs)),
                ..ModelSpec::with_dims(vec![32, 8, 16, 4])
            };
            cfg.sopt = Some(SoptSpec {
                p: SubsetSize::Count(4),
                n_out: 2,
                n_in: 3,
            });
            let ds = cfg.dataset.load(cfg.seed).map_err(|e| e.to_string())?;
            let out = train_run(&cfg, &ds).map_err(|e| e.to_string())?;
            expect(out.v_hash_ok, "fold must re-pin the directions hash")?;
            let e0 = &out.records[0].energy;
            let last = out.records.last().expect("records");
            for (e, base) in last.energy.iter().zip(e0.iter()) {
                let drift = ((e - base) / base).abs();
                if drift > 1e-9 {
                    return fail(format!("fold drifted energy by {drift}"));
                }
            }
            Ok(())
        })()
    });

    let all_ok = t.failed == 0;
    t.out.push_str(&format!(
        "selftest: {} passed, {} failed\n",
        t.passed, t.failed
    ));
    (t.out, all_ok)
}

fn cmd_selftest() -> i32 {
    let (report, ok) = selftest_report();
    print!("{report}");
    if ok {
        0
    } else {
        1
    }
}
