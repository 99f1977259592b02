//! Acceptance gate: eleven end-to-end checks covering every guarantee the
//! crate makes, with tolerances pinned in the constants below. Each check is
//! one test function (numbered so the harness reports them in order) and
//! prints a single `PASS criterion-NN ...` line with the measured values
//! when it succeeds; a failure panics with the measured evidence.
//!
//! Run with: `cargo test --test acceptance` (add `-- --nocapture` to see the
//! PASS lines of succeeding checks).

use orthotrain::autodiff::{grad_check, GsVariant, NodeId, Tape};
use orthotrain::data::{synth_digits, write_dataset_idx, DataKind, DatasetSpec};
use orthotrain::energy::{hyperspherical_energy, subset_invariance_check};
use orthotrain::linalg::{det, rand_orthogonal};
use orthotrain::model::{
    build_forward, forward_standard, init_model, materialize, parameter_counts, ModelSpec,
    ModelState, OrthoChoice, TrainMode,
};
use orthotrain::ortho::{
    block_apply, block_param_count, cayley_init_params, cayley_transform, gram_schmidt,
    householder_orthogonalize, iterative_gram_schmidt, lowdin, modified_gram_schmidt, ogd_step,
    skew_from_upper, Method, OrthoSpec,
};
use orthotrain::rng::{RngState, STREAM_MODEL};
use orthotrain::train::{
    records_equal_modulo_wall, train_run, DecayTargets, OptimizerSpec, SoptSpec, SubsetSize,
    TrainConfig,
};
use orthotrain::{Matrix, RngState as Rng};
use std::time::Instant;

/// Orthogonality residual bound for every kernel (criterion 1).
const RESIDUAL_TOL: f64 = 1e-10;
/// Rotation-method energy drift bound during training (criterion 2).
const TRAIN_DRIFT_TOL: f64 = 1e-6;
/// Baseline training must drift at least this much (criterion 2).
const BASELINE_DRIFT_MIN: f64 = 1e-2;
/// Subset-rotation energy deviation bound (criterion 3).
const SUBSET_TOL: f64 = 1e-9;
/// Allowed relative gap from the analytic mean energy (criterion 4).
const MEAN_ENERGY_TOL: f64 = 0.02;
/// Gradient-check tolerance for exact composites (criterion 5).
const GRAD_TOL: f64 = 1e-5;
/// Gradient-check tolerance for the truncated Newton–Schulz unroll.
const GRAD_TOL_NS: f64 = 1e-4;
/// Fixed-point error-reduction factor when halving the step (criterion 7).
const HALVING_FACTOR_MIN: f64 = 8.0;
/// Materialized-vs-graph forward agreement (criterion 9).
const FORWARD_TOL: f64 = 1e-10;
/// Block-diagonal assembly agreement (criterion 10).
const BLOCK_TOL: f64 = 1e-12;

fn pass(name: &str, detail: String) {
    println!("PASS {name}: {detail}");
}

// -----------------------------------------------------------------------
// 1. Orthogonality suite: six kernels, 100 random 64x64 inputs each.

#[test]
fn acceptance_01_orthogonality_suite() {
    let t0 = Instant::now();
    let n = 64;
    let trials = 100;
    let mut worst = vec![0.0f64; 6];
    let mut worst_det_gap = 0.0f64;
    for trial in 0..trials {
        let mut rng = Rng::new(1000 + trial);
        let u = rng.gaussian_matrix(n, n, 0.0, 1.0);
        let qs = [
            gram_schmidt(&u).unwrap(),
            modified_gram_schmidt(&u).unwrap(),
            iterative_gram_schmidt(&u, 2).unwrap(),
            householder_orthogonalize(&u).unwrap(),
            lowdin(&u, 200).unwrap(),
        ];
        for (k, q) in qs.iter().enumerate() {
            worst[k] = worst[k].max(q.ortho_residual());
        }
        let p = cayley_init_params(n, 0.1, &mut rng);
        let r = cayley_transform(&skew_from_upper(&p).unwrap()).unwrap();
        worst[5] = worst[5].max(r.ortho_residual());
        worst_det_gap = worst_det_gap.max((det(&r).unwrap() - 1.0).abs());
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let names = ["gs", "mgs", "igs", "hr", "ls", "cp"];
    for (name, &res) in names.iter().zip(&worst) {
        assert!(
            res <= RESIDUAL_TOL,
            "{name}: worst residual {res:.3e} exceeds {RESIDUAL_TOL:.0e}"
        );
    }
    assert!(
        worst_det_gap <= 1e-10,
        "cayley determinant drifted from +1 by {worst_det_gap:.3e}"
    );
    assert!(elapsed <= 30.0, "suite took {elapsed:.1}s, budget 30s");
    pass(
        "criterion-01 orthogonality-suite",
        format!(
            "worst residuals {:?} det gap {:.2e} in {:.1}s",
            names
                .iter()
                .zip(&worst)
                .map(|(n, r)| format!("{n}={r:.1e}"))
                .collect::<Vec<_>>(),
            worst_det_gap,
            elapsed
        ),
    );
}

// -----------------------------------------------------------------------
// 2. Training keeps the energy of rotation-constrained layers frozen while
//    the unconstrained baseline's energy visibly wanders.

fn drift_config(mode: TrainMode, method: Method) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(method)),
            ..ModelSpec::with_dims(vec![32, 32, 32, 4])
        },
        mode,
        optimizer: OptimizerSpec {
            lr: 0.06,
            momentum: 0.9,
        },
        batch: 20,
        epochs: 100, // 400 train samples / batch 20 = 20 iters per epoch -> 2000 iters
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 7,
        sopt: None,
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 500, 1.5),
        eval_every: 100,
    }
}

fn max_energy_drift(cfg: &TrainConfig) -> (f64, usize) {
    let ds = cfg.dataset.load(cfg.seed).unwrap();
    let out = train_run(cfg, &ds).unwrap();
    assert!(out.diverged.is_none(), "run diverged");
    assert!(out.v_hash_ok, "frozen directions were mutated");
    let last = out.records.last().unwrap();
    assert_eq!(last.iter, 2000, "expected exactly 2000 iterations");
    let e0 = &out.records[0].energy;
    let mut worst = 0.0f64;
    for r in &out.records {
        for (e, base) in r.energy.iter().zip(e0) {
            worst = worst.max(((e - base) / base).abs());
        }
    }
    (worst, out.records.len())
}

#[test]
fn acceptance_02_training_energy_drift() {
    let mut details = Vec::new();
    for method in [Method::Gs, Method::Cp, Method::Ogd] {
        let t0 = Instant::now();
        let (drift, logged) = max_energy_drift(&drift_config(TrainMode::Opt, method));
        let elapsed = t0.elapsed().as_secs_f64();
        assert!(
            drift <= TRAIN_DRIFT_TOL,
            "{method:?}: energy drift {drift:.3e} exceeds {TRAIN_DRIFT_TOL:.0e} \
             across {logged} logged steps"
        );
        assert!(elapsed <= 300.0, "{method:?} took {elapsed:.0}s, budget 300s");
        details.push(format!("{method:?}={drift:.1e}"));
    }
    let t0 = Instant::now();
    let (baseline, _) = max_energy_drift(&drift_config(TrainMode::Standard, Method::Gs));
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(
        baseline > BASELINE_DRIFT_MIN,
        "baseline drift {baseline:.3e} never exceeded {BASELINE_DRIFT_MIN:.0e}"
    );
    assert!(elapsed <= 300.0, "baseline took {elapsed:.0}s, budget 300s");
    pass(
        "criterion-02 training-energy-drift",
        format!(
            "rotation drift {} vs baseline {baseline:.1e} over 2000 iters",
            details.join(" ")
        ),
    );
}

// -----------------------------------------------------------------------
// 3. Subset rotations preserve energy: 100 random (V, p, R_p) triples and a
//    10-round subset-training run checked after every fold.

#[test]
fn acceptance_03_subset_invariance() {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = Rng::new(3000 + trial);
        let v = rng.gaussian_matrix(32, 16, 0.0, 1.0);
        let p = [1usize, 4, 8, 16][trial as usize % 4];
        let dims = rng.sample_distinct(16, p);
        let r_p = rand_orthogonal(p, &mut rng);
        let dev = subset_invariance_check(&v, &r_p, &dims, 1.0, false).unwrap();
        worst = worst.max(dev);
    }
    assert!(
        worst <= SUBSET_TOL,
        "worst subset deviation {worst:.3e} exceeds {SUBSET_TOL:.0e}"
    );

    // Ten subset-training rounds; after every round (one fold per scheduled
    // layer; a layer's energy can only change through its own fold) each
    // traced layer's energy must match the starting value.
    let cfg = TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(Method::Gs)),
            ..ModelSpec::with_dims(vec![32, 16, 16, 4])
        },
        mode: TrainMode::Opt,
        optimizer: OptimizerSpec {
            lr: 0.05,
            momentum: 0.9,
        },
        batch: 20,
        epochs: 0,
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 33,
        sopt: Some(SoptSpec {
            p: SubsetSize::Count(4),
            n_out: 10,
            n_in: 8,
        }),
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 300, 1.2),
        eval_every: 8,
    };
    let ds = cfg.dataset.load(cfg.seed).unwrap();
    let mut rng = RngState::new(cfg.seed).split(STREAM_MODEL);
    let mut model = init_model(&cfg.model, cfg.mode, &mut rng).unwrap();
    for l in orthotrain::sopt::scheduled_layers(&model) {
        let layer = &mut model.layers[l];
        layer.params = vec![layer.ortho.identity_params(layer.d_in())];
    }
    let energies = |m: &ModelState| -> Vec<f64> {
        materialize(m)
            .unwrap()
            .iter()
            .take(2)
            .map(|(w, _)| hyperspherical_energy(&w.transpose(), 1.0, false).unwrap())
            .collect()
    };
    let base = energies(&model);
    let mut batches = orthotrain::sopt::BatchStream::new(
        ds.train_len(),
        cfg.batch,
        RngState::new(cfg.seed).split(orthotrain::rng::STREAM_BATCH),
    )
    .unwrap();
    let mut subset_rng = RngState::new(cfg.seed).split(orthotrain::rng::STREAM_SUBSET);
    let mut worst_fold = 0.0f64;
    for round in 0..10 {
        let outcome =
            orthotrain::sopt::sopt_round(&cfg, &ds, &mut model, &mut batches, &mut subset_rng)
                .unwrap();
        assert!(outcome.diverged.is_none(), "round {round} diverged");
        for (e, b) in energies(&model).iter().zip(&base) {
            worst_fold = worst_fold.max(((e - b) / b).abs());
        }
        assert!(
            worst_fold <= SUBSET_TOL,
            "energy deviated {worst_fold:.3e} after round {round}"
        );
    }
    pass(
        "criterion-03 subset-invariance",
        format!("worst triple deviation {worst:.1e}, worst fold deviation {worst_fold:.1e}"),
    );
}

// -----------------------------------------------------------------------
// 4. Mean pairwise energy of random normalized directions in d=3 matches
//    the analytic expectation: E[1/|u-v|] = 1 on the unit 2-sphere, so
//    n(n-1) * 1 = 992 for n = 32.

#[test]
fn acceptance_04_mean_energy_statistic() {
    let (n, d) = (32usize, 3usize);
    let analytic = (n * (n - 1)) as f64; // 992
    let seeds = 200u64;
    let mut mean = 0.0;
    for seed in 0..seeds {
        let v = Rng::new(4000 + seed).gaussian_matrix(n, d, 0.0, 1.0);
        mean += hyperspherical_energy(&v, 1.0, false).unwrap();
    }
    mean /= seeds as f64;
    let gap = ((mean - analytic) / analytic).abs();
    assert!(
        gap <= MEAN_ENERGY_TOL,
        "mean energy {mean:.2} deviates {:.2}% from {analytic}",
        100.0 * gap
    );
    pass(
        "criterion-04 mean-energy-statistic",
        format!(
            "mean {mean:.2} vs analytic {analytic} over {seeds} seeds ({:.2}% off)",
            100.0 * gap
        ),
    );
}

// -----------------------------------------------------------------------
// 5. Gradient correctness of every differentiable composite.

#[test]
fn acceptance_05_gradient_checks() {
    let mut rng = Rng::new(5000);
    let u0 = rng.gaussian_matrix(6, 6, 0.0, 1.0);
    let w = rng.gaussian_matrix(6, 6, 0.0, 1.0);
    let weigh = |tape: &mut Tape, q: NodeId, w: &Matrix| -> orthotrain::Result<NodeId> {
        let wn = tape.leaf(w.clone());
        let h = tape.hadamard(q, wn)?;
        Ok(tape.frobenius_sq(h))
    };

    let mut results = Vec::new();
    let mut run = |name: &'static str,
                   tol: f64,
                   x0: &Matrix,
                   build: Box<dyn Fn(&mut Tape, NodeId) -> orthotrain::Result<NodeId>>| {
        let err = grad_check(|t, x| build(t, x), x0, 1e-5).unwrap();
        assert!(err <= tol, "{name}: gradient error {err:.3e} exceeds {tol:.0e}");
        results.push(format!("{name}={err:.1e}"));
    };

    let wc = w.clone();
    run(
        "gs",
        GRAD_TOL,
        &u0,
        Box::new(move |t, x| {
            let q = t.gram_schmidt(x, GsVariant::Classic)?;
            weigh(t, q, &wc)
        }),
    );
    let wc = w.clone();
    run(
        "igs",
        GRAD_TOL,
        &u0,
        Box::new(move |t, x| {
            let q = t.gram_schmidt(x, GsVariant::Iterative(2))?;
            weigh(t, q, &wc)
        }),
    );
    let wc = w.clone();
    run(
        "hr",
        GRAD_TOL,
        &u0,
        Box::new(move |t, x| {
            let q = t.householder_orthogonalize(x)?;
            weigh(t, q, &wc)
        }),
    );
    let wc = w.clone();
    run(
        "ls",
        GRAD_TOL_NS,
        &u0,
        Box::new(move |t, x| {
            let q = t.newton_schulz(x, 12)?;
            weigh(t, q, &wc)
        }),
    );
    let p0 = cayley_init_params(6, 0.1, &mut rng);
    let wc = w.clone();
    run(
        "cp",
        GRAD_TOL,
        &p0,
        Box::new(move |t, x| {
            let r = t.cayley(x)?;
            weigh(t, r, &wc)
        }),
    );
    // soft-orthogonality penalty |PᵀP - I|² as the graph builds it
    run(
        "or-penalty",
        GRAD_TOL,
        &u0,
        Box::new(move |t, p| {
            let pt = t.transpose(p);
            let gram = t.matmul(pt, p)?;
            let eye = t.leaf(Matrix::identity(6));
            let diff = t.sub(gram, eye)?;
            Ok(t.frobenius_sq(diff))
        }),
    );
    let v0 = rng.gaussian_matrix(8, 3, 0.0, 1.0);
    run(
        "energy",
        GRAD_TOL,
        &v0,
        Box::new(move |t, v| t.energy(v, 1.0, false)),
    );

    pass("criterion-05 gradient-checks", results.join(" "));
}

// -----------------------------------------------------------------------
// 6. Löwdin optimality: the symmetric orthogonalization is never farther
//    from the input than the QR factor, and small orthogonal perturbations
//    never get closer.

#[test]
fn acceptance_06_lowdin_optimality() {
    let n = 8;
    let dist = |q: &Matrix, u: &Matrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = q.get(i, j) - u.get(i, j);
                acc += d * d;
            }
        }
        acc.sqrt()
    };
    let mut max_margin = f64::NEG_INFINITY;
    for trial in 0..100u64 {
        let mut rng = Rng::new(6000 + trial);
        let u = rng.gaussian_matrix(n, n, 0.0, 1.0);
        let ls = lowdin(&u, 200).unwrap();
        let qr = householder_orthogonalize(&u).unwrap();
        let d_ls = dist(&ls, &u);
        let d_qr = dist(&qr, &u);
        assert!(
            d_ls <= d_qr + 1e-12,
            "trial {trial}: LS distance {d_ls:.6} exceeds QR distance {d_qr:.6}"
        );
        // probe: orthogonal perturbations LS(U)·exp-like(eps) stay farther
        for probe in 0..5 {
            let p = cayley_init_params(n, 1.0, &mut Rng::new(60_000 + trial * 5 + probe));
            let skew = skew_from_upper(&p).unwrap();
            let norm = skew.frobenius_norm();
            let g = cayley_transform(&skew.scale(1e-2 / norm)).unwrap();
            let perturbed = ls.matmul(&g).unwrap();
            let d_pert = dist(&perturbed, &u);
            assert!(
                d_pert >= d_ls - 1e-12,
                "trial {trial} probe {probe}: perturbation got closer \
                 ({d_pert:.8} < {d_ls:.8})"
            );
            max_margin = max_margin.max(d_ls - d_pert);
        }
    }
    pass(
        "criterion-06 lowdin-optimality",
        format!("LS <= QR distance in 100/100 trials; best perturbation margin {max_margin:.2e}"),
    );
}

// -----------------------------------------------------------------------
// 7. The iterative manifold update converges to the closed form at better
//    than second order in the step size: halving the step shrinks the gap
//    by at least 8x (theoretical 16x at the leading lambda^2 order... the
//    observed order includes the lambda^4 correction).

#[test]
fn acceptance_07_fixed_point_order() {
    let n = 12;
    let lambda = 1e-2;
    let mut ratios = Vec::new();
    for trial in 0..20u64 {
        let mut rng = Rng::new(7000 + trial);
        let u = rand_orthogonal(n, &mut rng);
        let g = rng.gaussian_matrix(n, n, 0.0, 1.0);
        let gap = |lam: f64| -> f64 {
            let it = ogd_step(&u, &g, lam, 2, false).unwrap();
            let cl = ogd_step(&u, &g, lam, 2, true).unwrap();
            it.max_abs_diff(&cl).unwrap()
        };
        ratios.push(gap(lambda) / gap(lambda / 2.0));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ratios[ratios.len() / 2];
    assert!(
        median >= HALVING_FACTOR_MIN,
        "median error-reduction factor {median:.2} below {HALVING_FACTOR_MIN}"
    );
    pass(
        "criterion-07 fixed-point-order",
        format!(
            "median reduction {median:.1}x (range {:.1}-{:.1}) on halving the step",
            ratios[0],
            ratios[ratios.len() - 1]
        ),
    );
}

// -----------------------------------------------------------------------
// 8. End-to-end digit benchmark: rotation-constrained training matches or
//    beats conventional training on the same MLP, data, and budget.

#[test]
fn acceptance_08_digit_benchmark() {
    let t0 = Instant::now();
    // Deterministic 28x28 ten-class corpus served through the IDX loader:
    // 12.5k samples split 80/20 into 10k train / 2.5k test.
    let dir = std::env::temp_dir().join(format!("orthotrain-accept8-{}", std::process::id()));
    let mut rng = Rng::new(888);
    let corpus = synth_digits(12_500, 0.45, &mut rng).unwrap();
    write_dataset_idx(&dir, &corpus, 28).unwrap();
    let dataset = DatasetSpec {
        kind: DataKind::Mnist,
        n: None,
        noise: None,
        dir: Some(dir.clone()),
        train_cap: Some(10_000),
        test_cap: Some(2_500),
    };
    let config = |mode: TrainMode, method: Method, seed: u64| TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(method)),
            ..ModelSpec::with_dims(vec![784, 256, 256, 10])
        },
        mode,
        optimizer: OptimizerSpec {
            lr: 0.01,
            momentum: 0.9,
        },
        batch: 100,
        epochs: 20,
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed,
        sopt: None,
        dataset: dataset.clone(),
        eval_every: 500,
    };
    let mut baseline_errs = Vec::new();
    let mut opt_errs = Vec::new();
    for seed in [1u64, 2, 3] {
        for (mode, method) in [(TrainMode::Standard, Method::Gs), (TrainMode::Opt, Method::Cp)] {
            let cfg = config(mode, method, seed);
            let ds = cfg.dataset.load(cfg.seed).unwrap();
            let out = train_run(&cfg, &ds).unwrap();
            assert!(out.diverged.is_none(), "{mode:?} seed {seed} diverged");
            assert!(out.v_hash_ok);
            let err = out.records.last().unwrap().test_err;
            match mode {
                TrainMode::Standard => baseline_errs.push(err),
                _ => opt_errs.push(err),
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mb, mo) = (mean(&baseline_errs), mean(&opt_errs));
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(
        mo <= mb,
        "rotation-constrained mean error {mo:.4} exceeds baseline {mb:.4} \
         (baseline {baseline_errs:?}, constrained {opt_errs:?})"
    );
    assert!(
        elapsed <= 1800.0,
        "benchmark took {:.1} min, budget 30 min",
        elapsed / 60.0
    );
    pass(
        "criterion-08 digit-benchmark",
        format!(
            "constrained mean {:.2}% {opt_errs:?} vs baseline mean {:.2}% {baseline_errs:?}, \
             3 seeds, 20 epochs, {:.1} min",
            100.0 * mo,
            100.0 * mb,
            elapsed / 60.0
        ),
    );
}

// -----------------------------------------------------------------------
// 9. Materialized weights are a drop-in replacement: identical forward pass
//    and identical parameter count to a conventionally-built network.

#[test]
fn acceptance_09_inference_equivalence() {
    let dims = vec![32usize, 24, 16, 4];
    let spec = ModelSpec {
        ortho: OrthoChoice::Shared(OrthoSpec::with_method(Method::Gs)),
        ..ModelSpec::with_dims(dims.clone())
    };
    // a trained model, so the rotations are far from the identity
    let cfg = TrainConfig {
        model: spec,
        mode: TrainMode::Opt,
        optimizer: OptimizerSpec {
            lr: 0.05,
            momentum: 0.9,
        },
        batch: 20,
        epochs: 5,
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 9,
        sopt: None,
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 300, 1.2),
        eval_every: 30,
    };
    let ds = cfg.dataset.load(cfg.seed).unwrap();
    let out = train_run(&cfg, &ds).unwrap();
    let mats = materialize(&out.model).unwrap();
    let mut worst = 0.0f64;
    for probe in 0..100u64 {
        let x = Rng::new(9000 + probe).gaussian_matrix(5, 32, 0.0, 1.0);
        let y = vec![0usize; 5];
        let plain = forward_standard(&mats, out.model.spec.activation, &x).unwrap();
        let pass_ = build_forward(&out.model, &x, &y).unwrap();
        let graph = pass_.tape.value(pass_.logits);
        worst = worst.max(plain.max_abs_diff(graph).unwrap());
    }
    assert!(
        worst <= FORWARD_TOL,
        "materialized forward deviates {worst:.3e} over 100 probes"
    );

    // parameter parity with the conventionally-parameterized network
    let counts = parameter_counts(&out.model).unwrap();
    let mut rng = RngState::new(1).split(STREAM_MODEL);
    let std_model = init_model(
        &ModelSpec::with_dims(dims.clone()),
        TrainMode::Standard,
        &mut rng,
    )
    .unwrap();
    let std_counts = parameter_counts(&std_model).unwrap();
    assert_eq!(
        counts.materialized, std_counts.materialized,
        "materialized parameter count differs from the standard network"
    );
    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    assert_eq!(counts.materialized, expected);
    pass(
        "criterion-09 inference-equivalence",
        format!(
            "worst forward deviation {worst:.1e} over 100 probes; \
             materialized params {} match standard {}",
            counts.materialized, std_counts.materialized
        ),
    );
}

// -----------------------------------------------------------------------
// 10. Block-diagonal rotations: fused application matches dense assembly,
//     preserves energy, and hits the advertised parameter scaling.

#[test]
fn acceptance_10_block_diagonal() {
    let d = 32;
    let mut worst_match = 0.0f64;
    let mut worst_energy = 0.0f64;
    for &k in &[2usize, 4, 8] {
        let m = d / k;
        let mut rng = Rng::new(10_000 + k as u64);
        let v = rng.gaussian_matrix(d, 24, 0.0, 1.0);
        for shared in [false, true] {
            let rs: Vec<Matrix> = if shared {
                vec![rand_orthogonal(m, &mut rng)]
            } else {
                (0..k).map(|_| rand_orthogonal(m, &mut rng)).collect()
            };
            // dense block-diagonal assembly
            let mut dense = Matrix::zeros(d, d);
            for b in 0..k {
                let r = if shared { &rs[0] } else { &rs[b] };
                for i in 0..m {
                    for j in 0..m {
                        dense.set(b * m + i, b * m + j, r.get(i, j));
                    }
                }
            }
            let fused = block_apply(&rs, k, &v).unwrap();
            let reference = dense.matmul(&v).unwrap();
            worst_match = worst_match.max(fused.max_abs_diff(&reference).unwrap());
            // energy invariance: columns of v are the direction set
            let before = hyperspherical_energy(&v.transpose(), 1.0, false).unwrap();
            let after = hyperspherical_energy(&fused.transpose(), 1.0, false).unwrap();
            worst_energy = worst_energy.max(((after - before) / before).abs());
            // parameter scaling
            let count = block_param_count(d, k, shared).unwrap();
            let expected = if shared { m * m } else { k * m * m };
            assert_eq!(count, expected, "k={k} shared={shared}");
            assert_eq!(expected, if shared { d * d / (k * k) } else { d * d / k });
        }
    }
    assert!(
        worst_match <= BLOCK_TOL,
        "fused/dense mismatch {worst_match:.3e} exceeds {BLOCK_TOL:.0e}"
    );
    assert!(
        worst_energy <= SUBSET_TOL,
        "block rotation drifted energy {worst_energy:.3e}"
    );
    pass(
        "criterion-10 block-diagonal",
        format!(
            "fused matches dense to {worst_match:.1e}, energy drift {worst_energy:.1e}, \
             counts scale as d^2/k^2 shared and d^2/k unshared"
        ),
    );
}

// -----------------------------------------------------------------------
// 11. Determinism: selftest output and training metrics repeat byte-for-
//     byte (wall-clock field excluded).

#[test]
fn acceptance_11_determinism() {
    let (a, ok_a) = orthotrain::cli::selftest_report();
    let (b, ok_b) = orthotrain::cli::selftest_report();
    assert!(ok_a && ok_b, "selftest failed:\n{a}");
    assert_eq!(a, b, "selftest output differs between runs");

    let mut cfg = drift_config(TrainMode::Opt, Method::Gs);
    cfg.epochs = 3;
    cfg.eval_every = 10;
    let ds = cfg.dataset.load(cfg.seed).unwrap();
    let run_a = train_run(&cfg, &ds).unwrap();
    let run_b = train_run(&cfg, &ds).unwrap();
    assert!(
        records_equal_modulo_wall(&run_a.records, &run_b.records),
        "training records differ between identical runs"
    );
    // the serialized JSONL agrees byte-for-byte once wall_ms is stripped
    let strip = |records: &[orthotrain::train::MetricsRecord]| -> String {
        records
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).unwrap();
                v.as_object_mut().unwrap().remove("wall_ms");
                serde_json::to_string(&v).unwrap()
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&run_a.records), strip(&run_b.records));
    pass(
        "criterion-11 determinism",
        format!(
            "selftest byte-identical ({} bytes); {} training records identical modulo wall_ms",
            a.len(),
            run_a.records.len()
        ),
    );
}
