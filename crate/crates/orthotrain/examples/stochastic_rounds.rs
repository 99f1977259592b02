//! Subset-rotation training: instead of learning one full d×d rotation per
//! layer, each round samples a small coordinate subset, trains a p×p
//! rotation on those coordinates only, then folds it permanently into the
//! frozen directions and starts the next round from the identity.
//!
//! The fold is itself orthogonal, so the layer's hyperspherical energy is
//! identical after every round — the directions move on the sphere, but
//! their pairwise-angle structure never degrades. This drops the per-layer
//! trainable parameter count from d² to p².
//!
//! Run with: `cargo run --example stochastic_rounds`

use orthotrain::data::{DataKind, DatasetSpec};
use orthotrain::model::{materialize, ModelSpec, OrthoChoice, TrainMode};
use orthotrain::ortho::{Method, OrthoSpec};
use orthotrain::sopt::{sopt_round, BatchStream};
use orthotrain::train::{
    train_run, DecayTargets, OptimizerSpec, SoptSpec, SubsetSize, TrainConfig,
};
use orthotrain::RngState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
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
        batch: 25,
        epochs: 0, // ignored: the subset schedule below drives iteration
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 11,
        sopt: Some(SoptSpec {
            p: SubsetSize::Count(4), // 4x4 rotations instead of 16x16
            n_out: 6,                // rounds (fresh subset each)
            n_in: 20,                // optimizer steps per round
        }),
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 400, 1.2),
        eval_every: 20,
    };

    // High-level path: train_run drives the full schedule and logs metrics.
    let ds = cfg.dataset.load(cfg.seed)?;
    let out = train_run(&cfg, &ds)?;
    println!("subset schedule: 6 rounds x 20 steps, p = 4 of d = 16\n");
    println!(
        "{:>6} {:>10} {:>10} {:>14} {:>12}",
        "iter", "loss", "test err", "energy(L1)", "drift"
    );
    let e0 = out.records[0].energy[1];
    for r in &out.records {
        let drift = ((r.energy[1] - e0) / e0).abs();
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>14.6} {:>12.2e}",
            r.iter, r.loss, r.test_err, r.energy[1], drift
        );
    }
    println!(
        "frozen-direction hash re-pinned after folds: {}\n",
        out.v_hash_ok
    );

    // Low-level path: drive rounds by hand with `sopt_round` and measure the
    // energy directly after each fold.
    let mut cfg2 = cfg.clone();
    cfg2.sopt = Some(SoptSpec {
        p: SubsetSize::Fraction(0.25),
        n_out: 1,
        n_in: 15,
    });
    let mut rng = RngState::new(cfg2.seed).split(orthotrain::rng::STREAM_MODEL);
    let mut model = orthotrain::model::init_model(&cfg2.model, cfg2.mode, &mut rng)?;
    // Rounds train every rotation layer except the first (which train_run
    // trains continuously; here it just keeps its initial rotation). The
    // scheduled layers start from the identity: all rotation learned so far
    // lives folded inside the frozen directions.
    for l in orthotrain::sopt::scheduled_layers(&model) {
        let layer = &mut model.layers[l];
        layer.params = vec![layer.ortho.identity_params(layer.d_in())];
    }
    let mut batches = BatchStream::new(
        ds.train_len(),
        cfg2.batch,
        RngState::new(cfg2.seed).split(orthotrain::rng::STREAM_BATCH),
    )?;
    let mut subset_rng = RngState::new(cfg2.seed).split(orthotrain::rng::STREAM_SUBSET);

    let energy_of = |m: &orthotrain::model::ModelState| -> orthotrain::Result<f64> {
        let mats = materialize(m)?;
        orthotrain::energy::hyperspherical_energy(&mats[1].0.transpose(), 1.0, false)
    };
    let base = energy_of(&model)?;
    println!("manual rounds, layer-1 energy after each fold (base {base:.8}):");
    for round in 0..5 {
        let outcome = sopt_round(&cfg2, &ds, &mut model, &mut batches, &mut subset_rng)?;
        assert!(outcome.diverged.is_none());
        let e = energy_of(&model)?;
        println!(
            "  round {round}: {e:.8}  (rel. dev. {:.2e})",
            ((e - base) / base).abs()
        );
    }
    Ok(())
}
