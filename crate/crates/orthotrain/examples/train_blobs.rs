//! Trains the same small MLP on the synthetic blobs task twice — once with
//! rotation-constrained layers, once conventionally — and prints the layer
//! energy at every logged step for both.
//!
//! The rotation run keeps each layer's hyperspherical energy frozen at its
//! initial value (drift on the order of 1e-16, pure roundoff) because the
//! learned transform is orthogonal and the underlying direction set never
//! changes. The conventional run's weights drift freely, so its energy
//! wanders. Both runs reach comparable accuracy on this easy task; the point
//! is the invariant, not the score.
//!
//! Run with: `cargo run --example train_blobs`

use orthotrain::data::{DataKind, DatasetSpec};
use orthotrain::model::{ModelSpec, OrthoChoice, TrainMode};
use orthotrain::ortho::{Method, OrthoSpec};
use orthotrain::train::{train_run, DecayTargets, OptimizerSpec, TrainConfig};

fn config(mode: TrainMode, method: Method) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            ortho: OrthoChoice::Shared(OrthoSpec::with_method(method)),
            ..ModelSpec::with_dims(vec![32, 24, 24, 4])
        },
        mode,
        optimizer: OptimizerSpec {
            lr: 0.05,
            momentum: 0.9,
        },
        batch: 25,
        epochs: 8,
        weight_decay: 0.0,
        decay_targets: DecayTargets::ClassifierOnly,
        seed: 3,
        sopt: None,
        dataset: DatasetSpec::synthetic(DataKind::Blobs, 500, 1.2),
        eval_every: 32,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (label, cfg) in [
        ("rotation-constrained (gram-schmidt)", config(TrainMode::Opt, Method::Gs)),
        ("rotation-constrained (cayley)", config(TrainMode::Opt, Method::Cp)),
        ("conventional baseline", config(TrainMode::Standard, Method::Gs)),
    ] {
        let ds = cfg.dataset.load(cfg.seed)?;
        let out = train_run(&cfg, &ds)?;
        println!("== {label} ==");
        println!(
            "{:>6} {:>10} {:>10} {:>14} {:>12}",
            "iter", "loss", "test err", "energy(L0)", "drift"
        );
        let e0 = out.records[0].energy[0];
        let mut worst: f64 = 0.0;
        for r in &out.records {
            let drift = ((r.energy[0] - e0) / e0).abs();
            worst = worst.max(drift);
            println!(
                "{:>6} {:>10.4} {:>10.4} {:>14.6} {:>12.2e}",
                r.iter, r.loss, r.test_err, r.energy[0], drift
            );
        }
        println!(
            "worst relative energy drift: {worst:.2e}   frozen directions intact: {}\n",
            out.v_hash_ok
        );
    }
    Ok(())
}
