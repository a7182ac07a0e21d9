//! Overfits the toy network on four synthetic 32×32 scenes and prints the
//! loss curve.
//!
//! Usage: `train_toy [epochs]`. With four scenes and batch 4 every epoch is
//! one optimizer step.

use std::time::Instant;

use hmjnd::io::synth_corpus;
use hmjnd::model::{Model, ModelConfig};
use hmjnd::train::{dataset_loss, train, TrainConfig};

fn main() -> hmjnd::Result<()> {
    let data = synth_corpus(0, 4, 32, 32)?;
    let model_cfg = ModelConfig::toy();
    let cfg = TrainConfig {
        epochs: std::env::args().nth(1).map_or(500, |s| s.parse().expect("epoch count")),
        seed: 1,
        ..TrainConfig::toy()
    };
    let start = Instant::now();
    let (m, s) = Model::init(&model_cfg, cfg.seed)?;
    let before = dataset_loss(&m, &s, &data, &cfg)?;
    let out = train(&data, &model_cfg, &cfg)?;
    let after = dataset_loss(&out.model, &out.store, &data, &cfg)?;
    for (e, l) in out.log.epoch_means().iter().enumerate().step_by(50) {
        println!("epoch {e:4}  loss {l:.6}");
    }
    println!(
        "initial {:.3e}  final {:.3e}  ratio {:.4}  ({} steps, {:.1?})",
        before.total,
        after.total,
        after.total / before.total,
        out.log.records.len(),
        start.elapsed()
    );
    Ok(())
}
