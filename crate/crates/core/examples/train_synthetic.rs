//! Trains a small GAC-UNet on synthetic flood scenes and scores the held-out split.
//!
//! `cargo run --release --example train_synthetic -- [epochs]`

use gacunet::dataio::split_dataset;
use gacunet::dataio::synthetic::flood_set;
use gacunet::metrics::{evaluate, PRED_THRESHOLD};
use gacunet::model::{Model, ModelSpec, Variant};
use gacunet::train::{train, LossKind, Sample, TrainConfig};

fn main() -> gacunet::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(15);
    let pairs = flood_set(20, 32, 11);
    let index: Vec<usize> = (0..pairs.len()).collect();
    let (train_idx, test_idx) = split_dataset(&index, 0)?;
    let train_set: Vec<_> = train_idx.iter().map(|&i| pairs[i].clone()).collect();
    let test_set: Vec<_> = test_idx.iter().map(|&i| pairs[i].clone()).collect();
    let samples: Vec<Sample<f32>> = train_set.iter().map(Sample::from_pair).collect();

    let spec = ModelSpec::new(Variant::GacUnet, 32, vec![8, 16]).with_seed(1);
    let model = Model::<f32>::build(spec)?;
    println!("{} parameters", model.param_count());
    let cfg = TrainConfig {
        epochs,
        loss: LossKind::Dice,
        seed: 1,
        ..Default::default()
    };
    println!("epoch\tloss\tval_iou\tval_dice");
    let outcome = train(model, &samples, &test_set, &cfg, |r| println!("{r}"))?;
    let report = evaluate(&outcome.best, &test_set, PRED_THRESHOLD)?;
    println!(
        "best epoch {}: test IoU {:.3}, Dice {:.3}, mAP {:.3}",
        outcome.best_epoch, report.mean_iou, report.mean_dice, report.map
    );
    Ok(())
}
