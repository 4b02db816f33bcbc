//! Pretrains a small multi-class base, freezes it, and reprograms it for flood masks.

use gacunet::dataio::synthetic::flood_set;
use gacunet::reprogram::{
    pretrain_base, reprogram_train, wrapper_loss, ReprogramConfig, ReprogramWrapper, TransformMode,
};
use gacunet::train::{LossKind, Sample};

fn main() -> gacunet::Result<()> {
    let pairs = flood_set(8, 16, 5);
    let base = pretrain_base::<f64>(&pairs, 4, vec![4, 8], 10, 1)?;
    println!(
        "base: {} parameters, checksum {}",
        base.param_count(),
        base.checksum()
    );

    let mut wrapper = ReprogramWrapper::new(base, TransformMode::Shared, 1, 2)?;
    let samples: Vec<Sample<f64>> = pairs.iter().map(Sample::from_pair).collect();
    let before = wrapper_loss(&wrapper, &samples, LossKind::Dice)?;
    let cfg = ReprogramConfig {
        steps: 100,
        ..Default::default()
    };
    let trajectory = reprogram_train(&mut wrapper, &samples, &cfg)?;
    let after = wrapper_loss(&wrapper, &samples, LossKind::Dice)?;
    println!(
        "{} steps, mean dice loss {before:.4} -> {after:.4}",
        trajectory.len()
    );
    println!("base checksum after: {}", wrapper.base().checksum());
    wrapper.verify_base()?;
    Ok(())
}
